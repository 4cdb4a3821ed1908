#include "sgool/ddim.hpp"

#include <cmath>

namespace sgool {

DdimCoeffs ddim_coeffs(int t, const NoiseSchedule& s) {
    if (t < 1 || t >= s.T) {
        throw contract_error("ddim step needs 1 <= t < T, got t=" + std::to_string(t) +
                             " with T=" + std::to_string(s.T));
    }
    const double abar_t = s.alpha_bar[t];
    const double abar_prev = s.alpha_bar[t - 1];
    const double scale = std::sqrt(abar_prev / abar_t);
    const double shift = std::sqrt(1.0 - abar_prev) - std::sqrt(abar_prev * (1.0 - abar_t) / abar_t);
    return {scale, shift};
}

Tensor ddim_update(const Tensor& z, int t, const Tensor& eps_hat, const NoiseSchedule& s) {
    if (z.shape() != eps_hat.shape()) {
        throw dim_error("ddim_update: latent " + shape_str(z.shape()) + " vs eps " +
                        shape_str(eps_hat.shape()));
    }
    const auto [scale, shift] = ddim_coeffs(t, s);
    return add(scalar_mul(z, static_cast<real>(scale)), scalar_mul(eps_hat, static_cast<real>(shift)));
}

Tensor ddim_step(const Tensor& x_t, int t, const Denoiser& d, const Condition& c,
                 const NoiseSchedule& s) {
    Tensor eps_hat = d.predict_eps(x_t, t, c);
    return ddim_update(x_t, t, eps_hat, s);
}

Tensor sample(const Tensor& x_T, const Condition& c, const Denoiser& d, const NoiseSchedule& s) {
    if (x_T.shape() != d.config().latent_shape) {
        throw dim_error("sample: latent shape " + shape_str(x_T.shape()) + ", denoiser expects " +
                        shape_str(d.config().latent_shape));
    }
    Tensor x = x_T;
    for (int t = s.T - 1; t >= 1; --t) {
        x = ddim_step(x, t, d, c, s);
    }
    return x;
}

}  // namespace sgool
