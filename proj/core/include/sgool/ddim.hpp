#pragma once

#include "sgool/denoiser.hpp"
#include "sgool/schedule.hpp"
#include "sgool/tensor.hpp"

namespace sgool {

// Deterministic (eta = 0) denoising update from timestep t to t-1:
//   eps_hat = d(x_t, t, c)
//   x0_hat  = (x_t - sqrt(1-abar_t)*eps_hat) / sqrt(abar_t)
//   out     = sqrt(abar_{t-1})*x0_hat + sqrt(1-abar_{t-1})*eps_hat
Tensor ddim_step(const Tensor& x_t, int t, const Denoiser& d, const Condition& c,
                 const NoiseSchedule& s);

// Affine form of the same update with an externally supplied eps_hat:
// out = scale(t)*z + shift(t)*eps_hat. The coupled sampler inverts these.
struct DdimCoeffs {
    double scale;
    double shift;
};
DdimCoeffs ddim_coeffs(int t, const NoiseSchedule& s);
Tensor ddim_update(const Tensor& z, int t, const Tensor& eps_hat, const NoiseSchedule& s);

// Full chain from t = T-1 down to t = 1; the result sits at index 0.
// No clipping inside the chain.
Tensor sample(const Tensor& x_T, const Condition& c, const Denoiser& d, const NoiseSchedule& s);

}  // namespace sgool
