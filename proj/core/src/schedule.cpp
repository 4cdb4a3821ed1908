#include "sgool/schedule.hpp"

#include <cmath>

namespace sgool {

double NoiseSchedule::sqrt_alpha_bar(int t) const {
    if (t < 0 || t >= T) throw contract_error("timestep " + std::to_string(t) + " outside schedule");
    return std::sqrt(alpha_bar[t]);
}

double NoiseSchedule::sqrt_one_minus_alpha_bar(int t) const {
    if (t < 0 || t >= T) throw contract_error("timestep " + std::to_string(t) + " outside schedule");
    return std::sqrt(1.0 - alpha_bar[t]);
}

NoiseSchedule make_schedule(int T, ScheduleKind kind) {
    if (T < 2) throw contract_error("make_schedule: T must be at least 2, got " + std::to_string(T));
    if (kind != ScheduleKind::linear) throw contract_error("make_schedule: unknown kind");

    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha_bar.resize(T);
    const double beta_start = 1e-4;
    const double beta_end = 0.02;
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = beta_start + (beta_end - beta_start) * double(t) / double(T - 1);
        prod *= 1.0 - s.beta[t];
        s.alpha_bar[t] = prod;
    }
    return s;
}

Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s) {
    if (x0.shape() != eps.shape()) {
        throw dim_error("q_sample: x0 " + shape_str(x0.shape()) + " vs eps " + shape_str(eps.shape()));
    }
    const real a = static_cast<real>(s.sqrt_alpha_bar(t));
    const real b = static_cast<real>(s.sqrt_one_minus_alpha_bar(t));
    return add(scalar_mul(x0, a), scalar_mul(eps, b));
}

}  // namespace sgool
