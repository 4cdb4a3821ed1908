#pragma once

#include <vector>

#include "sgool/tensor.hpp"

namespace sgool {

// Per-timestep noise coefficients: beta[t] and the cumulative signal level
// alpha_bar[t] = prod_{s<=t} (1 - beta[s]).
struct NoiseSchedule {
    int T = 0;
    std::vector<double> beta;
    std::vector<double> alpha_bar;

    double sqrt_alpha_bar(int t) const;
    double sqrt_one_minus_alpha_bar(int t) const;
};

enum class ScheduleKind { linear };

// Linear beta ramp from 1e-4 to 0.02 spread over T steps.
NoiseSchedule make_schedule(int T, ScheduleKind kind = ScheduleKind::linear);

// Forward noising: sqrt(alpha_bar[t])*x0 + sqrt(1-alpha_bar[t])*eps.
Tensor q_sample(const Tensor& x0, int t, const Tensor& eps, const NoiseSchedule& s);

}  // namespace sgool
