#pragma once

#include <atomic>
#include <functional>

#include "sgool/ddim.hpp"

namespace sgool {

// Live-instance instrumentation backing the constant-memory contract:
// a gradient sweep must never retain more than two coupled states at once,
// however long the chain is.
struct CoupledStateCounter {
    static std::atomic<int> live;
    static std::atomic<int> peak;
    static void reset_peak();
    static void note_alive();
};

// The (x, y) latent pair of the invertible sampler. Both branches share a
// shape; p is the mixing coefficient, constant along a trajectory.
struct CoupledState {
    Tensor x;
    Tensor y;
    int t = 0;
    double p = 1.0;

    CoupledState() { CoupledStateCounter::note_alive(); }
    CoupledState(const CoupledState&);
    CoupledState(CoupledState&&) noexcept;
    CoupledState& operator=(const CoupledState&) = default;
    CoupledState& operator=(CoupledState&&) = default;
    ~CoupledState();
};

struct Trajectory {
    CoupledState initial;
    CoupledState final_state;
    int steps = 0;
};

// state with x = y = x_T at t = T-1; requires p in (0, 1]
CoupledState init_coupled(const Tensor& x_T, double p, const NoiseSchedule& s);

// One denoise transition t -> t-1:
//   x' = ddim_update(x, eps = d(y, t, c))
//   y' = ddim_update(y, eps = d(x', t, c))
//   x'' = p*x' + (1-p)*y',  y'' = p*y' + (1-p)*x''
// Each sub-step is affine in one branch given the other, hence invertible.
CoupledState coupled_denoise_step(const CoupledState& st, const Denoiser& d, const Condition& c,
                                  const NoiseSchedule& s);

// Exact algebraic inverse of coupled_denoise_step (t -> t+1).
CoupledState coupled_invert_step(const CoupledState& st, const Denoiser& d, const Condition& c,
                                 const NoiseSchedule& s);

struct GenerateResult {
    Tensor x0;  // x branch of the final state
    Trajectory traj;
};
GenerateResult generate(const Tensor& x_T, const Condition& c, const Denoiser& d,
                        const NoiseSchedule& s, double p);

// Scalar loss of the generated image, differentiated with respect to x_T.
using LatentLoss = std::function<Tensor(const Tensor& x0)>;

struct GradResult {
    Tensor grad;        // d loss / d x_T
    double loss = 0.0;  // loss at the generated x0
    Tensor x0;          // generated image (forward pass by-product)
};

// Constant-memory gradient: the forward pass stores only the final state;
// the backward sweep reconstructs each predecessor with coupled_invert_step,
// re-executes that one step on a tape, and chains the vector-Jacobian
// product. Reconstruction drift beyond `drift_tol` aborts with
// integrity_error; a non-finite loss or gradient raises numeric_error.
GradResult grad_wrt_latent(const Tensor& x_T, const Condition& c, const LatentLoss& loss,
                           const Denoiser& d, const NoiseSchedule& s, double p,
                           double drift_tol = 1e-4);

}  // namespace sgool
