#include "sgool/coupled.hpp"

#include <cmath>
#include <utility>

namespace sgool {

std::atomic<int> CoupledStateCounter::live{0};
std::atomic<int> CoupledStateCounter::peak{0};

void CoupledStateCounter::reset_peak() {
    peak.store(live.load());
}

void CoupledStateCounter::note_alive() {
    const int now = live.fetch_add(1) + 1;
    int prev = peak.load();
    while (prev < now && !peak.compare_exchange_weak(prev, now)) {
    }
}

CoupledState::CoupledState(const CoupledState& other)
    : x(other.x), y(other.y), t(other.t), p(other.p) {
    CoupledStateCounter::note_alive();
}

CoupledState::CoupledState(CoupledState&& other) noexcept
    : x(std::move(other.x)), y(std::move(other.y)), t(other.t), p(other.p) {
    CoupledStateCounter::note_alive();
}

CoupledState::~CoupledState() {
    CoupledStateCounter::live.fetch_sub(1);
}

CoupledState init_coupled(const Tensor& x_T, double p, const NoiseSchedule& s) {
    if (!(p > 0.0 && p <= 1.0)) {
        throw contract_error("mixing coefficient must lie in (0,1], got " + std::to_string(p));
    }
    CoupledState st;
    st.x = x_T.detach();
    st.y = x_T.detach();
    st.t = s.T - 1;
    st.p = p;
    return st;
}

namespace {

// Shared forward math for the untaped fold and the taped re-execution.
std::pair<Tensor, Tensor> coupled_step_tensors(const Tensor& x, const Tensor& y, int t, double p,
                                               const Denoiser& d, const Condition& c,
                                               const NoiseSchedule& s) {
    Tensor eps_x = d.predict_eps(y, t, c);
    Tensor xp = ddim_update(x, t, eps_x, s);
    Tensor eps_y = d.predict_eps(xp, t, c);
    Tensor yp = ddim_update(y, t, eps_y, s);
    const real rp = static_cast<real>(p);
    const real rq = static_cast<real>(1.0 - p);
    Tensor xpp = add(scalar_mul(xp, rp), scalar_mul(yp, rq));
    Tensor ypp = add(scalar_mul(yp, rp), scalar_mul(xpp, rq));
    return {std::move(xpp), std::move(ypp)};
}

double max_rel_deviation(const Tensor& a, const Tensor& b) {
    auto ad = a.data();
    auto bd = b.data();
    double m = 0.0;
    for (std::size_t i = 0; i < ad.size(); ++i) {
        const double rel = std::abs(double(ad[i]) - double(bd[i])) / (1.0 + std::abs(double(bd[i])));
        m = std::max(m, rel);
    }
    return m;
}

}  // namespace

CoupledState coupled_denoise_step(const CoupledState& st, const Denoiser& d, const Condition& c,
                                  const NoiseSchedule& s) {
    if (st.t < 1) throw contract_error("coupled_denoise_step: timestep underflow at t=0");
    auto [x, y] = coupled_step_tensors(st.x, st.y, st.t, st.p, d, c, s);
    CoupledState out;
    out.x = std::move(x);
    out.y = std::move(y);
    out.t = st.t - 1;
    out.p = st.p;
    return out;
}

CoupledState coupled_invert_step(const CoupledState& st, const Denoiser& d, const Condition& c,
                                 const NoiseSchedule& s) {
    if (st.t > s.T - 2) {
        throw contract_error("coupled_invert_step: no room to re-noise above t=" +
                             std::to_string(st.t));
    }
    const int t = st.t + 1;  // the transition being undone
    const real rp = static_cast<real>(st.p);
    const real rq = static_cast<real>(1.0 - st.p);
    const real inv_p = real(1) / rp;

    // un-mix (exact inverse of the averaging layer)
    Tensor yp = scalar_mul(sub(st.y, scalar_mul(st.x, rq)), inv_p);
    Tensor xp = scalar_mul(sub(st.x, scalar_mul(yp, rq)), inv_p);

    // undo the two affine updates in reverse order
    const auto [scale, shift] = ddim_coeffs(t, s);
    const real inv_scale = static_cast<real>(1.0 / scale);
    const real rshift = static_cast<real>(shift);
    Tensor eps_y = d.predict_eps(xp, t, c);
    Tensor y = scalar_mul(sub(yp, scalar_mul(eps_y, rshift)), inv_scale);
    Tensor eps_x = d.predict_eps(y, t, c);
    Tensor x = scalar_mul(sub(xp, scalar_mul(eps_x, rshift)), inv_scale);

    CoupledState out;
    out.x = std::move(x);
    out.y = std::move(y);
    out.t = t;
    out.p = st.p;
    return out;
}

GenerateResult generate(const Tensor& x_T, const Condition& c, const Denoiser& d,
                        const NoiseSchedule& s, double p) {
    GenerateResult result;
    result.traj.initial = init_coupled(x_T, p, s);
    CoupledState st = result.traj.initial;
    while (st.t >= 1) {
        st = coupled_denoise_step(st, d, c, s);
        ++result.traj.steps;
    }
    result.x0 = st.x;
    result.traj.final_state = std::move(st);
    return result;
}

GradResult grad_wrt_latent(const Tensor& x_T, const Condition& c, const LatentLoss& loss,
                           const Denoiser& d, const NoiseSchedule& s, double p, double drift_tol) {
    // forward fold, keeping only the running state
    CoupledState cur = init_coupled(x_T, p, s);
    while (cur.t >= 1) {
        cur = coupled_denoise_step(cur, d, c, s);
    }

    GradResult result;
    result.x0 = cur.x;

    // seed: d loss / d (final x, final y); the y branch feeds nothing downstream
    Tensor gx;
    {
        Tensor x0_leaf = cur.x.clone();
        x0_leaf.set_requires_grad(true);
        Tensor l = loss(x0_leaf);
        if (!l.is_scalar()) throw contract_error("latent loss must be scalar-valued");
        result.loss = double(l.item());
        if (!std::isfinite(result.loss)) throw numeric_error("latent loss is not finite");
        backward(l);
        gx = x0_leaf.has_grad() ? x0_leaf.grad_tensor() : Tensor(cur.x.shape(), real(0));
    }
    Tensor gy(cur.y.shape(), real(0));

    // backward sweep: reconstruct the predecessor, re-run one step on a tape,
    // and chain the vector-Jacobian product through it
    while (cur.t <= s.T - 2) {
        CoupledState prev = coupled_invert_step(cur, d, c, s);

        Tensor px = prev.x.clone();
        Tensor py = prev.y.clone();
        px.set_requires_grad(true);
        py.set_requires_grad(true);
        auto [nx, ny] = coupled_step_tensors(px, py, prev.t, p, d, c, s);

        const double drift = std::max(max_rel_deviation(nx, cur.x), max_rel_deviation(ny, cur.y));
        if (drift > drift_tol) {
            throw integrity_error("reconstruction drift " + std::to_string(drift) +
                                  " exceeds tolerance " + std::to_string(drift_tol) + " at t=" +
                                  std::to_string(prev.t));
        }

        Tensor surrogate = add(sum(mul(nx, gx)), sum(mul(ny, gy)));
        backward(surrogate);
        gx = px.has_grad() ? px.grad_tensor() : Tensor(px.shape(), real(0));
        gy = py.has_grad() ? py.grad_tensor() : Tensor(py.shape(), real(0));

        cur = std::move(prev);
    }

    // both branches started as x_T
    result.grad = add(gx, gy);
    for (real v : result.grad.data()) {
        if (!std::isfinite(double(v))) throw numeric_error("latent gradient is not finite");
    }
    return result;
}

}  // namespace sgool
