#include "sgool/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstring>
#include <sstream>
#include <unordered_set>

namespace sgool {

namespace {

std::atomic<std::uint64_t> g_node_seq{1};

void ensure_grad(TensorImpl& t) {
    if (t.grad.size() != t.data.size()) {
        t.grad.assign(t.data.size(), real(0));
    }
}

bool any_requires_grad(std::span<const Tensor> ts) {
    for (const auto& t : ts) {
        if (t.requires_grad()) return true;
    }
    return false;
}

// Builds the result tensor and, when any input is differentiable, records the
// tape node that backs it.
Tensor make_result(Shape shape, std::vector<real> data, const char* op,
                   std::span<const Tensor> inputs,
                   std::function<void(std::span<const real>)> backward_fn) {
    auto impl = std::make_shared<TensorImpl>();
    impl->shape = std::move(shape);
    impl->data = std::move(data);
    if (any_requires_grad(inputs)) {
        impl->requires_grad = true;
        auto node = std::make_shared<TapeNode>();
        node->op = op;
        node->seq = g_node_seq.fetch_add(1, std::memory_order_relaxed);
        node->inputs.reserve(inputs.size());
        for (const auto& t : inputs) node->inputs.push_back(t.impl());
        node->output = impl;
        node->backward = std::move(backward_fn);
        impl->node = std::move(node);
    }
    return Tensor::from_impl(std::move(impl));
}

enum class Bc { same, a_scalar, b_scalar };

Bc broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
    if (a.shape() == b.shape()) return Bc::same;
    if (a.numel() == 1) return Bc::a_scalar;
    if (b.numel() == 1) return Bc::b_scalar;
    throw dim_error(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                    shape_str(b.shape()));
}

void accum_same(TensorImpl& t, std::span<const real> g, real scale = real(1)) {
    ensure_grad(t);
    for (std::size_t i = 0; i < g.size(); ++i) t.grad[i] += scale * g[i];
}

void accum_scalar(TensorImpl& t, std::span<const real> g, real scale = real(1)) {
    ensure_grad(t);
    real s = 0;
    for (real v : g) s += v;
    t.grad[0] += scale * s;
}

}  // namespace

std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (int e : s) {
        if (e <= 0) throw dim_error("extent must be positive, got " + std::to_string(e));
        n *= static_cast<std::size_t>(e);
    }
    return n;
}

std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
    os << "]";
    return os.str();
}

Tensor::Tensor(Shape shape, real fill) {
    impl_ = std::make_shared<TensorImpl>();
    impl_->data.assign(shape_numel(shape), fill);
    impl_->shape = std::move(shape);
}

Tensor::Tensor(Shape shape, std::vector<real> values) {
    if (shape_numel(shape) != values.size()) {
        throw dim_error("value count " + std::to_string(values.size()) + " does not fill shape " +
                        shape_str(shape));
    }
    impl_ = std::make_shared<TensorImpl>();
    impl_->shape = std::move(shape);
    impl_->data = std::move(values);
}

Tensor Tensor::scalar(real v) { return Tensor(Shape{1}, std::vector<real>{v}); }

Tensor Tensor::from_impl(std::shared_ptr<TensorImpl> impl) {
    Tensor t;
    t.impl_ = std::move(impl);
    return t;
}

const Shape& Tensor::shape() const {
    if (!impl_) throw contract_error("undefined tensor");
    return impl_->shape;
}

std::size_t Tensor::numel() const { return impl_ ? impl_->data.size() : 0; }

std::span<const real> Tensor::data() const {
    if (!impl_) throw contract_error("undefined tensor");
    return impl_->data;
}

std::span<real> Tensor::mutable_data() {
    if (!impl_) throw contract_error("undefined tensor");
    if (impl_->node) throw contract_error("mutating an op result would corrupt its tape");
    return impl_->data;
}

real Tensor::at(std::size_t i) const {
    auto d = data();
    if (i >= d.size()) throw contract_error("index out of range");
    return d[i];
}

real Tensor::item() const {
    if (numel() != 1) throw contract_error("item() requires a scalar-shaped tensor, got " + shape_str(shape()));
    return impl_->data[0];
}

bool Tensor::requires_grad() const { return impl_ && impl_->requires_grad; }

Tensor& Tensor::set_requires_grad(bool on) {
    if (!impl_) throw contract_error("undefined tensor");
    if (impl_->node) throw contract_error("requires_grad can only be toggled on leaves");
    impl_->requires_grad = on;
    return *this;
}

bool Tensor::has_grad() const { return impl_ && impl_->grad.size() == impl_->data.size(); }

std::span<const real> Tensor::grad() const {
    if (!has_grad()) throw contract_error("no gradient recorded for this tensor");
    return impl_->grad;
}

Tensor Tensor::grad_tensor() const { return Tensor(shape(), std::vector<real>(grad().begin(), grad().end())); }

void Tensor::zero_grad() {
    if (impl_) impl_->grad.clear();
}

Tensor Tensor::clone() const {
    if (!impl_) return Tensor();
    Tensor t(impl_->shape, std::vector<real>(impl_->data));
    t.impl_->requires_grad = impl_->requires_grad;
    return t;
}

Tensor Tensor::detach() const {
    if (!impl_) return Tensor();
    return Tensor(impl_->shape, std::vector<real>(impl_->data));
}

// ---- elementwise binary ----

namespace {

template <typename Fwd>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* op, Fwd fwd,
                 std::function<void(std::span<const real>, TensorImpl&, TensorImpl&, Bc)> bwd) {
    Bc bc = broadcast_kind(a, b, op);
    const auto& big = (bc == Bc::a_scalar) ? b : a;
    std::vector<real> out(big.numel());
    auto ad = a.data();
    auto bd = b.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const real av = (bc == Bc::a_scalar) ? ad[0] : ad[i];
        const real bv = (bc == Bc::b_scalar) ? bd[0] : bd[i];
        out[i] = fwd(av, bv);
    }
    const Tensor ins[2] = {a, b};
    auto ai = a.impl();
    auto bi = b.impl();
    return make_result(big.shape(), std::move(out), op, ins,
                       [ai, bi, bc, bwd](std::span<const real> g) { bwd(g, *ai, *bi, bc); });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "add", [](real x, real y) { return x + y; },
        [](std::span<const real> g, TensorImpl& ai, TensorImpl& bi, Bc bc) {
            if (ai.requires_grad) {
                bc == Bc::a_scalar ? accum_scalar(ai, g) : accum_same(ai, g);
            }
            if (bi.requires_grad) {
                bc == Bc::b_scalar ? accum_scalar(bi, g) : accum_same(bi, g);
            }
        });
}

Tensor sub(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "sub", [](real x, real y) { return x - y; },
        [](std::span<const real> g, TensorImpl& ai, TensorImpl& bi, Bc bc) {
            if (ai.requires_grad) {
                bc == Bc::a_scalar ? accum_scalar(ai, g) : accum_same(ai, g);
            }
            if (bi.requires_grad) {
                bc == Bc::b_scalar ? accum_scalar(bi, g, real(-1)) : accum_same(bi, g, real(-1));
            }
        });
}

Tensor mul(const Tensor& a, const Tensor& b) {
    return binary_op(
        a, b, "mul", [](real x, real y) { return x * y; },
        [](std::span<const real> g, TensorImpl& ai, TensorImpl& bi, Bc bc) {
            if (ai.requires_grad) {
                ensure_grad(ai);
                if (bc == Bc::a_scalar) {
                    real s = 0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * bi.data[i];
                    ai.grad[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        ai.grad[i] += g[i] * (bc == Bc::b_scalar ? bi.data[0] : bi.data[i]);
                    }
                }
            }
            if (bi.requires_grad) {
                ensure_grad(bi);
                if (bc == Bc::b_scalar) {
                    real s = 0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] * ai.data[i];
                    bi.grad[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        bi.grad[i] += g[i] * (bc == Bc::a_scalar ? ai.data[0] : ai.data[i]);
                    }
                }
            }
        });
}

Tensor div(const Tensor& a, const Tensor& b) {
    for (real v : b.data()) {
        if (v == real(0)) throw domain_error("div: zero divisor");
    }
    return binary_op(
        a, b, "div", [](real x, real y) { return x / y; },
        [](std::span<const real> g, TensorImpl& ai, TensorImpl& bi, Bc bc) {
            auto bval = [&](std::size_t i) { return bc == Bc::b_scalar ? bi.data[0] : bi.data[i]; };
            auto aval = [&](std::size_t i) { return bc == Bc::a_scalar ? ai.data[0] : ai.data[i]; };
            if (ai.requires_grad) {
                ensure_grad(ai);
                if (bc == Bc::a_scalar) {
                    real s = 0;
                    for (std::size_t i = 0; i < g.size(); ++i) s += g[i] / bval(i);
                    ai.grad[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) ai.grad[i] += g[i] / bval(i);
                }
            }
            if (bi.requires_grad) {
                ensure_grad(bi);
                if (bc == Bc::b_scalar) {
                    real s = 0;
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        s += -g[i] * aval(i) / (bi.data[0] * bi.data[0]);
                    }
                    bi.grad[0] += s;
                } else {
                    for (std::size_t i = 0; i < g.size(); ++i) {
                        bi.grad[i] += -g[i] * aval(i) / (bval(i) * bval(i));
                    }
                }
            }
        });
}

Tensor scalar_mul(const Tensor& a, real s) {
    std::vector<real> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = s * ad[i];
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    return make_result(a.shape(), std::move(out), "scalar_mul", ins,
                       [ai, s](std::span<const real> g) {
                           if (ai->requires_grad) accum_same(*ai, g, s);
                       });
}

// ---- matmul / linear ----

namespace {

// c[mxn] += a[mxk]*b[kxn], row-major, i-k-j loop order
void gemm_acc(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const real* arow = a + std::size_t(i) * k;
        real* crow = c + std::size_t(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const real av = arow[kk];
            if (av == real(0)) continue;
            const real* brow = b + std::size_t(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

// c[mxk] += a[mxn]*b^T where b is [kxn]
void gemm_abt_acc(const real* a, const real* b, real* c, int m, int n, int k) {
    for (int i = 0; i < m; ++i) {
        const real* arow = a + std::size_t(i) * n;
        real* crow = c + std::size_t(i) * k;
        for (int kk = 0; kk < k; ++kk) {
            const real* brow = b + std::size_t(kk) * n;
            real s = 0;
            for (int j = 0; j < n; ++j) s += arow[j] * brow[j];
            crow[kk] += s;
        }
    }
}

// c[kxn] += a^T*b where a is [mxk], b is [mxn]
void gemm_atb_acc(const real* a, const real* b, real* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        const real* arow = a + std::size_t(i) * k;
        const real* brow = b + std::size_t(i) * n;
        for (int kk = 0; kk < k; ++kk) {
            const real av = arow[kk];
            if (av == real(0)) continue;
            real* crow = c + std::size_t(kk) * n;
            for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
    if (a.rank() != 2 || (b.rank() != 1 && b.rank() != 2)) {
        throw dim_error("matmul expects [mxk]*[kxn] or [mxk]*[k], got " + shape_str(a.shape()) +
                        " and " + shape_str(b.shape()));
    }
    const int m = a.shape()[0];
    const int k = a.shape()[1];
    const bool vec = b.rank() == 1;
    const int n = vec ? 1 : b.shape()[1];
    if (b.shape()[0] != k) {
        throw dim_error("matmul inner extents differ: " + shape_str(a.shape()) + " vs " +
                        shape_str(b.shape()));
    }
    std::vector<real> out(std::size_t(m) * n, real(0));
    gemm_acc(a.data().data(), b.data().data(), out.data(), m, k, n);

    Shape oshape = vec ? Shape{m} : Shape{m, n};
    const Tensor ins[2] = {a, b};
    auto ai = a.impl();
    auto bi = b.impl();
    return make_result(std::move(oshape), std::move(out), "matmul", ins,
                       [ai, bi, m, k, n](std::span<const real> g) {
                           if (ai->requires_grad) {
                               ensure_grad(*ai);
                               gemm_abt_acc(g.data(), bi->data.data(), ai->grad.data(), m, n, k);
                           }
                           if (bi->requires_grad) {
                               ensure_grad(*bi);
                               gemm_atb_acc(ai->data.data(), g.data(), bi->grad.data(), m, k, n);
                           }
                       });
}

Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x) {
    if (w.rank() != 2) throw dim_error("linear: weight must be rank 2");
    const int out_dim = w.shape()[0];
    const int in_dim = w.shape()[1];
    if (b.rank() != 1 || b.shape()[0] != out_dim) {
        throw dim_error("linear: bias shape " + shape_str(b.shape()) + " does not match weight " +
                        shape_str(w.shape()));
    }
    const bool vec = x.rank() == 1;
    if ((vec && x.shape()[0] != in_dim) || (!vec && (x.rank() != 2 || x.shape()[0] != in_dim))) {
        throw dim_error("linear: input shape " + shape_str(x.shape()) + " does not match weight " +
                        shape_str(w.shape()));
    }
    const int batch = vec ? 1 : x.shape()[1];

    std::vector<real> out(std::size_t(out_dim) * batch);
    auto bd = b.data();
    for (int i = 0; i < out_dim; ++i) {
        for (int j = 0; j < batch; ++j) out[std::size_t(i) * batch + j] = bd[i];
    }
    gemm_acc(w.data().data(), x.data().data(), out.data(), out_dim, in_dim, batch);

    Shape oshape = vec ? Shape{out_dim} : Shape{out_dim, batch};
    const Tensor ins[3] = {w, b, x};
    auto wi = w.impl();
    auto bi = b.impl();
    auto xi = x.impl();
    return make_result(std::move(oshape), std::move(out), "linear", ins,
                       [wi, bi, xi, out_dim, in_dim, batch](std::span<const real> g) {
                           if (wi->requires_grad) {
                               ensure_grad(*wi);
                               gemm_abt_acc(g.data(), xi->data.data(), wi->grad.data(), out_dim, batch, in_dim);
                           }
                           if (bi->requires_grad) {
                               ensure_grad(*bi);
                               for (int i = 0; i < out_dim; ++i) {
                                   real s = 0;
                                   for (int j = 0; j < batch; ++j) s += g[std::size_t(i) * batch + j];
                                   bi->grad[i] += s;
                               }
                           }
                           if (xi->requires_grad) {
                               ensure_grad(*xi);
                               gemm_atb_acc(wi->data.data(), g.data(), xi->grad.data(), out_dim, in_dim, batch);
                           }
                       });
}

// ---- elementwise unary ----

namespace {

template <typename Fwd, typename Bwd>
Tensor unary_op(const Tensor& a, const char* op, Fwd fwd, Bwd bwd_factory) {
    std::vector<real> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = fwd(ad[i]);
    const Tensor ins[1] = {a};
    return make_result(a.shape(), std::move(out), op, ins, bwd_factory());
}

}  // namespace

Tensor tanh(const Tensor& a) {
    std::vector<real> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(ad[i]);
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    auto saved = std::make_shared<std::vector<real>>(out);
    return make_result(a.shape(), std::move(out), "tanh", ins,
                       [ai, saved](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           ensure_grad(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const real y = (*saved)[i];
                               ai->grad[i] += g[i] * (real(1) - y * y);
                           }
                       });
}

Tensor silu(const Tensor& a) {
    auto ai = a.impl();
    std::vector<real> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        const real s = real(1) / (real(1) + std::exp(-ad[i]));
        out[i] = ad[i] * s;
    }
    const Tensor ins[1] = {a};
    return make_result(a.shape(), std::move(out), "silu", ins,
                       [ai](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           ensure_grad(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const real x = ai->data[i];
                               const real s = real(1) / (real(1) + std::exp(-x));
                               ai->grad[i] += g[i] * s * (real(1) + x * (real(1) - s));
                           }
                       });
}

Tensor exp(const Tensor& a) {
    std::vector<real> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = std::exp(ad[i]);
        if (!std::isfinite(out[i])) throw numeric_error("exp overflow at input " + std::to_string(ad[i]));
    }
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    auto saved = std::make_shared<std::vector<real>>(out);
    return make_result(a.shape(), std::move(out), "exp", ins,
                       [ai, saved](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           ensure_grad(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] * (*saved)[i];
                       });
}

Tensor log(const Tensor& a) {
    for (real v : a.data()) {
        if (v <= real(0)) throw domain_error("log: input must be positive, got " + std::to_string(v));
    }
    auto ai = a.impl();
    return unary_op(
        a, "log", [](real x) { return std::log(x); },
        [ai]() {
            return [ai](std::span<const real> g) {
                if (!ai->requires_grad) return;
                ensure_grad(*ai);
                for (std::size_t i = 0; i < g.size(); ++i) ai->grad[i] += g[i] / ai->data[i];
            };
        });
}

Tensor sqrt(const Tensor& a) {
    for (real v : a.data()) {
        if (v < real(0)) throw domain_error("sqrt: negative input " + std::to_string(v));
    }
    std::vector<real> out(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::sqrt(ad[i]);
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    auto saved = std::make_shared<std::vector<real>>(out);
    return make_result(a.shape(), std::move(out), "sqrt", ins,
                       [ai, saved](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           ensure_grad(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               ai->grad[i] += g[i] / (real(2) * (*saved)[i]);
                           }
                       });
}

Tensor arcsin(const Tensor& a) {
    // inputs a hair beyond +/-1 from rounding are clamped; anything further is a
    // genuine domain violation
    constexpr real kTol = real(1e-12);
    std::vector<real> out(a.numel());
    std::vector<real> clamped(a.numel());
    auto ad = a.data();
    for (std::size_t i = 0; i < out.size(); ++i) {
        real v = ad[i];
        if (v > real(1) + kTol || v < real(-1) - kTol) {
            throw domain_error("arcsin: input outside [-1,1]: " + std::to_string(v));
        }
        v = std::clamp(v, real(-1), real(1));
        clamped[i] = v;
        out[i] = std::asin(v);
    }
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    auto saved = std::make_shared<std::vector<real>>(std::move(clamped));
    return make_result(a.shape(), std::move(out), "arcsin", ins,
                       [ai, saved](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           ensure_grad(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) {
                               const real x = (*saved)[i];
                               ai->grad[i] += g[i] / std::sqrt(real(1) - x * x);
                           }
                       });
}

// ---- reductions ----

Tensor sum(const Tensor& a) {
    real s = 0;
    for (real v : a.data()) s += v;
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    return make_result(Shape{1}, {s}, "sum", ins, [ai](std::span<const real> g) {
        if (!ai->requires_grad) return;
        ensure_grad(*ai);
        for (auto& gv : ai->grad) gv += g[0];
    });
}

Tensor mean(const Tensor& a) {
    real s = 0;
    for (real v : a.data()) s += v;
    const real inv_n = real(1) / static_cast<real>(a.numel());
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    return make_result(Shape{1}, {s * inv_n}, "mean", ins, [ai, inv_n](std::span<const real> g) {
        if (!ai->requires_grad) return;
        ensure_grad(*ai);
        for (auto& gv : ai->grad) gv += g[0] * inv_n;
    });
}

Tensor l2norm(const Tensor& a) {
    real ss = 0;
    for (real v : a.data()) ss += v * v;
    const real n = std::sqrt(ss);
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    return make_result(Shape{1}, {n}, "l2norm", ins, [ai, n](std::span<const real> g) {
        if (!ai->requires_grad || n == real(0)) return;  // subgradient 0 at the origin
        ensure_grad(*ai);
        for (std::size_t i = 0; i < ai->data.size(); ++i) ai->grad[i] += g[0] * ai->data[i] / n;
    });
}

// ---- structure ----

Tensor concat(std::span<const Tensor> parts) {
    if (parts.empty()) throw contract_error("concat: no inputs");
    const int r = parts[0].rank();
    if (r != 1 && r != 2) throw dim_error("concat supports rank 1 or 2");
    int total = 0;
    const int cols = r == 2 ? parts[0].shape()[1] : 1;
    for (const auto& p : parts) {
        if (p.rank() != r || (r == 2 && p.shape()[1] != cols)) {
            throw dim_error("concat: incompatible part shape " + shape_str(p.shape()));
        }
        total += p.shape()[0];
    }
    std::vector<real> out;
    out.reserve(std::size_t(total) * cols);
    for (const auto& p : parts) {
        auto d = p.data();
        out.insert(out.end(), d.begin(), d.end());
    }
    Shape oshape = r == 2 ? Shape{total, cols} : Shape{total};
    std::vector<std::shared_ptr<TensorImpl>> impls;
    impls.reserve(parts.size());
    for (const auto& p : parts) impls.push_back(p.impl());
    return make_result(std::move(oshape), std::move(out), "concat", parts,
                       [impls](std::span<const real> g) {
                           std::size_t off = 0;
                           for (const auto& pi : impls) {
                               const std::size_t n = pi->data.size();
                               if (pi->requires_grad) {
                                   ensure_grad(*pi);
                                   for (std::size_t i = 0; i < n; ++i) pi->grad[i] += g[off + i];
                               }
                               off += n;
                           }
                       });
}

Tensor reshape(const Tensor& a, Shape shape) {
    if (shape_numel(shape) != a.numel()) {
        throw dim_error("reshape: cannot view " + shape_str(a.shape()) + " as " + shape_str(shape));
    }
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    return make_result(std::move(shape), std::vector<real>(a.data().begin(), a.data().end()),
                       "reshape", ins, [ai](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           accum_same(*ai, g);
                       });
}

Tensor slice(const Tensor& a, int offset, int len) {
    const int r = a.rank();
    if (r != 1 && r != 2) throw dim_error("slice supports rank 1 or 2");
    const int n0 = a.shape()[0];
    if (offset < 0 || len <= 0 || offset + len > n0) {
        throw contract_error("slice: range [" + std::to_string(offset) + "," +
                             std::to_string(offset + len) + ") outside extent " + std::to_string(n0));
    }
    const int cols = r == 2 ? a.shape()[1] : 1;
    const std::size_t begin = std::size_t(offset) * cols;
    const std::size_t count = std::size_t(len) * cols;
    auto ad = a.data();
    std::vector<real> out(ad.begin() + begin, ad.begin() + begin + count);
    Shape oshape = r == 2 ? Shape{len, cols} : Shape{len};
    const Tensor ins[1] = {a};
    auto ai = a.impl();
    return make_result(std::move(oshape), std::move(out), "slice", ins,
                       [ai, begin](std::span<const real> g) {
                           if (!ai->requires_grad) return;
                           ensure_grad(*ai);
                           for (std::size_t i = 0; i < g.size(); ++i) ai->grad[begin + i] += g[i];
                       });
}

Tensor crop_resize(const Tensor& img, const CropBox& box, int th, int tw) {
    if (img.rank() != 3) throw dim_error("crop_resize expects [C,H,W], got " + shape_str(img.shape()));
    const int C = img.shape()[0], H = img.shape()[1], W = img.shape()[2];
    if (box.row < 0 || box.col < 0 || box.height <= 0 || box.width <= 0 ||
        box.row + box.height > H || box.col + box.width > W) {
        throw contract_error("crop_resize: box outside image bounds");
    }
    if (th <= 0 || tw <= 0) throw contract_error("crop_resize: target must be positive");

    struct Tap {
        std::size_t idx[4];
        real w[4];
    };
    auto taps = std::make_shared<std::vector<Tap>>();
    taps->reserve(std::size_t(th) * tw);
    const double sy = double(box.height) / th;
    const double sx = double(box.width) / tw;
    for (int i = 0; i < th; ++i) {
        double fy = box.row + (i + 0.5) * sy - 0.5;
        fy = std::clamp(fy, double(box.row), double(box.row + box.height - 1));
        const int y0 = static_cast<int>(std::floor(fy));
        const int y1 = std::min(y0 + 1, box.row + box.height - 1);
        const real wy = static_cast<real>(fy - y0);
        for (int j = 0; j < tw; ++j) {
            double fx = box.col + (j + 0.5) * sx - 0.5;
            fx = std::clamp(fx, double(box.col), double(box.col + box.width - 1));
            const int x0 = static_cast<int>(std::floor(fx));
            const int x1 = std::min(x0 + 1, box.col + box.width - 1);
            const real wx = static_cast<real>(fx - x0);
            Tap t;
            t.idx[0] = std::size_t(y0) * W + x0;
            t.idx[1] = std::size_t(y0) * W + x1;
            t.idx[2] = std::size_t(y1) * W + x0;
            t.idx[3] = std::size_t(y1) * W + x1;
            t.w[0] = (1 - wy) * (1 - wx);
            t.w[1] = (1 - wy) * wx;
            t.w[2] = wy * (1 - wx);
            t.w[3] = wy * wx;
            taps->push_back(t);
        }
    }

    std::vector<real> out(std::size_t(C) * th * tw);
    auto d = img.data();
    const std::size_t plane = std::size_t(H) * W;
    const std::size_t oplane = std::size_t(th) * tw;
    for (int c = 0; c < C; ++c) {
        for (std::size_t k = 0; k < oplane; ++k) {
            const Tap& t = (*taps)[k];
            real v = 0;
            for (int q = 0; q < 4; ++q) v += t.w[q] * d[c * plane + t.idx[q]];
            out[c * oplane + k] = v;
        }
    }
    const Tensor ins[1] = {img};
    auto ii = img.impl();
    return make_result(Shape{C, th, tw}, std::move(out), "crop_resize", ins,
                       [ii, taps, C, plane, oplane](std::span<const real> g) {
                           if (!ii->requires_grad) return;
                           ensure_grad(*ii);
                           for (int c = 0; c < C; ++c) {
                               for (std::size_t k = 0; k < oplane; ++k) {
                                   const Tap& t = (*taps)[k];
                                   const real gv = g[c * oplane + k];
                                   for (int q = 0; q < 4; ++q) {
                                       ii->grad[c * plane + t.idx[q]] += t.w[q] * gv;
                                   }
                               }
                           }
                       });
}

Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs) {
    auto want = [&](std::size_t n) {
        if (inputs.size() != n) {
            throw contract_error("apply_primitive: expected " + std::to_string(n) + " inputs, got " +
                                 std::to_string(inputs.size()));
        }
    };
    switch (op) {
        case Primitive::add: want(2); return add(inputs[0], inputs[1]);
        case Primitive::sub: want(2); return sub(inputs[0], inputs[1]);
        case Primitive::mul: want(2); return mul(inputs[0], inputs[1]);
        case Primitive::div: want(2); return div(inputs[0], inputs[1]);
        case Primitive::matmul: want(2); return matmul(inputs[0], inputs[1]);
        case Primitive::affine: want(3); return linear(inputs[0], inputs[1], inputs[2]);
        case Primitive::tanh: want(1); return tanh(inputs[0]);
        case Primitive::silu: want(1); return silu(inputs[0]);
        case Primitive::exp: want(1); return exp(inputs[0]);
        case Primitive::log: want(1); return log(inputs[0]);
        case Primitive::sqrt: want(1); return sqrt(inputs[0]);
        case Primitive::arcsin: want(1); return arcsin(inputs[0]);
        case Primitive::sum: want(1); return sum(inputs[0]);
        case Primitive::mean: want(1); return mean(inputs[0]);
        case Primitive::l2norm: want(1); return l2norm(inputs[0]);
        case Primitive::concat: return concat(inputs);
    }
    throw contract_error("apply_primitive: unknown op");
}

// ---- backward ----

void backward(const Tensor& root) {
    auto impl = root.impl();
    if (!impl) throw contract_error("backward: undefined tensor");
    if (root.numel() != 1) {
        throw contract_error("backward: root must be scalar-shaped, got " + shape_str(root.shape()));
    }
    if (!impl->requires_grad) throw contract_error("backward: root does not require grad");

    // gather reachable nodes; node seq numbers give topological order.
    // `order` keeps shared ownership so severing one node cannot free
    // another that is still pending.
    std::vector<std::shared_ptr<TapeNode>> order;
    std::unordered_set<TapeNode*> seen;
    std::vector<std::shared_ptr<TapeNode>> stack;
    if (impl->node) {
        if (impl->node->consumed) throw unsupported_error("backward: tape already consumed");
        stack.push_back(impl->node);
        seen.insert(impl->node.get());
    }
    while (!stack.empty()) {
        std::shared_ptr<TapeNode> n = std::move(stack.back());
        stack.pop_back();
        if (n->consumed) throw unsupported_error("backward: tape already consumed");
        for (const auto& in : n->inputs) {
            if (in->node && seen.insert(in->node.get()).second) stack.push_back(in->node);
        }
        order.push_back(std::move(n));
    }
    std::sort(order.begin(), order.end(),
              [](const auto& a, const auto& b) { return a->seq > b->seq; });

    ensure_grad(*impl);
    impl->grad[0] += real(1);

    for (const auto& n : order) {
        auto out = n->output.lock();
        if (!out) throw error("backward: tape output expired");
        if (out->grad.empty()) continue;  // no gradient flowed into this node
        n->backward(out->grad);
    }

    // single-use tape: release saved state and refuse a second pass
    for (const auto& n : order) {
        n->consumed = true;
        n->inputs.clear();
        n->backward = nullptr;
    }
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
    if (h <= 0) throw contract_error("grad_check: step must be positive");

    Tensor leaf = x.clone();
    leaf.set_requires_grad(true);
    Tensor y = f(leaf);
    if (!y.is_scalar()) throw contract_error("grad_check: f must be scalar-valued");
    if (!std::isfinite(double(y.item()))) throw numeric_error("grad_check: non-finite f(x)");
    backward(y);
    std::vector<double> analytic(x.numel(), 0.0);
    if (leaf.has_grad()) {
        auto g = leaf.grad();
        analytic.assign(g.begin(), g.end());
    }

    Tensor probe = x.detach().clone();
    auto pdata = probe.mutable_data();
    double max_rel = 0.0;
    for (std::size_t i = 0; i < probe.numel(); ++i) {
        const real keep = pdata[i];
        pdata[i] = keep + static_cast<real>(h);
        const double fp = double(f(probe).item());
        pdata[i] = keep - static_cast<real>(h);
        const double fm = double(f(probe).item());
        pdata[i] = keep;
        if (!std::isfinite(fp) || !std::isfinite(fm)) {
            throw numeric_error("grad_check: non-finite f at probe " + std::to_string(i));
        }
        const double fd = (fp - fm) / (2.0 * h);
        const double denom = std::max({std::abs(analytic[i]), std::abs(fd), 1e-8});
        max_rel = std::max(max_rel, std::abs(analytic[i] - fd) / denom);
    }
    return max_rel;
}

}  // namespace sgool
