#include "sgool/nn.hpp"

#include <cmath>

namespace sgool {

Tensor normal_tensor(Shape shape, Rng& rng, double stddev) {
    std::vector<real> values(shape_numel(shape));
    for (auto& v : values) v = static_cast<real>(rng.normal() * stddev);
    return Tensor(std::move(shape), std::move(values));
}

DenseLayer make_dense(int in_dim, int out_dim, Rng& rng, double gain) {
    DenseLayer layer;
    const double stddev = gain * std::sqrt(2.0 / in_dim);
    layer.w = normal_tensor(Shape{out_dim, in_dim}, rng, stddev);
    layer.b = Tensor(Shape{out_dim}, real(0));
    layer.w.set_requires_grad(true);
    layer.b.set_requires_grad(true);
    return layer;
}

Tensor time_features(int t, int dim) {
    if (dim < 2 || dim % 2 != 0) throw contract_error("time_features: dim must be even and >= 2");
    std::vector<real> f(dim);
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::pow(10000.0, -double(i) / half);
        f[i] = static_cast<real>(std::sin(t * freq));
        f[half + i] = static_cast<real>(std::cos(t * freq));
    }
    return Tensor(Shape{dim}, std::move(f));
}

Tensor onehot_columns(std::span<const int> labels, int K) {
    const int B = static_cast<int>(labels.size());
    Tensor m(Shape{K, B}, real(0));
    auto d = m.mutable_data();
    for (int j = 0; j < B; ++j) {
        if (labels[j] < 0 || labels[j] >= K) {
            throw contract_error("label " + std::to_string(labels[j]) + " outside vocabulary of " +
                                 std::to_string(K));
        }
        d[std::size_t(labels[j]) * B + j] = real(1);
    }
    return m;
}

void Adam::step(std::span<Tensor> params) {
    if (m_.empty()) {
        m_.resize(params.size());
        v_.resize(params.size());
        for (std::size_t p = 0; p < params.size(); ++p) {
            m_[p].assign(params[p].numel(), real(0));
            v_[p].assign(params[p].numel(), real(0));
        }
    }
    if (m_.size() != params.size()) throw contract_error("Adam: parameter set changed");

    ++step_count_;
    const double bc1 = 1.0 - std::pow(beta1_, step_count_);
    const double bc2 = 1.0 - std::pow(beta2_, step_count_);

    for (std::size_t p = 0; p < params.size(); ++p) {
        Tensor& t = params[p];
        if (!t.has_grad()) continue;  // parameter untouched by this loss
        auto g = t.grad();
        auto d = t.mutable_data();
        auto& m = m_[p];
        auto& v = v_[p];
        for (std::size_t i = 0; i < d.size(); ++i) {
            m[i] = static_cast<real>(beta1_ * m[i] + (1.0 - beta1_) * g[i]);
            v[i] = static_cast<real>(beta2_ * v[i] + (1.0 - beta2_) * g[i] * g[i]);
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            d[i] -= static_cast<real>(lr_ * mhat / (std::sqrt(vhat) + eps_));
        }
        t.zero_grad();
    }
}

}  // namespace sgool
