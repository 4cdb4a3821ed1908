#pragma once

#include <span>
#include <vector>

#include "sgool/rng.hpp"
#include "sgool/tensor.hpp"

namespace sgool {

struct DenseLayer {
    Tensor w;  // [outxin]
    Tensor b;  // [out]
};

// He-style fan-in init, weights scaled by `gain`.
DenseLayer make_dense(int in_dim, int out_dim, Rng& rng, double gain = 1.0);

Tensor normal_tensor(Shape shape, Rng& rng, double stddev = 1.0);

// sinusoidal features of an integer timestep, dim must be even
Tensor time_features(int t, int dim);

// one-hot column matrix [KxB] selecting `labels`
Tensor onehot_columns(std::span<const int> labels, int K);

class Adam {
  public:
    explicit Adam(double lr = 1e-3, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8)
        : lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {}

    // applies one update from the accumulated grads, then clears them
    void step(std::span<Tensor> params);

    double lr() const { return lr_; }
    void set_lr(double lr) { lr_ = lr; }

  private:
    double lr_, beta1_, beta2_, eps_;
    long step_count_ = 0;
    std::vector<std::vector<real>> m_, v_;
};

}  // namespace sgool
