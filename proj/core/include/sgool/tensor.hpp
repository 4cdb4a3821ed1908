#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "sgool/errors.hpp"

namespace sgool {

#ifdef SGOOL_SINGLE_PRECISION
using real = float;
#else
using real = double;
#endif

using Shape = std::vector<int>;

std::size_t shape_numel(const Shape& s);
std::string shape_str(const Shape& s);

struct TensorImpl;

// One recorded step of a computation. The tape is implicit: each non-leaf
// tensor owns the node that produced it, nodes own their input tensors, and
// node sequence numbers give a valid topological order. A tape is single-use;
// backward() severs it.
struct TapeNode {
    const char* op = "";
    std::uint64_t seq = 0;
    bool consumed = false;
    std::vector<std::shared_ptr<TensorImpl>> inputs;
    std::weak_ptr<TensorImpl> output;
    // accumulates input gradients given the output gradient
    std::function<void(std::span<const real>)> backward;
};

struct TensorImpl {
    Shape shape;
    std::vector<real> data;
    std::vector<real> grad;  // sized lazily on first accumulation
    bool requires_grad = false;
    std::shared_ptr<TapeNode> node;  // null for leaves and constants
};

// Dense row-major tensor with optional reverse-mode differentiation record.
// Copies are shallow (shared storage); use clone() for a deep copy.
class Tensor {
  public:
    Tensor() = default;
    explicit Tensor(Shape shape, real fill = real(0));
    Tensor(Shape shape, std::vector<real> values);

    static Tensor scalar(real v);
    static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
    static Tensor full(Shape shape, real v) { return Tensor(std::move(shape), v); }

    bool defined() const { return impl_ != nullptr; }
    const Shape& shape() const;
    int rank() const { return static_cast<int>(shape().size()); }
    std::size_t numel() const;
    bool is_scalar() const { return numel() == 1; }

    std::span<const real> data() const;
    std::span<real> mutable_data();
    real at(std::size_t i) const;
    real item() const;  // value of a scalar-shaped tensor

    bool requires_grad() const;
    Tensor& set_requires_grad(bool on = true);
    bool has_grad() const;
    std::span<const real> grad() const;
    Tensor grad_tensor() const;
    void zero_grad();

    Tensor clone() const;   // deep copy, keeps requires_grad, drops tape node
    Tensor detach() const;  // shares data, constant (no grad, no node)

    std::shared_ptr<TensorImpl> impl() const { return impl_; }

    static Tensor from_impl(std::shared_ptr<TensorImpl> impl);

  private:
    std::shared_ptr<TensorImpl> impl_;
};

// ---- primitives ----
// Elementwise binary ops accept equal shapes, or a scalar-shaped tensor on
// either side (the only broadcast supported).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scalar_mul(const Tensor& a, real s);

// [mxk]*[kxn] -> [mxn], [mxk]*[k] -> [m]
Tensor matmul(const Tensor& a, const Tensor& b);
// W [outxin], b [out], x [in] or [inxB] (bias broadcast over columns)
Tensor linear(const Tensor& w, const Tensor& b, const Tensor& x);

Tensor tanh(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor exp(const Tensor& a);
Tensor log(const Tensor& a);
Tensor sqrt(const Tensor& a);
Tensor arcsin(const Tensor& a);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor l2norm(const Tensor& a);

Tensor concat(std::span<const Tensor> parts);  // along axis 0
Tensor reshape(const Tensor& a, Shape shape);
Tensor slice(const Tensor& a, int offset, int len);  // along axis 0

// Axis-aligned crop of a [C,H,W] tensor resized bilinearly to [C,th,tw].
// The box geometry is a constant; gradients flow to the source pixels.
struct CropBox {
    int row = 0, col = 0, height = 0, width = 0;
};
Tensor crop_resize(const Tensor& img, const CropBox& box, int th, int tw);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }
inline Tensor operator*(real s, const Tensor& a) { return scalar_mul(a, s); }
inline Tensor operator*(const Tensor& a, real s) { return scalar_mul(a, s); }

// Uniform-signature applier for the primitive set; reshape/slice/scalar_mul
// carry non-tensor parameters and stay standalone functions.
enum class Primitive { add, sub, mul, div, matmul, affine, tanh, silu, exp, log, sqrt, arcsin, sum, mean, l2norm, concat };
Tensor apply_primitive(Primitive op, std::span<const Tensor> inputs);

// Accumulates d(root)/d(leaf) into every reachable requires_grad leaf, then
// marks the tape consumed. root must be scalar-shaped and requires_grad.
void backward(const Tensor& root);

// Max over coordinates of |analytic - central difference| relative error for
// a scalar-valued f around x. The reference side uses forward evaluations
// only, independent of the tape machinery it checks.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h);

}  // namespace sgool
