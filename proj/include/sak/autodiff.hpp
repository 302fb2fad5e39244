// SPDX-License-Identifier: Apache-2.0
//
// Reverse-mode automatic differentiation over dense tensors.
//
// Every backward rule is written in terms of the same differentiable
// primitives, so gradients can themselves be differentiated
// (grad(..., create_graph = true)). The critic's gradient penalty relies on
// this.
#pragma once

#include "sak/tensor.hpp"

#include <functional>
#include <memory>
#include <span>
#include <vector>

namespace sak::ad {

struct Node;

/// Handle to a node of the computation graph. Copies share the node.
class Var {
public:
    Var() = default;
    explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

    static Var constant(Tensor value);
    static Var parameter(Tensor value);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const;
    /// In-place access; only meaningful for leaves (parameters, buffers).
    Tensor& mutable_value();
    const Shape& shape() const { return value().shape(); }
    std::size_t size() const { return value().size(); }
    std::size_t dim(std::size_t axis) const { return value().dim(axis); }
    bool requires_grad() const noexcept;
    Node* node() const noexcept { return node_.get(); }
    const Var& input(std::size_t i) const;

    /// Same value, cut from the graph.
    Var detach() const { return constant(value()); }

private:
    std::shared_ptr<Node> node_;
};

using BackwardFn = std::function<std::vector<Var>(const Var& grad, const Var& self)>;

struct Node {
    Tensor value;
    std::vector<Var> inputs;
    BackwardFn backward;
    bool requires_grad = false;
};

bool grad_enabled() noexcept;

/// Scoped switch for graph recording.
class GradModeGuard {
public:
    explicit GradModeGuard(bool enabled);
    ~GradModeGuard();
    GradModeGuard(const GradModeGuard&) = delete;
    GradModeGuard& operator=(const GradModeGuard&) = delete;

private:
    bool previous_;
};

/// Records an op node when recording is on and some input requires grad.
Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward);

/// d(output)/d(wrt[i]) for a single-element output. Inputs the output does not
/// depend on get zero gradients. With create_graph the returned gradients are
/// themselves differentiable.
std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph = false);

/// Convenience: gradient values only.
std::vector<Tensor> grad_values(const Var& output, std::span<const Var> wrt);

// ---- broadcasting ----------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b);
Var expand(const Var& a, const Shape& shape);
/// Sums `a` down to `shape`, which must broadcast to a.shape().
Var sum_to(const Var& a, const Shape& shape);

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var neg(const Var& a);
Var scale(const Var& a, double s);
Var add_scalar(const Var& a, double s);
Var mul_const(const Var& a, const Tensor& c);
Var exp(const Var& a);
Var log(const Var& a);
Var sqrt(const Var& a);
Var square(const Var& a);
Var relu(const Var& a);
Var leaky_relu(const Var& a, double slope);
Var clamp(const Var& a, double lo, double hi);

inline Var operator+(const Var& a, const Var& b) { return add(a, b); }
inline Var operator-(const Var& a, const Var& b) { return sub(a, b); }
inline Var operator*(const Var& a, const Var& b) { return mul(a, b); }
inline Var operator/(const Var& a, const Var& b) { return div(a, b); }
inline Var operator-(const Var& a) { return neg(a); }
inline Var operator*(const Var& a, double s) { return scale(a, s); }
inline Var operator*(double s, const Var& a) { return scale(a, s); }

// ---- reductions and shape --------------------------------------------------

Var sum(const Var& a);
Var mean(const Var& a);
Var reshape(const Var& a, Shape shape);
Var permute(const Var& a, const std::vector<std::size_t>& perm);
Var concat(const std::vector<Var>& parts, std::size_t axis);
Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end);
/// Zero-pads along one axis; the adjoint of slice.
Var pad_axis(const Var& a, std::size_t axis, std::size_t before, std::size_t after);

// ---- linear algebra --------------------------------------------------------

/// op(a) * op(b) for rank-2 operands, op = transpose when the flag is set.
Var matmul(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);
/// Batched matmul over the leading axis of rank-3 operands.
Var bmm(const Var& a, const Var& b, bool trans_a = false, bool trans_b = false);

// ---- convolution lowering --------------------------------------------------

/// Geometry of a 2D strided convolution over NCHW input. 1D problems use
/// in_h = kernel_h = stride_h = 1.
struct ConvGeometry {
    std::size_t batch = 0;
    std::size_t channels = 0;
    std::size_t in_h = 0, in_w = 0;
    std::size_t kernel_h = 1, kernel_w = 1;
    std::size_t stride_h = 1, stride_w = 1;
    std::size_t pad_top = 0, pad_left = 0;
    std::size_t out_h = 0, out_w = 0;

    /// "Same" padding: out = ceil(in / stride), extra padding after.
    static ConvGeometry same(std::size_t batch, std::size_t channels, std::size_t in_h, std::size_t in_w,
                             std::size_t kernel_h, std::size_t kernel_w, std::size_t stride_h,
                             std::size_t stride_w);
    std::size_t patch() const noexcept { return channels * kernel_h * kernel_w; }
    std::size_t columns() const noexcept { return batch * out_h * out_w; }
};

/// [N, C, H, W] -> [C*kh*kw, N*Ho*Wo].
Var im2col(const Var& x, const ConvGeometry& g);
/// Adjoint of im2col: [C*kh*kw, N*Ho*Wo] -> [N, C, H, W] (overlaps summed).
Var col2im(const Var& cols, const ConvGeometry& g);

} // namespace sak::ad
