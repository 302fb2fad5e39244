// SPDX-License-Identifier: Apache-2.0
#include "sak/autodiff.hpp"

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <unordered_map>
#include <unordered_set>

namespace sak::ad {

namespace {

thread_local bool g_grad_enabled = true;

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using ConstMap = Eigen::Map<const RowMat>;
using MutMap = Eigen::Map<RowMat>;

void require(bool ok, const std::string& what) {
    if (!ok) throw std::invalid_argument(what);
}

std::vector<std::size_t> strides_of(const Shape& s) {
    std::vector<std::size_t> st(s.size(), 1);
    for (std::size_t i = s.size(); i-- > 1;) st[i - 1] = st[i] * s[i];
    return st;
}

// For every flat index of `big`, the flat index into `small` (right-aligned,
// size-1 dims broadcast).
std::vector<std::size_t> broadcast_index(const Shape& small, const Shape& big) {
    const std::size_t rank = big.size();
    const std::size_t offset = rank - small.size();
    std::vector<std::size_t> sstride(rank, 0);
    const auto st = strides_of(small);
    for (std::size_t i = 0; i < small.size(); ++i) {
        sstride[i + offset] = small[i] == 1 ? 0 : st[i];
    }
    const std::size_t n = shape_size(big);
    std::vector<std::size_t> map(n);
    std::vector<std::size_t> idx(rank, 0);
    std::size_t src = 0;
    for (std::size_t k = 0; k < n; ++k) {
        map[k] = src;
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            src += sstride[d];
            if (idx[d] < big[d]) break;
            src -= sstride[d] * idx[d];
            idx[d] = 0;
        }
    }
    return map;
}

bool broadcastable_to(const Shape& small, const Shape& big) {
    if (small.size() > big.size()) return false;
    const std::size_t offset = big.size() - small.size();
    for (std::size_t i = 0; i < small.size(); ++i) {
        if (small[i] != 1 && small[i] != big[i + offset]) return false;
    }
    return true;
}

template <class F>
Tensor map_unary(const Tensor& a, F f) {
    Tensor out(a.shape());
    auto src = a.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < src.size(); ++i) dst[i] = f(src[i]);
    return out;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, F f) {
    Tensor out(a.shape());
    auto x = a.data();
    auto y = b.data();
    auto dst = out.data();
    for (std::size_t i = 0; i < x.size(); ++i) dst[i] = f(x[i], y[i]);
    return out;
}

Tensor permute_tensor(const Tensor& a, const std::vector<std::size_t>& perm) {
    const Shape& in = a.shape();
    const std::size_t rank = in.size();
    Shape out_shape(rank);
    for (std::size_t i = 0; i < rank; ++i) out_shape[i] = in[perm[i]];
    const auto in_st = strides_of(in);
    std::vector<std::size_t> step(rank);
    for (std::size_t i = 0; i < rank; ++i) step[i] = in_st[perm[i]];
    Tensor out(out_shape);
    auto src = a.data();
    auto dst = out.data();
    std::vector<std::size_t> idx(rank, 0);
    std::size_t s = 0;
    for (std::size_t k = 0; k < dst.size(); ++k) {
        dst[k] = src[s];
        for (std::size_t d = rank; d-- > 0;) {
            ++idx[d];
            s += step[d];
            if (idx[d] < out_shape[d]) break;
            s -= step[d] * idx[d];
            idx[d] = 0;
        }
    }
    return out;
}

void gemm(const double* a, std::size_t ar, std::size_t ac, bool ta, const double* b, std::size_t br,
          std::size_t bc, bool tb, double* c) {
    ConstMap A(a, static_cast<Eigen::Index>(ar), static_cast<Eigen::Index>(ac));
    ConstMap B(b, static_cast<Eigen::Index>(br), static_cast<Eigen::Index>(bc));
    const Eigen::Index m = static_cast<Eigen::Index>(ta ? ac : ar);
    const Eigen::Index n = static_cast<Eigen::Index>(tb ? br : bc);
    MutMap C(c, m, n);
    if (!ta && !tb) C.noalias() = A * B;
    else if (ta && !tb) C.noalias() = A.transpose() * B;
    else if (!ta && tb) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
}

} // namespace

// ---- Var / graph ------------------------------------------------------------

Var Var::constant(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    return Var(std::move(n));
}

Var Var::parameter(Tensor value) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    n->requires_grad = true;
    return Var(std::move(n));
}

const Tensor& Var::value() const {
    if (!node_) throw std::logic_error("access to undefined Var");
    return node_->value;
}

Tensor& Var::mutable_value() {
    if (!node_) throw std::logic_error("access to undefined Var");
    return node_->value;
}

bool Var::requires_grad() const noexcept { return node_ && node_->requires_grad; }

const Var& Var::input(std::size_t i) const { return node_->inputs.at(i); }

bool grad_enabled() noexcept { return g_grad_enabled; }

GradModeGuard::GradModeGuard(bool enabled) : previous_(g_grad_enabled) { g_grad_enabled = enabled; }
GradModeGuard::~GradModeGuard() { g_grad_enabled = previous_; }

Var make_op(Tensor value, std::vector<Var> inputs, BackwardFn backward) {
    auto n = std::make_shared<Node>();
    n->value = std::move(value);
    const bool record = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                                      [](const Var& v) { return v.requires_grad(); });
    if (record) {
        n->inputs = std::move(inputs);
        n->backward = std::move(backward);
        n->requires_grad = true;
    }
    return Var(std::move(n));
}

std::vector<Var> grad(const Var& output, std::span<const Var> wrt, bool create_graph) {
    require(output.size() == 1, "grad() needs a single-element output, got " + shape_str(output.shape()));

    // Iterative post-order DFS; reversed it is a topological order.
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::unordered_map<Node*, std::shared_ptr<Node>> owner;
    if (output.requires_grad()) {
        std::vector<std::pair<Node*, std::size_t>> stack{{output.node(), 0}};
        seen.insert(output.node());
        while (!stack.empty()) {
            auto& [node, next] = stack.back();
            if (next < node->inputs.size()) {
                const Var& in = node->inputs[next++];
                if (in.requires_grad() && seen.insert(in.node()).second) stack.emplace_back(in.node(), 0);
            } else {
                order.push_back(node);
                stack.pop_back();
            }
        }
    }

    std::unordered_set<Node*> targets;
    for (const Var& w : wrt) targets.insert(w.node());

    std::unordered_map<Node*, Var> grads;
    grads[output.node()] = Var::constant(Tensor(output.shape(), 1.0));

    // Map from raw node to a Var handle: inputs carry handles, the output too.
    std::unordered_map<Node*, Var> handle;
    handle[output.node()] = output;
    for (Node* n : order) {
        for (const Var& in : n->inputs) handle.emplace(in.node(), in);
    }

    GradModeGuard mode(create_graph);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
        Node* node = *it;
        auto g_it = grads.find(node);
        if (g_it == grads.end() || !node->backward) continue;
        Var g = g_it->second;
        if (!targets.count(node)) grads.erase(g_it);
        std::vector<Var> in_grads = node->backward(g, handle.at(node));
        for (std::size_t i = 0; i < node->inputs.size(); ++i) {
            const Var& in = node->inputs[i];
            if (!in.requires_grad() || i >= in_grads.size() || !in_grads[i].defined()) continue;
            auto [slot, inserted] = grads.try_emplace(in.node(), in_grads[i]);
            if (!inserted) slot->second = add(slot->second, in_grads[i]);
        }
    }

    std::vector<Var> result;
    result.reserve(wrt.size());
    for (const Var& w : wrt) {
        auto g_it = grads.find(w.node());
        if (g_it != grads.end()) result.push_back(g_it->second);
        else result.push_back(Var::constant(Tensor(w.shape(), 0.0)));
    }
    return result;
}

std::vector<Tensor> grad_values(const Var& output, std::span<const Var> wrt) {
    auto gs = grad(output, wrt, false);
    std::vector<Tensor> out;
    out.reserve(gs.size());
    for (auto& g : gs) out.push_back(g.value());
    return out;
}

// ---- broadcasting -------------------------------------------------------------

Shape broadcast_shape(const Shape& a, const Shape& b) {
    const std::size_t rank = std::max(a.size(), b.size());
    Shape out(rank, 1);
    for (std::size_t i = 0; i < rank; ++i) {
        const std::size_t da = i < rank - a.size() ? 1 : a[i - (rank - a.size())];
        const std::size_t db = i < rank - b.size() ? 1 : b[i - (rank - b.size())];
        require(da == db || da == 1 || db == 1,
                "shapes " + shape_str(a) + " and " + shape_str(b) + " do not broadcast");
        out[i] = std::max(da, db);
    }
    return out;
}

Var expand(const Var& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    require(broadcastable_to(a.shape(), shape), "cannot expand " + shape_str(a.shape()) + " to " + shape_str(shape));
    const auto map = broadcast_index(a.shape(), shape);
    Tensor out(shape);
    auto src = a.value().data();
    auto dst = out.data();
    for (std::size_t k = 0; k < dst.size(); ++k) dst[k] = src[map[k]];
    Shape from = a.shape();
    return make_op(std::move(out), {a}, [from](const Var& g, const Var&) {
        return std::vector<Var>{sum_to(g, from)};
    });
}

Var sum_to(const Var& a, const Shape& shape) {
    if (a.shape() == shape) return a;
    require(broadcastable_to(shape, a.shape()), "cannot sum " + shape_str(a.shape()) + " to " + shape_str(shape));
    const auto map = broadcast_index(shape, a.shape());
    Tensor out(shape, 0.0);
    auto src = a.value().data();
    auto dst = out.data();
    for (std::size_t k = 0; k < src.size(); ++k) dst[map[k]] += src[k];
    Shape from = a.shape();
    return make_op(std::move(out), {a}, [from](const Var& g, const Var&) {
        return std::vector<Var>{expand(g, from)};
    });
}

// ---- elementwise ----------------------------------------------------------------

Var add(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        const Shape s = broadcast_shape(a.shape(), b.shape());
        return add(expand(a, s), expand(b, s));
    }
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x + y; }), {a, b},
                   [](const Var& g, const Var&) { return std::vector<Var>{g, g}; });
}

Var sub(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        const Shape s = broadcast_shape(a.shape(), b.shape());
        return sub(expand(a, s), expand(b, s));
    }
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x - y; }), {a, b},
                   [](const Var& g, const Var&) { return std::vector<Var>{g, neg(g)}; });
}

Var mul(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        const Shape s = broadcast_shape(a.shape(), b.shape());
        return mul(expand(a, s), expand(b, s));
    }
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x * y; }), {a, b},
                   [](const Var& g, const Var& self) {
                       return std::vector<Var>{mul(g, self.input(1)), mul(g, self.input(0))};
                   });
}

Var div(const Var& a, const Var& b) {
    if (a.shape() != b.shape()) {
        const Shape s = broadcast_shape(a.shape(), b.shape());
        return div(expand(a, s), expand(b, s));
    }
    return make_op(map_binary(a.value(), b.value(), [](double x, double y) { return x / y; }), {a, b},
                   [](const Var& g, const Var& self) {
                       const Var& den = self.input(1);
                       // d(a/b)/db = -(a/b)/b; recomputed from inputs so second
                       // derivatives see the dependence on b.
                       Var q = div(self.input(0), den);
                       return std::vector<Var>{div(g, den), neg(mul(g, div(q, den)))};
                   });
}

Var neg(const Var& a) {
    return make_op(map_unary(a.value(), [](double x) { return -x; }), {a},
                   [](const Var& g, const Var&) { return std::vector<Var>{neg(g)}; });
}

Var scale(const Var& a, double s) {
    return make_op(map_unary(a.value(), [s](double x) { return x * s; }), {a},
                   [s](const Var& g, const Var&) { return std::vector<Var>{scale(g, s)}; });
}

Var add_scalar(const Var& a, double s) {
    return make_op(map_unary(a.value(), [s](double x) { return x + s; }), {a},
                   [](const Var& g, const Var&) { return std::vector<Var>{g}; });
}

Var mul_const(const Var& a, const Tensor& c) {
    require(a.shape() == c.shape(), "mul_const shape mismatch " + shape_str(a.shape()) + " vs " + shape_str(c.shape()));
    return make_op(map_binary(a.value(), c, [](double x, double y) { return x * y; }), {a},
                   [c](const Var& g, const Var&) { return std::vector<Var>{mul_const(g, c)}; });
}

Var exp(const Var& a) {
    return make_op(map_unary(a.value(), [](double x) { return std::exp(x); }), {a},
                   [](const Var& g, const Var& self) { return std::vector<Var>{mul(g, exp(self.input(0)))}; });
}

Var log(const Var& a) {
    return make_op(map_unary(a.value(), [](double x) { return std::log(x); }), {a},
                   [](const Var& g, const Var& self) { return std::vector<Var>{div(g, self.input(0))}; });
}

Var sqrt(const Var& a) {
    return make_op(map_unary(a.value(), [](double x) { return std::sqrt(x); }), {a},
                   [](const Var& g, const Var& self) {
                       return std::vector<Var>{div(g, scale(sqrt(self.input(0)), 2.0))};
                   });
}

Var square(const Var& a) {
    return make_op(map_unary(a.value(), [](double x) { return x * x; }), {a},
                   [](const Var& g, const Var& self) { return std::vector<Var>{mul(g, scale(self.input(0), 2.0))}; });
}

Var relu(const Var& a) { return leaky_relu(a, 0.0); }

Var leaky_relu(const Var& a, double slope) {
    Tensor mask = map_unary(a.value(), [slope](double x) { return x > 0.0 ? 1.0 : slope; });
    return mul_const(a, mask);
}

Var clamp(const Var& a, double lo, double hi) {
    Tensor mask = map_unary(a.value(), [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
    Tensor offset = map_unary(a.value(), [lo, hi](double x) { return x < lo ? lo : (x > hi ? hi : 0.0); });
    Var inside = mul_const(a, mask);
    Tensor v = inside.value();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += offset[i];
    return make_op(std::move(v), {inside}, [](const Var& g, const Var&) { return std::vector<Var>{g}; });
}

// ---- reductions and shape ------------------------------------------------------------

Var sum(const Var& a) {
    double s = 0.0;
    for (double v : a.value().data()) s += v;
    Shape from = a.shape();
    return make_op(Tensor::scalar(s), {a}, [from](const Var& g, const Var&) {
        return std::vector<Var>{expand(g, from)};
    });
}

Var mean(const Var& a) { return scale(sum(a), 1.0 / static_cast<double>(a.size())); }

Var reshape(const Var& a, Shape shape) {
    Shape from = a.shape();
    return make_op(a.value().reshaped(std::move(shape)), {a}, [from](const Var& g, const Var&) {
        return std::vector<Var>{reshape(g, from)};
    });
}

Var permute(const Var& a, const std::vector<std::size_t>& perm) {
    require(perm.size() == a.shape().size(), "permute rank mismatch");
    std::vector<std::size_t> inverse(perm.size());
    for (std::size_t i = 0; i < perm.size(); ++i) inverse[perm[i]] = i;
    return make_op(permute_tensor(a.value(), perm), {a}, [inverse](const Var& g, const Var&) {
        return std::vector<Var>{permute(g, inverse)};
    });
}

Var concat(const std::vector<Var>& parts, std::size_t axis) {
    require(!parts.empty(), "concat of nothing");
    Shape out_shape = parts[0].shape();
    require(axis < out_shape.size(), "concat axis out of range");
    std::vector<std::size_t> lens;
    std::size_t total = 0;
    for (const Var& p : parts) {
        Shape s = p.shape();
        require(s.size() == out_shape.size(), "concat rank mismatch");
        for (std::size_t d = 0; d < s.size(); ++d) {
            require(d == axis || s[d] == out_shape[d], "concat shape mismatch " + shape_str(s) + " vs " + shape_str(out_shape));
        }
        lens.push_back(s[axis]);
        total += s[axis];
    }
    out_shape[axis] = total;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= out_shape[d];
    for (std::size_t d = axis + 1; d < out_shape.size(); ++d) inner *= out_shape[d];
    Tensor out(out_shape);
    auto dst = out.data();
    std::size_t offset = 0;
    for (std::size_t p = 0; p < parts.size(); ++p) {
        auto src = parts[p].value().data();
        const std::size_t chunk = lens[p] * inner;
        for (std::size_t o = 0; o < outer; ++o) {
            std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                        dst.begin() + static_cast<std::ptrdiff_t>(o * total * inner + offset * inner));
        }
        offset += lens[p];
    }
    return make_op(std::move(out), parts, [lens, axis](const Var& g, const Var&) {
        std::vector<Var> gs;
        std::size_t off = 0;
        for (std::size_t len : lens) {
            gs.push_back(slice(g, axis, off, off + len));
            off += len;
        }
        return gs;
    });
}

Var slice(const Var& a, std::size_t axis, std::size_t begin, std::size_t end) {
    const Shape& s = a.shape();
    require(axis < s.size() && begin <= end && end <= s[axis], "slice out of range");
    if (begin == 0 && end == s[axis]) return a;
    Shape out_shape = s;
    out_shape[axis] = end - begin;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Tensor out(out_shape);
    auto src = a.value().data();
    auto dst = out.data();
    const std::size_t chunk = (end - begin) * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * s[axis] * inner + begin * inner), chunk,
                    dst.begin() + static_cast<std::ptrdiff_t>(o * chunk));
    }
    const std::size_t after = s[axis] - end;
    return make_op(std::move(out), {a}, [axis, begin, after](const Var& g, const Var&) {
        return std::vector<Var>{pad_axis(g, axis, begin, after)};
    });
}

Var pad_axis(const Var& a, std::size_t axis, std::size_t before, std::size_t after) {
    const Shape& s = a.shape();
    require(axis < s.size(), "pad axis out of range");
    if (before == 0 && after == 0) return a;
    Shape out_shape = s;
    out_shape[axis] = s[axis] + before + after;
    std::size_t outer = 1, inner = 1;
    for (std::size_t d = 0; d < axis; ++d) outer *= s[d];
    for (std::size_t d = axis + 1; d < s.size(); ++d) inner *= s[d];
    Tensor out(out_shape, 0.0);
    auto src = a.value().data();
    auto dst = out.data();
    const std::size_t chunk = s[axis] * inner;
    for (std::size_t o = 0; o < outer; ++o) {
        std::copy_n(src.begin() + static_cast<std::ptrdiff_t>(o * chunk), chunk,
                    dst.begin() + static_cast<std::ptrdiff_t>(o * out_shape[axis] * inner + before * inner));
    }
    const std::size_t len = s[axis];
    return make_op(std::move(out), {a}, [axis, before, len](const Var& g, const Var&) {
        return std::vector<Var>{slice(g, axis, before, before + len)};
    });
}

// ---- linear algebra ------------------------------------------------------------------

Var matmul(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    require(sa.size() == 2 && sb.size() == 2, "matmul needs rank-2 operands");
    const std::size_t m = trans_a ? sa[1] : sa[0];
    const std::size_t ka = trans_a ? sa[0] : sa[1];
    const std::size_t kb = trans_b ? sb[1] : sb[0];
    const std::size_t n = trans_b ? sb[0] : sb[1];
    require(ka == kb, "matmul inner dimension mismatch " + shape_str(sa) + " x " + shape_str(sb));
    Tensor out(Shape{m, n});
    gemm(a.value().data().data(), sa[0], sa[1], trans_a, b.value().data().data(), sb[0], sb[1], trans_b,
         out.data().data());
    return make_op(std::move(out), {a, b}, [trans_a, trans_b](const Var& g, const Var& self) {
        const Var& A = self.input(0);
        const Var& B = self.input(1);
        if (!trans_a && !trans_b) return std::vector<Var>{matmul(g, B, false, true), matmul(A, g, true, false)};
        if (trans_a && !trans_b) return std::vector<Var>{matmul(B, g, false, true), matmul(A, g, false, false)};
        if (!trans_a && trans_b) return std::vector<Var>{matmul(g, B, false, false), matmul(g, A, true, false)};
        return std::vector<Var>{matmul(B, g, true, true), matmul(g, A, true, true)};
    });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
    const Shape& sa = a.shape();
    const Shape& sb = b.shape();
    require(sa.size() == 3 && sb.size() == 3 && sa[0] == sb[0], "bmm needs rank-3 operands with equal batch");
    const std::size_t batch = sa[0];
    const std::size_t m = trans_a ? sa[2] : sa[1];
    const std::size_t ka = trans_a ? sa[1] : sa[2];
    const std::size_t kb = trans_b ? sb[2] : sb[1];
    const std::size_t n = trans_b ? sb[1] : sb[2];
    require(ka == kb, "bmm inner dimension mismatch " + shape_str(sa) + " x " + shape_str(sb));
    Tensor out(Shape{batch, m, n});
    const double* pa = a.value().data().data();
    const double* pb = b.value().data().data();
    double* pc = out.data().data();
    for (std::size_t i = 0; i < batch; ++i) {
        gemm(pa + i * sa[1] * sa[2], sa[1], sa[2], trans_a, pb + i * sb[1] * sb[2], sb[1], sb[2], trans_b,
             pc + i * m * n);
    }
    return make_op(std::move(out), {a, b}, [trans_a, trans_b](const Var& g, const Var& self) {
        const Var& A = self.input(0);
        const Var& B = self.input(1);
        if (!trans_a && !trans_b) return std::vector<Var>{bmm(g, B, false, true), bmm(A, g, true, false)};
        if (trans_a && !trans_b) return std::vector<Var>{bmm(B, g, false, true), bmm(A, g, false, false)};
        if (!trans_a && trans_b) return std::vector<Var>{bmm(g, B, false, false), bmm(g, A, true, false)};
        return std::vector<Var>{bmm(B, g, true, true), bmm(g, A, true, true)};
    });
}

// ---- convolution lowering ----------------------------------------------------------

ConvGeometry ConvGeometry::same(std::size_t batch, std::size_t channels, std::size_t in_h, std::size_t in_w,
                                std::size_t kernel_h, std::size_t kernel_w, std::size_t stride_h,
                                std::size_t stride_w) {
    ConvGeometry g;
    g.batch = batch;
    g.channels = channels;
    g.in_h = in_h;
    g.in_w = in_w;
    g.kernel_h = kernel_h;
    g.kernel_w = kernel_w;
    g.stride_h = stride_h;
    g.stride_w = stride_w;
    g.out_h = (in_h + stride_h - 1) / stride_h;
    g.out_w = (in_w + stride_w - 1) / stride_w;
    const auto total_pad = [](std::size_t out, std::size_t stride, std::size_t k, std::size_t in) -> std::size_t {
        const std::size_t need = (out - 1) * stride + k;
        return need > in ? need - in : 0;
    };
    g.pad_top = total_pad(g.out_h, stride_h, kernel_h, in_h) / 2;
    g.pad_left = total_pad(g.out_w, stride_w, kernel_w, in_w) / 2;
    return g;
}

namespace {

// Walks every (row, column) pair of the lowered matrix together with the
// source offset into the NCHW tensor (or -1 for padding).
template <class F>
void for_each_patch(const ConvGeometry& g, F f) {
    const std::size_t cols = g.columns();
    const std::size_t hw = g.in_h * g.in_w;
    for (std::size_t c = 0; c < g.channels; ++c) {
        for (std::size_t ki = 0; ki < g.kernel_h; ++ki) {
            for (std::size_t kj = 0; kj < g.kernel_w; ++kj) {
                const std::size_t row = (c * g.kernel_h + ki) * g.kernel_w + kj;
                std::size_t col = 0;
                for (std::size_t n = 0; n < g.batch; ++n) {
                    const std::size_t base = (n * g.channels + c) * hw;
                    for (std::size_t oh = 0; oh < g.out_h; ++oh) {
                        const std::ptrdiff_t ih = static_cast<std::ptrdiff_t>(oh * g.stride_h + ki) -
                                                  static_cast<std::ptrdiff_t>(g.pad_top);
                        const bool row_ok = ih >= 0 && ih < static_cast<std::ptrdiff_t>(g.in_h);
                        for (std::size_t ow = 0; ow < g.out_w; ++ow, ++col) {
                            const std::ptrdiff_t iw = static_cast<std::ptrdiff_t>(ow * g.stride_w + kj) -
                                                      static_cast<std::ptrdiff_t>(g.pad_left);
                            if (row_ok && iw >= 0 && iw < static_cast<std::ptrdiff_t>(g.in_w)) {
                                f(row * cols + col, base + static_cast<std::size_t>(ih) * g.in_w +
                                                        static_cast<std::size_t>(iw));
                            }
                        }
                    }
                }
            }
        }
    }
}

} // namespace

Var im2col(const Var& x, const ConvGeometry& g) {
    require(x.shape() == Shape({g.batch, g.channels, g.in_h, g.in_w}),
            "im2col input " + shape_str(x.shape()) + " does not match geometry");
    Tensor out(Shape{g.patch(), g.columns()}, 0.0);
    auto src = x.value().data();
    auto dst = out.data();
    for_each_patch(g, [&](std::size_t d, std::size_t s) { dst[d] = src[s]; });
    return make_op(std::move(out), {x}, [g](const Var& grad, const Var&) {
        return std::vector<Var>{col2im(grad, g)};
    });
}

Var col2im(const Var& cols, const ConvGeometry& g) {
    require(cols.shape() == Shape({g.patch(), g.columns()}),
            "col2im input " + shape_str(cols.shape()) + " does not match geometry");
    Tensor out(Shape{g.batch, g.channels, g.in_h, g.in_w}, 0.0);
    auto src = cols.value().data();
    auto dst = out.data();
    for_each_patch(g, [&](std::size_t d, std::size_t s) { dst[s] += src[d]; });
    return make_op(std::move(out), {cols}, [g](const Var& grad, const Var&) {
        return std::vector<Var>{im2col(grad, g)};
    });
}

} // namespace sak::ad
