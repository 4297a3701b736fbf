#pragma once

// Reverse-mode automatic differentiation over dense row-major tensors.
//
// Graphs are dynamic: every op evaluates eagerly and, when any input requires
// a gradient, records a backward closure on the result node. backward() walks
// the recorded nodes in reverse topological order.

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <utility>
#include <vector>

#include "igsed/common.hpp"

namespace igsed::grad {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until something flows into it
  bool requires_grad = false;
  std::string op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward_fn;

  std::vector<double>& grad_buffer() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

namespace detail {
inline bool& finite_check_flag() {
  static thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Toggle the post-op finiteness check (on by default).
inline void set_finite_check(bool enabled) { detail::finite_check_flag() = enabled; }

namespace detail {
inline bool& grad_enabled_flag() {
  static thread_local bool enabled = true;
  return enabled;
}
}  // namespace detail

/// Disables graph recording on this thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_enabled_flag()) { detail::grad_enabled_flag() = false; }
  ~NoGradGuard() { detail::grad_enabled_flag() = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

/// Handle to a graph node. Copies share the node.
class DiffTensor {
 public:
  DiffTensor() = default;
  explicit DiffTensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  const Shape& shape() const { return node_->shape; }
  std::size_t size() const { return node_->value.size(); }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }

  const std::vector<double>& value() const { return node_->value; }
  std::vector<double>& mutable_value() { return node_->value; }
  double item() const {
    if (size() != 1) throw ContractError("item() on tensor of shape " + to_string(shape()));
    return node_->value[0];
  }

  /// Gradient after backward(); zeros when nothing reached this node.
  std::vector<double> grad() const {
    if (node_->grad.empty()) return std::vector<double>(node_->value.size(), 0.0);
    return node_->grad;
  }
  bool has_grad() const { return !node_->grad.empty(); }
  void zero_grad() { node_->grad.clear(); }

  bool requires_grad() const { return node_->requires_grad; }
  const std::string& op() const { return node_->op; }
  const std::shared_ptr<Node>& node() const { return node_; }
  explicit operator bool() const { return static_cast<bool>(node_); }

 private:
  std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Construction

inline DiffTensor tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
  if (numel(shape) != values.size())
    throw ShapeError("tensor: shape " + to_string(shape) + " holds " +
                     std::to_string(numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return DiffTensor(std::move(n));
}

inline DiffTensor zeros(Shape shape, bool requires_grad = false) {
  auto n = numel(shape);
  return tensor(std::move(shape), std::vector<double>(n, 0.0), requires_grad);
}

inline DiffTensor scalar(double v) { return tensor({1}, {v}); }

/// Builds an op result. `backward` receives the result node whose grad is
/// populated and must accumulate into parents that require gradients.
/// Exposed so other modules can add fused ops (e.g. the STFT frontend).
inline DiffTensor make_op(std::string name, Shape shape, std::vector<double> value,
                          std::vector<DiffTensor> inputs, std::function<void(Node&)> backward) {
  auto n = std::make_shared<Node>();
  n->op = std::move(name);
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (detail::finite_check_flag()) {
    for (std::size_t i = 0; i < n->value.size(); ++i) {
      if (!std::isfinite(n->value[i]))
        throw NumericalError("non-finite value produced by op '" + n->op + "' at index " +
                             std::to_string(i));
    }
  }
  bool any = detail::grad_enabled_flag() &&
             std::any_of(inputs.begin(), inputs.end(),
                         [](const DiffTensor& t) { return t.requires_grad(); });
  if (any) {
    n->requires_grad = true;
    for (auto& t : inputs) n->parents.push_back(t.node());
    n->backward_fn = std::move(backward);
  }
  return DiffTensor(std::move(n));
}

// ---------------------------------------------------------------------------
// Backward

/// Accumulates d(output)/d(leaf) into every reachable node that requires a
/// gradient. Leaf gradients sum across calls until zero_grad().
inline void backward(const DiffTensor& output) {
  if (output.size() != 1)
    throw ContractError("backward() needs a scalar output, got shape " +
                        to_string(output.shape()));
  if (!output.requires_grad()) return;

  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{output.node().get(), 0}};
  seen.insert(output.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  output.node()->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && !n->grad.empty()) n->backward_fn(*n);
  }
  // Free intermediate gradients so repeated passes over leaves stay correct.
  for (Node* n : order)
    if (n->backward_fn) n->grad.clear();
}

// ---------------------------------------------------------------------------
// Elementwise

namespace detail {
inline void require_same_shape(const char* op, const DiffTensor& a, const DiffTensor& b) {
  if (a.shape() != b.shape())
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
}

inline void accumulate(Node& parent, const std::vector<double>& g, double scale = 1.0) {
  if (!parent.requires_grad) return;
  auto& dst = parent.grad_buffer();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += scale * g[i];
}

template <typename F>
DiffTensor unary(const char* name, const DiffTensor& x, F f,
                 std::function<double(double x, double y)> dydx) {
  std::vector<double> out(x.size());
  const auto& xv = x.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(xv[i]);
  return make_op(name, x.shape(), std::move(out), {x}, [dydx](Node& self) {
    Node& p = *self.parents[0];
    auto& g = p.grad_buffer();
    for (std::size_t i = 0; i < g.size(); ++i)
      g[i] += self.grad[i] * dydx(p.value[i], self.value[i]);
  });
}
}  // namespace detail

inline DiffTensor add(const DiffTensor& a, const DiffTensor& b) {
  detail::require_same_shape("add", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  return make_op("add", a.shape(), std::move(out), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad);
  });
}

inline DiffTensor sub(const DiffTensor& a, const DiffTensor& b) {
  detail::require_same_shape("sub", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] - b.value()[i];
  return make_op("sub", a.shape(), std::move(out), {a, b}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
    detail::accumulate(*self.parents[1], self.grad, -1.0);
  });
}

inline DiffTensor mul(const DiffTensor& a, const DiffTensor& b) {
  detail::require_same_shape("mul", a, b);
  std::vector<double> out(a.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make_op("mul", a.shape(), std::move(out), {a, b}, [](Node& self) {
    Node& pa = *self.parents[0];
    Node& pb = *self.parents[1];
    if (pa.requires_grad) {
      auto& g = pa.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pb.value[i];
    }
    if (pb.requires_grad) {
      auto& g = pb.grad_buffer();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += self.grad[i] * pa.value[i];
    }
  });
}

/// y = scale * x + shift
inline DiffTensor affine(const DiffTensor& x, double scale, double shift = 0.0) {
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = scale * x.value()[i] + shift;
  return make_op("affine", x.shape(), std::move(out), {x}, [scale](Node& self) {
    detail::accumulate(*self.parents[0], self.grad, scale);
  });
}

inline DiffTensor relu(const DiffTensor& x) {
  return detail::unary(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline double sigmoid_value(double v) {
  if (v >= 0.0) return 1.0 / (1.0 + std::exp(-v));
  double e = std::exp(v);
  return e / (1.0 + e);
}

inline DiffTensor sigmoid(const DiffTensor& x) {
  return detail::unary("sigmoid", x, sigmoid_value,
                       [](double, double y) { return y * (1.0 - y); });
}

inline DiffTensor log(const DiffTensor& x) {
  return detail::unary(
      "log", x, [](double v) { return std::log(v); }, [](double v, double) { return 1.0 / v; });
}

/// log(max(x, floor)); zero gradient where the floor is active.
inline DiffTensor log_floor(const DiffTensor& x, double floor) {
  return detail::unary(
      "log_floor", x, [floor](double v) { return std::log(std::max(v, floor)); },
      [floor](double v, double) { return v > floor ? 1.0 / v : 0.0; });
}

inline DiffTensor exp(const DiffTensor& x) {
  return detail::unary(
      "exp", x, [](double v) { return std::exp(v); }, [](double, double y) { return y; });
}

// ---------------------------------------------------------------------------
// Shape ops

inline DiffTensor reshape(const DiffTensor& x, Shape shape) {
  if (numel(shape) != x.size())
    throw ShapeError("reshape: " + to_string(x.shape()) + " -> " + to_string(shape));
  return make_op("reshape", std::move(shape), x.value(), {x}, [](Node& self) {
    detail::accumulate(*self.parents[0], self.grad);
  });
}

namespace detail {
// Views a shape as (outer, axis, inner) around one axis.
struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};
inline AxisSplit split_axis(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}
inline void check_axis(const char* op, const DiffTensor& x, std::size_t axis) {
  if (axis >= x.rank())
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for " +
                     to_string(x.shape()));
}
}  // namespace detail

/// Keeps indices [begin, end) along `axis`.
inline DiffTensor slice(const DiffTensor& x, std::size_t axis, std::size_t begin,
                        std::size_t end) {
  detail::check_axis("slice", x, axis);
  if (begin >= end || end > x.dim(axis))
    throw ShapeError("slice: bad range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") for " + to_string(x.shape()));
  auto sp = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape[axis] = end - begin;
  std::size_t len = end - begin;
  std::vector<double> out(sp.outer * len * sp.inner);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < len; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[(o * len + a) * sp.inner + i] = x.value()[(o * sp.extent + begin + a) * sp.inner + i];
  return make_op("slice", std::move(out_shape), std::move(out), {x},
                 [sp, begin, len](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t o = 0; o < sp.outer; ++o)
                     for (std::size_t a = 0; a < len; ++a)
                       for (std::size_t i = 0; i < sp.inner; ++i)
                         g[(o * sp.extent + begin + a) * sp.inner + i] +=
                             self.grad[(o * len + a) * sp.inner + i];
                 });
}

/// Expands size-1 dimensions to `shape` (same rank). Backward sums.
inline DiffTensor broadcast(const DiffTensor& x, Shape shape) {
  if (shape.size() != x.rank())
    throw ShapeError("broadcast: rank mismatch " + to_string(x.shape()) + " -> " +
                     to_string(shape));
  for (std::size_t d = 0; d < shape.size(); ++d)
    if (x.dim(d) != shape[d] && x.dim(d) != 1)
      throw ShapeError("broadcast: " + to_string(x.shape()) + " -> " + to_string(shape));

  std::size_t r = shape.size();
  std::vector<std::size_t> src_stride(r, 0);
  std::size_t s = 1;
  for (std::size_t d = r; d-- > 0;) {
    src_stride[d] = x.dim(d) == 1 ? 0 : s;
    s *= x.dim(d);
  }
  std::size_t n = numel(shape);
  std::vector<std::size_t> src_index(n);
  std::vector<std::size_t> idx(r, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t off = 0;
    for (std::size_t d = 0; d < r; ++d) off += idx[d] * src_stride[d];
    src_index[k] = off;
    for (std::size_t d = r; d-- > 0;) {
      if (++idx[d] < shape[d]) break;
      idx[d] = 0;
    }
  }
  std::vector<double> out(n);
  for (std::size_t k = 0; k < n; ++k) out[k] = x.value()[src_index[k]];
  return make_op("broadcast", std::move(shape), std::move(out), {x},
                 [src_index = std::move(src_index)](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t k = 0; k < src_index.size(); ++k)
                     g[src_index[k]] += self.grad[k];
                 });
}

// ---------------------------------------------------------------------------
// Reductions

/// Mean along `axis`; the axis is removed (rank-1 input gives shape [1]).
inline DiffTensor mean(const DiffTensor& x, std::size_t axis) {
  detail::check_axis("mean", x, axis);
  auto sp = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner, 0.0);
  double inv = 1.0 / static_cast<double>(sp.extent);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t a = 0; a < sp.extent; ++a)
      for (std::size_t i = 0; i < sp.inner; ++i)
        out[o * sp.inner + i] += x.value()[(o * sp.extent + a) * sp.inner + i];
  for (double& v : out) v *= inv;
  return make_op("mean", std::move(out_shape), std::move(out), {x}, [sp, inv](Node& self) {
    auto& g = self.parents[0]->grad_buffer();
    for (std::size_t o = 0; o < sp.outer; ++o)
      for (std::size_t a = 0; a < sp.extent; ++a)
        for (std::size_t i = 0; i < sp.inner; ++i)
          g[(o * sp.extent + a) * sp.inner + i] += inv * self.grad[o * sp.inner + i];
  });
}

inline DiffTensor mean_all(const DiffTensor& x) { return mean(reshape(x, {x.size()}), 0); }

/// Max along `axis`; gradient is routed to the argmax only, first index on ties.
inline DiffTensor max(const DiffTensor& x, std::size_t axis) {
  detail::check_axis("max", x, axis);
  auto sp = detail::split_axis(x.shape(), axis);
  Shape out_shape = x.shape();
  out_shape.erase(out_shape.begin() + static_cast<std::ptrdiff_t>(axis));
  if (out_shape.empty()) out_shape = {1};
  std::vector<double> out(sp.outer * sp.inner);
  std::vector<std::size_t> arg(out.size());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      std::size_t best = o * sp.extent * sp.inner + i;
      for (std::size_t a = 1; a < sp.extent; ++a) {
        std::size_t k = (o * sp.extent + a) * sp.inner + i;
        if (x.value()[k] > x.value()[best]) best = k;
      }
      out[o * sp.inner + i] = x.value()[best];
      arg[o * sp.inner + i] = best;
    }
  return make_op("max", std::move(out_shape), std::move(out), {x},
                 [arg = std::move(arg)](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t k = 0; k < arg.size(); ++k) g[arg[k]] += self.grad[k];
                 });
}

// ---------------------------------------------------------------------------
// Linear algebra

namespace detail {
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapC = Eigen::Map<const RowMat>;
using Map = Eigen::Map<RowMat>;
}  // namespace detail

/// [m,k] x [k,n] -> [m,n]
inline DiffTensor matmul(const DiffTensor& a, const DiffTensor& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(0))
    throw ShapeError("matmul: shape mismatch " + to_string(a.shape()) + " x " +
                     to_string(b.shape()));
  auto m = static_cast<Eigen::Index>(a.dim(0));
  auto k = static_cast<Eigen::Index>(a.dim(1));
  auto n = static_cast<Eigen::Index>(b.dim(1));
  std::vector<double> out(static_cast<std::size_t>(m * n));
  detail::Map(out.data(), m, n).noalias() =
      detail::MapC(a.value().data(), m, k) * detail::MapC(b.value().data(), k, n);
  return make_op("matmul", {a.dim(0), b.dim(1)}, std::move(out), {a, b},
                 [m, k, n](Node& self) {
                   Node& pa = *self.parents[0];
                   Node& pb = *self.parents[1];
                   detail::MapC gy(self.grad.data(), m, n);
                   if (pa.requires_grad)
                     detail::Map(pa.grad_buffer().data(), m, k).noalias() +=
                         gy * detail::MapC(pb.value.data(), k, n).transpose();
                   if (pb.requires_grad)
                     detail::Map(pb.grad_buffer().data(), k, n).noalias() +=
                         detail::MapC(pa.value.data(), m, k).transpose() * gy;
                 });
}

struct Conv2dOptions {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// Cross-correlation of x [Cin,H,W] with w [Cout,Cin,kh,kw] plus optional
/// bias [Cout]; zero padding. Implemented as im2col + GEMM.
inline DiffTensor conv2d(const DiffTensor& x, const DiffTensor& w, const DiffTensor& bias = {},
                         Conv2dOptions opt = {}) {
  if (x.rank() != 3 || w.rank() != 4 || w.dim(1) != x.dim(0))
    throw ShapeError("conv2d: input " + to_string(x.shape()) + " vs kernel " +
                     to_string(w.shape()));
  if (bias && (bias.rank() != 1 || bias.dim(0) != w.dim(0)))
    throw ShapeError("conv2d: bias " + to_string(bias.shape()) + " vs kernel " +
                     to_string(w.shape()));
  if (opt.stride == 0) throw ShapeError("conv2d: stride must be positive");
  const std::size_t cin = x.dim(0), h = x.dim(1), wd = x.dim(2);
  const std::size_t cout = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  const std::size_t ph = h + 2 * opt.padding, pw = wd + 2 * opt.padding;
  if (ph < kh || pw < kw)
    throw ShapeError("conv2d: kernel " + to_string(w.shape()) + " larger than padded input " +
                     to_string(x.shape()));
  const std::size_t ho = (ph - kh) / opt.stride + 1, wo = (pw - kw) / opt.stride + 1;
  const std::size_t rows = cin * kh * kw, cols = ho * wo;

  // Column r = (c, i, j) holds x[c, oy*s + i - p, ox*s + j - p]; -1 marks padding.
  std::vector<std::ptrdiff_t> src(rows * cols);
  for (std::size_t c = 0; c < cin; ++c)
    for (std::size_t i = 0; i < kh; ++i)
      for (std::size_t j = 0; j < kw; ++j) {
        std::size_t r = (c * kh + i) * kw + j;
        for (std::size_t oy = 0; oy < ho; ++oy) {
          auto y = static_cast<std::ptrdiff_t>(oy * opt.stride + i) -
                   static_cast<std::ptrdiff_t>(opt.padding);
          for (std::size_t ox = 0; ox < wo; ++ox) {
            auto xx = static_cast<std::ptrdiff_t>(ox * opt.stride + j) -
                      static_cast<std::ptrdiff_t>(opt.padding);
            bool inside = y >= 0 && y < static_cast<std::ptrdiff_t>(h) && xx >= 0 &&
                          xx < static_cast<std::ptrdiff_t>(wd);
            src[r * cols + oy * wo + ox] =
                inside ? static_cast<std::ptrdiff_t>((c * h + static_cast<std::size_t>(y)) * wd +
                                                     static_cast<std::size_t>(xx))
                       : -1;
          }
        }
      }
  std::vector<double> col(rows * cols);
  for (std::size_t k = 0; k < col.size(); ++k)
    col[k] = src[k] >= 0 ? x.value()[static_cast<std::size_t>(src[k])] : 0.0;

  auto R = static_cast<Eigen::Index>(rows);
  auto C = static_cast<Eigen::Index>(cols);
  auto O = static_cast<Eigen::Index>(cout);
  std::vector<double> out(cout * cols);
  detail::Map y(out.data(), O, C);
  y.noalias() = detail::MapC(w.value().data(), O, R) * detail::MapC(col.data(), R, C);
  if (bias)
    for (std::size_t o = 0; o < cout; ++o) y.row(static_cast<Eigen::Index>(o)).array() += bias.value()[o];

  std::vector<DiffTensor> inputs{x, w};
  if (bias) inputs.push_back(bias);
  bool has_bias = static_cast<bool>(bias);
  return make_op(
      "conv2d", {cout, ho, wo}, std::move(out), std::move(inputs),
      [R, C, O, has_bias, src = std::move(src), col = std::move(col)](Node& self) {
        detail::MapC gy(self.grad.data(), O, C);
        Node& px = *self.parents[0];
        Node& pw = *self.parents[1];
        if (pw.requires_grad)
          detail::Map(pw.grad_buffer().data(), O, R).noalias() +=
              gy * detail::MapC(col.data(), R, C).transpose();
        if (px.requires_grad) {
          detail::RowMat gcol = detail::MapC(pw.value.data(), O, R).transpose() * gy;
          auto& gx = px.grad_buffer();
          const double* gc = gcol.data();
          for (std::size_t k = 0; k < src.size(); ++k)
            if (src[k] >= 0) gx[static_cast<std::size_t>(src[k])] += gc[k];
        }
        if (has_bias && self.parents[2]->requires_grad) {
          auto& gb = self.parents[2]->grad_buffer();
          for (Eigen::Index o = 0; o < O; ++o) gb[static_cast<std::size_t>(o)] += gy.row(o).sum();
        }
      });
}

/// Non-overlapping average pooling over the last two axes of [C,H,W];
/// trailing rows/columns that do not fill a window are dropped.
inline DiffTensor avg_pool2d(const DiffTensor& x, std::size_t ph, std::size_t pw) {
  if (x.rank() != 3 || ph == 0 || pw == 0)
    throw ShapeError("avg_pool2d: bad input " + to_string(x.shape()));
  const std::size_t c = x.dim(0), h = x.dim(1), w = x.dim(2);
  const std::size_t ho = h / ph, wo = w / pw;
  if (ho == 0 || wo == 0)
    throw ShapeError("avg_pool2d: window larger than input " + to_string(x.shape()));
  const double inv = 1.0 / static_cast<double>(ph * pw);
  std::vector<double> out(c * ho * wo, 0.0);
  for (std::size_t ch = 0; ch < c; ++ch)
    for (std::size_t y = 0; y < ho * ph; ++y)
      for (std::size_t xx = 0; xx < wo * pw; ++xx)
        out[(ch * ho + y / ph) * wo + xx / pw] += x.value()[(ch * h + y) * w + xx];
  for (double& v : out) v *= inv;
  return make_op("avg_pool2d", {c, ho, wo}, std::move(out), {x},
                 [c, h, w, ho, wo, ph, pw, inv](Node& self) {
                   auto& g = self.parents[0]->grad_buffer();
                   for (std::size_t ch = 0; ch < c; ++ch)
                     for (std::size_t y = 0; y < ho * ph; ++y)
                       for (std::size_t xx = 0; xx < wo * pw; ++xx)
                         g[(ch * h + y) * w + xx] +=
                             inv * self.grad[(ch * ho + y / ph) * wo + xx / pw];
                 });
}

// ---------------------------------------------------------------------------
// Losses

/// Mean binary cross-entropy of probabilities `p` against targets in [0,1].
/// Probabilities are clamped to [eps, 1-eps]; the clamp passes no gradient.
inline DiffTensor binary_cross_entropy(const DiffTensor& p, std::span<const double> targets,
                                       double eps = 1e-7) {
  if (targets.size() != p.size())
    throw ShapeError("binary_cross_entropy: " + std::to_string(p.size()) + " probabilities vs " +
                     std::to_string(targets.size()) + " targets");
  std::vector<double> y(targets.begin(), targets.end());
  double loss = 0.0;
  const double n = static_cast<double>(p.size());
  for (std::size_t i = 0; i < y.size(); ++i) {
    double q = std::clamp(p.value()[i], eps, 1.0 - eps);
    loss -= y[i] * std::log(q) + (1.0 - y[i]) * std::log(1.0 - q);
  }
  return make_op("bce", {1}, {loss / n}, {p}, [y = std::move(y), eps, n](Node& self) {
    Node& pp = *self.parents[0];
    auto& g = pp.grad_buffer();
    for (std::size_t i = 0; i < y.size(); ++i) {
      double v = pp.value[i];
      if (v < eps || v > 1.0 - eps) continue;
      g[i] += self.grad[0] * (v - y[i]) / (v * (1.0 - v)) / n;
    }
  });
}

}  // namespace igsed::grad
