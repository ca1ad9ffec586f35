#pragma once

// Dense double-precision tensors with tape-free reverse-mode differentiation.
//
// Every operation returns a new immutable Tensor. When gradient recording is
// enabled and any operand requires a gradient, the result keeps references to
// its operands together with a backward rule. Backward rules are written in
// terms of Tensor operations themselves, so running a backward pass with
// recording enabled (retain_graph) yields gradients that are differentiable
// again. That is what makes gradient-of-gradient objectives possible.

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

namespace grnn {

using Shape = std::vector<std::size_t>;

class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class GraphError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string to_string(const Shape& s) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ')';
  return os.str();
}

class Tensor;

namespace detail {

// Receives the gradient of the node output, the node's operands and a mask of
// which operand gradients are actually wanted. Entries for unwanted operands
// may be left undefined.
using BackwardFn = std::function<std::vector<Tensor>(
    const Tensor& grad_out, const std::vector<Tensor>& inputs, const std::vector<bool>& needed)>;

struct Node {
  Shape shape;
  std::shared_ptr<const std::vector<double>> data;
  bool requires_grad = false;
  std::uint64_t seq = 0;
  const char* op = "leaf";
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

inline thread_local bool grad_mode_enabled = true;
// Shared across threads: graphs may mix nodes created on different threads.
inline std::atomic<std::uint64_t> next_seq{0};

}  // namespace detail

inline bool grad_mode() { return detail::grad_mode_enabled; }

// Disables graph recording in the current thread for the guard's lifetime.
class NoGradGuard {
 public:
  NoGradGuard() : prev_(detail::grad_mode_enabled) { detail::grad_mode_enabled = false; }
  ~NoGradGuard() { detail::grad_mode_enabled = prev_; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

class GradModeGuard {
 public:
  explicit GradModeGuard(bool enabled) : prev_(detail::grad_mode_enabled) {
    detail::grad_mode_enabled = enabled;
  }
  ~GradModeGuard() { detail::grad_mode_enabled = prev_; }
  GradModeGuard(const GradModeGuard&) = delete;
  GradModeGuard& operator=(const GradModeGuard&) = delete;

 private:
  bool prev_;
};

class Tensor {
 public:
  Tensor() = default;

  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false) {
    if (grnn::numel(shape) != values.size()) {
      throw ShapeError("tensor of shape " + to_string(shape) + " needs " +
                       std::to_string(grnn::numel(shape)) + " values, got " +
                       std::to_string(values.size()));
    }
    node_ = std::make_shared<detail::Node>();
    node_->shape = std::move(shape);
    node_->data = std::make_shared<const std::vector<double>>(std::move(values));
    node_->requires_grad = requires_grad;
    node_->seq = detail::next_seq++;
  }

  static Tensor full(Shape shape, double value) {
    const std::size_t n = grnn::numel(shape);
    return Tensor(std::move(shape), std::vector<double>(n, value));
  }
  static Tensor zeros(Shape shape) { return full(std::move(shape), 0.0); }
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }
  // Leaf tensor that gradients can be taken with respect to.
  static Tensor parameter(Shape shape, std::vector<double> values) {
    return Tensor(std::move(shape), std::move(values), true);
  }

  bool defined() const { return static_cast<bool>(node_); }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t axis) const { return node_->shape.at(axis); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t numel() const { return node_->data->size(); }
  std::span<const double> values() const { return {node_->data->data(), node_->data->size()}; }
  const std::vector<double>& vec() const { return *node_->data; }
  double at(std::size_t i) const { return (*node_->data)[i]; }
  double item() const {
    if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
    return (*node_->data)[0];
  }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  bool is_leaf() const { return !node_->backward; }
  const char* op_name() const { return node_->op; }

  // Graph-free tensor with identical values; the buffer is shared since values are immutable.
  Tensor detach() const {
    Tensor t;
    t.node_ = std::make_shared<detail::Node>();
    t.node_->shape = node_->shape;
    t.node_->data = node_->data;
    t.node_->seq = detail::next_seq++;
    return t;
  }

  // Fresh leaf with the same values that requires a gradient.
  Tensor as_parameter() const {
    Tensor t = detach();
    t.node_->requires_grad = true;
    return t;
  }

  const detail::Node* node() const { return node_.get(); }

 private:
  std::shared_ptr<detail::Node> node_;

  friend Tensor make_op(Shape, std::vector<double>, std::vector<Tensor>, detail::BackwardFn,
                        const char*);
  friend Tensor reshape(const Tensor&, Shape);
  friend std::vector<Tensor> grad(const Tensor&, const std::vector<Tensor>&, bool);
};

// Builds an operation result, recording the backward rule only when needed.
inline Tensor make_op(Shape shape, std::vector<double> values, std::vector<Tensor> inputs,
                      detail::BackwardFn backward, const char* op) {
  Tensor out(std::move(shape), std::move(values));
  out.node_->op = op;
  if (detail::grad_mode_enabled) {
    const bool any = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
    if (any) {
      out.node_->requires_grad = true;
      out.node_->inputs = std::move(inputs);
      out.node_->backward = std::move(backward);
    }
  }
  return out;
}

inline void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw ShapeError(std::string(op) + ": shape mismatch " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
}

// ---------------------------------------------------------------------------
// Elementwise arithmetic

inline Tensor add(const Tensor& a, const Tensor& b);
inline Tensor sub(const Tensor& a, const Tensor& b);
inline Tensor mul(const Tensor& a, const Tensor& b);
inline Tensor div(const Tensor& a, const Tensor& b);
inline Tensor neg(const Tensor& a);
inline Tensor scale(const Tensor& a, double c);
inline Tensor add_scalar(const Tensor& a, double c);

namespace detail {

template <class F>
std::vector<double> map_values(const Tensor& a, F f) {
  std::vector<double> out(a.numel());
  const double* p = a.vec().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(p[i]);
  return out;
}

template <class F>
std::vector<double> zip_values(const Tensor& a, const Tensor& b, F f) {
  std::vector<double> out(a.numel());
  const double* p = a.vec().data();
  const double* q = b.vec().data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = f(p[i], q[i]);
  return out;
}

}  // namespace detail

inline Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  return make_op(a.shape(), detail::zip_values(a, b, std::plus<>()), {a, b},
                 [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{g, g};
                 },
                 "add");
}

inline Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  return make_op(a.shape(), detail::zip_values(a, b, std::minus<>()), {a, b},
                 [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>& need) {
                   return std::vector<Tensor>{g, need[1] ? neg(g) : Tensor()};
                 },
                 "sub");
}

inline Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  return make_op(a.shape(), detail::zip_values(a, b, std::multiplies<>()), {a, b},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>& need) {
                   return std::vector<Tensor>{need[0] ? mul(g, in[1]) : Tensor(),
                                              need[1] ? mul(g, in[0]) : Tensor()};
                 },
                 "mul");
}

inline Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  return make_op(a.shape(), detail::zip_values(a, b, std::divides<>()), {a, b},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>& need) {
                   Tensor ga = div(g, in[1]);
                   Tensor gb;
                   if (need[1]) gb = neg(div(mul(ga, in[0]), in[1]));
                   return std::vector<Tensor>{ga, gb};
                 },
                 "div");
}

inline Tensor neg(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, [](double x) { return -x; }), {a},
                 [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{neg(g)};
                 },
                 "neg");
}

inline Tensor scale(const Tensor& a, double c) {
  return make_op(a.shape(), detail::map_values(a, [c](double x) { return c * x; }), {a},
                 [c](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{scale(g, c)};
                 },
                 "scale");
}

inline Tensor add_scalar(const Tensor& a, double c) {
  return make_op(a.shape(), detail::map_values(a, [c](double x) { return x + c; }), {a},
                 [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{g};
                 },
                 "add_scalar");
}

inline Tensor square(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, [](double x) { return x * x; }), {a},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                   return std::vector<Tensor>{mul(g, scale(in[0], 2.0))};
                 },
                 "square");
}

// Elementwise sign as a constant; the derivative of sign is zero almost everywhere.
inline Tensor sign_of(const Tensor& a) {
  return Tensor(a.shape(),
                detail::map_values(a, [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); }));
}

inline Tensor abs(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, [](double x) { return std::fabs(x); }), {a},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                   return std::vector<Tensor>{mul(g, sign_of(in[0]))};
                 },
                 "abs");
}

inline Tensor exp(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, [](double x) { return std::exp(x); }), {a},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                   return std::vector<Tensor>{mul(g, exp(in[0]))};
                 },
                 "exp");
}

inline Tensor log(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, [](double x) { return std::log(x); }), {a},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                   return std::vector<Tensor>{div(g, in[0])};
                 },
                 "log");
}

inline Tensor sqrt(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, [](double x) { return std::sqrt(x); }), {a},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                   return std::vector<Tensor>{div(g, scale(sqrt(in[0]), 2.0))};
                 },
                 "sqrt");
}

inline double sigmoid_value(double x) {
  if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

inline Tensor sigmoid(const Tensor& a) {
  return make_op(a.shape(), detail::map_values(a, sigmoid_value), {a},
                 [](const Tensor& g, const std::vector<Tensor>& in, const std::vector<bool>&) {
                   // d/dx s(x) = s(x) (1 - s(x)); s is recomputed so the rule stays differentiable
                   Tensor s = sigmoid(in[0]);
                   return std::vector<Tensor>{mul(g, mul(s, add_scalar(neg(s), 1.0)))};
                 },
                 "sigmoid");
}

// ---------------------------------------------------------------------------
// Shape manipulation and reductions

inline Tensor reshape(const Tensor& a, Shape shape) {
  if (numel(shape) != a.numel()) {
    throw ShapeError("reshape " + to_string(a.shape()) + " -> " + to_string(shape));
  }
  const Shape orig = a.shape();
  // Share the immutable buffer instead of copying.
  Tensor out = a.detach();
  out.node_->shape = std::move(shape);
  out.node_->op = "reshape";
  if (detail::grad_mode_enabled && a.requires_grad()) {
    out.node_->requires_grad = true;
    out.node_->inputs = {a};
    out.node_->backward = [orig](const Tensor& g, const std::vector<Tensor>&,
                                 const std::vector<bool>&) {
      return std::vector<Tensor>{reshape(g, orig)};
    };
  }
  return out;
}

inline Tensor flatten(const Tensor& a) { return reshape(a, {a.numel()}); }

inline Tensor broadcast_to(const Tensor& a, const Shape& to);
inline Tensor sum_to(const Tensor& a, const Shape& to);

inline Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.values()) s += v;
  const Shape orig = a.shape();
  return make_op({1}, {s}, {a},
                 [orig](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{broadcast_to(g, orig)};
                 },
                 "sum");
}

namespace detail {

// Strides of `from` laid out against the (right-aligned) axes of `to`;
// broadcast axes get stride zero.
inline std::vector<std::size_t> broadcast_strides(const Shape& from, const Shape& to,
                                                  const char* op) {
  if (from.size() > to.size()) {
    throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(from) + " to " +
                     to_string(to));
  }
  std::vector<std::size_t> strides(to.size(), 0);
  const std::size_t offset = to.size() - from.size();
  std::size_t stride = 1;
  for (std::size_t i = from.size(); i-- > 0;) {
    const std::size_t ax = i + offset;
    if (from[i] == to[ax]) {
      strides[ax] = from[i] == 1 ? 0 : stride;
    } else if (from[i] != 1) {
      throw ShapeError(std::string(op) + ": cannot broadcast " + to_string(from) + " to " +
                       to_string(to));
    }
    stride *= from[i];
  }
  return strides;
}

// Visits every index of `big` in row-major order, handing out the matching
// offset into the small (broadcast) buffer.
template <class F>
void for_each_broadcast(const Shape& big, const std::vector<std::size_t>& strides, F f) {
  const std::size_t n = numel(big);
  if (n == 0) return;
  if (big.empty()) {
    f(std::size_t{0}, std::size_t{0});
    return;
  }
  const std::size_t rank = big.size();
  const std::size_t inner = big[rank - 1];
  const std::size_t inner_stride = strides[rank - 1];
  std::vector<std::size_t> idx(rank, 0);
  std::size_t small = 0;
  for (std::size_t flat = 0; flat < n; flat += inner) {
    for (std::size_t j = 0; j < inner; ++j) f(flat + j, small + j * inner_stride);
    // advance the outer counters
    for (std::size_t ax = rank - 1; ax-- > 0;) {
      ++idx[ax];
      small += strides[ax];
      if (idx[ax] < big[ax]) break;
      small -= strides[ax] * big[ax];
      idx[ax] = 0;
    }
  }
}

}  // namespace detail

inline Tensor broadcast_to(const Tensor& a, const Shape& to) {
  if (a.shape() == to) return a;
  const auto strides = detail::broadcast_strides(a.shape(), to, "broadcast_to");
  std::vector<double> out(numel(to));
  const double* src = a.vec().data();
  detail::for_each_broadcast(to, strides,
                             [&](std::size_t o, std::size_t s) { out[o] = src[s]; });
  const Shape from = a.shape();
  return make_op(to, std::move(out), {a},
                 [from](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{sum_to(g, from)};
                 },
                 "broadcast_to");
}

// Sums `a` down to `to`, the adjoint of broadcast_to.
inline Tensor sum_to(const Tensor& a, const Shape& to) {
  if (a.shape() == to) return a;
  const auto strides = detail::broadcast_strides(to, a.shape(), "sum_to");
  std::vector<double> out(numel(to), 0.0);
  const double* src = a.vec().data();
  detail::for_each_broadcast(a.shape(), strides,
                             [&](std::size_t i, std::size_t s) { out[s] += src[i]; });
  const Shape from = a.shape();
  return make_op(to, std::move(out), {a},
                 [from](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{broadcast_to(g, from)};
                 },
                 "sum_to");
}

inline Tensor mean(const Tensor& a) { return scale(sum(a), 1.0 / static_cast<double>(a.numel())); }

inline Tensor dot(const Tensor& a, const Tensor& b) { return sum(mul(a, b)); }

// Slice [begin, end) along `axis`.
inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end);
// Zero-embeds `a` at offset `begin` along `axis` of a tensor with extent `total` there.
inline Tensor pad_axis(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t total);

namespace detail {

struct AxisSplit {
  std::size_t outer = 1, extent = 1, inner = 1;
};

inline AxisSplit split_at(const Shape& s, std::size_t axis) {
  AxisSplit r;
  for (std::size_t i = 0; i < axis; ++i) r.outer *= s[i];
  r.extent = s[axis];
  for (std::size_t i = axis + 1; i < s.size(); ++i) r.inner *= s[i];
  return r;
}

}  // namespace detail

inline Tensor slice(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t end) {
  if (axis >= a.rank() || begin > end || end > a.dim(axis)) {
    throw ShapeError("slice out of range on " + to_string(a.shape()));
  }
  const auto sp = detail::split_at(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = end - begin;
  std::vector<double> out(numel(shape));
  const double* src = a.vec().data();
  const std::size_t len = (end - begin) * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + (o * sp.extent + begin) * sp.inner, len, out.data() + o * len);
  }
  const std::size_t total = a.dim(axis);
  return make_op(std::move(shape), std::move(out), {a},
                 [axis, begin, total](const Tensor& g, const std::vector<Tensor>&,
                                      const std::vector<bool>&) {
                   return std::vector<Tensor>{pad_axis(g, axis, begin, total)};
                 },
                 "slice");
}

inline Tensor pad_axis(const Tensor& a, std::size_t axis, std::size_t begin, std::size_t total) {
  if (axis >= a.rank() || begin + a.dim(axis) > total) {
    throw ShapeError("pad_axis out of range on " + to_string(a.shape()));
  }
  const auto sp = detail::split_at(a.shape(), axis);
  Shape shape = a.shape();
  shape[axis] = total;
  std::vector<double> out(numel(shape), 0.0);
  const double* src = a.vec().data();
  const std::size_t len = sp.extent * sp.inner;
  for (std::size_t o = 0; o < sp.outer; ++o) {
    std::copy_n(src + o * len, len, out.data() + (o * total + begin) * sp.inner);
  }
  const std::size_t end = begin + a.dim(axis);
  return make_op(std::move(shape), std::move(out), {a},
                 [axis, begin, end](const Tensor& g, const std::vector<Tensor>&,
                                    const std::vector<bool>&) {
                   return std::vector<Tensor>{slice(g, axis, begin, end)};
                 },
                 "pad_axis");
}

// Concatenates along `axis`; all other extents must agree.
inline Tensor concat(const std::vector<Tensor>& parts, std::size_t axis) {
  if (parts.empty()) throw ShapeError("concat of zero tensors");
  Shape shape = parts[0].shape();
  if (axis >= shape.size()) throw ShapeError("concat axis out of range");
  std::size_t total = 0;
  for (const auto& p : parts) {
    Shape s = p.shape();
    if (s.size() != shape.size()) throw ShapeError("concat rank mismatch");
    s[axis] = shape[axis];
    if (s != shape) throw ShapeError("concat extent mismatch at " + to_string(p.shape()));
    total += p.dim(axis);
  }
  shape[axis] = total;
  const auto sp = detail::split_at(shape, axis);
  std::vector<double> out(numel(shape));
  std::vector<std::size_t> offsets;
  std::size_t off = 0;
  for (const auto& p : parts) {
    offsets.push_back(off);
    const std::size_t len = p.dim(axis) * sp.inner;
    const double* src = p.vec().data();
    for (std::size_t o = 0; o < sp.outer; ++o) {
      std::copy_n(src + o * len, len, out.data() + (o * total + off) * sp.inner);
    }
    off += p.dim(axis);
  }
  return make_op(std::move(shape), std::move(out), parts,
                 [axis, offsets](const Tensor& g, const std::vector<Tensor>& in,
                                 const std::vector<bool>& need) {
                   std::vector<Tensor> gs(in.size());
                   for (std::size_t i = 0; i < in.size(); ++i) {
                     if (need[i]) gs[i] = slice(g, axis, offsets[i], offsets[i] + in[i].dim(axis));
                   }
                   return gs;
                 },
                 "concat");
}

// 2-D transpose.
inline Tensor transpose(const Tensor& a) {
  if (a.rank() != 2) throw ShapeError("transpose expects a matrix, got " + to_string(a.shape()));
  const std::size_t r = a.dim(0), c = a.dim(1);
  std::vector<double> out(r * c);
  const double* src = a.vec().data();
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = src[i * c + j];
  return make_op({c, r}, std::move(out), {a},
                 [](const Tensor& g, const std::vector<Tensor>&, const std::vector<bool>&) {
                   return std::vector<Tensor>{transpose(g)};
                 },
                 "transpose");
}

// out[i] = a[index[i]] for a 1-D tensor.
inline Tensor gather(const Tensor& a, std::vector<std::size_t> index);
// Adjoint of gather: out[index[i]] += a[i] into a zero vector of length n.
inline Tensor scatter_add(const Tensor& a, std::vector<std::size_t> index, std::size_t n);

inline Tensor gather(const Tensor& a, std::vector<std::size_t> index) {
  if (a.rank() != 1) throw ShapeError("gather expects a vector");
  std::vector<double> out(index.size());
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= a.numel()) throw ShapeError("gather index out of range");
    out[i] = a.at(index[i]);
  }
  const std::size_t n = a.numel();
  const std::size_t m = index.size();
  return make_op({m}, std::move(out), {a},
                 [idx = std::move(index), n](const Tensor& g, const std::vector<Tensor>&,
                                             const std::vector<bool>&) {
                   return std::vector<Tensor>{scatter_add(g, idx, n)};
                 },
                 "gather");
}

inline Tensor scatter_add(const Tensor& a, std::vector<std::size_t> index, std::size_t n) {
  if (a.rank() != 1 || a.numel() != index.size()) throw ShapeError("scatter_add size mismatch");
  std::vector<double> out(n, 0.0);
  for (std::size_t i = 0; i < index.size(); ++i) {
    if (index[i] >= n) throw ShapeError("scatter_add index out of range");
    out[index[i]] += a.at(i);
  }
  return make_op({n}, std::move(out), {a},
                 [idx = std::move(index)](const Tensor& g, const std::vector<Tensor>&,
                                          const std::vector<bool>&) {
                   return std::vector<Tensor>{gather(g, idx)};
                 },
                 "scatter_add");
}

// Stable ascending argsort of a vector's values. Not differentiable; combine
// with gather to obtain a differentiable sorted view.
inline std::vector<std::size_t> argsort(const Tensor& a) {
  std::vector<std::size_t> idx(a.numel());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  const auto& v = a.vec();
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return v[i] < v[j]; });
  return idx;
}

inline Tensor sort(const Tensor& a) { return gather(flatten(a), argsort(a)); }

// ---------------------------------------------------------------------------
// Differentiation

// Gradients of a scalar `output` with respect to each of `inputs`.
//
// With retain_graph the backward rules are recorded, so the returned tensors
// are differentiable functions of whatever the graph depends on. Without it
// the results are constants and cannot be differentiated again.
inline std::vector<Tensor> grad(const Tensor& output, const std::vector<Tensor>& inputs,
                                bool retain_graph = false) {
  if (!output.defined() || output.numel() != 1) {
    throw ShapeError("grad: output must be a scalar tensor");
  }
  if (!output.requires_grad()) {
    throw GraphError(
        "grad: output is not attached to a differentiable graph (second-order use requires the "
        "first gradient to be taken with retain_graph)");
  }

  using detail::Node;
  // Collect the differentiable subgraph reachable from the output.
  std::vector<Node*> order;
  {
    std::unordered_set<Node*> seen;
    std::vector<Node*> stack{output.node_.get()};
    seen.insert(stack.back());
    while (!stack.empty()) {
      Node* n = stack.back();
      stack.pop_back();
      order.push_back(n);
      for (const auto& in : n->inputs) {
        Node* p = in.node_.get();
        if (p->requires_grad && seen.insert(p).second) stack.push_back(p);
      }
    }
  }
  // Operands are always created before their results, so sequence numbers give
  // a topological order.
  std::sort(order.begin(), order.end(), [](Node* a, Node* b) { return a->seq > b->seq; });

  std::unordered_set<Node*> wanted;
  for (const auto& in : inputs) {
    if (!in.defined()) throw GraphError("grad: undefined input tensor");
    wanted.insert(in.node_.get());
  }
  // A node is relevant if some requested input flows into it.
  std::unordered_set<Node*> relevant;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    bool r = wanted.count(n) > 0;
    for (const auto& in : n->inputs) r = r || relevant.count(in.node_.get()) > 0;
    if (r) relevant.insert(n);
  }
  for (const auto& in : inputs) {
    if (!relevant.count(in.node_.get())) {
      throw GraphError("grad: input tensor is not part of the graph of the output");
    }
  }

  GradModeGuard mode(retain_graph);
  std::unordered_map<Node*, Tensor> grads;
  grads[output.node_.get()] = Tensor::ones(output.shape());
  for (Node* n : order) {
    if (!relevant.count(n) || !n->backward) continue;
    auto it = grads.find(n);
    if (it == grads.end()) continue;
    const Tensor g = it->second;
    std::vector<bool> need(n->inputs.size());
    bool any = false;
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      const Node* p = n->inputs[i].node_.get();
      need[i] = p->requires_grad && relevant.count(const_cast<Node*>(p)) > 0;
      any = any || need[i];
    }
    if (!any) continue;
    std::vector<Tensor> gs = n->backward(g, n->inputs, need);
    for (std::size_t i = 0; i < n->inputs.size(); ++i) {
      if (!need[i] || !gs[i].defined()) continue;
      Node* p = n->inputs[i].node_.get();
      auto [slot, inserted] = grads.try_emplace(p, gs[i]);
      if (!inserted) slot->second = add(slot->second, gs[i]);
    }
    // Interior gradients are no longer needed once propagated.
    if (!wanted.count(n)) grads.erase(n);
  }

  std::vector<Tensor> result;
  result.reserve(inputs.size());
  for (const auto& in : inputs) {
    auto it = grads.find(in.node_.get());
    result.push_back(it != grads.end() ? it->second : Tensor::zeros(in.shape()));
  }
  return result;
}

}  // namespace grnn
