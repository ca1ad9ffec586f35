#pragma once

// Composite layers built from the primitive differentiable operations.

#include <limits>

#include "grnn/conv.hpp"
#include "grnn/tensor.hpp"

namespace grnn {

// Gated linear unit: splits `axis` into halves a, b and returns a * sigmoid(b).
inline Tensor glu(const Tensor& input, std::size_t axis = 1) {
  if (axis >= input.rank()) throw ShapeError("glu: axis out of range");
  const std::size_t c = input.dim(axis);
  if (c % 2 != 0) {
    throw ShapeError("glu: extent " + std::to_string(c) + " along axis " + std::to_string(axis) +
                     " is odd");
  }
  Tensor a = slice(input, axis, 0, c / 2);
  Tensor b = slice(input, axis, c / 2, c);
  return mul(a, sigmoid(b));
}

// Batch normalization over (N,H,W) per channel using the statistics of the
// current batch (training-mode semantics), followed by the affine map.
inline Tensor batchnorm2d(const Tensor& input, const Tensor& gamma, const Tensor& beta,
                          double eps = 1e-5) {
  if (input.rank() != 4) throw ShapeError("batchnorm2d expects NCHW");
  const std::size_t c = input.dim(1);
  if (gamma.numel() != c || beta.numel() != c) {
    throw ShapeError("batchnorm2d: gamma/beta length must equal channel count " + std::to_string(c));
  }
  const std::size_t count = input.dim(0) * input.dim(2) * input.dim(3);
  if (count == 0) throw ShapeError("batchnorm2d: empty batch");
  const Shape per_channel{1, c, 1, 1};
  const double inv_count = 1.0 / static_cast<double>(count);
  Tensor mu = scale(sum_to(input, per_channel), inv_count);
  Tensor centered = sub(input, broadcast_to(mu, input.shape()));
  Tensor var = scale(sum_to(square(centered), per_channel), inv_count);
  Tensor inv_std = div(Tensor::ones(per_channel), sqrt(add_scalar(var, eps)));
  Tensor coef = mul(inv_std, reshape(gamma, per_channel));
  Tensor y = mul(centered, broadcast_to(coef, input.shape()));
  return add(y, broadcast_to(reshape(beta, per_channel), input.shape()));
}

namespace detail {

// Row maxima as a constant; softmax is invariant to this shift.
inline Tensor row_max(const Tensor& logits) {
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<double> m(n, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < k; ++j) m[i] = std::max(m[i], logits.at(i * k + j));
  return Tensor({n, 1}, std::move(m));
}

inline void require_matrix(const Tensor& t, const char* op) {
  if (t.rank() != 2 || t.dim(1) == 0) {
    throw ShapeError(std::string(op) + " expects an (N,K) matrix, got " + to_string(t.shape()));
  }
}

}  // namespace detail

inline Tensor log_softmax(const Tensor& logits) {
  detail::require_matrix(logits, "log_softmax");
  const Shape s = logits.shape();
  Tensor shifted = sub(logits, broadcast_to(detail::row_max(logits), s));
  Tensor lse = log(sum_to(exp(shifted), {s[0], 1}));
  return sub(shifted, broadcast_to(lse, s));
}

inline Tensor softmax(const Tensor& logits) {
  detail::require_matrix(logits, "softmax");
  const Shape s = logits.shape();
  Tensor e = exp(sub(logits, broadcast_to(detail::row_max(logits), s)));
  return div(e, broadcast_to(sum_to(e, {s[0], 1}), s));
}

class DistributionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Mean over rows of -sum_k target * log softmax(logits). Targets may be soft
// and may themselves carry gradients.
inline Tensor softmax_cross_entropy(const Tensor& logits, const Tensor& target_probs) {
  detail::require_matrix(logits, "softmax_cross_entropy");
  require_same_shape(logits, target_probs, "softmax_cross_entropy");
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  if (n == 0) throw ShapeError("softmax_cross_entropy: empty batch");
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = target_probs.at(i * k + j);
      if (!(p >= 0.0)) {
        throw DistributionError("softmax_cross_entropy: negative target in row " +
                                std::to_string(i));
      }
      row += p;
    }
    if (std::fabs(row - 1.0) > 1e-6) {
      throw DistributionError("softmax_cross_entropy: target row " + std::to_string(i) +
                              " sums to " + std::to_string(row));
    }
  }
  return scale(sum(mul(target_probs, log_softmax(logits))), -1.0 / static_cast<double>(n));
}

inline Tensor one_hot(const std::vector<std::size_t>& labels, std::size_t classes) {
  std::vector<double> v(labels.size() * classes, 0.0);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= classes) throw ShapeError("one_hot: label out of range");
    v[i * classes + labels[i]] = 1.0;
  }
  return Tensor({labels.size(), classes}, std::move(v));
}

}  // namespace grnn
