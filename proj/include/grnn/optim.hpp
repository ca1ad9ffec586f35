#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "grnn/tensor.hpp"

namespace grnn {

// RMSprop with PyTorch semantics:
//   v <- a*v + (1-a)*g^2;  step = g / (sqrt(v) + eps)
//   with momentum mu: b <- mu*b + step; p <- p - lr*b, otherwise p <- p - lr*step.
class RMSprop {
 public:
  RMSprop(double lr, double alpha, double eps = 1e-8, double momentum = 0.0)
      : lr_(lr), alpha_(alpha), eps_(eps), momentum_(momentum) {
    if (!(lr >= 0.0) || !(alpha >= 0.0 && alpha < 1.0) || !(eps > 0.0) || !(momentum >= 0.0)) {
      throw std::invalid_argument("RMSprop: invalid hyperparameters");
    }
  }

  double lr() const { return lr_; }
  void set_lr(double lr) {
    if (!(lr >= 0.0)) throw std::invalid_argument("RMSprop: invalid learning rate");
    lr_ = lr;
  }

  // Returns updated parameters as fresh leaves.
  std::vector<Tensor> step(const std::vector<Tensor>& params, const std::vector<Tensor>& grads) {
    if (params.size() != grads.size()) throw ShapeError("RMSprop::step: size mismatch");
    if (square_avg_.empty()) {
      for (const auto& p : params) {
        square_avg_.emplace_back(p.numel(), 0.0);
        buffer_.emplace_back(momentum_ > 0.0 ? p.numel() : 0, 0.0);
      }
    }
    std::vector<Tensor> out;
    out.reserve(params.size());
    for (std::size_t i = 0; i < params.size(); ++i) {
      const auto& pv = params[i].values();
      const auto& gv = grads[i].values();
      auto& sq = square_avg_[i];
      auto& buf = buffer_[i];
      std::vector<double> next(pv.size());
      for (std::size_t j = 0; j < pv.size(); ++j) {
        sq[j] = alpha_ * sq[j] + (1.0 - alpha_) * gv[j] * gv[j];
        double s = gv[j] / (std::sqrt(sq[j]) + eps_);
        if (momentum_ > 0.0) {
          buf[j] = momentum_ * buf[j] + s;
          s = buf[j];
        }
        next[j] = pv[j] - lr_ * s;
      }
      out.push_back(Tensor::parameter(params[i].shape(), std::move(next)));
    }
    return out;
  }

 private:
  double lr_, alpha_, eps_, momentum_;
  std::vector<std::vector<double>> square_avg_;
  std::vector<std::vector<double>> buffer_;
};

}  // namespace grnn
