#pragma once

// Test-only oracles: central finite differences evaluated on plain values,
// independent of the backward rules under test.

#include <cmath>
#include <functional>
#include <random>
#include <vector>

#include "grnn/tensor.hpp"

namespace grnn::testing {

using ScalarFn = std::function<Tensor(const std::vector<Tensor>&)>;

inline double evaluate(const ScalarFn& f, const std::vector<Shape>& shapes,
                       const std::vector<std::vector<double>>& values) {
  // Inputs are parameters so that functions which differentiate internally still work.
  std::vector<Tensor> ts;
  for (std::size_t i = 0; i < shapes.size(); ++i) ts.push_back(Tensor::parameter(shapes[i], values[i]));
  return f(ts).item();
}

// Central differences of f with respect to every entry of every input.
inline std::vector<std::vector<double>> numeric_gradient(const ScalarFn& f,
                                                         const std::vector<Shape>& shapes,
                                                         std::vector<std::vector<double>> values,
                                                         double step = 1e-5) {
  std::vector<std::vector<double>> out(values.size());
  for (std::size_t i = 0; i < values.size(); ++i) {
    out[i].resize(values[i].size());
    for (std::size_t j = 0; j < values[i].size(); ++j) {
      const double orig = values[i][j];
      values[i][j] = orig + step;
      const double up = evaluate(f, shapes, values);
      values[i][j] = orig - step;
      const double down = evaluate(f, shapes, values);
      values[i][j] = orig;
      out[i][j] = (up - down) / (2.0 * step);
    }
  }
  return out;
}

// ||a - b|| / max(||a||, ||b||), with a tiny floor so that two zero vectors agree.
inline double relative_error(const std::vector<double>& a, const std::vector<double>& b) {
  double diff = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    diff += (a[i] - b[i]) * (a[i] - b[i]);
    na += a[i] * a[i];
    nb += b[i] * b[i];
  }
  const double denom = std::max({std::sqrt(na), std::sqrt(nb), 1e-12});
  return std::sqrt(diff) / denom;
}

// Largest relative error between analytic and numeric gradients over all inputs.
inline double gradcheck(const ScalarFn& f, const std::vector<Shape>& shapes,
                        const std::vector<std::vector<double>>& values, double step = 1e-5) {
  std::vector<Tensor> params;
  for (std::size_t i = 0; i < shapes.size(); ++i) params.push_back(Tensor::parameter(shapes[i], values[i]));
  const auto analytic = grad(f(params), params);
  const auto numeric = numeric_gradient(f, shapes, values, step);
  double worst = 0.0;
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    worst = std::max(worst, relative_error(analytic[i].vec(), numeric[i]));
  }
  return worst;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0,
                                         double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  std::vector<double> v(n);
  for (auto& x : v) x = dist(rng);
  return v;
}

// Values bounded away from zero, for functions with a kink there.
inline std::vector<double> random_nonzero(std::size_t n, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> mag(0.2, 1.0);
  std::bernoulli_distribution sgn(0.5);
  std::vector<double> v(n);
  for (auto& x : v) x = sgn(rng) ? mag(rng) : -mag(rng);
  return v;
}

}  // namespace grnn::testing
