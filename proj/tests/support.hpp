#pragma once

// Test-side helpers: an independent central-difference oracle and random tensors.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "can/tensor.hpp"

namespace testing {

inline can::Tensor<double> random_tensor(const can::Shape& shape, std::mt19937_64& rng,
                                         double scale = 1.0) {
  can::Tensor<double> t(shape);
  std::normal_distribution<double> d(0.0, scale);
  for (auto& v : t.data()) v = d(rng);
  return t;
}

/// d f / d x by central differences, perturbing x in place.
inline can::Tensor<double> numeric_grad(const std::function<double()>& f, can::Tensor<double>& x,
                                        double h = 1e-5) {
  can::Tensor<double> g(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double orig = x[i];
    x[i] = orig + h;
    const double plus = f();
    x[i] = orig - h;
    const double minus = f();
    x[i] = orig;
    g[i] = (plus - minus) / (2 * h);
  }
  return g;
}

inline double max_rel_error(const can::Tensor<double>& a, const can::Tensor<double>& b,
                            double floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double denom = std::max({std::abs(a[i]), std::abs(b[i]), floor});
    worst = std::max(worst, std::abs(a[i] - b[i]) / denom);
  }
  return worst;
}

/// Scalar probe sum(out * weights), whose gradient with respect to out is `weights`.
inline double dot(const can::Tensor<double>& a, const can::Tensor<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
  return s;
}

}  // namespace testing
