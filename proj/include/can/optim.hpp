#pragma once

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>

#include "can/error.hpp"
#include "can/tensor.hpp"

namespace can {

/// A trainable tensor with its accumulated gradient and Adam moments.
template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> adam_m;
  Tensor<T> adam_v;
  std::uint64_t step_count = 0;

  Parameter() = default;
  Parameter(std::string param_name, Tensor<T> initial)
      : name(std::move(param_name)),
        value(std::move(initial)),
        grad(value.shape()),
        adam_m(value.shape()),
        adam_v(value.shape()) {}

  void zero_grad() { grad.fill(T(0)); }

  void accumulate(const Tensor<T>& g) {
    if (g.shape() != value.shape()) {
      throw UsageError("gradient shape " + shape_str(g.shape()) + " does not match parameter " +
                       name + " " + shape_str(value.shape()));
    }
    for (std::size_t i = 0; i < grad.size(); ++i) grad[i] += g[i];
  }
};

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.5;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

/// One bias-corrected Adam update. The gradient is left in place; call zero_grad() to clear it.
template <typename T>
void adam_step(Parameter<T>& p, const AdamConfig& cfg) {
  if (p.grad.shape() != p.value.shape() || p.adam_m.shape() != p.value.shape() ||
      p.adam_v.shape() != p.value.shape()) {
    throw UsageError("optimizer state of " + p.name + " is not shape-consistent");
  }
  for (std::size_t i = 0; i < p.grad.size(); ++i) {
    if (!std::isfinite(p.grad[i])) {
      throw NumericError("non-finite gradient in parameter " + p.name + " at index " +
                         std::to_string(i));
    }
  }
  p.step_count += 1;
  const double t = static_cast<double>(p.step_count);
  const double correction1 = 1.0 - std::pow(cfg.beta1, t);
  const double correction2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t i = 0; i < p.value.size(); ++i) {
    const double g = p.grad[i];
    const double m = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
    p.adam_m[i] = static_cast<T>(m);
    p.adam_v[i] = static_cast<T>(v);
    const double m_hat = m / correction1;
    const double v_hat = v / correction2;
    p.value[i] = static_cast<T>(p.value[i] - cfg.learning_rate * m_hat / (std::sqrt(v_hat) + cfg.epsilon));
  }
}

}  // namespace can
