#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "can/optim.hpp"
#include "can/tensor.hpp"

namespace can {

/// A point of the closure's domain together with the analytic gradient there.
template <typename T>
struct GradCheckTarget {
  std::string name;
  Tensor<T>* value = nullptr;
  const Tensor<T>* analytic = nullptr;
};

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  // Relative errors are |a - n| / max(|a|, |n|, denominator_floor). The floor sits near the
  // central-difference noise of an O(1) loss (machine epsilon / step).
  double denominator_floor = 1e-6;
  // Compare left and right one-sided estimates, and the central difference at the full and
  // half step; when they disagree the perturbation straddles a kink (e.g. LeakyReLU at 0).
  // The step then shrinks tenfold, up to kink_refinements times, before the probe is
  // skipped rather than scored.
  bool kink_guard = true;
  std::size_t kink_refinements = 2;
  // 0 probes every entry; otherwise a seeded subset of this size per tensor.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0;
};

struct GradCheckEntry {
  std::string name;
  double max_rel_error = 0.0;
  std::size_t worst_index = 0;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  std::size_t probed = 0;
  std::size_t skipped = 0;  // probes straddling a non-differentiable point
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  std::size_t skipped = 0;
  bool passed = false;
};

template <typename T>
std::vector<GradCheckTarget<T>> grad_check_targets(const std::vector<Parameter<T>*>& params) {
  std::vector<GradCheckTarget<T>> out;
  for (auto* p : params) out.push_back({p->name, &p->value, &p->grad});
  return out;
}

/// Compares analytic gradients against central differences of a scalar closure.
/// The closure must read the target tensors; they are perturbed in place and restored.
template <typename T>
GradCheckReport grad_check(const std::function<Tensor<T>()>& closure,
                           std::span<const GradCheckTarget<T>> targets,
                           const GradCheckOptions& options = {}) {
  auto evaluate = [&]() {
    const Tensor<T> out = closure();
    if (out.size() != 1) {
      throw UsageError("grad_check closure must return a scalar, got shape " +
                       shape_str(out.shape()));
    }
    return static_cast<double>(out[0]);
  };
  const double base = evaluate();

  GradCheckReport report;
  report.tolerance = options.tolerance;
  std::mt19937_64 rng(options.seed);
  for (const auto& target : targets) {
    Tensor<T>& x = *target.value;
    if (target.analytic->shape() != x.shape()) {
      throw UsageError("analytic gradient shape mismatch for " + target.name);
    }
    std::vector<std::size_t> indices(x.size());
    std::iota(indices.begin(), indices.end(), std::size_t{0});
    if (options.max_probes > 0 && indices.size() > options.max_probes) {
      std::vector<std::size_t> picked;
      std::sample(indices.begin(), indices.end(), std::back_inserter(picked), options.max_probes,
                  rng);
      indices = std::move(picked);
    }
    GradCheckEntry entry;
    entry.name = target.name;
    entry.probed = indices.size();
    auto relative = [&](double a, double b, double slack) {
      return std::max(0.0, std::abs(a - b) - slack) /
             std::max({std::abs(a), std::abs(b), options.denominator_floor});
    };
    for (std::size_t i : indices) {
      const T original = x[i];
      auto at = [&](double offset) {
        x[i] = static_cast<T>(original + offset);
        const double v = evaluate();
        x[i] = original;
        return v;
      };
      double step = options.step;
      double numeric = 0.0;
      bool settled = false;
      for (std::size_t attempt = 0; attempt <= options.kink_refinements; ++attempt, step /= 10.0) {
        const double h = step / 2.0;
        const double m2 = at(-step), m1 = at(-h), p1 = at(h), p2 = at(step);
        numeric = (p2 - m2) / (2.0 * step);
        if (!options.kink_guard) {
          settled = true;
          break;
        }
        // Second-order one-sided estimates; a kink inside [-step, step] splits them.
        const double right = (-3.0 * base + 4.0 * p1 - p2) / (2.0 * h);
        const double left = (3.0 * base - 4.0 * m1 + m2) / (2.0 * h);
        // Many small kinks (a wide ReLU layer downstream) bend both sides alike but make the
        // central difference drift with the step, so the half-step estimate must agree too.
        const double half = (p1 - m1) / step;
        // Rounding in the loss alone can split them by about this much.
        const double noise =
            64.0 * std::numeric_limits<T>::epsilon() * std::max(1.0, std::abs(base)) / h;
        auto agree = [&](double a, double b) {
          return std::abs(a - b) <=
                 options.tolerance * std::max({std::abs(a), std::abs(b), options.denominator_floor}) +
                     noise;
        };
        if (agree(left, right) && agree(numeric, half)) {
          settled = true;
          break;
        }
      }
      if (!settled) {
        entry.skipped += 1;
        continue;
      }
      const double analytic = (*target.analytic)[i];
      // Disagreement within the rounding noise of the difference quotient is not scored, so a
      // gradient that is exactly zero (a bias feeding batchnorm) is not judged on noise alone.
      const double rounding =
          8.0 * std::numeric_limits<T>::epsilon() * std::max(1.0, std::abs(base)) / step;
      const double rel = relative(analytic, numeric, rounding);
      if (!(rel <= entry.max_rel_error)) {
        entry.max_rel_error = std::isfinite(rel) ? rel : INFINITY;
        entry.worst_index = i;
        entry.analytic_at_worst = analytic;
        entry.numeric_at_worst = numeric;
      }
    }
    report.max_rel_error = std::max(report.max_rel_error, entry.max_rel_error);
    report.skipped += entry.skipped;
    report.entries.push_back(std::move(entry));
  }
  std::size_t probed = 0;
  bool every_tensor_scored = true;
  for (const auto& e : report.entries) {
    probed += e.probed;
    if (e.probed > 0 && e.skipped == e.probed) every_tensor_scored = false;
  }
  // A check that mostly skips has not checked anything.
  report.passed = report.max_rel_error <= options.tolerance && 4 * report.skipped <= probed &&
                  every_tensor_scored;
  return report;
}

}  // namespace can
