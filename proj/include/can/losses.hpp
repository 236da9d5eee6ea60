#pragma once

// Adversarial objectives. Losses are batch means, written in the sign
// convention that gradient descent minimizes. Every log(p) is evaluated as
// log(max(p, kLogFloor)).
//
// Gradients are returned with respect to the pre-activation logits of the
// discriminator heads (sigmoid for D_r, softmax for D_c), which stays
// well-conditioned when probabilities saturate.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "can/error.hpp"
#include "can/tensor.hpp"

namespace can {

inline constexpr double kLogFloor = 1e-12;

inline double safe_log(double p) { return std::log(std::max(p, kLogFloor)); }

enum class Variant { gan, sc_can, can };

inline const char* variant_name(Variant v) {
  switch (v) {
    case Variant::gan: return "gan";
    case Variant::sc_can: return "sc-can";
    case Variant::can: return "can";
  }
  return "?";
}

inline Variant parse_variant(const std::string& s) {
  if (s == "gan") return Variant::gan;
  if (s == "sc-can" || s == "sc_can") return Variant::sc_can;
  if (s == "can") return Variant::can;
  throw UsageError("unknown variant '" + s + "' (expected gan, sc-can or can)");
}

/// Whether the discriminator learns style classes from real labels.
inline bool uses_style_loss(Variant v) { return v != Variant::gan; }
/// Whether the generator is pushed toward ambiguous style posteriors.
inline bool uses_ambiguity_loss(Variant v) { return v == Variant::can; }

/// Per-batch scalars of one training step.
struct StepSignals {
  std::vector<double> d_real;       // D_r(x) on real images
  std::vector<double> d_style;      // D_c(c = true style | x) on real images
  std::vector<double> g_fake;       // D_r(G(z))
  std::vector<double> g_ambiguity;  // per-sample style ambiguity term, <= 0
};

namespace detail {

inline void require_batch(std::span<const double> v, const char* what) {
  if (v.empty()) throw UsageError(std::string(what) + " batch is empty");
}

inline double mean_log(std::span<const double> v) {
  double acc = 0.0;
  for (double p : v) acc += safe_log(p);
  return acc / static_cast<double>(v.size());
}

inline double mean_log_complement(std::span<const double> v) {
  double acc = 0.0;
  for (double p : v) acc += safe_log(1.0 - p);
  return acc / static_cast<double>(v.size());
}

template <typename T>
void require_probability_rows(const Tensor<T>& p, const char* what) {
  if (p.rank() != 2) throw UsageError(std::string(what) + " needs [N,K] posteriors");
  const std::size_t k = p.dim(1);
  for (std::size_t r = 0; r < p.dim(0); ++r) {
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double v = p.at(r, j);
      if (!(v >= 0.0)) {
        throw UsageError(std::string(what) + ": row " + std::to_string(r) +
                         " has a negative or non-finite entry");
      }
      total += v;
    }
    // Single-precision softmax rows carry rounding of order K * 6e-8.
    const double tolerance = sizeof(T) < sizeof(double) ? 1e-4 : 1e-6;
    if (std::abs(total - 1.0) > tolerance) {
      throw UsageError(std::string(what) + ": row " + std::to_string(r) + " sums to " +
                       std::to_string(total) + ", not 1");
    }
  }
}

// 1 - p_k computed as the sum of the other entries, which avoids cancellation.
template <typename T>
double complement(const T* row, std::size_t k, std::size_t skip) {
  double acc = 0.0;
  for (std::size_t i = 0; i < k; ++i) {
    if (i != skip) acc += row[i];
  }
  return acc;
}

}  // namespace detail

/// -mean log r_real - mean log(1 - r_fake).
inline double gan_d_loss(std::span<const double> r_real, std::span<const double> r_fake) {
  detail::require_batch(r_real, "gan_d_loss real");
  detail::require_batch(r_fake, "gan_d_loss fake");
  return -detail::mean_log(r_real) - detail::mean_log_complement(r_fake);
}

/// Non-saturating generator loss: -mean log r_fake.
inline double gan_g_loss(std::span<const double> r_fake) {
  detail::require_batch(r_fake, "gan_g_loss");
  return -detail::mean_log(r_fake);
}

/// Per sample: sum_k (1/K) log p_k + (1 - 1/K) log(1 - p_k). Maximal at the uniform posterior.
template <typename T>
std::vector<double> style_ambiguity_term(const Tensor<T>& posteriors) {
  detail::require_probability_rows(posteriors, "style_ambiguity_term");
  const std::size_t k = posteriors.dim(1);
  const double inv_k = 1.0 / static_cast<double>(k);
  std::vector<double> out(posteriors.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    const T* row = posteriors.raw() + r * k;
    double s = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      s += inv_k * safe_log(row[j]) + (1.0 - inv_k) * safe_log(detail::complement(row, k, j));
    }
    out[r] = s;
  }
  return out;
}

/// Per-sample Shannon entropy in nats.
template <typename T>
std::vector<double> posterior_entropy(const Tensor<T>& posteriors) {
  detail::require_probability_rows(posteriors, "posterior_entropy");
  const std::size_t k = posteriors.dim(1);
  std::vector<double> out(posteriors.dim(0));
  for (std::size_t r = 0; r < out.size(); ++r) {
    double h = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      const double p = posteriors.at(r, j);
      if (p > 0.0) h -= p * std::log(p);
    }
    out[r] = std::max(0.0, h);
  }
  return out;
}

/// -mean log s_D_r - mean log s_D_c - mean log(1 - s_G_f).
inline double can_d_loss(const StepSignals& s) {
  detail::require_batch(s.d_real, "can_d_loss real");
  detail::require_batch(s.d_style, "can_d_loss style");
  detail::require_batch(s.g_fake, "can_d_loss fake");
  return -detail::mean_log(s.d_real) - detail::mean_log(s.d_style) -
         detail::mean_log_complement(s.g_fake);
}

/// -mean log s_G_f - mean s_G_c; the ambiguity term is dropped unless the variant is CAN.
inline double can_g_loss(const StepSignals& s, Variant variant = Variant::can) {
  detail::require_batch(s.g_fake, "can_g_loss fake");
  double loss = gan_g_loss(s.g_fake);
  if (uses_ambiguity_loss(variant)) {
    detail::require_batch(s.g_ambiguity, "can_g_loss ambiguity");
    double acc = 0.0;
    for (double v : s.g_ambiguity) acc += v;
    loss -= acc / static_cast<double>(s.g_ambiguity.size());
  }
  return loss;
}

/// Discriminator objective for a variant: the style term is present for SC_CAN and CAN.
inline double discriminator_loss(const StepSignals& s, Variant variant) {
  return uses_style_loss(variant) ? can_d_loss(s) : gan_d_loss(s.d_real, s.g_fake);
}

// --- logit-space gradients of the batch-mean terms ---------------------------

/// d/da of -mean log sigmoid(a), given r = sigmoid(a): (r - 1) / N.
template <typename T>
Tensor<T> grad_neg_log_logit(const Tensor<T>& r) {
  Tensor<T> g(r.shape());
  const double n = static_cast<double>(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) g[i] = static_cast<T>((r[i] - 1.0) / n);
  return g;
}

/// d/da of -mean log(1 - sigmoid(a)): r / N.
template <typename T>
Tensor<T> grad_neg_log_complement_logit(const Tensor<T>& r) {
  Tensor<T> g(r.shape());
  const double n = static_cast<double>(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) g[i] = static_cast<T>(r[i] / n);
  return g;
}

/// d/da of -mean log softmax(a)[label]: (p - onehot) / N.
template <typename T>
Tensor<T> grad_style_cross_entropy_logits(const Tensor<T>& posteriors,
                                          std::span<const int> labels) {
  if (posteriors.rank() != 2 || labels.size() != posteriors.dim(0)) {
    throw UsageError("style cross-entropy needs one label per posterior row");
  }
  const std::size_t k = posteriors.dim(1);
  const double n = static_cast<double>(posteriors.dim(0));
  Tensor<T> g(posteriors.shape());
  for (std::size_t r = 0; r < posteriors.dim(0); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= k) {
      throw UsageError("style label " + std::to_string(labels[r]) + " out of range");
    }
    for (std::size_t j = 0; j < k; ++j) {
      const double onehot = static_cast<std::size_t>(labels[r]) == j ? 1.0 : 0.0;
      g.at(r, j) = static_cast<T>((posteriors.at(r, j) - onehot) / n);
    }
  }
  return g;
}

/// d/da of -mean style_ambiguity_term(softmax(a)).
///
/// With q_k = p_k / (1 - p_k), the per-sample derivative of the ambiguity term is
///   ds/da_j = 1/K - p_j + (1 - 1/K) * p_j * (sum_{k != j} q_k - 1).
template <typename T>
Tensor<T> grad_neg_ambiguity_logits(const Tensor<T>& posteriors) {
  detail::require_probability_rows(posteriors, "ambiguity gradient");
  const std::size_t k = posteriors.dim(1);
  const double inv_k = 1.0 / static_cast<double>(k);
  const double n = static_cast<double>(posteriors.dim(0));
  Tensor<T> g(posteriors.shape());
  std::vector<double> q(k);
  for (std::size_t r = 0; r < posteriors.dim(0); ++r) {
    const T* row = posteriors.raw() + r * k;
    for (std::size_t j = 0; j < k; ++j) {
      q[j] = row[j] / std::max(detail::complement(row, k, j), kLogFloor);
    }
    for (std::size_t j = 0; j < k; ++j) {
      double others = 0.0;
      for (std::size_t i = 0; i < k; ++i) {
        if (i != j) others += q[i];
      }
      const double ds = inv_k - row[j] + (1.0 - inv_k) * row[j] * (others - 1.0);
      g.at(r, j) = static_cast<T>(-ds / n);
    }
  }
  return g;
}

}  // namespace can
