#pragma once

// Quantitative comparison of trained variants: style-posterior entropy of
// generated batches, discriminator accuracies, Welch's t-test and a style probe
// trained on real images only.

#include <boost/math/distributions/students_t.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "can/data.hpp"
#include "can/losses.hpp"
#include "can/models.hpp"
#include "can/optim.hpp"
#include "can/serialize.hpp"
#include "can/training.hpp"

namespace can {

// --- statistics --------------------------------------------------------------

struct TTestResult {
  double t = 0.0;
  double p = 1.0;
  double df = 0.0;
  bool degenerate = false;  // both samples have zero variance; t and p are NaN
};

/// Welch's unequal-variance two-sample t-test, two-sided.
inline TTestResult two_sample_ttest(std::span<const double> a, std::span<const double> b) {
  if (a.size() < 2 || b.size() < 2) throw UsageError("t-test needs at least 2 values per sample");
  auto moments = [](std::span<const double> x) {
    double mean = 0.0;
    for (double v : x) mean += v;
    mean /= static_cast<double>(x.size());
    double ss = 0.0;
    for (double v : x) ss += (v - mean) * (v - mean);
    return std::pair{mean, ss / static_cast<double>(x.size() - 1)};
  };
  const auto [ma, va] = moments(a);
  const auto [mb, vb] = moments(b);
  const double na = static_cast<double>(a.size()), nb = static_cast<double>(b.size());
  const double sa = va / na, sb = vb / nb;
  TTestResult r;
  if (sa + sb == 0.0) {
    r.degenerate = true;
    r.t = r.p = r.df = std::numeric_limits<double>::quiet_NaN();
    return r;
  }
  r.t = (ma - mb) / std::sqrt(sa + sb);
  r.df = (sa + sb) * (sa + sb) / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
  const boost::math::students_t dist(r.df);
  r.p = std::min(1.0, 2.0 * boost::math::cdf(boost::math::complement(dist, std::abs(r.t))));
  return r;
}

struct SampleStats {
  double mean = 0.0;
  double std = 0.0;  // sample standard deviation (n - 1)
  std::vector<double> values;
};

inline SampleStats summarize(std::vector<double> values) {
  SampleStats s;
  s.values = std::move(values);
  if (s.values.empty()) return s;
  for (double v : s.values) s.mean += v;
  s.mean /= static_cast<double>(s.values.size());
  if (s.values.size() > 1) {
    double ss = 0.0;
    for (double v : s.values) ss += (v - s.mean) * (v - s.mean);
    s.std = std::sqrt(ss / static_cast<double>(s.values.size() - 1));
  }
  return s;
}

// --- style probe -------------------------------------------------------------

struct ProbeTrainConfig {
  std::size_t epochs = 6;
  std::size_t batch_size = 64;
  double learning_rate = 1e-3;
  std::uint64_t seed = 0;
};

template <typename T>
double probe_accuracy(StyleProbe<T>& probe, const StyleDataset& data) {
  if (data.empty()) throw DataError("accuracy split is empty");
  std::size_t hits = 0;
  for (std::size_t begin = 0; begin < data.size(); begin += 64) {
    std::vector<std::size_t> idx;
    for (std::size_t i = begin; i < std::min(begin + 64, data.size()); ++i) idx.push_back(i);
    const Tensor<T> p = probe.forward(data.batch<T>(idx));
    for (std::size_t r = 0; r < idx.size(); ++r) {
      const T* row = p.raw() + r * p.dim(1);
      const auto best = static_cast<int>(std::max_element(row, row + p.dim(1)) - row);
      hits += best == data.label(idx[r]) ? 1 : 0;
    }
  }
  return static_cast<double>(hits) / static_cast<double>(data.size());
}

/// Fits a probe to real images with cross-entropy and Adam (beta1 0.9).
template <typename T>
StyleProbe<T> train_probe(const StyleDataset& data, const ProbeTrainConfig& cfg,
                          const ProbeConfig& shape = {}) {
  ProbeConfig pc = shape;
  pc.image_size = data.image_size();
  pc.num_styles = data.num_styles();
  StyleProbe<T> probe(pc, derive_seed(cfg.seed, kDiscriminatorInit));
  AdamConfig adam;
  adam.learning_rate = cfg.learning_rate;
  adam.beta1 = 0.9;
  const BatchPlan plan{std::min(cfg.batch_size, data.size()), cfg.seed, true};
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    for (const auto& idx : epoch_batches(data.size(), plan, e)) {
      probe.network().zero_grad();
      const Tensor<T> p = probe.forward(data.batch<T>(idx));
      const auto labels = data.batch_labels(idx);
      probe.backward_logits(grad_style_cross_entropy_logits(p, std::span<const int>(labels)));
      for (auto* param : probe.network().parameters()) adam_step(*param, adam);
    }
  }
  return probe;
}

template <typename T>
void save_probe(StyleProbe<T>& probe, const std::vector<std::string>& style_names,
                const std::filesystem::path& path) {
  BinaryWriter w;
  detail::write_header(w, "probe");
  const ProbeConfig& c = probe.config();
  w.u64(c.image_size);
  w.u64(c.input_channels);
  w.str(join_sizes(c.channels));
  w.u64(c.num_styles);
  w.u64(style_names.size());
  for (const auto& n : style_names) w.str(n);
  detail::write_params(w, probe.network().parameters(), probe.network().buffers());
  w.write_file(path);
}

template <typename T>
struct LoadedProbe {
  StyleProbe<T> probe;
  std::vector<std::string> style_names;
};

template <typename T>
LoadedProbe<T> load_probe(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::from_file(path);
  detail::read_header(r, "probe", path.string());
  ProbeConfig c;
  c.image_size = r.u64();
  c.input_channels = r.u64();
  c.channels = parse_size_list(r.str(), "probe channels");
  c.num_styles = r.u64();
  LoadedProbe<T> out;
  const std::uint64_t names = r.u64();
  if (names != c.num_styles) r.corrupt("style name count differs from class count");
  for (std::uint64_t i = 0; i < names; ++i) out.style_names.push_back(r.str());
  out.probe = StyleProbe<T>(c, 0);
  detail::read_params(r, out.probe.network().parameters(), out.probe.network().buffers());
  if (!r.at_end()) r.corrupt("trailing data");
  return out;
}

// --- generated-sample scores -------------------------------------------------

/// Maps a batch of images [N,C,S,S] to style posteriors [N,K].
template <typename T>
using StyleScorer = std::function<Tensor<T>(const Tensor<T>&)>;

template <typename T>
StyleScorer<T> probe_scorer(StyleProbe<T>& probe) {
  return [&probe](const Tensor<T>& images) { return probe.forward(images); };
}

/// Scores with the adversary's own style head (self-grading; not the default).
template <typename T>
StyleScorer<T> discriminator_scorer(Discriminator<T>& disc) {
  return [&disc](const Tensor<T>& images) { return disc.forward(images, Phase::batch).style; };
}

inline constexpr std::size_t kEvalChunk = 64;

namespace detail {

template <typename T>
Tensor<T> score_in_chunks(const StyleScorer<T>& scorer, const Tensor<T>& images) {
  const std::size_t n = images.dim(0);
  std::vector<T> values;
  std::size_t k = 0;
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t count = std::min(kEvalChunk, n - begin);
    if (n - begin - count == 1) count += 1;
    const Tensor<T> p = scorer(slice_batch(images, begin, count));
    k = p.dim(1);
    values.insert(values.end(), p.data().begin(), p.data().end());
    begin += count;
  }
  return Tensor<T>({n, k}, std::move(values));
}

}  // namespace detail

struct EntropyResult {
  SampleStats entropy;    // nats, per sample
  double ambiguity_mean = 0.0;
};

/// Entropy summary of a fixed posterior matrix.
template <typename T>
EntropyResult posterior_summary(const Tensor<T>& posteriors) {
  EntropyResult r;
  r.entropy = summarize(posterior_entropy(posteriors));
  r.ambiguity_mean = summarize(style_ambiguity_term(posteriors)).mean;
  return r;
}

/// Generates `n` images from noise drawn with `seed` and summarizes the scorer's posteriors.
template <typename T>
EntropyResult mean_style_entropy(Generator<T>& gen, const StyleScorer<T>& scorer,
                                 std::size_t num_styles, std::size_t n, std::uint64_t seed) {
  if (n < 30) throw UsageError("mean_style_entropy needs at least 30 samples");
  std::mt19937_64 rng(seed);
  const Tensor<T> z = sample_noise<T>(n, gen.config().noise_dim, rng);
  const Tensor<T> images = generate(gen, z, kEvalChunk);
  const Tensor<T> p = detail::score_in_chunks(scorer, images);
  if (p.dim(1) != num_styles) {
    throw UsageError("scorer has " + std::to_string(p.dim(1)) + " style classes, corpus has " +
                     std::to_string(num_styles));
  }
  return posterior_summary(p);
}

template <typename T>
EntropyResult mean_style_entropy(Generator<T>& gen, StyleProbe<T>& probe, std::size_t n,
                                 std::uint64_t seed) {
  return mean_style_entropy(gen, probe_scorer(probe), probe.config().num_styles, n, seed);
}

struct Accuracy {
  double real_fake = 0.0;
  double style = 0.0;
  double mean_real_score_fake = 0.0;  // mean D_r on generated images
};

/// Real/fake accuracy at threshold 0.5 over the split plus as many generated images, and
/// style argmax accuracy on the split. Batches are homogeneous (all real or all fake).
template <typename T>
Accuracy classifier_accuracy(Generator<T>& gen, Discriminator<T>& disc, const StyleDataset& split,
                             std::uint64_t seed) {
  if (split.size() < 2) throw DataError("accuracy split needs at least 2 images");
  if (split.num_styles() != disc.config().num_styles) {
    throw DataError("split has " + std::to_string(split.num_styles()) +
                    " styles, discriminator has " + std::to_string(disc.config().num_styles));
  }
  const std::size_t n = split.size();
  std::size_t real_hits = 0, style_hits = 0, fake_hits = 0;
  double fake_score = 0.0;
  // Splits are stored grouped by style; shuffled chunks keep batch statistics mixed like training.
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::shuffle(order.begin(), order.end(), rng);
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t count = std::min(kEvalChunk, n - begin);
    if (n - begin - count == 1) count += 1;
    const std::vector<std::size_t> idx(order.begin() + static_cast<std::ptrdiff_t>(begin),
                                       order.begin() + static_cast<std::ptrdiff_t>(begin + count));
    const auto out = disc.forward(split.batch<T>(idx), Phase::batch);
    const std::size_t k = out.style.dim(1);
    for (std::size_t r = 0; r < count; ++r) {
      real_hits += out.real[r] > T(0.5) ? 1 : 0;
      const T* row = out.style.raw() + r * k;
      style_hits += (std::max_element(row, row + k) - row) == split.label(idx[r]) ? 1 : 0;
    }
    begin += count;
  }
  const Tensor<T> z = sample_noise<T>(n, gen.config().noise_dim, rng);
  const Tensor<T> fakes = generate(gen, z, kEvalChunk);
  begin = 0;
  while (begin < n) {
    std::size_t count = std::min(kEvalChunk, n - begin);
    if (n - begin - count == 1) count += 1;
    const auto out = disc.forward(slice_batch(fakes, begin, count), Phase::batch);
    for (std::size_t r = 0; r < count; ++r) {
      fake_hits += out.real[r] < T(0.5) ? 1 : 0;
      fake_score += static_cast<double>(out.real[r]);
    }
    begin += count;
  }
  Accuracy a;
  a.real_fake = static_cast<double>(real_hits + fake_hits) / static_cast<double>(2 * n);
  a.style = static_cast<double>(style_hits) / static_cast<double>(n);
  a.mean_real_score_fake = fake_score / static_cast<double>(n);
  return a;
}

// --- reports -----------------------------------------------------------------

struct VariantMetrics {
  std::string name;
  double entropy_mean = 0.0;
  double entropy_std = 0.0;
  double ambiguity_mean = 0.0;
  double real_fake_accuracy = 0.0;
  double style_accuracy = 0.0;
  double mean_real_score_fake = 0.0;
  std::size_t samples = 0;
  std::vector<double> entropies;  // not serialized
};

struct PairTest {
  std::string a;
  std::string b;
  TTestResult result;
};

struct EvalReport {
  std::size_t num_styles = 0;
  std::uint64_t seed = 0;
  std::vector<VariantMetrics> variants;
  std::vector<PairTest> tests;

  const VariantMetrics* find(const std::string& name) const {
    for (const auto& v : variants) {
      if (v.name == name) return &v;
    }
    return nullptr;
  }

  std::string to_text() const {
    std::ostringstream os;
    auto num = [](double v) { return TrainConfig::format_double(v); };
    os << "num_styles=" << num_styles << "\n";
    os << "seed=" << seed << "\n";
    for (const auto& v : variants) {
      const std::string p = "variant." + v.name + ".";
      os << p << "samples=" << v.samples << "\n";
      os << p << "entropy_mean=" << num(v.entropy_mean) << "\n";
      os << p << "entropy_std=" << num(v.entropy_std) << "\n";
      os << p << "ambiguity_mean=" << num(v.ambiguity_mean) << "\n";
      os << p << "real_fake_accuracy=" << num(v.real_fake_accuracy) << "\n";
      os << p << "style_accuracy=" << num(v.style_accuracy) << "\n";
      os << p << "mean_real_score_fake=" << num(v.mean_real_score_fake) << "\n";
    }
    for (const auto& t : tests) {
      const std::string p = "ttest." + t.a + ".vs." + t.b + ".";
      os << p << "t=" << num(t.result.t) << "\n";
      os << p << "p=" << num(t.result.p) << "\n";
      os << p << "df=" << num(t.result.df) << "\n";
      os << p << "degenerate=" << (t.result.degenerate ? "true" : "false") << "\n";
    }
    return os.str();
  }

  static EvalReport from_text(const std::string& text) {
    EvalReport r;
    auto num = [](const std::string& key, const std::string& v) {
      try {
        return std::stod(v);
      } catch (const std::exception&) {
        if (v == "nan" || v == "-nan") return std::numeric_limits<double>::quiet_NaN();
        throw UsageError("invalid number '" + v + "' for " + key);
      }
    };
    auto variant = [&r](const std::string& name) -> VariantMetrics& {
      for (auto& v : r.variants) {
        if (v.name == name) return v;
      }
      r.variants.push_back({});
      r.variants.back().name = name;
      return r.variants.back();
    };
    auto test = [&r](const std::string& a, const std::string& b) -> PairTest& {
      for (auto& t : r.tests) {
        if (t.a == a && t.b == b) return t;
      }
      r.tests.push_back({a, b, {}});
      return r.tests.back();
    };
    for (const auto& [key, value] : parse_key_values(text, "eval report")) {
      if (key == "num_styles") {
        r.num_styles = static_cast<std::size_t>(num(key, value));
      } else if (key == "seed") {
        r.seed = std::stoull(value);
      } else if (key.rfind("variant.", 0) == 0) {
        const auto dot = key.rfind('.');
        VariantMetrics& v = variant(key.substr(8, dot - 8));
        const std::string field = key.substr(dot + 1);
        if (field == "samples") v.samples = static_cast<std::size_t>(num(key, value));
        else if (field == "entropy_mean") v.entropy_mean = num(key, value);
        else if (field == "entropy_std") v.entropy_std = num(key, value);
        else if (field == "ambiguity_mean") v.ambiguity_mean = num(key, value);
        else if (field == "real_fake_accuracy") v.real_fake_accuracy = num(key, value);
        else if (field == "style_accuracy") v.style_accuracy = num(key, value);
        else if (field == "mean_real_score_fake") v.mean_real_score_fake = num(key, value);
        else throw UsageError("unknown report field " + key);
      } else if (key.rfind("ttest.", 0) == 0) {
        const auto vs = key.find(".vs.");
        const auto dot = key.rfind('.');
        if (vs == std::string::npos || dot <= vs + 4) throw UsageError("malformed key " + key);
        PairTest& t = test(key.substr(6, vs - 6), key.substr(vs + 4, dot - vs - 4));
        const std::string field = key.substr(dot + 1);
        if (field == "t") t.result.t = num(key, value);
        else if (field == "p") t.result.p = num(key, value);
        else if (field == "df") t.result.df = num(key, value);
        else if (field == "degenerate") t.result.degenerate = value == "true";
        else throw UsageError("unknown report field " + key);
      } else {
        throw UsageError("unknown report key " + key);
      }
    }
    return r;
  }

  /// One row per variant, for spreadsheets.
  std::string to_csv() const {
    std::ostringstream os;
    os << "variant,samples,entropy_mean,entropy_std,ambiguity_mean,real_fake_accuracy,"
          "style_accuracy,mean_real_score_fake\n";
    os << std::setprecision(10);
    for (const auto& v : variants) {
      os << v.name << ',' << v.samples << ',' << v.entropy_mean << ',' << v.entropy_std << ','
         << v.ambiguity_mean << ',' << v.real_fake_accuracy << ',' << v.style_accuracy << ','
         << v.mean_real_score_fake << '\n';
    }
    return os.str();
  }
};

template <typename T>
struct NamedRun {
  std::string name;
  TrainState<T>* state;
};

/// Scores every run with the same probe, noise seed and held-out split, and t-tests
/// fake-entropy between each pair (CAN first when present).
template <typename T>
EvalReport compare_variants(std::vector<NamedRun<T>> runs, StyleProbe<T>& probe,
                            const StyleDataset& heldout, std::size_t n, std::uint64_t seed) {
  if (runs.empty()) throw UsageError("compare_variants needs at least one checkpoint");
  const std::uint32_t fp = runs.front().state->corpus_fingerprint;
  for (const auto& r : runs) {
    if (r.state->corpus_fingerprint != fp) {
      throw DataError("checkpoints were trained on different corpora (" + runs.front().name +
                      " vs " + r.name + ")");
    }
    if (r.state->config.discriminator.num_styles != probe.config().num_styles) {
      throw UsageError("probe has " + std::to_string(probe.config().num_styles) +
                       " styles, checkpoint " + r.name + " has " +
                       std::to_string(r.state->config.discriminator.num_styles));
    }
  }
  EvalReport report;
  report.num_styles = probe.config().num_styles;
  report.seed = seed;
  for (auto& r : runs) {
    const EntropyResult e = mean_style_entropy(r.state->generator, probe, n, seed);
    VariantMetrics m;
    m.name = r.name;
    m.samples = n;
    m.entropy_mean = e.entropy.mean;
    m.entropy_std = e.entropy.std;
    m.ambiguity_mean = e.ambiguity_mean;
    m.entropies = e.entropy.values;
    if (!heldout.empty()) {
      const Accuracy a =
          classifier_accuracy(r.state->generator, r.state->discriminator, heldout, seed);
      m.real_fake_accuracy = a.real_fake;
      m.style_accuracy = a.style;
      m.mean_real_score_fake = a.mean_real_score_fake;
    }
    report.variants.push_back(std::move(m));
  }
  for (std::size_t i = 0; i < report.variants.size(); ++i) {
    for (std::size_t j = i + 1; j < report.variants.size(); ++j) {
      const auto& a = report.variants[i];
      const auto& b = report.variants[j];
      report.tests.push_back({a.name, b.name, two_sample_ttest(a.entropies, b.entropies)});
    }
  }
  return report;
}

}  // namespace can
