#pragma once

// Alternating adversarial training for the GAN, SC_CAN and CAN variants, with
// checkpointing, resume and step logging.

#include <charconv>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <optional>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "can/config.hpp"
#include "can/data.hpp"
#include "can/grad_check.hpp"
#include "can/image.hpp"
#include "can/losses.hpp"
#include "can/models.hpp"
#include "can/serialize.hpp"

namespace can {

enum class Precision { f64, f32 };

inline const char* precision_name(Precision p) { return p == Precision::f64 ? "64" : "32"; }

inline Precision parse_precision(const std::string& s) {
  if (s == "64" || s == "f64" || s == "double") return Precision::f64;
  if (s == "32" || s == "f32" || s == "float") return Precision::f32;
  throw UsageError("unknown precision '" + s + "' (expected 32 or 64)");
}

/// Derives independent stream seeds from the run seed (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum SeedStream : std::uint64_t {
  kGeneratorInit = 1,
  kDiscriminatorInit = 2,
  kNoiseStream = 3,
  kEvalPanel = 4,
};

struct TrainConfig {
  Variant variant = Variant::can;
  double learning_rate = 1e-4;
  std::size_t batch_size = 128;
  std::size_t epochs = 100;
  std::uint64_t seed = 0;
  AdamConfig adam{};  // learning_rate field is ignored; see learning_rate above
  std::size_t log_every = 1;
  std::size_t checkpoint_every = 0;  // steps; 0 = only the final checkpoint
  std::size_t sample_panel = 64;
  Precision precision = Precision::f64;
  std::string data;
  bool augment = false;
  double holdout = 0.0;
  GeneratorConfig generator = GeneratorConfig::paper();
  DiscriminatorConfig discriminator = DiscriminatorConfig::paper();

  static TrainConfig paper(std::size_t styles = 25) {
    TrainConfig c;
    c.discriminator.num_styles = styles;
    return c;
  }

  /// 32x32 images, batch 64, 30 epochs.
  static TrainConfig desk(std::size_t styles = 4) {
    TrainConfig c;
    c.batch_size = 64;
    c.epochs = 30;
    c.generator = GeneratorConfig::desk();
    c.discriminator = DiscriminatorConfig::desk(styles);
    return c;
  }

  /// Desk geometry with a quarter of the channel widths; for repeated paired experiments.
  static TrainConfig compact(std::size_t styles = 4) {
    TrainConfig c = desk(styles);
    c.generator.stage_channels = {128, 64, 32};
    c.discriminator.body_channels = {32, 64, 128};
    c.discriminator.head_hidden = {256, 128};
    c.epochs = 15;
    return c;
  }

  static TrainConfig preset(const std::string& name, std::size_t styles) {
    if (name == "paper") return paper(styles);
    if (name == "desk") return desk(styles);
    if (name == "compact") return compact(styles);
    throw UsageError("unknown preset '" + name + "' (expected paper, desk or compact)");
  }

  AdamConfig optimizer() const {
    AdamConfig a = adam;
    a.learning_rate = learning_rate;
    return a;
  }

  void validate() const {
    if (!(learning_rate > 0.0)) throw UsageError("learning rate must be positive");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (batch_size < 2) throw UsageError("batch size must be >= 2");
    if (log_every < 1) throw UsageError("log-every must be >= 1");
    if (sample_panel < 2) throw UsageError("sample panel must hold at least 2 images");
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
      throw UsageError("Adam betas must lie in [0,1)");
    }
    if (!(adam.epsilon > 0.0)) throw UsageError("Adam epsilon must be positive");
    if (!(holdout >= 0.0 && holdout < 1.0)) throw UsageError("holdout must lie in [0,1)");
    generator.validate();
    discriminator.validate();
    if (generator.output_size != discriminator.image_size) {
      throw UsageError("generator output size " + std::to_string(generator.output_size) +
                       " differs from discriminator input size " +
                       std::to_string(discriminator.image_size));
    }
    if (generator.output_channels != discriminator.input_channels) {
      throw UsageError("generator and discriminator channel counts differ");
    }
  }

  /// Flat key=value form; the same keys are accepted by the CLI and its config files.
  KeyValues to_key_values() const {
    return {
        {"variant", variant_name(variant)},
        {"lr", format_double(learning_rate)},
        {"batch", std::to_string(batch_size)},
        {"epochs", std::to_string(epochs)},
        {"seed", std::to_string(seed)},
        {"beta1", format_double(adam.beta1)},
        {"beta2", format_double(adam.beta2)},
        {"adam-eps", format_double(adam.epsilon)},
        {"log-every", std::to_string(log_every)},
        {"checkpoint-every", std::to_string(checkpoint_every)},
        {"panel", std::to_string(sample_panel)},
        {"precision", precision_name(precision)},
        {"data", data},
        {"augment", augment ? "true" : "false"},
        {"holdout", format_double(holdout)},
        {"image-size", std::to_string(generator.output_size)},
        {"noise-dim", std::to_string(generator.noise_dim)},
        {"base-size", std::to_string(generator.base_spatial)},
        {"gen-stages", join_sizes(generator.stage_channels)},
        {"disc-body", join_sizes(discriminator.body_channels)},
        {"head-hidden", join_sizes(discriminator.head_hidden)},
        {"styles", std::to_string(discriminator.num_styles)},
        {"init-std", format_double(generator.init_std)},
        {"slope", format_double(generator.slope)},
    };
  }

  std::string to_text() const {
    std::string out;
    for (const auto& [k, v] : to_key_values()) out += k + "=" + v + "\n";
    return out;
  }

  /// Applies one key; returns false for keys this config does not know.
  bool apply(const std::string& key, const std::string& value) {
    auto as_size = [&]() { return parse_size_list(value, key).at(0); };
    auto as_double = [&]() {
      try {
        std::size_t used = 0;
        const double d = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument(value);
        return d;
      } catch (const std::exception&) {
        throw UsageError("invalid number '" + value + "' for " + key);
      }
    };
    if (key == "variant") variant = parse_variant(value);
    else if (key == "lr") learning_rate = as_double();
    else if (key == "batch") batch_size = as_size();
    else if (key == "epochs") epochs = as_size();
    else if (key == "seed") seed = as_size();
    else if (key == "beta1") adam.beta1 = as_double();
    else if (key == "beta2") adam.beta2 = as_double();
    else if (key == "adam-eps") adam.epsilon = as_double();
    else if (key == "log-every") log_every = as_size();
    else if (key == "checkpoint-every") checkpoint_every = as_size();
    else if (key == "panel") sample_panel = as_size();
    else if (key == "precision") precision = parse_precision(value);
    else if (key == "data") data = value;
    else if (key == "augment") augment = (value == "true" || value == "1");
    else if (key == "holdout") holdout = as_double();
    else if (key == "image-size") {
      const std::size_t s = as_size();
      discriminator.image_size = s;
      generator.output_size = s;
    } else if (key == "noise-dim") generator.noise_dim = as_size();
    else if (key == "base-size") generator.base_spatial = as_size();
    else if (key == "gen-stages") generator.stage_channels = parse_size_list(value, key);
    else if (key == "disc-body") discriminator.body_channels = parse_size_list(value, key);
    else if (key == "head-hidden") discriminator.head_hidden = parse_size_list(value, key);
    else if (key == "styles") discriminator.num_styles = as_size();
    else if (key == "init-std") {
      generator.init_std = as_double();
      discriminator.init_std = generator.init_std;
    } else if (key == "slope") {
      generator.slope = as_double();
      discriminator.slope = generator.slope;
    } else return false;
    return true;
  }

  static TrainConfig from_text(const std::string& text) {
    TrainConfig c;
    for (const auto& [k, v] : parse_key_values(text, "config echo")) {
      if (!c.apply(k, v)) throw UsageError("unknown config key '" + k + "'");
    }
    return c;
  }

  /// Keys that change network structure or training semantics.
  static const std::vector<std::string>& model_keys() {
    static const std::vector<std::string> keys{"variant",    "precision", "image-size",
                                               "noise-dim",  "base-size", "gen-stages", "disc-body",
                                               "head-hidden", "styles"};
    return keys;
  }

  static std::string format_double(double v) {
    char buf[64];
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, end);
  }
};

/// Lists model-affecting keys on which two configurations disagree.
inline std::vector<std::string> config_mismatches(const TrainConfig& a, const TrainConfig& b) {
  std::map<std::string, std::string> ma, mb;
  for (const auto& [k, v] : a.to_key_values()) ma[k] = v;
  for (const auto& [k, v] : b.to_key_values()) mb[k] = v;
  std::vector<std::string> out;
  for (const auto& k : TrainConfig::model_keys()) {
    if (ma[k] != mb[k]) out.push_back(k + " (" + ma[k] + " vs " + mb[k] + ")");
  }
  return out;
}

struct StepLog {
  std::uint64_t step = 0;
  std::uint64_t epoch = 0;
  double loss_d = 0.0;
  double loss_g = 0.0;
  double mean_d_real = 0.0;  // mean D_r(x) on the real batch
  double mean_d_fake = 0.0;  // mean D_r(G(z)) seen by the generator update
  double fake_entropy = 0.0;  // mean D_c posterior entropy of the fakes, nats
  double wall_clock = 0.0;    // seconds since the Unix epoch; excluded from equality

  bool same_values(const StepLog& o) const {
    return step == o.step && epoch == o.epoch && loss_d == o.loss_d && loss_g == o.loss_g &&
           mean_d_real == o.mean_d_real && mean_d_fake == o.mean_d_fake &&
           fake_entropy == o.fake_entropy;
  }

  nlohmann::json to_json() const {
    return {{"step", step},           {"epoch", epoch},
            {"loss_d", loss_d},       {"loss_g", loss_g},
            {"mean_d_real", mean_d_real}, {"mean_d_fake", mean_d_fake},
            {"fake_entropy", fake_entropy}, {"timestamp", wall_clock}};
  }

  std::string describe() const { return to_json().dump(); }
};

inline bool same_logs(const std::vector<StepLog>& a, const std::vector<StepLog>& b) {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (!a[i].same_values(b[i])) return false;
  }
  return true;
}

template <typename T>
struct TrainState {
  TrainConfig config;
  Generator<T> generator;
  Discriminator<T> discriminator;
  std::mt19937_64 rng;
  std::uint64_t epoch = 0;
  std::uint64_t batch_in_epoch = 0;
  std::uint64_t step = 0;
  std::uint32_t corpus_fingerprint = 0;
  Tensor<T> eval_noise;

  static TrainState create(const TrainConfig& config, std::uint32_t fingerprint = 0) {
    config.validate();
    TrainState s;
    s.config = config;
    s.generator = Generator<T>(config.generator, derive_seed(config.seed, kGeneratorInit));
    s.discriminator =
        Discriminator<T>(config.discriminator, derive_seed(config.seed, kDiscriminatorInit));
    s.rng.seed(derive_seed(config.seed, kNoiseStream));
    std::mt19937_64 panel(derive_seed(config.seed, kEvalPanel));
    s.eval_noise = sample_noise<T>(config.sample_panel, config.generator.noise_dim, panel);
    s.corpus_fingerprint = fingerprint;
    return s;
  }
};

namespace detail {

template <typename T>
std::vector<double> to_doubles(const Tensor<T>& t) {
  return std::vector<double>(t.data().begin(), t.data().end());
}

inline double mean_of(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x;
  return v.empty() ? 0.0 : acc / static_cast<double>(v.size());
}

inline double unix_seconds() {
  return std::chrono::duration<double>(std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace detail

/// One discriminator update followed by one generator update on the same fakes.
/// The generator update sees the discriminator after its update, via a fresh forward pass.
template <typename T>
StepLog train_step(TrainState<T>& state, const Tensor<T>& real_images,
                   const std::vector<int>& real_labels) {
  auto& gen = state.generator;
  auto& disc = state.discriminator;
  const Variant variant = state.config.variant;
  const std::size_t n = real_images.dim(0);
  if (real_labels.size() != n) throw UsageError("one style label is needed per real image");
  const AdamConfig adam = state.config.optimizer();

  const Tensor<T> z = sample_noise<T>(n, state.config.generator.noise_dim, state.rng);
  const Tensor<T> fake = gen.forward(z, Phase::train);

  // Discriminator: real and fake sub-batches in separate passes.
  StepSignals d_signals;
  disc.zero_grad();
  {
    const auto out = disc.forward(real_images, Phase::train);
    d_signals.d_real = detail::to_doubles(out.real);
    for (std::size_t i = 0; i < n; ++i) {
      d_signals.d_style.push_back(out.style.at(i, static_cast<std::size_t>(real_labels[i])));
    }
    const Tensor<T> style_grad = uses_style_loss(variant)
                                     ? grad_style_cross_entropy_logits(out.style, std::span<const int>(real_labels))
                                     : Tensor<T>();
    disc.backward_logits(grad_neg_log_logit(out.real), style_grad);
  }
  {
    const auto out = disc.forward(fake, Phase::train);
    d_signals.g_fake = detail::to_doubles(out.real);
    disc.backward_logits(grad_neg_log_complement_logit(out.real), Tensor<T>());
  }
  StepLog log;
  log.step = state.step + 1;
  log.epoch = state.epoch;
  log.loss_d = discriminator_loss(d_signals, variant);
  log.mean_d_real = detail::mean_of(d_signals.d_real);
  if (!std::isfinite(log.loss_d)) {
    throw NumericError("non-finite discriminator loss at step " + log.describe());
  }
  for (auto* p : disc.parameters()) adam_step(*p, adam);

  // Generator: fresh discriminator pass on the same fakes, no running-stat updates.
  StepSignals g_signals;
  gen.network().zero_grad();
  disc.zero_grad();
  {
    const auto out = disc.forward(fake, Phase::batch);
    g_signals.g_fake = detail::to_doubles(out.real);
    g_signals.g_ambiguity = style_ambiguity_term(out.style);
    log.fake_entropy = detail::mean_of(posterior_entropy(out.style));
    const Tensor<T> style_grad =
        uses_ambiguity_loss(variant) ? grad_neg_ambiguity_logits(out.style) : Tensor<T>();
    const Tensor<T> grad_fake = disc.backward_logits(grad_neg_log_logit(out.real), style_grad);
    gen.backward(grad_fake);
  }
  log.loss_g = can_g_loss(g_signals, variant);
  log.mean_d_fake = detail::mean_of(g_signals.g_fake);
  log.wall_clock = detail::unix_seconds();
  if (!std::isfinite(log.loss_g)) {
    throw NumericError("non-finite generator loss at step " + log.describe());
  }
  for (auto* p : gen.network().parameters()) adam_step(*p, adam);
  disc.zero_grad();
  return log;
}

// --- gradient checks of the composite objectives ------------------------------

/// Checks the discriminator objective against every D parameter (`generator_side` false), or
/// the generator objective against every G parameter (true), on a fixed batch and noise.
template <typename T>
GradCheckReport check_objective_gradients(TrainState<T>& state, const Tensor<T>& real_images,
                                          const std::vector<int>& labels, const Tensor<T>& z,
                                          bool generator_side, const GradCheckOptions& options) {
  auto& gen = state.generator;
  auto& disc = state.discriminator;
  const Variant variant = state.config.variant;
  const std::size_t n = real_images.dim(0);
  Tensor<T> fixed_fake = gen.forward(z, Phase::batch);

  auto d_loss = [&](bool with_grad) {
    StepSignals s;
    auto out = disc.forward(real_images, Phase::batch);
    s.d_real = detail::to_doubles(out.real);
    for (std::size_t i = 0; i < n; ++i) {
      s.d_style.push_back(out.style.at(i, static_cast<std::size_t>(labels[i])));
    }
    if (with_grad) {
      disc.backward_logits(grad_neg_log_logit(out.real),
                           uses_style_loss(variant)
                               ? grad_style_cross_entropy_logits(out.style, std::span<const int>(labels))
                               : Tensor<T>());
    }
    out = disc.forward(fixed_fake, Phase::batch);
    s.g_fake = detail::to_doubles(out.real);
    if (with_grad) disc.backward_logits(grad_neg_log_complement_logit(out.real), Tensor<T>());
    return discriminator_loss(s, variant);
  };
  auto g_loss = [&](bool with_grad) {
    StepSignals s;
    const Tensor<T> fake = gen.forward(z, Phase::batch);
    const auto out = disc.forward(fake, Phase::batch);
    s.g_fake = detail::to_doubles(out.real);
    s.g_ambiguity = style_ambiguity_term(out.style);
    if (with_grad) {
      gen.backward(disc.backward_logits(
          grad_neg_log_logit(out.real),
          uses_ambiguity_loss(variant) ? grad_neg_ambiguity_logits(out.style) : Tensor<T>()));
    }
    return can_g_loss(s, variant);
  };

  gen.network().zero_grad();
  disc.zero_grad();
  std::vector<Parameter<T>*> params;
  if (generator_side) {
    (void)g_loss(true);
    params = gen.network().parameters();
  } else {
    (void)d_loss(true);
    params = disc.parameters();
  }
  const auto targets = grad_check_targets(params);
  const std::function<Tensor<T>()> closure = [&]() {
    const double v = generator_side ? g_loss(false) : d_loss(false);
    return Tensor<T>({1}, std::vector<T>{static_cast<T>(v)});
  };
  GradCheckReport report =
      grad_check(closure, std::span<const GradCheckTarget<T>>(targets), options);
  gen.network().zero_grad();
  disc.zero_grad();
  return report;
}

// --- checkpoints -------------------------------------------------------------

inline constexpr char kCheckpointMagic[] = "CANCKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

inline void write_header(BinaryWriter& w, const std::string& kind) {
  w.str(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(kind);
}

inline void read_header(BinaryReader& r, const std::string& kind, const std::string& path) {
  if (r.str() != kCheckpointMagic) throw IoError(path + " is not a checkpoint file");
  const std::uint32_t version = r.u32();
  if (version != kCheckpointVersion) {
    throw IoError("checkpoint " + path + " has format version " + std::to_string(version) +
                  ", expected " + std::to_string(kCheckpointVersion));
  }
  const std::string got = r.str();
  if (got != kind) throw IoError("checkpoint " + path + " holds a " + got + ", expected " + kind);
}

template <typename T>
void write_params(BinaryWriter& w, const std::vector<Parameter<T>*>& params,
                  const std::vector<Tensor<T>*>& buffers) {
  w.u64(params.size());
  for (const auto* p : params) {
    w.str(p->name);
    w.tensor(p->value);
    w.tensor(p->adam_m);
    w.tensor(p->adam_v);
    w.u64(p->step_count);
  }
  w.u64(buffers.size());
  for (const auto* b : buffers) w.tensor(*b);
}

template <typename T>
void read_params(BinaryReader& r, const std::vector<Parameter<T>*>& params,
                 const std::vector<Tensor<T>*>& buffers) {
  if (r.u64() != params.size()) r.corrupt("parameter count differs from the configured network");
  for (auto* p : params) {
    if (r.str() != p->name) r.corrupt("parameter name mismatch at " + p->name);
    Tensor<T> value = r.tensor<T>();
    Tensor<T> m = r.tensor<T>();
    Tensor<T> v = r.tensor<T>();
    if (value.shape() != p->value.shape() || m.shape() != p->value.shape() ||
        v.shape() != p->value.shape()) {
      r.corrupt("shape mismatch for " + p->name);
    }
    p->value = std::move(value);
    p->adam_m = std::move(m);
    p->adam_v = std::move(v);
    p->step_count = r.u64();
    p->grad = Tensor<T>(p->value.shape());
  }
  if (r.u64() != buffers.size()) r.corrupt("buffer count differs from the configured network");
  for (auto* b : buffers) {
    Tensor<T> t = r.tensor<T>();
    if (t.shape() != b->shape()) r.corrupt("running-statistic shape mismatch");
    *b = std::move(t);
  }
}

}  // namespace detail

template <typename T>
void save_checkpoint(TrainState<T>& state, const std::filesystem::path& path) {
  BinaryWriter w;
  detail::write_header(w, "train");
  w.str(state.config.to_text());
  w.u64(state.epoch);
  w.u64(state.batch_in_epoch);
  w.u64(state.step);
  w.u32(state.corpus_fingerprint);
  std::ostringstream rng;
  rng << state.rng;
  w.str(rng.str());
  w.tensor(state.eval_noise);
  detail::write_params(w, state.generator.network().parameters(),
                       state.generator.network().buffers());
  detail::write_params(w, state.discriminator.parameters(), state.discriminator.buffers());
  w.write_file(path);
}

/// Reads only the configuration echo of a training checkpoint.
inline TrainConfig peek_checkpoint_config(const std::filesystem::path& path) {
  BinaryReader r = BinaryReader::from_file(path);
  detail::read_header(r, "train", path.string());
  return TrainConfig::from_text(r.str());
}

/// Loads a checkpoint; with `expected`, rejects it when model-affecting settings differ.
template <typename T>
TrainState<T> load_checkpoint(const std::filesystem::path& path,
                              const std::optional<TrainConfig>& expected = std::nullopt) {
  BinaryReader r = BinaryReader::from_file(path);
  detail::read_header(r, "train", path.string());
  const TrainConfig config = TrainConfig::from_text(r.str());
  const Precision wanted = sizeof(T) == sizeof(double) ? Precision::f64 : Precision::f32;
  if (config.precision != wanted) {
    throw UsageError("checkpoint " + path.string() + " was trained at " +
                     precision_name(config.precision) + "-bit precision");
  }
  if (expected) {
    const auto diff = config_mismatches(config, *expected);
    if (!diff.empty()) {
      std::string msg = "checkpoint " + path.string() + " does not match the configuration:";
      for (const auto& d : diff) msg += " " + d;
      throw UsageError(msg);
    }
  }
  TrainState<T> state = TrainState<T>::create(config);
  state.epoch = r.u64();
  state.batch_in_epoch = r.u64();
  state.step = r.u64();
  state.corpus_fingerprint = r.u32();
  std::istringstream rng(r.str());
  rng >> state.rng;
  if (!rng) r.corrupt("unreadable random-stream state");
  state.eval_noise = r.tensor<T>();
  detail::read_params(r, state.generator.network().parameters(),
                      state.generator.network().buffers());
  detail::read_params(r, state.discriminator.parameters(), state.discriminator.buffers());
  if (!r.at_end()) r.corrupt("trailing data");
  return state;
}

// --- sampling ----------------------------------------------------------------

/// Generates images with batch statistics (as during training) without touching
/// running statistics. `batch` bounds the generation batch size.
template <typename T>
Tensor<T> generate(Generator<T>& gen, const Tensor<T>& z, std::size_t batch) {
  const std::size_t n = z.dim(0);
  if (n < 2 || batch < 2) throw UsageError("generation needs at least 2 noise vectors per batch");
  std::vector<T> pixels;
  Shape shape;
  std::size_t begin = 0;
  while (begin < n) {
    std::size_t count = std::min(batch, n - begin);
    // A lone trailing sample joins this chunk so batch statistics stay defined.
    if (n - begin - count == 1) count += 1;
    const Tensor<T> out = gen.forward(slice_batch(z, begin, count), Phase::batch);
    pixels.insert(pixels.end(), out.data().begin(), out.data().end());
    shape = out.shape();
    begin += count;
  }
  shape[0] = n;
  return Tensor<T>(std::move(shape), std::move(pixels));
}

template <typename T>
void write_sample_grid(TrainState<T>& state, const std::filesystem::path& path) {
  const Tensor<T> images = generate(state.generator, state.eval_noise, state.config.batch_size);
  const Tensor<T> grid = tile_grid(images, 8);
  save_png(path, grid);
}

// --- training loop -----------------------------------------------------------

struct TrainOptions {
  std::optional<std::filesystem::path> out_dir;
  // Stop after this many total steps (state stays resumable).
  std::optional<std::uint64_t> max_steps;
  // Called after every epoch with the completed epoch index; returning false stops training.
  std::function<bool(std::uint64_t epoch)> on_epoch;
  // Called for each logged step.
  std::function<void(const StepLog&)> on_log;
};

template <typename T>
struct TrainResult {
  TrainState<T> state;
  std::vector<StepLog> logs;
  bool completed = false;
};

namespace detail {

template <typename T>
std::string checkpoint_stem(const TrainState<T>& s) {
  return "epoch" + std::to_string(s.epoch) + "_step" + std::to_string(s.step);
}

template <typename T>
void emit_checkpoint(TrainState<T>& s, const std::filesystem::path& dir, const std::string& name) {
  save_checkpoint(s, dir / name);
  write_sample_grid(s, dir / ("samples_" + checkpoint_stem(s) + ".png"));
}

}  // namespace detail

/// Runs (or resumes) training until the configured epoch count, or until an option stops it.
template <typename T>
TrainResult<T> train(TrainState<T> state, const StyleDataset& data, const TrainOptions& options = {}) {
  const TrainConfig& cfg = state.config;
  cfg.validate();
  if (data.empty()) throw DataError("training corpus is empty");
  if (data.image_size() != cfg.discriminator.image_size) {
    throw DataError("corpus image size " + std::to_string(data.image_size()) +
                    " differs from model size " + std::to_string(cfg.discriminator.image_size));
  }
  if (data.num_styles() != cfg.discriminator.num_styles) {
    throw DataError("corpus has " + std::to_string(data.num_styles()) + " styles, model expects " +
                    std::to_string(cfg.discriminator.num_styles));
  }
  if (state.corpus_fingerprint == 0) state.corpus_fingerprint = data.fingerprint();

  std::ofstream log_file;
  if (options.out_dir) {
    std::error_code ec;
    std::filesystem::create_directories(*options.out_dir, ec);
    if (ec) throw IoError("cannot create " + options.out_dir->string() + ": " + ec.message());
    log_file.open(*options.out_dir / "train_log.jsonl", std::ios::app);
    if (!log_file) throw IoError("cannot open log in " + options.out_dir->string());
  }

  TrainResult<T> result{std::move(state), {}, false};
  TrainState<T>& s = result.state;
  const BatchPlan plan{cfg.batch_size, cfg.seed, true};
  while (s.epoch < cfg.epochs) {
    const auto batches = epoch_batches(data.size(), plan, s.epoch);
    while (s.batch_in_epoch < batches.size()) {
      const auto& idx = batches[s.batch_in_epoch];
      const StepLog log = train_step(s, data.batch<T>(idx), data.batch_labels(idx));
      s.batch_in_epoch += 1;
      s.step += 1;
      if (s.step % cfg.log_every == 0) {
        result.logs.push_back(log);
        if (log_file.is_open()) log_file << log.to_json().dump() << '\n' << std::flush;
        if (options.on_log) options.on_log(log);
      }
      if (options.out_dir && cfg.checkpoint_every > 0 && s.step % cfg.checkpoint_every == 0) {
        detail::emit_checkpoint(s, *options.out_dir, "ckpt_" + detail::checkpoint_stem(s) + ".ckpt");
      }
      if (options.max_steps && s.step >= *options.max_steps) return result;
    }
    const std::uint64_t finished = s.epoch;
    s.epoch += 1;
    s.batch_in_epoch = 0;
    if (options.on_epoch && !options.on_epoch(finished)) break;
  }
  result.completed = s.epoch >= cfg.epochs;
  if (options.out_dir) detail::emit_checkpoint(s, *options.out_dir, "final.ckpt");
  return result;
}

}  // namespace can
