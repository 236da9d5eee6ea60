#pragma once

// Generator and two-headed discriminator of the creative adversarial network,
// plus the small style-probe classifier used for evaluation.

#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "can/layers.hpp"

namespace can {

struct GeneratorConfig {
  std::size_t noise_dim = 100;
  std::size_t base_spatial = 4;
  std::vector<std::size_t> stage_channels{1024, 1024, 512, 256, 128, 64};
  std::size_t output_channels = 3;
  std::size_t output_size = 256;
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t pad = 1;
  double slope = 0.2;
  double init_std = 0.02;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  static GeneratorConfig paper() { return {}; }
  static GeneratorConfig desk() {
    GeneratorConfig c;
    c.stage_channels = {256, 128, 64};
    c.output_size = 32;
    return c;
  }

  /// Spatial extent reached after the projection and every fractionally-strided stage.
  std::size_t chain_output_size() const {
    std::size_t s = base_spatial;
    for (std::size_t i = 0; i < stage_channels.size(); ++i) {
      s = conv_transpose2d_output_extent(s, kernel, stride, pad);
    }
    return s;
  }

  void validate() const {
    if (noise_dim < 1) throw UsageError("generator noise_dim must be >= 1");
    if (base_spatial < 1) throw UsageError("generator base_spatial must be >= 1");
    if (stage_channels.empty()) throw UsageError("generator needs at least one stage");
    if (output_channels < 1) throw UsageError("generator output_channels must be >= 1");
    const std::size_t reached = chain_output_size();
    if (reached != output_size) {
      throw UsageError("generator stages reach " + std::to_string(reached) + "x" +
                       std::to_string(reached) + " but output_size is " +
                       std::to_string(output_size));
    }
  }
};

struct DiscriminatorConfig {
  std::size_t image_size = 256;
  std::size_t input_channels = 3;
  std::vector<std::size_t> body_channels{32, 64, 128, 256, 512, 512};
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t pad = 1;
  std::size_t num_styles = 25;
  std::vector<std::size_t> head_hidden{1024, 512};
  double slope = 0.2;
  double init_std = 0.02;
  // Batchnorm follows every body convolution except the first.
  bool body_batchnorm = true;
  double bn_epsilon = 1e-5;
  double bn_momentum = 0.1;

  static DiscriminatorConfig paper() { return {}; }
  static DiscriminatorConfig desk(std::size_t styles = 4) {
    DiscriminatorConfig c;
    c.image_size = 32;
    c.body_channels = {64, 128, 256};
    c.num_styles = styles;
    return c;
  }

  std::size_t body_output_size() const {
    std::size_t s = image_size;
    for (std::size_t i = 0; i < body_channels.size(); ++i) {
      if (s + 2 * pad < kernel) return 0;
      s = conv2d_output_extent(s, kernel, stride, pad);
    }
    return s;
  }

  std::size_t feature_count() const {
    const std::size_t s = body_output_size();
    return body_channels.back() * s * s;
  }

  void validate() const {
    if (body_channels.empty()) throw UsageError("discriminator body needs at least one layer");
    if (num_styles < 2) throw UsageError("discriminator needs at least 2 style classes");
    if (body_output_size() < 1) {
      throw UsageError("discriminator body collapses " + std::to_string(image_size) +
                       "-pixel input below 1x1");
    }
  }
};

/// Draws an [n, noise_dim] tensor of i.i.d. standard normals from the stream.
template <typename T>
Tensor<T> sample_noise(std::size_t n, std::size_t noise_dim, std::mt19937_64& rng) {
  if (n < 1 || noise_dim < 1) throw UsageError("sample_noise needs n >= 1 and noise_dim >= 1");
  Tensor<T> z({n, noise_dim});
  std::normal_distribution<double> dist(0.0, 1.0);
  for (auto& v : z.data()) v = static_cast<T>(dist(rng));
  return z;
}

template <typename T>
class Generator {
 public:
  Generator() = default;

  Generator(const GeneratorConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    std::mt19937_64 rng(seed);
    const auto& st = config.stage_channels;
    const std::size_t b = config.base_spatial;
    const double sd = config.init_std;
    net_.add(LayerSpec::make_dense(config.noise_dim, st[0] * b * b), rng, sd);
    net_.add(LayerSpec::make_reshape({st[0], b, b}), rng, sd);
    net_.add(LayerSpec::make_batchnorm(st[0], config.bn_epsilon, config.bn_momentum), rng, sd);
    net_.add(LayerSpec::make_leaky_relu(config.slope), rng, sd);
    for (std::size_t i = 1; i < st.size(); ++i) {
      net_.add(LayerSpec::make_conv_transpose(st[i - 1], st[i], config.kernel, config.stride,
                                              config.pad),
               rng, sd);
      net_.add(LayerSpec::make_batchnorm(st[i], config.bn_epsilon, config.bn_momentum), rng, sd);
      net_.add(LayerSpec::make_leaky_relu(config.slope), rng, sd);
    }
    net_.add(LayerSpec::make_conv_transpose(st.back(), config.output_channels, config.kernel,
                                            config.stride, config.pad),
             rng, sd);
    net_.add(LayerSpec::make(LayerKind::tanh), rng, sd);
  }

  const GeneratorConfig& config() const noexcept { return config_; }
  Network<T>& network() noexcept { return net_; }
  const Network<T>& network() const noexcept { return net_; }

  /// z [N, noise_dim] -> images [N, C, S, S] in (-1, 1).
  Tensor<T> forward(const Tensor<T>& z, Phase phase) {
    if (z.rank() != 2 || z.dim(1) != config_.noise_dim) {
      throw UsageError("generator expects noise of shape [N," + std::to_string(config_.noise_dim) +
                       "], got " + shape_str(z.shape()));
    }
    if (!z.all_finite()) throw NumericError("generator noise contains non-finite values");
    return net_.forward(z, phase);
  }

  Tensor<T> backward(const Tensor<T>& grad_images) { return net_.backward(grad_images); }

 private:
  GeneratorConfig config_;
  Network<T> net_;
};

template <typename T>
struct DiscriminatorOutput {
  Tensor<T> real;   // [N], D_r
  Tensor<T> style;  // [N, K], D_c posteriors
};

/// Shared convolutional body feeding a real/fake head (dense -> sigmoid) and a
/// K-way style head (dense -> ... -> dense -> softmax).
template <typename T>
class Discriminator {
 public:
  Discriminator() = default;

  Discriminator(const DiscriminatorConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    std::mt19937_64 rng(seed);
    const double sd = config.init_std;
    std::size_t in = config.input_channels;
    for (std::size_t i = 0; i < config.body_channels.size(); ++i) {
      const std::size_t out = config.body_channels[i];
      body_.add(LayerSpec::make_conv(in, out, config.kernel, config.stride, config.pad), rng, sd);
      if (i > 0 && config.body_batchnorm) {
        body_.add(LayerSpec::make_batchnorm(out, config.bn_epsilon, config.bn_momentum), rng, sd);
      }
      body_.add(LayerSpec::make_leaky_relu(config.slope), rng, sd);
      in = out;
    }
    const std::size_t features = config.feature_count();
    body_.add(LayerSpec::make_reshape({features}), rng, sd);

    real_head_.add(LayerSpec::make_dense(features, 1), rng, sd);
    real_head_.add(LayerSpec::make(LayerKind::sigmoid), rng, sd);

    std::size_t width = features;
    for (std::size_t h : config.head_hidden) {
      style_head_.add(LayerSpec::make_dense(width, h), rng, sd);
      style_head_.add(LayerSpec::make_leaky_relu(config.slope), rng, sd);
      width = h;
    }
    style_head_.add(LayerSpec::make_dense(width, config.num_styles), rng, sd);
    style_head_.add(LayerSpec::make(LayerKind::softmax), rng, sd);
  }

  const DiscriminatorConfig& config() const noexcept { return config_; }
  Network<T>& body() noexcept { return body_; }
  Network<T>& real_head() noexcept { return real_head_; }
  Network<T>& style_head() noexcept { return style_head_; }

  DiscriminatorOutput<T> forward(const Tensor<T>& images, Phase phase) {
    const std::size_t s = config_.image_size;
    if (images.rank() != 4 || images.dim(1) != config_.input_channels || images.dim(2) != s ||
        images.dim(3) != s) {
      throw UsageError("discriminator expects images [N," + std::to_string(config_.input_channels) +
                       "," + std::to_string(s) + "," + std::to_string(s) + "], got " +
                       shape_str(images.shape()));
    }
    const Tensor<T> features = body_.forward(images, phase);
    DiscriminatorOutput<T> out;
    out.real = real_head_.forward(features, phase).reshaped({images.dim(0)});
    out.style = style_head_.forward(features, phase);
    return out;
  }

  /// Takes gradients with respect to the pre-sigmoid real logit [N] and the pre-softmax
  /// style logits [N,K]; either may be empty to leave that head out. Returns d/d(images).
  Tensor<T> backward_logits(const Tensor<T>& grad_real_logit, const Tensor<T>& grad_style_logits) {
    Tensor<T> grad_features;
    auto add = [&](Tensor<T> g) {
      if (grad_features.empty()) {
        grad_features = std::move(g);
      } else {
        for (std::size_t i = 0; i < g.size(); ++i) grad_features[i] += g[i];
      }
    };
    if (!grad_real_logit.empty()) {
      add(real_head_.backward(grad_real_logit.reshaped({grad_real_logit.size(), 1}), 1));
    }
    if (!grad_style_logits.empty()) add(style_head_.backward(grad_style_logits, 1));
    if (grad_features.empty()) throw UsageError("discriminator backward needs at least one head");
    return body_.backward(grad_features);
  }

  std::vector<Parameter<T>*> parameters() {
    auto out = body_.parameters();
    for (auto* p : real_head_.parameters()) out.push_back(p);
    for (auto* p : style_head_.parameters()) out.push_back(p);
    return out;
  }

  std::vector<Tensor<T>*> buffers() { return body_.buffers(); }

  void zero_grad() {
    body_.zero_grad();
    real_head_.zero_grad();
    style_head_.zero_grad();
  }

 private:
  DiscriminatorConfig config_;
  Network<T> body_;
  Network<T> real_head_;
  Network<T> style_head_;
};

struct ProbeConfig {
  std::size_t image_size = 32;
  std::size_t input_channels = 3;
  std::vector<std::size_t> channels{16, 32, 64};
  std::size_t num_styles = 4;

  void validate() const {
    if (num_styles < 2) throw UsageError("probe needs at least 2 style classes");
    if (channels.empty()) throw UsageError("probe needs at least one convolution");
    std::size_t s = image_size;
    for (std::size_t i = 0; i < channels.size(); ++i) {
      if (s < 2) throw UsageError("probe collapses input below 1x1");
      s = conv2d_output_extent(s, 4, 2, 1);
    }
  }
};

/// Independent style classifier: strided convolutions with LeakyReLU, then dense -> softmax.
/// No batchnorm, so each image is classified on its own.
template <typename T>
class StyleProbe {
 public:
  StyleProbe() = default;

  StyleProbe(const ProbeConfig& config, std::uint64_t seed) : config_(config) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::size_t in = config.input_channels, s = config.image_size;
    for (std::size_t c : config.channels) {
      net_.add(LayerSpec::make_conv(in, c, 4, 2, 1), rng, 0.02);
      net_.add(LayerSpec::make_leaky_relu(0.2), rng, 0.02);
      s = conv2d_output_extent(s, 4, 2, 1);
      in = c;
    }
    net_.add(LayerSpec::make_reshape({in * s * s}), rng, 0.02);
    net_.add(LayerSpec::make_dense(in * s * s, config.num_styles), rng, 0.02);
    net_.add(LayerSpec::make(LayerKind::softmax), rng, 0.02);
  }

  const ProbeConfig& config() const noexcept { return config_; }
  Network<T>& network() noexcept { return net_; }

  Tensor<T> forward(const Tensor<T>& images) {
    if (images.rank() != 4 || images.dim(2) != config_.image_size) {
      throw UsageError("probe expects images of size " + std::to_string(config_.image_size) +
                       ", got " + shape_str(images.shape()));
    }
    return net_.forward(images, Phase::infer);
  }

  void backward_logits(const Tensor<T>& grad_logits) { net_.backward(grad_logits, 1); }

 private:
  ProbeConfig config_;
  Network<T> net_;
};

}  // namespace can
