#pragma once

#include <memory>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "can/kernels.hpp"
#include "can/optim.hpp"
#include "can/tensor.hpp"

namespace can {

enum class LayerKind {
  dense,
  conv2d,
  conv_transpose2d,
  batchnorm2d,
  leaky_relu,
  sigmoid,
  tanh,
  softmax,
  reshape
};

inline const char* layer_kind_name(LayerKind kind) {
  switch (kind) {
    case LayerKind::dense: return "dense";
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::conv_transpose2d: return "conv_transpose2d";
    case LayerKind::batchnorm2d: return "batchnorm2d";
    case LayerKind::leaky_relu: return "leaky_relu";
    case LayerKind::sigmoid: return "sigmoid";
    case LayerKind::tanh: return "tanh";
    case LayerKind::softmax: return "softmax";
    case LayerKind::reshape: return "reshape";
  }
  return "?";
}

/// Declarative description of one layer. Fields irrelevant to a kind are ignored.
struct LayerSpec {
  LayerKind kind = LayerKind::dense;
  std::size_t in = 0;   // input features / channels
  std::size_t out = 0;  // output features / filters
  std::size_t kernel = 4;
  std::size_t stride = 2;
  std::size_t pad = 1;
  double slope = 0.2;
  double epsilon = 1e-5;
  double momentum = 0.1;
  Shape target;  // per-sample shape for reshape

  static LayerSpec make(LayerKind kind) {
    LayerSpec s;
    s.kind = kind;
    return s;
  }
  static LayerSpec make_dense(std::size_t in, std::size_t out) {
    LayerSpec s = make(LayerKind::dense);
    s.in = in;
    s.out = out;
    return s;
  }
  static LayerSpec make_conv(std::size_t in, std::size_t out, std::size_t kernel,
                             std::size_t stride, std::size_t pad) {
    LayerSpec s = make_dense(in, out);
    s.kind = LayerKind::conv2d;
    s.kernel = kernel;
    s.stride = stride;
    s.pad = pad;
    return s;
  }
  static LayerSpec make_conv_transpose(std::size_t in, std::size_t out, std::size_t kernel,
                                       std::size_t stride, std::size_t pad) {
    LayerSpec s = make_conv(in, out, kernel, stride, pad);
    s.kind = LayerKind::conv_transpose2d;
    return s;
  }
  static LayerSpec make_batchnorm(std::size_t channels, double epsilon = 1e-5,
                                  double momentum = 0.1) {
    LayerSpec s = make_dense(channels, channels);
    s.kind = LayerKind::batchnorm2d;
    s.epsilon = epsilon;
    s.momentum = momentum;
    return s;
  }
  static LayerSpec make_leaky_relu(double slope = 0.2) {
    LayerSpec s = make(LayerKind::leaky_relu);
    s.slope = slope;
    return s;
  }
  static LayerSpec make_reshape(Shape target) {
    LayerSpec s = make(LayerKind::reshape);
    s.target = std::move(target);
    return s;
  }

  void validate() const {
    const std::string what = layer_kind_name(kind);
    switch (kind) {
      case LayerKind::dense:
        if (in < 1 || out < 1) throw UsageError(what + " needs positive feature counts");
        break;
      case LayerKind::conv2d:
      case LayerKind::conv_transpose2d:
        if (in < 1 || out < 1) throw UsageError(what + " needs positive channel counts");
        if (kernel < 1) throw UsageError(what + " kernel extent must be >= 1");
        if (stride < 1) throw UsageError(what + " stride must be >= 1");
        break;
      case LayerKind::batchnorm2d:
        if (in < 1) throw UsageError(what + " needs a positive channel count");
        if (!(epsilon > 0.0)) throw UsageError(what + " epsilon must be positive");
        if (!(momentum >= 0.0 && momentum <= 1.0)) throw UsageError(what + " momentum in [0,1]");
        break;
      case LayerKind::leaky_relu:
        if (!(slope > 0.0 && slope < 1.0)) throw UsageError("leaky slope must lie in (0,1)");
        break;
      case LayerKind::reshape:
        if (target.empty() || shape_size(target) == 0) throw UsageError("reshape needs a target");
        break;
      default:
        break;
    }
  }
};

/// Ordered layer stack with bound parameters and a forward-activation cache.
template <typename T>
class Network {
 public:
  Network() = default;

  /// Appends a layer; weights of dense and convolution layers are drawn N(0, init_std^2),
  /// biases and batchnorm shifts start at zero, batchnorm scales at one.
  void add(const LayerSpec& spec, std::mt19937_64& rng, double init_std = 0.02) {
    spec.validate();
    Layer layer;
    layer.spec = spec;
    const std::string prefix = "layer" + std::to_string(layers_.size()) + ".";
    auto normal = [&](Shape shape) {
      Tensor<T> t(std::move(shape));
      std::normal_distribution<double> dist(0.0, init_std);
      for (auto& v : t.data()) v = static_cast<T>(dist(rng));
      return t;
    };
    switch (spec.kind) {
      case LayerKind::dense:
        layer.params.emplace_back(prefix + "weight", normal({spec.in, spec.out}));
        layer.params.emplace_back(prefix + "bias", Tensor<T>({spec.out}));
        break;
      case LayerKind::conv2d:
        layer.params.emplace_back(prefix + "weight",
                                  normal({spec.out, spec.in, spec.kernel, spec.kernel}));
        layer.params.emplace_back(prefix + "bias", Tensor<T>({spec.out}));
        break;
      case LayerKind::conv_transpose2d:
        layer.params.emplace_back(prefix + "weight",
                                  normal({spec.in, spec.out, spec.kernel, spec.kernel}));
        layer.params.emplace_back(prefix + "bias", Tensor<T>({spec.out}));
        break;
      case LayerKind::batchnorm2d:
        layer.params.emplace_back(prefix + "gamma", Tensor<T>({spec.in}, T(1)));
        layer.params.emplace_back(prefix + "beta", Tensor<T>({spec.in}));
        layer.bn.running_mean = Tensor<T>({spec.in});
        layer.bn.running_var = Tensor<T>({spec.in}, T(1));
        break;
      default:
        break;
    }
    layers_.push_back(std::move(layer));
  }

  std::size_t layer_count() const noexcept { return layers_.size(); }
  const LayerSpec& spec(std::size_t i) const { return layers_.at(i).spec; }
  std::vector<LayerSpec> specs() const {
    std::vector<LayerSpec> out;
    for (const auto& l : layers_) out.push_back(l.spec);
    return out;
  }

  Tensor<T> forward(const Tensor<T>& input, Phase phase) {
    Tensor<T> x = input;
    for (auto& layer : layers_) x = forward_layer(layer, std::move(x), phase);
    cached_ = true;
    return x;
  }

  /// Backpropagates grad_out through all layers except the trailing `skip_tail` ones
  /// (grad_out is then the gradient at that layer's input). Parameter gradients accumulate.
  Tensor<T> backward(const Tensor<T>& grad_out, std::size_t skip_tail = 0) {
    if (!cached_) throw UsageError("network backward called without a preceding forward");
    if (skip_tail > layers_.size()) throw UsageError("backward skip exceeds layer count");
    Tensor<T> g = grad_out;
    for (std::size_t i = layers_.size() - skip_tail; i-- > 0;) {
      g = backward_layer(layers_[i], g);
    }
    return g;
  }

  std::vector<Parameter<T>*> parameters() {
    std::vector<Parameter<T>*> out;
    for (auto& l : layers_) {
      for (auto& p : l.params) out.push_back(&p);
    }
    return out;
  }
  std::vector<const Parameter<T>*> parameters() const {
    std::vector<const Parameter<T>*> out;
    for (const auto& l : layers_) {
      for (const auto& p : l.params) out.push_back(&p);
    }
    return out;
  }

  /// Running batchnorm statistics, in layer order (mean, var per batchnorm layer).
  std::vector<Tensor<T>*> buffers() {
    std::vector<Tensor<T>*> out;
    for (auto& l : layers_) {
      if (l.spec.kind == LayerKind::batchnorm2d) {
        out.push_back(&l.bn.running_mean);
        out.push_back(&l.bn.running_var);
      }
    }
    return out;
  }

  std::size_t parameter_count() const {
    std::size_t n = 0;
    for (const auto* p : parameters()) n += p->value.size();
    return n;
  }

  void zero_grad() {
    for (auto* p : parameters()) p->zero_grad();
  }

  void invalidate_cache() { cached_ = false; }

 private:
  struct Layer {
    LayerSpec spec;
    std::vector<Parameter<T>> params;
    BatchNormState<T> bn;
    Tensor<T> saved;  // input or output, depending on kind
    BatchNormCache<T> bn_cache;
    Shape saved_shape;
  };

  Tensor<T> forward_layer(Layer& l, Tensor<T> x, Phase phase) {
    const LayerSpec& s = l.spec;
    switch (s.kind) {
      case LayerKind::dense: {
        Tensor<T> y = dense(x, l.params[0].value, l.params[1].value);
        l.saved = std::move(x);
        return y;
      }
      case LayerKind::conv2d: {
        check_channels(x, s.in);
        Tensor<T> y = conv2d(x, l.params[0].value, l.params[1].value, s.stride, s.pad);
        l.saved = std::move(x);
        return y;
      }
      case LayerKind::conv_transpose2d: {
        check_channels(x, s.in);
        Tensor<T> y = conv_transpose2d(x, l.params[0].value, l.params[1].value, s.stride, s.pad);
        l.saved = std::move(x);
        return y;
      }
      case LayerKind::batchnorm2d: {
        auto r = batchnorm2d(x, l.params[0].value, l.params[1].value, l.bn, s.epsilon, s.momentum,
                             phase);
        l.bn_cache = std::move(r.cache);
        return std::move(r.output);
      }
      case LayerKind::leaky_relu: {
        Tensor<T> y = leaky_relu(x, s.slope);
        l.saved = std::move(x);
        return y;
      }
      case LayerKind::sigmoid:
        l.saved = sigmoid(x);
        return l.saved;
      case LayerKind::tanh:
        l.saved = can::tanh(x);
        return l.saved;
      case LayerKind::softmax:
        l.saved = softmax(x);
        return l.saved;
      case LayerKind::reshape: {
        l.saved_shape = x.shape();
        Shape shape{x.dim(0)};
        shape.insert(shape.end(), s.target.begin(), s.target.end());
        return x.reshaped(std::move(shape));
      }
    }
    throw UsageError("unknown layer kind");
  }

  Tensor<T> backward_layer(Layer& l, const Tensor<T>& g) {
    const LayerSpec& s = l.spec;
    switch (s.kind) {
      case LayerKind::dense: {
        auto grads = dense_backward(g, l.saved, l.params[0].value);
        l.params[0].accumulate(grads.weight);
        l.params[1].accumulate(grads.bias);
        return std::move(grads.input);
      }
      case LayerKind::conv2d: {
        auto grads = conv2d_backward(g, l.saved, l.params[0].value, s.stride, s.pad);
        l.params[0].accumulate(grads.weight);
        l.params[1].accumulate(grads.bias);
        return std::move(grads.input);
      }
      case LayerKind::conv_transpose2d: {
        auto grads = conv_transpose2d_backward(g, l.saved, l.params[0].value, s.stride, s.pad);
        l.params[0].accumulate(grads.weight);
        l.params[1].accumulate(grads.bias);
        return std::move(grads.input);
      }
      case LayerKind::batchnorm2d: {
        auto grads = batchnorm2d_backward(g, l.bn_cache, l.params[0].value);
        l.params[0].accumulate(grads.weight);
        l.params[1].accumulate(grads.bias);
        return std::move(grads.input);
      }
      case LayerKind::leaky_relu:
        return leaky_relu_backward(g, l.saved, s.slope);
      case LayerKind::sigmoid:
        return sigmoid_backward(g, l.saved);
      case LayerKind::tanh:
        return tanh_backward(g, l.saved);
      case LayerKind::softmax:
        return softmax_backward(g, l.saved);
      case LayerKind::reshape:
        return g.reshaped(l.saved_shape);
    }
    throw UsageError("unknown layer kind");
  }

  static void check_channels(const Tensor<T>& x, std::size_t channels) {
    if (x.rank() != 4 || x.dim(1) != channels) {
      throw UsageError("convolution layer expects " + std::to_string(channels) +
                       " input channels, got input " + shape_str(x.shape()));
    }
  }

  std::vector<Layer> layers_;
  bool cached_ = false;
};

}  // namespace can
