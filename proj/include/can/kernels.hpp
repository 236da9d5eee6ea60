#pragma once

// Differentiable primitives: convolution, transposed convolution, dense,
// batch normalization and pointwise activations. Every forward has a matching
// backward returning exact analytic gradients. Convolutions are
// cross-correlations (no kernel flip) lowered to GEMM through im2col.

#include <Eigen/Core>

#include <cmath>
#include <cstddef>
#include <string>
#include <vector>

#include "can/error.hpp"
#include "can/tensor.hpp"

namespace can {

template <typename T>
using RowMatrix = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MatrixMap = Eigen::Map<RowMatrix<T>>;
template <typename T>
using ConstMatrixMap = Eigen::Map<const RowMatrix<T>>;

namespace detail {

inline void require_rank(const Shape& shape, std::size_t rank, const char* what) {
  if (shape.size() != rank) {
    throw UsageError(std::string(what) + " must have rank " + std::to_string(rank) + ", got " +
                     shape_str(shape));
  }
}

inline void require_dim(const char* what, std::size_t got, std::size_t expected) {
  if (got != expected) {
    throw UsageError(std::string(what) + " is " + std::to_string(got) + ", expected " +
                     std::to_string(expected));
  }
}

inline std::size_t conv_out_extent(const char* axis, std::size_t in, std::size_t kernel,
                                   std::size_t stride, std::size_t pad) {
  if (stride < 1) throw UsageError("convolution stride must be >= 1");
  if (in + 2 * pad < kernel) {
    throw UsageError(std::string("padded input ") + axis + " " + std::to_string(in + 2 * pad) +
                     " is smaller than kernel " + axis + " " + std::to_string(kernel));
  }
  return (in + 2 * pad - kernel) / stride + 1;
}

// Rows indexed by (c, ki, kj), columns by (n, oh, ow).
template <typename T>
RowMatrix<T> im2col(const Tensor<T>& input, std::size_t kh, std::size_t kw, std::size_t stride,
                    std::size_t pad, std::size_t out_h, std::size_t out_w) {
  const std::size_t n_batch = input.dim(0), channels = input.dim(1);
  const std::size_t in_h = input.dim(2), in_w = input.dim(3);
  const std::size_t plane = out_h * out_w;
  RowMatrix<T> col(channels * kh * kw, n_batch * plane);
  const T* src = input.raw();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        T* row = col.data() + ((c * kh + ki) * kw + kj) * col.cols();
        for (std::size_t n = 0; n < n_batch; ++n) {
          const T* img = src + (n * channels + c) * in_h * in_w;
          T* dst = row + n * plane;
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            T* drow = dst + oh * out_w;
            if (ih < 0 || ih >= static_cast<long>(in_h)) {
              std::fill(drow, drow + out_w, T(0));
              continue;
            }
            const T* srow = img + ih * in_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              drow[ow] = (iw < 0 || iw >= static_cast<long>(in_w)) ? T(0) : srow[iw];
            }
          }
        }
      }
    }
  }
  return col;
}

// Adjoint of im2col: scatter-adds columns back into an image tensor.
template <typename T>
Tensor<T> col2im(const RowMatrix<T>& col, const Shape& image_shape, std::size_t kh, std::size_t kw,
                 std::size_t stride, std::size_t pad, std::size_t out_h, std::size_t out_w) {
  Tensor<T> image(image_shape);
  const std::size_t n_batch = image_shape[0], channels = image_shape[1];
  const std::size_t in_h = image_shape[2], in_w = image_shape[3];
  const std::size_t plane = out_h * out_w;
  T* dst = image.raw();
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t ki = 0; ki < kh; ++ki) {
      for (std::size_t kj = 0; kj < kw; ++kj) {
        const T* row = col.data() + ((c * kh + ki) * kw + kj) * col.cols();
        for (std::size_t n = 0; n < n_batch; ++n) {
          T* img = dst + (n * channels + c) * in_h * in_w;
          const T* src = row + n * plane;
          for (std::size_t oh = 0; oh < out_h; ++oh) {
            const long ih = static_cast<long>(oh * stride + ki) - static_cast<long>(pad);
            if (ih < 0 || ih >= static_cast<long>(in_h)) continue;
            T* irow = img + ih * in_w;
            const T* srow = src + oh * out_w;
            for (std::size_t ow = 0; ow < out_w; ++ow) {
              const long iw = static_cast<long>(ow * stride + kj) - static_cast<long>(pad);
              if (iw >= 0 && iw < static_cast<long>(in_w)) irow[iw] += srow[ow];
            }
          }
        }
      }
    }
  }
  return image;
}

// [N, C, P] tensor -> C x (N*P) matrix.
template <typename T>
RowMatrix<T> to_channel_major(const Tensor<T>& t) {
  const std::size_t n_batch = t.dim(0), channels = t.dim(1);
  const std::size_t plane = t.size() / (n_batch * channels);
  RowMatrix<T> m(channels, n_batch * plane);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = t.raw() + (n * channels + c) * plane;
      std::copy(src, src + plane, m.data() + c * m.cols() + n * plane);
    }
  }
  return m;
}

template <typename T>
Tensor<T> from_channel_major(const RowMatrix<T>& m, Shape shape) {
  Tensor<T> t(std::move(shape));
  const std::size_t n_batch = t.dim(0), channels = t.dim(1);
  const std::size_t plane = t.size() / (n_batch * channels);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      const T* src = m.data() + c * m.cols() + n * plane;
      std::copy(src, src + plane, t.raw() + (n * channels + c) * plane);
    }
  }
  return t;
}

template <typename T>
void add_channel_bias(Tensor<T>& t, const Tensor<T>& bias) {
  if (bias.empty()) return;
  const std::size_t n_batch = t.dim(0), channels = t.dim(1);
  const std::size_t plane = t.size() / (n_batch * channels);
  for (std::size_t n = 0; n < n_batch; ++n) {
    for (std::size_t c = 0; c < channels; ++c) {
      T* p = t.raw() + (n * channels + c) * plane;
      const T b = bias[c];
      for (std::size_t i = 0; i < plane; ++i) p[i] += b;
    }
  }
}

template <typename T>
Tensor<T> channel_sums(const Tensor<T>& t) {
  const std::size_t n_batch = t.dim(0), channels = t.dim(1);
  const std::size_t plane = t.size() / (n_batch * channels);
  Tensor<T> out({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double acc = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const T* p = t.raw() + (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) acc += p[i];
    }
    out[c] = static_cast<T>(acc);
  }
  return out;
}

template <typename T>
void check_bias(const Tensor<T>& bias, std::size_t channels) {
  if (bias.empty()) return;
  require_rank(bias.shape(), 1, "bias");
  require_dim("bias length", bias.dim(0), channels);
}

}  // namespace detail

/// Output extent of a strided convolution: floor((in + 2*pad - kernel) / stride) + 1.
inline std::size_t conv2d_output_extent(std::size_t in, std::size_t kernel, std::size_t stride,
                                        std::size_t pad) {
  return detail::conv_out_extent("extent", in, kernel, stride, pad);
}

/// Output extent of a transposed convolution: (in - 1) * stride - 2*pad + kernel.
inline std::size_t conv_transpose2d_output_extent(std::size_t in, std::size_t kernel,
                                                  std::size_t stride, std::size_t pad) {
  if (stride < 1) throw UsageError("convolution stride must be >= 1");
  const long out = static_cast<long>((in - 1) * stride + kernel) - 2 * static_cast<long>(pad);
  if (out < 1) throw UsageError("transposed convolution output extent is not positive");
  return static_cast<std::size_t>(out);
}

template <typename T>
struct ConvGrads {
  Tensor<T> input;
  Tensor<T> weight;
  Tensor<T> bias;
};

/// Cross-correlation of input [N,C,H,W] with weight [F,C,kH,kW], plus bias [F] (may be empty).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 std::size_t stride, std::size_t pad) {
  detail::require_rank(input.shape(), 4, "conv2d input");
  detail::require_rank(weight.shape(), 4, "conv2d weight");
  detail::require_dim("conv2d weight channel count", weight.dim(1), input.dim(1));
  detail::check_bias(bias, weight.dim(0));
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t out_h = detail::conv_out_extent("height", input.dim(2), kh, stride, pad);
  const std::size_t out_w = detail::conv_out_extent("width", input.dim(3), kw, stride, pad);
  const RowMatrix<T> col = detail::im2col(input, kh, kw, stride, pad, out_h, out_w);
  ConstMatrixMap<T> w(weight.raw(), weight.dim(0), col.rows());
  RowMatrix<T> out = w * col;
  Tensor<T> result =
      detail::from_channel_major(out, {input.dim(0), weight.dim(0), out_h, out_w});
  detail::add_channel_bias(result, bias);
  return result;
}

template <typename T>
ConvGrads<T> conv2d_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                             const Tensor<T>& weight, std::size_t stride, std::size_t pad) {
  detail::require_rank(saved_input.shape(), 4, "conv2d saved input");
  detail::require_rank(grad_out.shape(), 4, "conv2d grad_out");
  detail::require_dim("conv2d weight channel count", weight.dim(1), saved_input.dim(1));
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t out_h = detail::conv_out_extent("height", saved_input.dim(2), kh, stride, pad);
  const std::size_t out_w = detail::conv_out_extent("width", saved_input.dim(3), kw, stride, pad);
  detail::require_dim("conv2d grad_out batch", grad_out.dim(0), saved_input.dim(0));
  detail::require_dim("conv2d grad_out channels", grad_out.dim(1), weight.dim(0));
  detail::require_dim("conv2d grad_out height", grad_out.dim(2), out_h);
  detail::require_dim("conv2d grad_out width", grad_out.dim(3), out_w);

  const RowMatrix<T> g = detail::to_channel_major(grad_out);
  const RowMatrix<T> col = detail::im2col(saved_input, kh, kw, stride, pad, out_h, out_w);
  ConstMatrixMap<T> w(weight.raw(), weight.dim(0), col.rows());

  ConvGrads<T> grads;
  grads.weight = Tensor<T>(weight.shape());
  MatrixMap<T>(grads.weight.raw(), weight.dim(0), col.rows()).noalias() = g * col.transpose();
  grads.bias = detail::channel_sums(grad_out);
  const RowMatrix<T> grad_col = w.transpose() * g;
  grads.input = detail::col2im(grad_col, saved_input.shape(), kh, kw, stride, pad, out_h, out_w);
  return grads;
}

/// Fractionally-strided convolution, the adjoint of conv2d with the same geometry.
/// input [N,Cin,H,W], weight [Cin,Cout,kH,kW], bias [Cout] (may be empty).
template <typename T>
Tensor<T> conv_transpose2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                           std::size_t stride, std::size_t pad) {
  detail::require_rank(input.shape(), 4, "conv_transpose2d input");
  detail::require_rank(weight.shape(), 4, "conv_transpose2d weight");
  detail::require_dim("conv_transpose2d weight input-channel count", weight.dim(0), input.dim(1));
  detail::check_bias(bias, weight.dim(1));
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  const std::size_t out_h = conv_transpose2d_output_extent(input.dim(2), kh, stride, pad);
  const std::size_t out_w = conv_transpose2d_output_extent(input.dim(3), kw, stride, pad);
  // The forward conv geometry must map the output back onto the input grid.
  detail::require_dim("conv_transpose2d input height",
                      detail::conv_out_extent("height", out_h, kh, stride, pad), input.dim(2));
  detail::require_dim("conv_transpose2d input width",
                      detail::conv_out_extent("width", out_w, kw, stride, pad), input.dim(3));

  const RowMatrix<T> x = detail::to_channel_major(input);
  ConstMatrixMap<T> w(weight.raw(), weight.dim(0), weight.size() / weight.dim(0));
  const RowMatrix<T> col = w.transpose() * x;
  Tensor<T> result = detail::col2im(col, {input.dim(0), weight.dim(1), out_h, out_w}, kh, kw,
                                    stride, pad, input.dim(2), input.dim(3));
  detail::add_channel_bias(result, bias);
  return result;
}

template <typename T>
ConvGrads<T> conv_transpose2d_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                                       const Tensor<T>& weight, std::size_t stride,
                                       std::size_t pad) {
  detail::require_rank(grad_out.shape(), 4, "conv_transpose2d grad_out");
  detail::require_rank(saved_input.shape(), 4, "conv_transpose2d saved input");
  const std::size_t kh = weight.dim(2), kw = weight.dim(3);
  detail::require_dim("conv_transpose2d grad_out batch", grad_out.dim(0), saved_input.dim(0));
  detail::require_dim("conv_transpose2d grad_out channels", grad_out.dim(1), weight.dim(1));
  detail::require_dim("conv_transpose2d grad_out height", grad_out.dim(2),
                      conv_transpose2d_output_extent(saved_input.dim(2), kh, stride, pad));
  detail::require_dim("conv_transpose2d grad_out width", grad_out.dim(3),
                      conv_transpose2d_output_extent(saved_input.dim(3), kw, stride, pad));

  const std::size_t in_h = saved_input.dim(2), in_w = saved_input.dim(3);
  const RowMatrix<T> gcol = detail::im2col(grad_out, kh, kw, stride, pad, in_h, in_w);
  const RowMatrix<T> x = detail::to_channel_major(saved_input);
  ConstMatrixMap<T> w(weight.raw(), weight.dim(0), gcol.rows());

  ConvGrads<T> grads;
  const RowMatrix<T> gx = w * gcol;
  grads.input = detail::from_channel_major(gx, saved_input.shape());
  grads.weight = Tensor<T>(weight.shape());
  MatrixMap<T>(grads.weight.raw(), weight.dim(0), gcol.rows()).noalias() = x * gcol.transpose();
  grads.bias = detail::channel_sums(grad_out);
  return grads;
}

/// Affine map: input [N,D] times weight [D,M] plus bias [M] (may be empty).
template <typename T>
Tensor<T> dense(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias) {
  detail::require_rank(input.shape(), 2, "dense input");
  detail::require_rank(weight.shape(), 2, "dense weight");
  detail::require_dim("dense input features", input.dim(1), weight.dim(0));
  detail::check_bias(bias, weight.dim(1));
  Tensor<T> out({input.dim(0), weight.dim(1)});
  ConstMatrixMap<T> x(input.raw(), input.dim(0), input.dim(1));
  ConstMatrixMap<T> w(weight.raw(), weight.dim(0), weight.dim(1));
  MatrixMap<T> y(out.raw(), out.dim(0), out.dim(1));
  y.noalias() = x * w;
  if (!bias.empty()) {
    for (std::size_t n = 0; n < out.dim(0); ++n) {
      for (std::size_t m = 0; m < out.dim(1); ++m) out.at(n, m) += bias[m];
    }
  }
  return out;
}

template <typename T>
ConvGrads<T> dense_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                            const Tensor<T>& weight) {
  detail::require_rank(grad_out.shape(), 2, "dense grad_out");
  detail::require_dim("dense grad_out batch", grad_out.dim(0), saved_input.dim(0));
  detail::require_dim("dense grad_out features", grad_out.dim(1), weight.dim(1));
  detail::require_dim("dense saved input features", saved_input.dim(1), weight.dim(0));
  ConstMatrixMap<T> g(grad_out.raw(), grad_out.dim(0), grad_out.dim(1));
  ConstMatrixMap<T> x(saved_input.raw(), saved_input.dim(0), saved_input.dim(1));
  ConstMatrixMap<T> w(weight.raw(), weight.dim(0), weight.dim(1));
  ConvGrads<T> grads;
  grads.input = Tensor<T>(saved_input.shape());
  MatrixMap<T>(grads.input.raw(), x.rows(), x.cols()).noalias() = g * w.transpose();
  grads.weight = Tensor<T>(weight.shape());
  MatrixMap<T>(grads.weight.raw(), w.rows(), w.cols()).noalias() = x.transpose() * g;
  grads.bias = Tensor<T>({weight.dim(1)});
  for (std::size_t m = 0; m < weight.dim(1); ++m) {
    double acc = 0.0;
    for (std::size_t n = 0; n < grad_out.dim(0); ++n) acc += grad_out.at(n, m);
    grads.bias[m] = static_cast<T>(acc);
  }
  return grads;
}

// --- batch normalization ---------------------------------------------------

/// train: batch statistics, running statistics updated.
/// batch: batch statistics, running statistics untouched.
/// infer: running statistics.
enum class Phase { train, batch, infer };

template <typename T>
struct BatchNormState {
  Tensor<T> running_mean;
  Tensor<T> running_var;
};

template <typename T>
struct BatchNormCache {
  Tensor<T> normalized;
  std::vector<T> inv_std;
  Phase phase = Phase::train;
};

template <typename T>
struct BatchNormResult {
  Tensor<T> output;
  BatchNormCache<T> cache;
};

template <typename T>
BatchNormResult<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma,
                               const Tensor<T>& beta, BatchNormState<T>& state, double epsilon,
                               double momentum, Phase phase) {
  detail::require_rank(input.shape(), 4, "batchnorm2d input");
  const std::size_t n_batch = input.dim(0), channels = input.dim(1);
  const std::size_t plane = input.dim(2) * input.dim(3);
  detail::require_dim("batchnorm2d gamma length", gamma.size(), channels);
  detail::require_dim("batchnorm2d beta length", beta.size(), channels);
  if (phase != Phase::infer && n_batch < 2) {
    throw UsageError("batchnorm2d needs batch size >= 2 with batch statistics, got " +
                     std::to_string(n_batch));
  }
  const std::size_t count = n_batch * plane;
  BatchNormResult<T> r;
  r.cache.phase = phase;
  r.cache.inv_std.resize(channels);
  r.cache.normalized = Tensor<T>(input.shape());
  r.output = Tensor<T>(input.shape());
  for (std::size_t c = 0; c < channels; ++c) {
    double mean = 0.0, var = 0.0;
    if (phase == Phase::infer) {
      mean = state.running_mean[c];
      var = state.running_var[c];
    } else {
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* p = input.raw() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) mean += p[i];
      }
      mean /= static_cast<double>(count);
      for (std::size_t n = 0; n < n_batch; ++n) {
        const T* p = input.raw() + (n * channels + c) * plane;
        for (std::size_t i = 0; i < plane; ++i) var += (p[i] - mean) * (p[i] - mean);
      }
      var /= static_cast<double>(count);
      if (phase == Phase::train) {
        const double unbiased = var * static_cast<double>(count) / static_cast<double>(count - 1);
        state.running_mean[c] =
            static_cast<T>((1.0 - momentum) * state.running_mean[c] + momentum * mean);
        state.running_var[c] =
            static_cast<T>((1.0 - momentum) * state.running_var[c] + momentum * unbiased);
      }
    }
    const double inv_std = 1.0 / std::sqrt(var + epsilon);
    r.cache.inv_std[c] = static_cast<T>(inv_std);
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        const T xhat = static_cast<T>((input[off + i] - mean) * inv_std);
        r.cache.normalized[off + i] = xhat;
        r.output[off + i] = gamma[c] * xhat + beta[c];
      }
    }
  }
  return r;
}

template <typename T>
ConvGrads<T> batchnorm2d_backward(const Tensor<T>& grad_out, const BatchNormCache<T>& cache,
                                  const Tensor<T>& gamma) {
  if (grad_out.shape() != cache.normalized.shape()) {
    throw UsageError("batchnorm2d grad_out shape " + shape_str(grad_out.shape()) +
                     " does not match saved activation " + shape_str(cache.normalized.shape()));
  }
  const std::size_t n_batch = grad_out.dim(0), channels = grad_out.dim(1);
  const std::size_t plane = grad_out.dim(2) * grad_out.dim(3);
  const double count = static_cast<double>(n_batch * plane);
  ConvGrads<T> g;
  g.input = Tensor<T>(grad_out.shape());
  g.weight = Tensor<T>({channels});
  g.bias = Tensor<T>({channels});
  for (std::size_t c = 0; c < channels; ++c) {
    double sum_g = 0.0, sum_gx = 0.0;
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        sum_g += grad_out[off + i];
        sum_gx += grad_out[off + i] * cache.normalized[off + i];
      }
    }
    g.weight[c] = static_cast<T>(sum_gx);
    g.bias[c] = static_cast<T>(sum_g);
    const double scale = static_cast<double>(gamma[c]) * cache.inv_std[c];
    for (std::size_t n = 0; n < n_batch; ++n) {
      const std::size_t off = (n * channels + c) * plane;
      for (std::size_t i = 0; i < plane; ++i) {
        if (cache.phase == Phase::infer) {
          g.input[off + i] = static_cast<T>(scale * grad_out[off + i]);
        } else {
          g.input[off + i] = static_cast<T>(
              scale / count *
              (count * grad_out[off + i] - sum_g - cache.normalized[off + i] * sum_gx));
        }
      }
    }
  }
  return g;
}

// --- activations -------------------------------------------------------------

template <typename T>
Tensor<T> leaky_relu(const Tensor<T>& input, double slope) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = v > T(0) ? v : static_cast<T>(slope * v);
  return out;
}

template <typename T>
Tensor<T> leaky_relu_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_input,
                              double slope) {
  if (grad_out.shape() != saved_input.shape()) {
    throw UsageError("leaky_relu grad_out shape mismatch");
  }
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(saved_input[i] > T(0))) g[i] = static_cast<T>(slope * g[i]);
  }
  return g;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) {
    // Branching keeps exp() from overflowing on large-magnitude inputs.
    if (v >= T(0)) {
      v = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      v = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> sigmoid_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_output) {
  if (grad_out.shape() != saved_output.shape()) throw UsageError("sigmoid grad_out shape mismatch");
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= saved_output[i] * (T(1) - saved_output[i]);
  return g;
}

template <typename T>
Tensor<T> tanh(const Tensor<T>& input) {
  Tensor<T> out = input;
  for (auto& v : out.data()) v = std::tanh(v);
  return out;
}

template <typename T>
Tensor<T> tanh_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_output) {
  if (grad_out.shape() != saved_output.shape()) throw UsageError("tanh grad_out shape mismatch");
  Tensor<T> g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) g[i] *= T(1) - saved_output[i] * saved_output[i];
  return g;
}

/// Row-wise softmax over the class axis of [N,K].
template <typename T>
Tensor<T> softmax(const Tensor<T>& input) {
  detail::require_rank(input.shape(), 2, "softmax input");
  Tensor<T> out(input.shape());
  const std::size_t rows = input.dim(0), k = input.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* x = input.raw() + r * k;
    T* y = out.raw() + r * k;
    const T mx = *std::max_element(x, x + k);
    double total = 0.0;
    for (std::size_t j = 0; j < k; ++j) {
      y[j] = std::exp(x[j] - mx);
      total += y[j];
    }
    for (std::size_t j = 0; j < k; ++j) y[j] = static_cast<T>(y[j] / total);
  }
  return out;
}

template <typename T>
Tensor<T> softmax_backward(const Tensor<T>& grad_out, const Tensor<T>& saved_output) {
  if (grad_out.shape() != saved_output.shape()) throw UsageError("softmax grad_out shape mismatch");
  Tensor<T> g(grad_out.shape());
  const std::size_t rows = grad_out.dim(0), k = grad_out.dim(1);
  for (std::size_t r = 0; r < rows; ++r) {
    const T* y = saved_output.raw() + r * k;
    const T* go = grad_out.raw() + r * k;
    double dot = 0.0;
    for (std::size_t j = 0; j < k; ++j) dot += go[j] * y[j];
    for (std::size_t j = 0; j < k; ++j) g[r * k + j] = static_cast<T>(y[j] * (go[j] - dot));
  }
  return g;
}

}  // namespace can
