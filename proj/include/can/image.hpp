#pragma once

// Raster decode/encode (PNG, JPEG via OpenCV codecs) and the pixel geometry
// used by the data pipeline. Images are [C,H,W] tensors with values in [-1,1].

#include <opencv2/imgcodecs.hpp>

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <string>
#include <vector>

#include "can/error.hpp"
#include "can/tensor.hpp"

namespace can {

/// Decodes an 8-bit image file to RGB [3,H,W] in [-1,1].
inline Tensor<double> load_image(const std::filesystem::path& path) {
  const cv::Mat bgr = cv::imread(path.string(), cv::IMREAD_COLOR);
  if (bgr.empty() || bgr.depth() != CV_8U) {
    throw DataError("cannot decode image " + path.string());
  }
  const std::size_t h = static_cast<std::size_t>(bgr.rows), w = static_cast<std::size_t>(bgr.cols);
  Tensor<double> img({3, h, w});
  for (std::size_t y = 0; y < h; ++y) {
    const auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        // OpenCV stores BGR.
        img[(c * h + y) * w + x] = row[x][2 - c] / 127.5 - 1.0;
      }
    }
  }
  return img;
}

inline std::uint8_t to_byte(double v) {
  const double scaled = std::round((std::clamp(v, -1.0, 1.0) + 1.0) * 127.5);
  return static_cast<std::uint8_t>(scaled);
}

/// Encodes [3,H,W] (or [1,H,W]) values in [-1,1] as a PNG file.
template <typename T>
void save_png(const std::filesystem::path& path, const Tensor<T>& image) {
  if (image.rank() != 3 || (image.dim(0) != 3 && image.dim(0) != 1)) {
    throw UsageError("save_png expects a [3,H,W] or [1,H,W] image, got " +
                     shape_str(image.shape()));
  }
  const std::size_t channels = image.dim(0), h = image.dim(1), w = image.dim(2);
  cv::Mat bgr(static_cast<int>(h), static_cast<int>(w), CV_8UC3);
  for (std::size_t y = 0; y < h; ++y) {
    auto* row = bgr.ptr<cv::Vec3b>(static_cast<int>(y));
    for (std::size_t x = 0; x < w; ++x) {
      for (std::size_t c = 0; c < 3; ++c) {
        const std::size_t src = channels == 3 ? c : 0;
        row[x][2 - c] = to_byte(image[(src * h + y) * w + x]);
      }
    }
  }
  bool ok = false;
  try {
    ok = cv::imwrite(path.string(), bgr);
  } catch (const cv::Exception&) {
    ok = false;
  }
  if (!ok) throw IoError("cannot write image " + path.string());
}

/// Tiles a batch [N,3,S,S] into a grid with `columns` images per row.
template <typename T>
Tensor<T> tile_grid(const Tensor<T>& batch, std::size_t columns = 8) {
  if (batch.rank() != 4) throw UsageError("tile_grid expects [N,C,H,W]");
  const std::size_t n = batch.dim(0), c = batch.dim(1), h = batch.dim(2), w = batch.dim(3);
  const std::size_t cols = std::min(columns, n);
  const std::size_t rows = (n + cols - 1) / cols;
  Tensor<T> grid({c, rows * h, cols * w}, T(-1));
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t gy = (i / cols) * h, gx = (i % cols) * w;
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          grid[(ch * rows * h + gy + y) * cols * w + gx + x] = batch.at(i, ch, y, x);
        }
      }
    }
  }
  return grid;
}

/// Bilinear resampling with pixel-center alignment.
inline Tensor<double> resize_bilinear(const Tensor<double>& image, std::size_t out_h,
                                      std::size_t out_w) {
  if (image.rank() != 3) throw UsageError("resize expects a [C,H,W] image");
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (h == out_h && w == out_w) return image;
  Tensor<double> out({c, out_h, out_w});
  const double sy = static_cast<double>(h) / static_cast<double>(out_h);
  const double sx = static_cast<double>(w) / static_cast<double>(out_w);
  for (std::size_t y = 0; y < out_h; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, static_cast<double>(h - 1));
    const std::size_t y0 = static_cast<std::size_t>(fy);
    const std::size_t y1 = std::min(y0 + 1, h - 1);
    const double wy = fy - static_cast<double>(y0);
    for (std::size_t x = 0; x < out_w; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, static_cast<double>(w - 1));
      const std::size_t x0 = static_cast<std::size_t>(fx);
      const std::size_t x1 = std::min(x0 + 1, w - 1);
      const double wx = fx - static_cast<double>(x0);
      for (std::size_t ch = 0; ch < c; ++ch) {
        const double* p = image.raw() + ch * h * w;
        const double top = p[y0 * w + x0] * (1 - wx) + p[y0 * w + x1] * wx;
        const double bottom = p[y1 * w + x0] * (1 - wx) + p[y1 * w + x1] * wx;
        out[(ch * out_h + y) * out_w + x] = top * (1 - wy) + bottom * wy;
      }
    }
  }
  return out;
}

struct CropBox {
  const char* name;
  std::size_t top;
  std::size_t left;
  std::size_t height;
  std::size_t width;
};

/// The five 90% crops: bottom-left, bottom-right, mid, top-left, top-right.
inline std::array<CropBox, 5> five_crop_boxes(std::size_t h, std::size_t w) {
  if (h < 10 || w < 10) {
    throw UsageError("five_crop needs an image of at least 10x10, got " + std::to_string(h) + "x" +
                     std::to_string(w));
  }
  const std::size_t ch = h * 9 / 10, cw = w * 9 / 10;
  return {{{"bottom-left", h - ch, 0, ch, cw},
           {"bottom-right", h - ch, w - cw, ch, cw},
           {"mid", (h - ch) / 2, (w - cw) / 2, ch, cw},
           {"top-left", 0, 0, ch, cw},
           {"top-right", 0, w - cw, ch, cw}}};
}

inline Tensor<double> crop(const Tensor<double>& image, const CropBox& box) {
  const std::size_t c = image.dim(0), h = image.dim(1), w = image.dim(2);
  if (box.top + box.height > h || box.left + box.width > w) {
    throw UsageError("crop box exceeds image bounds");
  }
  Tensor<double> out({c, box.height, box.width});
  for (std::size_t ch = 0; ch < c; ++ch) {
    for (std::size_t y = 0; y < box.height; ++y) {
      const double* src = image.raw() + (ch * h + box.top + y) * w + box.left;
      std::copy(src, src + box.width, out.raw() + (ch * box.height + y) * box.width);
    }
  }
  return out;
}

/// Five crops at source resolution (no resize).
inline std::vector<Tensor<double>> five_crop(const Tensor<double>& image) {
  if (image.rank() != 3) throw UsageError("five_crop expects a [C,H,W] image");
  std::vector<Tensor<double>> crops;
  for (const auto& box : five_crop_boxes(image.dim(1), image.dim(2))) {
    crops.push_back(crop(image, box));
  }
  return crops;
}

/// Five crops resized to target x target.
inline std::vector<Tensor<double>> five_crop(const Tensor<double>& image, std::size_t target) {
  auto crops = five_crop(image);
  for (auto& c : crops) c = resize_bilinear(c, target, target);
  return crops;
}

}  // namespace can
