#pragma once

// Style-labeled image corpora: directory ingestion (root/<style>/<images>),
// five-crop augmentation, procedural synthetic corpora and seeded minibatching.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <iomanip>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "can/error.hpp"
#include "can/image.hpp"
#include "can/serialize.hpp"
#include "can/tensor.hpp"

namespace can {

struct ManifestRow {
  std::string style;
  std::size_t count = 0;
};

/// Images [3,S,S] in [-1,1] with style indices into the sorted style-name list.
class StyleDataset {
 public:
  StyleDataset() = default;
  StyleDataset(std::size_t image_size, std::vector<std::string> style_names)
      : image_size_(image_size), style_names_(std::move(style_names)) {}

  std::size_t size() const noexcept { return labels_.size(); }
  bool empty() const noexcept { return labels_.empty(); }
  std::size_t image_size() const noexcept { return image_size_; }
  std::size_t channels() const noexcept { return 3; }
  std::size_t num_styles() const noexcept { return style_names_.size(); }
  const std::vector<std::string>& style_names() const noexcept { return style_names_; }
  const std::vector<int>& labels() const noexcept { return labels_; }
  int label(std::size_t i) const { return labels_.at(i); }

  void add(const Tensor<double>& image, int style) {
    if (image.shape() != Shape{3, image_size_, image_size_}) {
      throw DataError("sample shape " + shape_str(image.shape()) + " does not match dataset size " +
                      std::to_string(image_size_));
    }
    if (style < 0 || static_cast<std::size_t>(style) >= num_styles()) {
      throw DataError("style index " + std::to_string(style) + " out of range");
    }
    for (double v : image.data()) pixels_.push_back(static_cast<float>(std::clamp(v, -1.0, 1.0)));
    labels_.push_back(style);
  }

  template <typename T = double>
  Tensor<T> image(std::size_t i) const {
    const std::size_t stride = pixel_stride();
    std::vector<T> data(pixels_.begin() + i * stride, pixels_.begin() + (i + 1) * stride);
    return Tensor<T>({3, image_size_, image_size_}, std::move(data));
  }

  /// Stacks the given samples into [B,3,S,S].
  template <typename T = double>
  Tensor<T> batch(std::span<const std::size_t> indices) const {
    const std::size_t stride = pixel_stride();
    Tensor<T> out({indices.size(), 3, image_size_, image_size_});
    for (std::size_t b = 0; b < indices.size(); ++b) {
      const float* src = pixels_.data() + indices[b] * stride;
      std::copy(src, src + stride, out.raw() + b * stride);
    }
    return out;
  }

  std::vector<int> batch_labels(std::span<const std::size_t> indices) const {
    std::vector<int> out;
    out.reserve(indices.size());
    for (std::size_t i : indices) out.push_back(labels_.at(i));
    return out;
  }

  /// Per-style sample counts, in style-index order.
  std::vector<ManifestRow> manifest() const {
    std::vector<ManifestRow> rows;
    for (const auto& name : style_names_) rows.push_back({name, 0});
    for (int l : labels_) rows[static_cast<std::size_t>(l)].count += 1;
    return rows;
  }

  StyleDataset subset(std::span<const std::size_t> indices) const {
    StyleDataset out(image_size_, style_names_);
    const std::size_t stride = pixel_stride();
    for (std::size_t i : indices) {
      out.pixels_.insert(out.pixels_.end(), pixels_.begin() + i * stride,
                         pixels_.begin() + (i + 1) * stride);
      out.labels_.push_back(labels_.at(i));
    }
    return out;
  }

  /// CRC-32 over size, style names, labels and pixels; identifies a corpus across runs.
  std::uint32_t fingerprint() const {
    BinaryWriter w;
    w.u64(image_size_);
    for (const auto& n : style_names_) w.str(n);
    for (int l : labels_) w.u32(static_cast<std::uint32_t>(l));
    std::uint32_t crc = crc32_bytes(w.bytes());
    return crc32_bytes({reinterpret_cast<const std::uint8_t*>(pixels_.data()),
                        pixels_.size() * sizeof(float)},
                       crc);
  }

 private:
  std::size_t pixel_stride() const noexcept { return 3 * image_size_ * image_size_; }

  std::size_t image_size_ = 0;
  std::vector<std::string> style_names_;
  std::vector<float> pixels_;
  std::vector<int> labels_;
};

/// Table with one row per style plus a Total row.
inline std::string format_manifest(const std::vector<ManifestRow>& rows) {
  std::size_t width = std::string("Style name").size();
  std::size_t total = 0;
  for (const auto& r : rows) {
    width = std::max(width, r.style.size());
    total += r.count;
  }
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "Style name" << "  "
     << "Image number\n";
  for (const auto& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.style << "  " << std::right
       << std::setw(12) << r.count << '\n';
  }
  os << std::left << std::setw(static_cast<int>(width)) << "Total" << "  " << std::right
     << std::setw(12) << total << '\n';
  return os.str();
}

namespace detail {

inline bool is_raster_file(const std::filesystem::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg";
}

}  // namespace detail

/// Ingests root/<style_name>/<image files>. Style indices follow sorted style names and
/// samples follow sorted file names, so directory listing order never matters. With
/// `augment`, each image contributes itself plus its five crops, all resized to S x S.
inline StyleDataset ingest_directory(const std::filesystem::path& root, std::size_t target_size,
                                     bool augment) {
  namespace fs = std::filesystem;
  if (target_size < 1) throw UsageError("target size must be positive");
  std::error_code ec;
  if (!fs::is_directory(root, ec)) throw DataError("corpus root " + root.string() + " is not a directory");
  std::vector<fs::path> style_dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory()) style_dirs.push_back(entry.path());
  }
  if (style_dirs.empty()) throw DataError("corpus root " + root.string() + " has no style folders");
  std::sort(style_dirs.begin(), style_dirs.end(),
            [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });

  std::vector<std::string> names;
  std::vector<std::vector<fs::path>> files(style_dirs.size());
  for (std::size_t k = 0; k < style_dirs.size(); ++k) {
    names.push_back(style_dirs[k].filename().string());
    for (const auto& entry : fs::directory_iterator(style_dirs[k])) {
      if (entry.is_regular_file() && detail::is_raster_file(entry.path())) {
        files[k].push_back(entry.path());
      }
    }
    if (files[k].empty()) throw DataError("style folder " + style_dirs[k].string() + " contains no images");
    std::sort(files[k].begin(), files[k].end(),
              [](const fs::path& a, const fs::path& b) { return a.filename() < b.filename(); });
  }

  StyleDataset ds(target_size, names);
  for (std::size_t k = 0; k < files.size(); ++k) {
    for (const auto& path : files[k]) {
      const Tensor<double> img = load_image(path);
      ds.add(resize_bilinear(img, target_size, target_size), static_cast<int>(k));
      if (augment) {
        if (img.dim(1) < 10 || img.dim(2) < 10) {
          throw DataError("image " + path.string() + " is too small for five-crop augmentation");
        }
        for (const auto& c : five_crop(img, target_size)) ds.add(c, static_cast<int>(k));
      }
    }
  }
  return ds;
}

// --- synthetic corpora -------------------------------------------------------

inline const char* synth_family_name(std::size_t style) {
  static const char* names[] = {"stripes", "checkers", "rings", "blobs"};
  return names[style % 4];
}

/// K procedural style families with per-image jitter: oriented stripes, checkerboards,
/// concentric rings and color blobs, each style with its own palette and geometry.
inline StyleDataset synth_style_corpus(std::size_t num_styles, std::size_t per_style,
                                       std::size_t size, std::uint64_t seed) {
  if (num_styles < 2) throw UsageError("synthetic corpus needs at least 2 styles");
  if (per_style < 1) throw UsageError("synthetic corpus needs at least 1 image per style");
  if (size < 8) throw UsageError("synthetic images must be at least 8x8");
  std::vector<std::string> names;
  for (std::size_t k = 0; k < num_styles; ++k) {
    std::ostringstream os;
    os << "style-" << std::setw(2) << std::setfill('0') << k << '-' << synth_family_name(k);
    names.push_back(os.str());
  }
  StyleDataset ds(size, names);
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> noise(0.0, 1.0);
  const double pi = std::acos(-1.0);
  const double s = static_cast<double>(size);

  for (std::size_t k = 0; k < num_styles; ++k) {
    const std::size_t family = k % 4;
    const double variant = static_cast<double>(k / 4);
    // Style palette: two colors spread around the hue circle by style index.
    const double hue = 2.0 * pi * (static_cast<double>(k) + 0.5) / static_cast<double>(num_styles);
    const double fg[3] = {0.8 * std::cos(hue), 0.8 * std::cos(hue - 2.0 * pi / 3.0),
                          0.8 * std::cos(hue + 2.0 * pi / 3.0)};
    const double bg[3] = {-0.5 * fg[1], -0.5 * fg[2], -0.5 * fg[0]};
    for (std::size_t i = 0; i < per_style; ++i) {
      double jitter[3];
      for (double& j : jitter) j = 0.15 * (unit(rng) - 0.5);
      const double phase = 2.0 * pi * unit(rng);
      Tensor<double> img({3, size, size});
      std::vector<double> pattern(size * size);
      switch (family) {
        case 0: {  // stripes
          const double angle = 0.25 * pi + 0.5 * pi * variant + 0.3 * (unit(rng) - 0.5);
          const double period = s / (4.0 + variant) * (0.9 + 0.2 * unit(rng));
          for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
              const double u = x * std::cos(angle) + y * std::sin(angle);
              pattern[y * size + x] = std::sin(2.0 * pi * u / period + phase);
            }
          }
          break;
        }
        case 1: {  // checkers
          const double cell = s / (4.0 + 2.0 * variant) * (0.9 + 0.2 * unit(rng));
          const double ox = cell * unit(rng), oy = cell * unit(rng);
          for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
              const long cx = static_cast<long>(std::floor((x + ox) / cell));
              const long cy = static_cast<long>(std::floor((y + oy) / cell));
              pattern[y * size + x] = ((cx + cy) % 2 == 0) ? 1.0 : -1.0;
            }
          }
          break;
        }
        case 2: {  // rings
          const double cx = s * (0.35 + 0.3 * unit(rng)), cy = s * (0.35 + 0.3 * unit(rng));
          const double period = s / (5.0 + variant) * (0.9 + 0.2 * unit(rng));
          for (std::size_t y = 0; y < size; ++y) {
            for (std::size_t x = 0; x < size; ++x) {
              const double r = std::hypot(x - cx, y - cy);
              pattern[y * size + x] = std::sin(2.0 * pi * r / period + phase);
            }
          }
          break;
        }
        default: {  // blobs
          std::fill(pattern.begin(), pattern.end(), -1.0);
          const int blobs = 3 + static_cast<int>(unit(rng) * 3.0);
          for (int b = 0; b < blobs; ++b) {
            const double bx = s * unit(rng), by = s * unit(rng);
            const double radius = s * (0.08 + 0.08 * unit(rng)) * (1.0 + 0.25 * variant);
            for (std::size_t y = 0; y < size; ++y) {
              for (std::size_t x = 0; x < size; ++x) {
                const double d2 = (x - bx) * (x - bx) + (y - by) * (y - by);
                const double v = 2.0 * std::exp(-d2 / (2.0 * radius * radius)) - 1.0;
                pattern[y * size + x] = std::max(pattern[y * size + x], v);
              }
            }
          }
          break;
        }
      }
      for (std::size_t c = 0; c < 3; ++c) {
        for (std::size_t p = 0; p < size * size; ++p) {
          const double t = 0.5 * (pattern[p] + 1.0);
          const double v = t * (fg[c] + jitter[c]) + (1.0 - t) * (bg[c] + jitter[c]) +
                           0.03 * noise(rng);
          img[c * size * size + p] = std::clamp(v, -1.0, 1.0);
        }
      }
      ds.add(img, static_cast<int>(k));
    }
  }
  return ds;
}

/// Writes a corpus as root/<style>/img_<index>.png plus manifest.txt.
inline void write_corpus(const StyleDataset& ds, const std::filesystem::path& root) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(root, ec);
  if (ec) throw IoError("cannot create " + root.string() + ": " + ec.message());
  std::vector<std::size_t> counters(ds.num_styles(), 0);
  for (const auto& name : ds.style_names()) {
    fs::create_directories(root / name, ec);
    if (ec) throw IoError("cannot create " + (root / name).string() + ": " + ec.message());
  }
  for (std::size_t i = 0; i < ds.size(); ++i) {
    const auto k = static_cast<std::size_t>(ds.label(i));
    std::ostringstream name;
    name << "img_" << std::setw(5) << std::setfill('0') << counters[k]++ << ".png";
    save_png(root / ds.style_names()[k] / name.str(), ds.image(i));
  }
  std::ofstream f(root / "manifest.txt");
  f << format_manifest(ds.manifest());
  if (!f) throw IoError("cannot write " + (root / "manifest.txt").string());
}

/// Seeded split into (train, held-out); held-out gets round(fraction * N) samples.
inline std::pair<StyleDataset, StyleDataset> split_dataset(const StyleDataset& ds,
                                                           double holdout_fraction,
                                                           std::uint64_t seed) {
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw UsageError("holdout fraction must lie in (0,1)");
  }
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  const auto n_test = static_cast<std::size_t>(std::llround(holdout_fraction * ds.size()));
  if (n_test == 0 || n_test == ds.size()) throw DataError("split leaves an empty partition");
  std::vector<std::size_t> test(order.begin(), order.begin() + n_test);
  std::vector<std::size_t> train(order.begin() + n_test, order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {ds.subset(train), ds.subset(test)};
}

// --- minibatching ------------------------------------------------------------

struct BatchPlan {
  std::size_t batch_size = 64;
  std::uint64_t seed = 0;
  bool drop_last = true;
};

template <typename T>
struct Batch {
  Tensor<T> images;
  std::vector<int> labels;
};

/// Sample indices for each batch of an epoch, from the permutation seeded by seed ^ epoch.
inline std::vector<std::vector<std::size_t>> epoch_batches(std::size_t dataset_size,
                                                           const BatchPlan& plan,
                                                           std::uint64_t epoch_index) {
  if (dataset_size == 0) throw DataError("dataset is empty");
  if (plan.batch_size < 2) throw UsageError("batch size must be >= 2");
  if (plan.batch_size > dataset_size) {
    throw UsageError("batch size " + std::to_string(plan.batch_size) + " exceeds dataset size " +
                     std::to_string(dataset_size));
  }
  std::vector<std::size_t> order(dataset_size);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(plan.seed ^ epoch_index);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t begin = 0; begin < dataset_size; begin += plan.batch_size) {
    const std::size_t end = std::min(dataset_size, begin + plan.batch_size);
    if (end - begin < plan.batch_size && plan.drop_last) break;
    batches.emplace_back(order.begin() + begin, order.begin() + end);
  }
  return batches;
}

template <typename T = double>
std::vector<Batch<T>> minibatches(const StyleDataset& ds, const BatchPlan& plan,
                                  std::uint64_t epoch_index) {
  std::vector<Batch<T>> out;
  for (const auto& idx : epoch_batches(ds.size(), plan, epoch_index)) {
    out.push_back({ds.batch<T>(idx), ds.batch_labels(idx)});
  }
  return out;
}

}  // namespace can
