// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "hkd/tensor.hpp"

namespace hkd {

struct ImageGeometry {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;

  std::size_t size() const { return height * width * channels; }
  friend bool operator==(const ImageGeometry&, const ImageGeometry&) = default;
};

/// Immutable labeled samples. Images are stored HWC, one per row.
class Dataset {
 public:
  Dataset() = default;
  Dataset(std::size_t feature_dim, std::size_t classes);

  void push(std::uint64_t id, std::span<const double> features, std::size_t label);

  std::size_t size() const { return labels_.size(); }
  bool empty() const { return labels_.empty(); }
  std::size_t feature_dim() const { return feature_dim_; }
  std::size_t classes() const { return classes_; }
  std::span<const double> features(std::size_t i) const {
    return std::span<const double>(features_).subspan(i * feature_dim_, feature_dim_);
  }
  std::size_t label(std::size_t i) const { return labels_[i]; }
  std::uint64_t id(std::size_t i) const { return ids_[i]; }
  std::span<const std::size_t> labels() const { return labels_; }
  std::span<const std::uint64_t> ids() const { return ids_; }

  const std::optional<ImageGeometry>& image() const { return image_; }
  void set_image(ImageGeometry g);

  /// Rows at the given positions, ids preserved.
  Dataset subset(std::span<const std::size_t> positions) const;
  /// positions.size() x feature_dim.
  Tensor batch(std::span<const std::size_t> positions) const;
  std::vector<std::size_t> batch_labels(std::span<const std::size_t> positions) const;
  Tensor all_features() const;

  friend bool operator==(const Dataset&, const Dataset&) = default;

 private:
  std::size_t feature_dim_ = 0;
  std::size_t classes_ = 0;
  std::vector<double> features_;
  std::vector<std::size_t> labels_;
  std::vector<std::uint64_t> ids_;
  std::optional<ImageGeometry> image_;
};

struct MetaSplit {
  Dataset train;
  Dataset meta;
};

/// Stratified hold-out of per_class samples of every class, chosen by a
/// seeded shuffle. Both parts keep dataset order.
MetaSplit split_meta(const Dataset& data, std::size_t per_class, std::uint64_t seed);

struct GaussianSpec {
  std::size_t classes = 10;
  std::size_t dim = 32;
  std::size_t per_class = 500;
  /// Radius of the sphere the component means lie on (noise is unit variance).
  double separation = 3.0;
  /// Gaussian components per class.
  std::size_t modes = 1;
  /// Fraction of samples whose label is replaced by a uniformly drawn class.
  double label_noise = 0.0;
  std::uint64_t seed = 0;
};

/// Class-conditional Gaussian mixture. The component means depend only on
/// spec.seed; `stream` selects an independent draw of samples (e.g. 0 for
/// train, 1 for eval) from the same mixture. Ids are 0..n-1 in order.
Dataset synth_gaussians(const GaussianSpec& spec, std::uint64_t stream = 0);

struct RawImageFormat {
  /// 1 (label) or 2 (coarse, fine; the fine label is used).
  std::size_t label_bytes = 1;
  ImageGeometry geometry{32, 32, 3};
  std::size_t classes = 10;
  std::vector<double> mean;  // per channel, applied after scaling to [0, 1]
  std::vector<double> stddev;
};

/// Records of label byte(s) followed by channel-major pixel bytes.
Dataset load_raw_images(const std::filesystem::path& path, const RawImageFormat& format);

/// root/<class>/<image>.png, classes in sorted directory order.
Dataset load_png_directory(const std::filesystem::path& root, const RawImageFormat& format);

/// Dispatches on "raw" or "png-dir"; anything else is a ParseError.
Dataset load_image_dataset(const std::filesystem::path& path, const std::string& format_tag,
                           const RawImageFormat& format);

// Dataset file, little-endian:
//   "HKDDATA\0"  u32 version(=1)  u64 count  u64 dim  u64 classes
//   u64 height  u64 width  u64 channels   (zeros when not an image set)
//   count x { u64 id, u64 label, dim f64 }
void save_dataset(const std::filesystem::path& path, const Dataset& data);
Dataset load_dataset(const std::filesystem::path& path);

/// Fisher-Yates over 0..n-1 driven by mt19937_64; identical on every platform.
std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed);

/// Per-epoch shuffled batches; the last short batch is kept. The order for an
/// epoch depends only on (seed, epoch).
class Batcher {
 public:
  Batcher(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed);

  std::vector<std::vector<std::size_t>> epoch(std::uint64_t epoch_index) const;
  std::size_t batches_per_epoch() const;

 private:
  std::size_t size_;
  std::size_t batch_size_;
  std::uint64_t seed_;
};

enum class AugmentKind { none, flip_shift, jitter };

struct AugmentSpec {
  AugmentKind kind = AugmentKind::none;
  std::size_t max_shift = 2;
  double jitter_sigma = 0.1;
};

/// Deterministic per (seed, sample id, epoch).
void augment(std::span<double> features, const std::optional<ImageGeometry>& image, const AugmentSpec& spec,
             std::uint64_t seed, std::uint64_t sample_id, std::uint64_t epoch);

/// Mixes seeds into an independent one (splitmix64).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace hkd
