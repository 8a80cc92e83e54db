// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/data.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "hkd/error.hpp"

namespace hkd {

Dataset::Dataset(std::size_t feature_dim, std::size_t classes) : feature_dim_(feature_dim), classes_(classes) {
  if (feature_dim == 0) throw ContractError("dataset: feature dimension must be positive");
  if (classes < 2) throw ContractError("dataset: need at least two classes");
}

void Dataset::push(std::uint64_t id, std::span<const double> features, std::size_t label) {
  if (features.size() != feature_dim_)
    throw ShapeError("dataset: sample has " + std::to_string(features.size()) + " features, expected " +
                     std::to_string(feature_dim_));
  if (label >= classes_) throw ContractError("dataset: label " + std::to_string(label) + " out of range");
  features_.insert(features_.end(), features.begin(), features.end());
  labels_.push_back(label);
  ids_.push_back(id);
}

void Dataset::set_image(ImageGeometry g) {
  if (g.size() != feature_dim_) throw ShapeError("dataset: image geometry does not match feature dimension");
  image_ = g;
}

Dataset Dataset::subset(std::span<const std::size_t> positions) const {
  Dataset out(feature_dim_, classes_);
  out.image_ = image_;
  for (std::size_t p : positions) out.push(ids_.at(p), features(p), labels_[p]);
  return out;
}

Tensor Dataset::batch(std::span<const std::size_t> positions) const {
  Tensor out(positions.size(), feature_dim_);
  for (std::size_t r = 0; r < positions.size(); ++r) {
    const auto src = features(positions[r]);
    std::copy(src.begin(), src.end(), out.values().begin() + static_cast<std::ptrdiff_t>(r * feature_dim_));
  }
  return out;
}

std::vector<std::size_t> Dataset::batch_labels(std::span<const std::size_t> positions) const {
  std::vector<std::size_t> out;
  out.reserve(positions.size());
  for (std::size_t p : positions) out.push_back(labels_[p]);
  return out;
}

Tensor Dataset::all_features() const { return Tensor(size(), feature_dim_, features_); }

// ---------------------------------------------------------------------------

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  std::uint64_t z = a + 0x9e3779b97f4a7c15ull * (b + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

std::vector<std::size_t> permutation(std::size_t n, std::uint64_t seed) {
  std::vector<std::size_t> p(n);
  for (std::size_t i = 0; i < n; ++i) p[i] = i;
  std::mt19937_64 rng(seed);
  for (std::size_t i = n; i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng() % i);
    std::swap(p[i - 1], p[j]);
  }
  return p;
}

MetaSplit split_meta(const Dataset& data, std::size_t per_class, std::uint64_t seed) {
  std::vector<std::vector<std::size_t>> by_class(data.classes());
  for (std::size_t i = 0; i < data.size(); ++i) by_class[data.label(i)].push_back(i);

  std::vector<bool> in_meta(data.size(), false);
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    const auto& members = by_class[c];
    if (members.size() < per_class)
      throw ContractError("split_meta: class " + std::to_string(c) + " has " + std::to_string(members.size()) +
                          " samples, fewer than " + std::to_string(per_class));
    const auto order = permutation(members.size(), mix_seed(seed, c));
    for (std::size_t k = 0; k < per_class; ++k) in_meta[members[order[k]]] = true;
  }

  std::vector<std::size_t> train_pos, meta_pos;
  for (std::size_t i = 0; i < data.size(); ++i) (in_meta[i] ? meta_pos : train_pos).push_back(i);
  return MetaSplit{data.subset(train_pos), data.subset(meta_pos)};
}

Dataset synth_gaussians(const GaussianSpec& spec, std::uint64_t stream) {
  if (!(spec.separation > 0.0)) throw ContractError("synth_gaussians: separation must be positive");
  if (spec.modes == 0) throw ContractError("synth_gaussians: modes must be positive");
  if (!(spec.label_noise >= 0.0 && spec.label_noise <= 1.0))
    throw ContractError("synth_gaussians: label_noise must lie in [0, 1]");

  std::normal_distribution<double> normal(0.0, 1.0);
  std::mt19937_64 mean_rng(mix_seed(spec.seed, 0x6d65616e));
  std::vector<std::vector<double>> means(spec.classes * spec.modes, std::vector<double>(spec.dim));
  for (auto& m : means) {
    double norm = 0.0;
    for (double& v : m) {
      v = normal(mean_rng);
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : m) v *= spec.separation / norm;
  }

  std::mt19937_64 rng(mix_seed(spec.seed, 0x73616d70 + stream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Dataset out(spec.dim, spec.classes);
  std::vector<double> x(spec.dim);
  std::uint64_t id = 0;
  for (std::size_t c = 0; c < spec.classes; ++c)
    for (std::size_t k = 0; k < spec.per_class; ++k) {
      const auto& m = means[c * spec.modes + k % spec.modes];
      for (std::size_t d = 0; d < spec.dim; ++d) x[d] = m[d] + normal(rng);
      std::size_t label = c;
      if (spec.label_noise > 0.0 && unit(rng) < spec.label_noise)
        label = static_cast<std::size_t>(rng() % spec.classes);
      out.push(id++, x, label);
    }
  return out;
}

// ---------------------------------------------------------------------------
// Image loaders

namespace {

void check_normalization(const RawImageFormat& f) {
  if (f.label_bytes != 1 && f.label_bytes != 2) throw ConfigError("image format: label_bytes must be 1 or 2");
  if (f.geometry.size() == 0) throw ConfigError("image format: geometry must be positive");
  if (f.mean.size() != f.geometry.channels || f.stddev.size() != f.geometry.channels)
    throw ConfigError("image format: need one mean and stddev per channel");
  for (double s : f.stddev)
    if (!(s > 0.0)) throw ConfigError("image format: stddev must be positive");
}

double normalize_pixel(unsigned char v, std::size_t channel, const RawImageFormat& f) {
  return (static_cast<double>(v) / 255.0 - f.mean[channel]) / f.stddev[channel];
}

}  // namespace

Dataset load_raw_images(const std::filesystem::path& path, const RawImageFormat& format) {
  check_normalization(format);
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open image file " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string bytes = ss.str();

  const ImageGeometry g = format.geometry;
  const std::size_t record = format.label_bytes + g.size();
  if (bytes.size() % record != 0) {
    const std::size_t offset = bytes.size() - bytes.size() % record;
    throw ParseError("raw images: truncated record at offset " + std::to_string(offset) + " (file " +
                     std::to_string(bytes.size()) + " bytes, record " + std::to_string(record) + " bytes)");
  }
  Dataset out(g.size(), format.classes);
  out.set_image(g);
  std::vector<double> x(g.size());
  const std::size_t plane = g.height * g.width;
  for (std::size_t r = 0; r * record < bytes.size(); ++r) {
    const auto* rec = reinterpret_cast<const unsigned char*>(bytes.data() + r * record);
    const std::size_t label = rec[format.label_bytes - 1];
    if (label >= format.classes)
      throw ParseError("raw images: label " + std::to_string(label) + " out of range at offset " +
                       std::to_string(r * record + format.label_bytes - 1));
    const unsigned char* pixels = rec + format.label_bytes;
    for (std::size_t ch = 0; ch < g.channels; ++ch)
      for (std::size_t p = 0; p < plane; ++p) x[p * g.channels + ch] = normalize_pixel(pixels[ch * plane + p], ch, format);
    out.push(r, x, label);
  }
  return out;
}

Dataset load_png_directory(const std::filesystem::path& root, const RawImageFormat& format) {
  check_normalization(format);
  namespace fs = std::filesystem;
  if (!fs::is_directory(root)) throw IoError("not a directory: " + root.string());
  std::vector<fs::path> classes;
  for (const auto& e : fs::directory_iterator(root))
    if (e.is_directory()) classes.push_back(e.path());
  std::sort(classes.begin(), classes.end());
  if (classes.size() != format.classes)
    throw ParseError("png-dir: found " + std::to_string(classes.size()) + " class directories, expected " +
                     std::to_string(format.classes));

  const ImageGeometry g = format.geometry;
  if (g.channels != 1 && g.channels != 3) throw ConfigError("png-dir: channels must be 1 or 3");
  Dataset out(g.size(), format.classes);
  out.set_image(g);
  std::vector<unsigned char> buffer(g.size());
  std::vector<double> x(g.size());
  std::uint64_t id = 0;
  for (std::size_t c = 0; c < classes.size(); ++c) {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(classes[c]))
      if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& file : files) {
      png_image image;
      std::memset(&image, 0, sizeof(image));
      image.version = PNG_IMAGE_VERSION;
      if (!png_image_begin_read_from_file(&image, file.string().c_str()))
        throw ParseError("png-dir: cannot decode " + file.string() + ": " + image.message);
      if (image.width != g.width || image.height != g.height) {
        png_image_free(&image);
        throw ParseError("png-dir: " + file.string() + " is " + std::to_string(image.width) + "x" +
                         std::to_string(image.height) + ", expected " + std::to_string(g.width) + "x" +
                         std::to_string(g.height));
      }
      image.format = g.channels == 3 ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
      if (!png_image_finish_read(&image, nullptr, buffer.data(), 0, nullptr))
        throw ParseError("png-dir: cannot decode " + file.string() + ": " + image.message);
      for (std::size_t i = 0; i < g.size(); ++i) x[i] = normalize_pixel(buffer[i], i % g.channels, format);
      out.push(id++, x, c);
    }
  }
  return out;
}

Dataset load_image_dataset(const std::filesystem::path& path, const std::string& format_tag,
                           const RawImageFormat& format) {
  if (format_tag == "raw") return load_raw_images(path, format);
  if (format_tag == "png-dir") return load_png_directory(path, format);
  throw ParseError("unknown image format tag '" + format_tag + "'");
}

// ---------------------------------------------------------------------------

namespace {

constexpr char kDataMagic[8] = {'H', 'K', 'D', 'D', 'A', 'T', 'A', '\0'};
static_assert(std::endian::native == std::endian::little, "dataset codec assumes a little-endian host");

template <class T>
void put(std::string& out, T v) {
  char buf[sizeof(T)];
  std::memcpy(buf, &v, sizeof(T));
  out.append(buf, sizeof(T));
}

template <class T>
T get(const std::string& in, std::size_t& pos) {
  if (in.size() - pos < sizeof(T)) throw ParseError("dataset file truncated at offset " + std::to_string(pos));
  T v;
  std::memcpy(&v, in.data() + pos, sizeof(T));
  pos += sizeof(T);
  return v;
}

}  // namespace

void save_dataset(const std::filesystem::path& path, const Dataset& data) {
  std::string out(kDataMagic, sizeof(kDataMagic));
  put<std::uint32_t>(out, 1);
  put<std::uint64_t>(out, data.size());
  put<std::uint64_t>(out, data.feature_dim());
  put<std::uint64_t>(out, data.classes());
  const ImageGeometry g = data.image().value_or(ImageGeometry{});
  put<std::uint64_t>(out, g.height);
  put<std::uint64_t>(out, g.width);
  put<std::uint64_t>(out, g.channels);
  for (std::size_t i = 0; i < data.size(); ++i) {
    put<std::uint64_t>(out, data.id(i));
    put<std::uint64_t>(out, data.label(i));
    for (double v : data.features(i)) put<double>(out, v);
  }
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot write dataset " + path.string());
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw IoError("short write to " + path.string());
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open dataset " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  const std::string in = ss.str();
  if (in.size() < sizeof(kDataMagic) || std::memcmp(in.data(), kDataMagic, sizeof(kDataMagic)) != 0)
    throw ParseError("dataset file: bad magic at offset 0");
  std::size_t pos = sizeof(kDataMagic);
  const auto version = get<std::uint32_t>(in, pos);
  if (version != 1) throw ParseError("dataset file: unsupported version " + std::to_string(version) + " at offset 8");
  const auto count = get<std::uint64_t>(in, pos);
  const auto dim = get<std::uint64_t>(in, pos);
  const auto classes = get<std::uint64_t>(in, pos);
  const ImageGeometry g{get<std::uint64_t>(in, pos), get<std::uint64_t>(in, pos), get<std::uint64_t>(in, pos)};
  Dataset data(dim, classes);
  if (g.size() != 0) data.set_image(g);
  std::vector<double> x(dim);
  for (std::uint64_t i = 0; i < count; ++i) {
    const auto id = get<std::uint64_t>(in, pos);
    const auto label = get<std::uint64_t>(in, pos);
    for (double& v : x) v = get<double>(in, pos);
    data.push(id, x, label);
  }
  if (pos != in.size()) throw ParseError("dataset file: trailing bytes at offset " + std::to_string(pos));
  return data;
}

// ---------------------------------------------------------------------------

Batcher::Batcher(std::size_t dataset_size, std::size_t batch_size, std::uint64_t seed)
    : size_(dataset_size), batch_size_(batch_size), seed_(seed) {
  if (batch_size == 0) throw ContractError("batcher: batch size must be positive");
}

std::size_t Batcher::batches_per_epoch() const { return (size_ + batch_size_ - 1) / batch_size_; }

std::vector<std::vector<std::size_t>> Batcher::epoch(std::uint64_t epoch_index) const {
  const auto order = permutation(size_, mix_seed(seed_, epoch_index));
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < size_; start += batch_size_) {
    const std::size_t end = std::min(size_, start + batch_size_);
    out.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(start), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return out;
}

void augment(std::span<double> features, const std::optional<ImageGeometry>& image, const AugmentSpec& spec,
             std::uint64_t seed, std::uint64_t sample_id, std::uint64_t epoch) {
  if (spec.kind == AugmentKind::none) return;
  std::mt19937_64 rng(mix_seed(mix_seed(seed, sample_id), epoch));
  if (spec.kind == AugmentKind::jitter) {
    std::normal_distribution<double> normal(0.0, spec.jitter_sigma);
    for (double& v : features) v += normal(rng);
    return;
  }
  if (!image) throw ContractError("augment: flip_shift needs image geometry");
  const ImageGeometry g = *image;
  const bool flip = (rng() & 1u) != 0;
  const long range = static_cast<long>(spec.max_shift);
  const long dy = static_cast<long>(rng() % (2 * spec.max_shift + 1)) - range;
  const long dx = static_cast<long>(rng() % (2 * spec.max_shift + 1)) - range;
  std::vector<double> src(features.begin(), features.end());
  for (std::size_t y = 0; y < g.height; ++y)
    for (std::size_t x = 0; x < g.width; ++x) {
      const long sy = static_cast<long>(y) + dy;
      long sx = static_cast<long>(x) + dx;
      if (flip) sx = static_cast<long>(g.width) - 1 - sx;
      for (std::size_t c = 0; c < g.channels; ++c) {
        const bool inside = sy >= 0 && sy < static_cast<long>(g.height) && sx >= 0 && sx < static_cast<long>(g.width);
        features[(y * g.width + x) * g.channels + c] =
            inside ? src[(static_cast<std::size_t>(sy) * g.width + static_cast<std::size_t>(sx)) * g.channels + c] : 0.0;
      }
    }
}

}  // namespace hkd
