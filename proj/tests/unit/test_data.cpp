// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include <png.h>

#include <algorithm>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "doctest.h"
#include "hkd/data.hpp"
#include "hkd/error.hpp"

using namespace hkd;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
  const fs::path p = fs::temp_directory_path() / ("hkd_test_data_" + name);
  fs::remove_all(p);
  return p;
}

Dataset labeled(std::size_t classes, std::size_t per_class) {
  Dataset d(2, classes);
  std::uint64_t id = 0;
  for (std::size_t k = 0; k < per_class; ++k)
    for (std::size_t c = 0; c < classes; ++c) {
      const std::vector<double> x{static_cast<double>(id), static_cast<double>(c)};
      d.push(id++, x, c);
    }
  return d;
}

RawImageFormat tiny_format() {
  RawImageFormat f;
  f.label_bytes = 1;
  f.geometry = {2, 2, 3};
  f.classes = 4;
  f.mean = {0.0, 0.5, 0.25};
  f.stddev = {1.0, 0.5, 0.25};
  return f;
}

}  // namespace

TEST_CASE("meta split sizes follow classes times per-class count") {
  for (auto [classes, expected] : {std::pair{100u, 1000u}, std::pair{200u, 2000u}}) {
    const Dataset d = labeled(classes, 12);
    const MetaSplit s = split_meta(d, 10, 3);
    CHECK(s.meta.size() == expected);
    CHECK(s.train.size() + s.meta.size() == d.size());
    std::vector<std::size_t> per_class(classes, 0);
    for (std::size_t l : s.meta.labels()) ++per_class[l];
    CHECK(std::all_of(per_class.begin(), per_class.end(), [](std::size_t n) { return n == 10; }));

    std::set<std::uint64_t> train_ids(s.train.ids().begin(), s.train.ids().end());
    std::set<std::uint64_t> all = train_ids;
    for (std::uint64_t id : s.meta.ids()) {
      CHECK(train_ids.count(id) == 0);
      all.insert(id);
    }
    CHECK(all.size() == d.size());
  }
}

TEST_CASE("meta split edge cases") {
  const Dataset d = labeled(3, 5);
  const MetaSplit none = split_meta(d, 0, 1);
  CHECK(none.meta.empty());
  CHECK(none.train == d);
  CHECK_THROWS_AS(split_meta(d, 6, 1), ContractError);
  CHECK(split_meta(d, 2, 9).meta == split_meta(d, 2, 9).meta);
  CHECK_FALSE(split_meta(d, 2, 9).meta == split_meta(d, 2, 10).meta);
}

TEST_CASE("synthetic gaussians are deterministic and share means across streams") {
  GaussianSpec g;
  g.classes = 3;
  g.dim = 4;
  g.per_class = 20;
  g.seed = 5;
  const Dataset a = synth_gaussians(g), b = synth_gaussians(g);
  CHECK(a == b);
  CHECK(a.size() == 60);
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.id(i) == i);
  CHECK_FALSE(synth_gaussians(g, 1) == a);
  g.separation = 0.0;
  CHECK_THROWS_AS(synth_gaussians(g), ContractError);
}

TEST_CASE("well separated gaussians are separable by nearest class mean") {
  GaussianSpec g;
  g.classes = 5;
  g.dim = 8;
  g.per_class = 40;
  g.separation = 1000.0;
  g.seed = 2;
  const Dataset train = synth_gaussians(g);
  const Dataset eval = synth_gaussians(g, 1);
  std::vector<std::vector<double>> centroid(5, std::vector<double>(8, 0.0));
  for (std::size_t i = 0; i < train.size(); ++i)
    for (std::size_t d = 0; d < 8; ++d) centroid[train.label(i)][d] += train.features(i)[d] / 40.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < eval.size(); ++i) {
    std::size_t best = 0;
    double best_d = INFINITY;
    for (std::size_t c = 0; c < 5; ++c) {
      double dist = 0.0;
      for (std::size_t d = 0; d < 8; ++d) dist += std::pow(eval.features(i)[d] - centroid[c][d], 2);
      if (dist < best_d) best_d = dist, best = c;
    }
    correct += best == eval.label(i);
  }
  CHECK(correct == eval.size());
}

TEST_CASE("raw image fixture with two records") {
  const fs::path path = scratch("raw.bin");
  std::string bytes;
  for (unsigned char label : {2, 1}) {
    bytes.push_back(static_cast<char>(label));
    for (int i = 0; i < 12; ++i) bytes.push_back(static_cast<char>(label * 10 + i));
  }
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));

  const RawImageFormat f = tiny_format();
  const Dataset d = load_image_dataset(path, "raw", f);
  REQUIRE(d.size() == 2);
  CHECK(d.id(0) == 0);
  CHECK(d.id(1) == 1);
  CHECK(d.label(0) == 2);
  CHECK(d.label(1) == 1);
  CHECK(d.image() == ImageGeometry{2, 2, 3});
  // Channel-major source byte (channel 1, pixel 3) lands at HWC index 3*3+1.
  CHECK(d.features(0)[3 * 3 + 1] == doctest::Approx((27.0 / 255.0 - 0.5) / 0.5).epsilon(1e-15));
  CHECK(d.features(1)[0] == doctest::Approx(10.0 / 255.0).epsilon(1e-15));
  CHECK(load_image_dataset(path, "raw", f) == d);

  std::ofstream(path, std::ios::binary | std::ios::app).write("abc", 3);
  try {
    load_raw_images(path, f);
    FAIL("expected ParseError");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("offset 26") != std::string::npos);
  }
  CHECK_THROWS_AS(load_image_dataset(path, "tar", f), ParseError);
  CHECK_THROWS_AS(load_raw_images(scratch("missing.bin"), f), IoError);
  fs::remove(path);
}

TEST_CASE("two label bytes use the second") {
  const fs::path path = scratch("raw2.bin");
  RawImageFormat f = tiny_format();
  f.label_bytes = 2;
  std::string bytes{static_cast<char>(0), static_cast<char>(3)};
  bytes.append(12, '\x7f');
  std::ofstream(path, std::ios::binary).write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  const Dataset d = load_raw_images(path, f);
  CHECK(d.size() == 1);
  CHECK(d.label(0) == 3);
  fs::remove(path);
}

TEST_CASE("png directory layout") {
  const fs::path root = scratch("pngdir");
  const RawImageFormat f = [] {
    RawImageFormat r = tiny_format();
    r.classes = 2;
    return r;
  }();
  for (int c = 0; c < 2; ++c) {
    fs::create_directories(root / ("class" + std::to_string(c)));
    for (int k = 0; k < 2; ++k) {
      std::vector<unsigned char> rgb(12);
      for (int i = 0; i < 12; ++i) rgb[static_cast<std::size_t>(i)] = static_cast<unsigned char>(c * 100 + k * 20 + i);
      png_image img;
      std::memset(&img, 0, sizeof(img));
      img.version = PNG_IMAGE_VERSION;
      img.width = 2;
      img.height = 2;
      img.format = PNG_FORMAT_RGB;
      const fs::path file = root / ("class" + std::to_string(c)) / ("img" + std::to_string(k) + ".png");
      REQUIRE(png_image_write_to_file(&img, file.string().c_str(), 0, rgb.data(), 0, nullptr));
    }
  }
  const Dataset d = load_image_dataset(root, "png-dir", f);
  REQUIRE(d.size() == 4);
  CHECK(d.label(0) == 0);
  CHECK(d.label(3) == 1);
  CHECK(d.features(2)[0] == doctest::Approx(100.0 / 255.0).epsilon(1e-15));
  CHECK(d.features(3)[4] == doctest::Approx((124.0 / 255.0 - 0.5) / 0.5).epsilon(1e-15));

  RawImageFormat three = f;
  three.classes = 3;
  CHECK_THROWS_AS(load_png_directory(root, three), ParseError);
  fs::remove_all(root);
}

TEST_CASE("dataset file round trip and truncation") {
  GaussianSpec g;
  g.classes = 3;
  g.dim = 5;
  g.per_class = 7;
  const Dataset d = synth_gaussians(g);
  const fs::path path = scratch("ds.bin");
  save_dataset(path, d);
  CHECK(load_dataset(path) == d);

  fs::resize_file(path, fs::file_size(path) - 4);
  CHECK_THROWS_AS(load_dataset(path), ParseError);
  fs::remove(path);
}

TEST_CASE("batches cover every sample once per epoch and replay identically") {
  const Batcher b(130, 64, 4);
  CHECK(b.batches_per_epoch() == 3);
  for (std::uint64_t e = 0; e < 3; ++e) {
    const auto batches = b.epoch(e);
    REQUIRE(batches.size() == 3);
    CHECK(batches[2].size() == 2);
    std::vector<std::size_t> all;
    for (const auto& batch : batches) all.insert(all.end(), batch.begin(), batch.end());
    std::sort(all.begin(), all.end());
    for (std::size_t i = 0; i < all.size(); ++i) CHECK(all[i] == i);
    CHECK(Batcher(130, 64, 4).epoch(e) == batches);
  }
  CHECK_FALSE(b.epoch(0) == b.epoch(1));
}

TEST_CASE("permutation is a fixed function of the seed") {
  const auto p = permutation(10, 123);
  CHECK(p == permutation(10, 123));
  std::vector<std::size_t> sorted = p;
  std::sort(sorted.begin(), sorted.end());
  for (std::size_t i = 0; i < 10; ++i) CHECK(sorted[i] == i);
  CHECK(permutation(0, 1).empty());
}

TEST_CASE("augmentation is deterministic per sample and epoch") {
  const ImageGeometry g{4, 4, 1};
  std::vector<double> base(16);
  for (std::size_t i = 0; i < 16; ++i) base[i] = static_cast<double>(i + 1);
  for (AugmentKind kind : {AugmentKind::flip_shift, AugmentKind::jitter}) {
    const AugmentSpec spec{kind, 1, 0.1};
    std::vector<double> a = base, b = base, c = base;
    augment(a, g, spec, 7, 3, 2);
    augment(b, g, spec, 7, 3, 2);
    CHECK(a == b);
    bool differs = false;
    for (std::uint64_t e = 0; e < 8 && !differs; ++e) {
      c = base;
      augment(c, g, spec, 7, 3, e);
      differs = c != a;
    }
    CHECK(differs);
  }
  std::vector<double> none = base;
  augment(none, g, AugmentSpec{}, 1, 1, 1);
  CHECK(none == base);
  CHECK_THROWS_AS(augment(none, std::nullopt, AugmentSpec{AugmentKind::flip_shift, 1, 0.1}, 1, 1, 1), ContractError);
}
