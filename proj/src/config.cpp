// Copyright 2026 The HKD Authors.
// SPDX-License-Identifier: Apache-2.0

#include "hkd/config.hpp"

#include <charconv>
#include <concepts>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

#include "CLI11.hpp"
#include "hkd/error.hpp"

namespace hkd {

namespace {

// Flattened "section.key" -> values, with a record of which keys were read so
// that misspelled keys are reported instead of silently ignored.
class Fields {
 public:
  explicit Fields(std::string_view text) {
    std::istringstream in{std::string(text)};
    std::vector<CLI::ConfigItem> items;
    try {
      items = CLI::ConfigINI().from_config(in);
    } catch (const CLI::Error& e) {
      throw ConfigError(std::string("config: ") + e.what());
    }
    for (const auto& item : items) {
      if (item.name == "++" || item.name == "--") continue;
      std::string key;
      for (const auto& p : item.parents) key += p + ".";
      key += item.name;
      if (values_.count(key)) throw ConfigError(key + ": given more than once");
      values_[key] = item.inputs;
    }
  }

  const std::vector<std::string>* find(const std::string& key) {
    const auto it = values_.find(key);
    if (it == values_.end()) return nullptr;
    used_.insert(key);
    return &it->second;
  }

  std::string scalar(const std::string& key, const std::vector<std::string>& v) const {
    if (v.size() != 1) throw ConfigError(key + ": expected a single value");
    return v[0];
  }

  void get(const std::string& key, std::string& out) {
    if (auto v = find(key)) out = scalar(key, *v);
  }

  void get(const std::string& key, double& out) {
    if (auto v = find(key)) out = to_double(key, scalar(key, *v));
  }

  template <std::unsigned_integral T>
  void get(const std::string& key, T& out) {
    if (auto v = find(key)) out = static_cast<T>(to_size(key, scalar(key, *v)));
  }

  void get(const std::string& key, bool& out) {
    if (auto v = find(key)) {
      const std::string s = scalar(key, *v);
      if (s == "true" || s == "1" || s == "yes" || s == "on")
        out = true;
      else if (s == "false" || s == "0" || s == "no" || s == "off")
        out = false;
      else
        throw ConfigError(key + ": expected a boolean, got '" + s + "'");
    }
  }

  void get(const std::string& key, std::vector<std::size_t>& out) {
    if (auto v = find(key)) {
      out.clear();
      for (const auto& s : *v)
        if (!s.empty()) out.push_back(to_size(key, s));
    }
  }

  void get(const std::string& key, std::vector<double>& out) {
    if (auto v = find(key)) {
      out.clear();
      for (const auto& s : *v)
        if (!s.empty()) out.push_back(to_double(key, s));
    }
  }

  void reject_unused() const {
    for (const auto& [key, _] : values_)
      if (!used_.count(key)) throw ConfigError(key + ": unknown key");
  }

  static double to_double(const std::string& key, const std::string& s) {
    double v = 0.0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size())
      throw ConfigError(key + ": expected a number, got '" + s + "'");
    return v;
  }

  static std::uint64_t to_size(const std::string& key, const std::string& s) {
    std::uint64_t v = 0;
    const auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || end != s.data() + s.size())
      throw ConfigError(key + ": expected a non-negative integer, got '" + s + "'");
    return v;
  }

 private:
  std::map<std::string, std::vector<std::string>> values_;
  std::set<std::string> used_;
};

void read_sgd(Fields& f, const std::string& section, SgdConfig& sgd) {
  f.get(section + ".lr", sgd.lr);
  f.get(section + ".momentum", sgd.momentum);
  f.get(section + ".weight_decay", sgd.weight_decay);
  f.get(section + ".milestones", sgd.milestones);
  f.get(section + ".decay", sgd.decay);
}

void read_model(Fields& f, const std::string& section, ModelConfig& m) {
  f.get(section + ".hidden", m.hidden);
  f.get(section + ".feature_tap", m.feature_tap);
  f.get(section + ".conv_channels", m.conv_channels);
  f.get(section + ".kernel", m.kernel);
  f.get(section + ".stride", m.stride);
  f.get(section + ".pad", m.pad);
  read_sgd(f, section, m.sgd);
}

AugmentKind parse_augment(const std::string& s) {
  if (s == "none") return AugmentKind::none;
  if (s == "flip-shift") return AugmentKind::flip_shift;
  if (s == "jitter") return AugmentKind::jitter;
  throw ConfigError("data.augment: unknown value '" + s + "' (expected none, flip-shift or jitter)");
}

MetaTarget parse_target(const std::string& s) {
  if (s == "true-class") return MetaTarget::true_class;
  if (s == "one-hot") return MetaTarget::one_hot;
  throw ConfigError("meta.target: unknown value '" + s + "' (expected true-class or one-hot)");
}

}  // namespace

RunConfig parse_config(std::string_view text) {
  Fields f(text);
  RunConfig c;
  c.text = std::string(text);
  c.teacher.hidden = {256, 256};
  c.teacher.feature_tap = 1;
  c.teacher.epochs = 30;
  c.student.hidden = {32};
  c.student.feature_tap = 0;

  f.get("run.seed", c.seed);
  std::string mode = std::string(mode_name(c.mode));
  f.get("run.mode", mode);
  c.mode = parse_mode(mode);
  f.get("run.epochs", c.epochs);
  f.get("run.batch_size", c.batch_size);
  f.get("run.temperature", c.temperature);

  DataConfig& d = c.data;
  f.get("data.source", d.source);
  f.get("data.classes", d.gaussian.classes);
  f.get("data.dim", d.gaussian.dim);
  f.get("data.train_per_class", d.gaussian.per_class);
  f.get("data.separation", d.gaussian.separation);
  f.get("data.modes", d.gaussian.modes);
  f.get("data.label_noise", d.gaussian.label_noise);
  if (f.find("data.seed")) {
    std::uint64_t s = 0;
    f.get("data.seed", s);
    d.seed = s;
  }
  f.get("data.eval_per_class", d.eval_per_class);
  f.get("data.meta_per_class", d.meta_per_class);
  f.get("data.path", d.path);
  f.get("data.eval_path", d.eval_path);
  f.get("data.label_bytes", d.image.label_bytes);
  f.get("data.height", d.image.geometry.height);
  f.get("data.width", d.image.geometry.width);
  f.get("data.channels", d.image.geometry.channels);
  d.image.classes = d.gaussian.classes;
  f.get("data.mean", d.image.mean);
  f.get("data.stddev", d.image.stddev);
  std::string augment = "none";
  f.get("data.augment", augment);
  d.augment.kind = parse_augment(augment);
  f.get("data.max_shift", d.augment.max_shift);
  f.get("data.jitter_sigma", d.augment.jitter_sigma);

  read_model(f, "teacher", c.teacher);
  f.get("teacher.epochs", c.teacher.epochs);
  read_model(f, "student", c.student);
  c.student.epochs = c.epochs;

  c.meta.classes = d.gaussian.classes;
  f.get("meta.hidden", c.meta.hidden);
  f.get("meta.range", c.meta.range);
  f.get("meta.interval", c.interval);
  f.get("meta.lr", c.meta_optimizer.lr);
  f.get("meta.beta1", c.meta_optimizer.beta1);
  f.get("meta.beta2", c.meta_optimizer.beta2);
  f.get("meta.eps", c.meta_optimizer.eps);
  std::string target = "true-class";
  f.get("meta.target", target);
  c.meta_target = parse_target(target);

  f.get("ensemble.epsilon", c.ensemble.epsilon);
  f.get("ensemble.threshold", c.ensemble.threshold);
  f.get("ensemble.normalize_entropy", c.ensemble.normalize_entropy);

  f.reject_unused();
  c.validate();
  return c;
}

void RunConfig::validate() const {
  if (batch_size == 0) throw ConfigError("run.batch_size: must be positive");
  if (!(temperature > 0.0)) throw ConfigError("run.temperature: must be positive");
  if (interval == 0) throw ConfigError("meta.interval: must be at least 1");
  if (data.source != "synthetic" && data.source != "raw" && data.source != "png-dir" && data.source != "file")
    throw ConfigError("data.source: unknown value '" + data.source + "' (expected synthetic, raw, png-dir or file)");
  if (data.source != "synthetic" && (data.path.empty() || data.eval_path.empty()))
    throw ConfigError("data.path: required together with data.eval_path for source '" + data.source + "'");
  if (data.source == "synthetic") {
    if (!(data.gaussian.separation > 0.0)) throw ConfigError("data.separation: must be positive");
    if (data.gaussian.dim == 0) throw ConfigError("data.dim: must be positive");
    if (data.gaussian.classes < 2) throw ConfigError("data.classes: must be at least 2");
  }
  if (teacher.hidden.empty() && teacher.conv_channels.empty()) throw ConfigError("teacher.hidden: needs a hidden layer");
  if (student.hidden.empty() && student.conv_channels.empty()) throw ConfigError("student.hidden: needs a hidden layer");
  auto sgd = [](const SgdConfig& s, const std::string& section) {
    try {
      s.validate();
    } catch (const ConfigError& e) {
      throw ConfigError(section + "." + std::string(e.what()).substr(5));
    }
  };
  sgd(teacher.sgd, "teacher");
  sgd(student.sgd, "student");
  try {
    meta.validate();
    meta_optimizer.validate();
    ensemble.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("meta/ensemble: ") + e.what());
  }
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

Datasets load_datasets(const RunConfig& c) {
  const DataConfig& d = c.data;
  Dataset train, eval;
  if (d.source == "synthetic") {
    GaussianSpec g = d.gaussian;
    g.seed = c.data_seed();
    train = synth_gaussians(g, 0);
    g.per_class = d.eval_per_class;
    g.label_noise = 0.0;
    eval = synth_gaussians(g, 1);
  } else if (d.source == "file") {
    train = load_dataset(d.path);
    eval = load_dataset(d.eval_path);
  } else {
    train = load_image_dataset(d.path, d.source, d.image);
    eval = load_image_dataset(d.eval_path, d.source, d.image);
  }
  if (train.classes() != eval.classes() || train.feature_dim() != eval.feature_dim())
    throw ConfigError("data.eval_path: evaluation data does not match the training data layout");
  MetaSplit split = split_meta(train, d.meta_per_class, mix_seed(c.data_seed(), 0x73706c6974));
  return Datasets{std::move(split.train), std::move(split.meta), std::move(eval)};
}

ClassifierSpec make_spec(const ModelConfig& m, const Dataset& data) {
  ClassifierSpec s;
  s.input_dim = data.feature_dim();
  s.hidden_dims = m.hidden;
  s.classes = data.classes();
  s.feature_tap = m.feature_tap;
  if (!m.conv_channels.empty()) {
    if (!data.image()) throw ConfigError("conv_channels: the dataset has no image geometry");
    const ImageGeometry g = *data.image();
    s.conv = ConvTrunkSpec{g.height, g.width, g.channels, m.conv_channels, m.kernel, m.stride, m.pad};
  }
  s.validate();
  return s;
}

}  // namespace hkd
