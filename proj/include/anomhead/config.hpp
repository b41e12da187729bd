#pragma once

// TrainConfig / LossConfig and the INI-style configuration file.
//
//   # comment
//   [train]
//   learning_rate = 1e-3
//   [model]
//   layer_indices = 6,12,18,24
//
// Sections: [train], [loss], [model], [paths], [synth]. Unknown sections or
// keys are rejected with the offending line number.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "anomhead/binary_io.hpp"
#include "anomhead/errors.hpp"
#include "anomhead/synth.hpp"

namespace anomhead {

enum class AacmActivation { Sigmoid, SoftmaxOverPatches };

struct LossConfig {
  double focal_gamma = 2.0;
  double focal_alpha = 0.25;
  double dice_eps = 1.0;
  double lambda_cm = 1.0;
  double lambda_aacm = 1.0;
  AacmActivation aacm_activation = AacmActivation::Sigmoid;
};

struct TrainConfig {
  // optimizer
  double learning_rate = 1e-4;
  std::size_t epochs = 10;
  std::size_t batch_size = 64;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;

  // head
  double temperature = 0.07;
  bool smoothing = false;
  double smoothing_sigma = 4.0;
  LossConfig loss;

  // model
  std::vector<std::uint32_t> layer_indices{6, 12, 18, 24};
  std::size_t d_v = 1024;
  std::size_t d_t = 768;
  std::size_t d_e = 768;
  std::size_t hidden_ratio = 4;  // d_hidden = ceil(d_in / hidden_ratio) ...
  std::size_t d_hidden = 0;      // ... unless set explicitly (> 0)
  double slope = 0.01;

  std::size_t hidden_for(std::size_t d_in) const {
    if (d_hidden > 0) return d_hidden;
    return (d_in + hidden_ratio - 1) / hidden_ratio;
  }
};

inline void validate_loss_config(const LossConfig& c) {
  if (!(c.focal_gamma >= 0.0)) throw ConfigError("loss.focal_gamma must be >= 0");
  if (!(c.focal_alpha > 0.0 && c.focal_alpha < 1.0)) throw ConfigError("loss.focal_alpha must be in (0,1)");
  if (!(c.dice_eps > 0.0)) throw ConfigError("loss.dice_eps must be > 0");
  if (!(c.lambda_cm >= 0.0) || !(c.lambda_aacm >= 0.0)) throw ConfigError("loss.lambda_* must be >= 0");
}

inline void validate_config(const TrainConfig& c) {
  if (!(c.learning_rate > 0.0)) throw ConfigError("train.learning_rate must be > 0");
  if (c.epochs < 1) throw ConfigError("train.epochs must be >= 1");
  if (c.batch_size < 1) throw ConfigError("train.batch_size must be >= 1");
  if (!(c.adam_beta1 > 0.0 && c.adam_beta1 < 1.0)) throw ConfigError("train.adam_beta1 must be in (0,1)");
  if (!(c.adam_beta2 > 0.0 && c.adam_beta2 < 1.0)) throw ConfigError("train.adam_beta2 must be in (0,1)");
  if (!(c.adam_eps > 0.0)) throw ConfigError("train.adam_eps must be > 0");
  if (!(c.temperature > 0.0)) throw ConfigError("train.temperature must be > 0");
  if (!(c.smoothing_sigma > 0.0)) throw ConfigError("train.smoothing_sigma must be > 0");
  validate_loss_config(c.loss);
  if (c.layer_indices.empty()) throw ConfigError("model.layer_indices must not be empty");
  for (std::size_t i = 1; i < c.layer_indices.size(); ++i) {
    if (c.layer_indices[i] <= c.layer_indices[i - 1]) {
      throw ConfigError("model.layer_indices must be strictly increasing");
    }
  }
  if (c.d_v == 0 || c.d_t == 0 || c.d_e == 0) throw ConfigError("model dimensions must be >= 1");
  if (c.hidden_ratio == 0) throw ConfigError("model.hidden_ratio must be >= 1");
  if (!(c.slope > 0.0 && c.slope < 1.0)) throw ConfigError("model.slope must be in (0,1)");
}

struct ConfigFile {
  TrainConfig train;
  SynthSpec synth;
  std::map<std::string, std::string> paths;
};

namespace detail {

struct ConfigLine {
  std::string section;
  std::string key;
  std::string value;
  std::size_t line = 0;
};

inline std::string trim(std::string s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

class ValueParser {
 public:
  ValueParser(const ConfigLine& l, const std::string& source) : l_(l), source_(source) {}

  [[noreturn]] void fail(const std::string& why) const {
    throw ConfigError(source_ + ":" + std::to_string(l_.line) + ": key '" + l_.section + "." + l_.key + "': " + why);
  }

  double real() const {
    try {
      std::size_t pos = 0;
      const double v = std::stod(l_.value, &pos);
      if (pos != l_.value.size() || !std::isfinite(v)) fail("expected a finite number, got '" + l_.value + "'");
      return v;
    } catch (const std::logic_error&) {
      fail("expected a number, got '" + l_.value + "'");
    }
  }

  std::uint64_t integer() const { return integer_of(l_.value); }

  bool boolean() const {
    if (l_.value == "true" || l_.value == "1" || l_.value == "on") return true;
    if (l_.value == "false" || l_.value == "0" || l_.value == "off") return false;
    fail("expected true/false, got '" + l_.value + "'");
  }

  std::vector<std::uint32_t> u32_list() const {
    std::vector<std::uint32_t> out;
    std::stringstream ss(l_.value);
    std::string item;
    while (std::getline(ss, item, ',')) {
      const auto v = integer_of(trim(item));
      if (v > UINT32_MAX) fail("layer index out of range");
      out.push_back(static_cast<std::uint32_t>(v));
    }
    if (out.empty()) fail("expected a comma-separated list");
    return out;
  }

  const std::string& text() const { return l_.value; }

 private:
  std::uint64_t integer_of(const std::string& s) const {
    std::uint64_t v = 0;
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size()) fail("expected a non-negative integer, got '" + s + "'");
    return v;
  }

  const ConfigLine& l_;
  const std::string& source_;
};

inline std::vector<ConfigLine> tokenize_config(const std::string& text, const std::string& source) {
  std::vector<ConfigLine> out;
  std::istringstream is(text);
  std::string raw;
  std::string section;
  std::size_t lineno = 0;
  while (std::getline(is, raw)) {
    ++lineno;
    std::string line = raw;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(source + ":" + std::to_string(lineno) + ": malformed section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key = value");
    }
    out.push_back({section, trim(line.substr(0, eq)), trim(line.substr(eq + 1)), lineno});
  }
  return out;
}

}  // namespace detail

/// Applies one `section.key = value` assignment. Shared by the file parser and
/// command-line `--set` overrides.
inline void apply_config_value(ConfigFile& cfg, const detail::ConfigLine& l, const std::string& source) {
  const detail::ValueParser v(l, source);
  TrainConfig& t = cfg.train;
  SynthSpec& s = cfg.synth;
  const std::string& k = l.key;
  if (l.section == "train") {
    if (k == "learning_rate") t.learning_rate = v.real();
    else if (k == "epochs") t.epochs = v.integer();
    else if (k == "batch_size") t.batch_size = v.integer();
    else if (k == "adam_beta1") t.adam_beta1 = v.real();
    else if (k == "adam_beta2") t.adam_beta2 = v.real();
    else if (k == "adam_eps") t.adam_eps = v.real();
    else if (k == "seed") t.seed = v.integer();
    else if (k == "temperature") t.temperature = v.real();
    else if (k == "smoothing") t.smoothing = v.boolean();
    else if (k == "smoothing_sigma") t.smoothing_sigma = v.real();
    else v.fail("unknown key");
  } else if (l.section == "loss") {
    if (k == "focal_gamma") t.loss.focal_gamma = v.real();
    else if (k == "focal_alpha") t.loss.focal_alpha = v.real();
    else if (k == "dice_eps") t.loss.dice_eps = v.real();
    else if (k == "lambda_cm") t.loss.lambda_cm = v.real();
    else if (k == "lambda_aacm") t.loss.lambda_aacm = v.real();
    else if (k == "aacm_activation") {
      if (v.text() == "sigmoid") t.loss.aacm_activation = AacmActivation::Sigmoid;
      else if (v.text() == "softmax") t.loss.aacm_activation = AacmActivation::SoftmaxOverPatches;
      else v.fail("expected sigmoid or softmax");
    } else v.fail("unknown key");
  } else if (l.section == "model") {
    if (k == "layer_indices") t.layer_indices = v.u32_list();
    else if (k == "d_v") t.d_v = v.integer();
    else if (k == "d_t") t.d_t = v.integer();
    else if (k == "d_e") t.d_e = v.integer();
    else if (k == "hidden_ratio") t.hidden_ratio = v.integer();
    else if (k == "d_hidden") t.d_hidden = v.integer();
    else if (k == "slope") t.slope = v.real();
    else v.fail("unknown key");
  } else if (l.section == "synth") {
    if (k == "n_train") s.n_train = v.integer();
    else if (k == "n_test") s.n_test = v.integer();
    else if (k == "grid") s.grid = v.integer();
    else if (k == "image_size") s.image_size = v.integer();
    else if (k == "d_v") s.d_v = v.integer();
    else if (k == "d_t") s.d_t = v.integer();
    else if (k == "n_layers") s.n_layers = v.integer();
    else if (k == "templates_per_state") s.templates_per_state = v.integer();
    else if (k == "anomaly_rate") s.anomaly_rate = v.real();
    else if (k == "signal_strength") s.signal_strength = v.real();
    else if (k == "noise_per_layer") s.noise_per_layer = v.real();
    else if (k == "text_noise") s.text_noise = v.real();
    else if (k == "seed") s.seed = v.integer();
    else v.fail("unknown key");
  } else if (l.section == "paths") {
    static const char* known[] = {"manifest", "textbank", "ckpt", "out", "log", "report", "bundle"};
    if (std::find(std::begin(known), std::end(known), k) == std::end(known)) v.fail("unknown key");
    cfg.paths[k] = v.text();
  } else {
    throw ConfigError(source + ":" + std::to_string(l.line) + ": key '" + k + "' in unknown section '" +
                      l.section + "'");
  }
}

/// Parses a `section.key=value` override such as `train.epochs=3`.
inline void apply_override(ConfigFile& cfg, const std::string& assignment) {
  const auto eq = assignment.find('=');
  const auto dot = assignment.find('.');
  if (eq == std::string::npos || dot == std::string::npos || dot > eq) {
    throw ConfigError("override '" + assignment + "': expected section.key=value");
  }
  detail::ConfigLine l{detail::trim(assignment.substr(0, dot)), detail::trim(assignment.substr(dot + 1, eq - dot - 1)),
                       detail::trim(assignment.substr(eq + 1)), 0};
  apply_config_value(cfg, l, "override");
}

inline ConfigFile parse_config(const std::string& text, const std::string& source = "config") {
  ConfigFile cfg;
  for (const auto& l : detail::tokenize_config(text, source)) apply_config_value(cfg, l, source);
  return cfg;
}

inline ConfigFile load_config(const std::filesystem::path& path) {
  std::string text;
  try {
    text = read_file_text(path);
  } catch (const FormatError& e) {
    throw ConfigError(e.what());
  }
  return parse_config(text, path.string());
}

}  // namespace anomhead
