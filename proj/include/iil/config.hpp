#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "iil/error.hpp"
#include "json.hpp"

namespace iil {

/// Everything a run needs. Parsed from flat `key = value` files; see
/// docs/config.md for the key reference.
struct TrainConfig {
  // data
  std::string source = "synthetic";  // synthetic | idx
  std::string synthetic_kind = "glyphs";  // glyphs | planted
  std::size_t image_size = 15;
  double noise = 0.15;
  std::size_t train_size = 1000;
  std::size_t val_size = 200;
  std::size_t test_size = 1000;
  std::string train_images, train_labels, test_images, test_labels;
  std::string augmentation = "random_rotation";  // none | random_rotation
  double subset_fraction = 1.0;
  std::uint64_t seed = 1;

  // optimizer
  double lr = 0.02;
  double momentum = 0.9;
  std::size_t batch_size = 16;
  std::size_t epochs_phase1 = 10;
  std::size_t epochs_phase2 = 10;
  double exponent_lr_scale = 0.1;
  bool baseline_matched_epochs = true;
  std::size_t head_warmup_steps = 100;

  // backbone
  int orientations = 8;
  std::size_t lift_channels = 6;
  std::vector<std::size_t> gconv_channels{8};
  std::size_t lift_kernel = 5;
  std::size_t gconv_kernel = 3;

  // invariant layer and selection
  std::size_t num_monomials = 5;
  int num_angles = 8;
  int monomial_order = 2;
  int group_order = 3;
  double r_max = 3.0;
  double epsilon = 1e-3;
  double ridge_lambda = 1e-4;
  std::size_t pool_size = 40;
  int patience = 10;

  // evaluation and diagnostics
  std::size_t runs = 1;
  std::vector<double> audit_angles{22.5, 45.0, 90.0};
  std::string output_dir = "runs";

  void validate() const;
};

namespace detail {

template <class T>
T parse_number(const std::string& key, const std::string& text) {
  T v{};
  const char* end = text.data() + text.size();
  auto [ptr, ec] = std::from_chars(text.data(), end, v);
  if (ec != std::errc{} || ptr != end) throw ConfigError("config: bad value '" + text + "' for " + key);
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  try {
    std::size_t used = 0;
    const double v = std::stod(text, &used);
    if (used != text.size()) throw ConfigError("");
    return v;
  } catch (const std::exception&) {
    throw ConfigError("config: bad value '" + text + "' for " + key);
  }
}

inline bool parse_bool(const std::string& key, const std::string& text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigError("config: bad value '" + text + "' for " + key + " (want true/false)");
}

template <class T, class F>
std::vector<T> parse_list(const std::string& text, F one) {
  std::vector<T> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(one(item));
  return out;
}

inline std::string json_value_text(const nlohmann::json& value) {
  if (value.is_string()) return value.get<std::string>();
  if (!value.is_array()) return value.dump();
  std::string text;
  for (std::size_t i = 0; i < value.size(); ++i) text += (i ? "," : "") + value[i].dump();
  return text;
}

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

struct ConfigField {
  std::function<void(TrainConfig&, const std::string&)> set;
  std::function<nlohmann::json(const TrainConfig&)> get;
};

template <class T>
ConfigField field(T TrainConfig::*member) {
  return {[member](TrainConfig& c, const std::string& v) {
            // key name is attached by the caller when rethrowing
            if constexpr (std::is_same_v<T, std::string>) c.*member = v;
            else if constexpr (std::is_same_v<T, bool>) c.*member = parse_bool("value", v);
            else if constexpr (std::is_floating_point_v<T>) c.*member = parse_real("value", v);
            else if constexpr (std::is_same_v<T, std::vector<std::size_t>>)
              c.*member = parse_list<std::size_t>(v, [](const std::string& s) { return parse_number<std::size_t>("value", trim(s)); });
            else if constexpr (std::is_same_v<T, std::vector<double>>)
              c.*member = parse_list<double>(v, [](const std::string& s) { return parse_real("value", trim(s)); });
            else c.*member = parse_number<T>("value", v);
          },
          [member](const TrainConfig& c) { return nlohmann::json(c.*member); }};
}

inline const std::map<std::string, ConfigField>& config_fields() {
  static const std::map<std::string, ConfigField> fields = {
      {"source", field(&TrainConfig::source)},
      {"synthetic_kind", field(&TrainConfig::synthetic_kind)},
      {"image_size", field(&TrainConfig::image_size)},
      {"noise", field(&TrainConfig::noise)},
      {"train_size", field(&TrainConfig::train_size)},
      {"val_size", field(&TrainConfig::val_size)},
      {"test_size", field(&TrainConfig::test_size)},
      {"train_images", field(&TrainConfig::train_images)},
      {"train_labels", field(&TrainConfig::train_labels)},
      {"test_images", field(&TrainConfig::test_images)},
      {"test_labels", field(&TrainConfig::test_labels)},
      {"augmentation", field(&TrainConfig::augmentation)},
      {"subset_fraction", field(&TrainConfig::subset_fraction)},
      {"seed", field(&TrainConfig::seed)},
      {"lr", field(&TrainConfig::lr)},
      {"momentum", field(&TrainConfig::momentum)},
      {"batch_size", field(&TrainConfig::batch_size)},
      {"epochs_phase1", field(&TrainConfig::epochs_phase1)},
      {"epochs_phase2", field(&TrainConfig::epochs_phase2)},
      {"exponent_lr_scale", field(&TrainConfig::exponent_lr_scale)},
      {"baseline_matched_epochs", field(&TrainConfig::baseline_matched_epochs)},
      {"head_warmup_steps", field(&TrainConfig::head_warmup_steps)},
      {"orientations", field(&TrainConfig::orientations)},
      {"lift_channels", field(&TrainConfig::lift_channels)},
      {"gconv_channels", field(&TrainConfig::gconv_channels)},
      {"lift_kernel", field(&TrainConfig::lift_kernel)},
      {"gconv_kernel", field(&TrainConfig::gconv_kernel)},
      {"num_monomials", field(&TrainConfig::num_monomials)},
      {"num_angles", field(&TrainConfig::num_angles)},
      {"monomial_order", field(&TrainConfig::monomial_order)},
      {"group_order", field(&TrainConfig::group_order)},
      {"r_max", field(&TrainConfig::r_max)},
      {"epsilon", field(&TrainConfig::epsilon)},
      {"ridge_lambda", field(&TrainConfig::ridge_lambda)},
      {"pool_size", field(&TrainConfig::pool_size)},
      {"patience", field(&TrainConfig::patience)},
      {"runs", field(&TrainConfig::runs)},
      {"audit_angles", field(&TrainConfig::audit_angles)},
      {"output_dir", field(&TrainConfig::output_dir)},
  };
  return fields;
}

}  // namespace detail

inline void TrainConfig::validate() const {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("config: " + what);
  };
  require(source == "synthetic" || source == "idx", "source must be synthetic or idx");
  require(synthetic_kind == "glyphs" || synthetic_kind == "planted", "synthetic_kind must be glyphs or planted");
  require(augmentation == "none" || augmentation == "random_rotation", "augmentation must be none or random_rotation");
  require(image_size >= 3, "image_size must be >= 3");
  require(noise >= 0.0, "noise must be >= 0");
  require(train_size >= 1 && val_size >= 1 && test_size >= 1, "split sizes must be >= 1");
  require(subset_fraction > 0.0 && subset_fraction <= 1.0, "subset_fraction must lie in (0, 1]");
  require(lr > 0.0, "lr must be > 0");
  require(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0, 1)");
  require(batch_size >= 1, "batch_size must be >= 1");
  require(exponent_lr_scale >= 0.0, "exponent_lr_scale must be >= 0");
  require(orientations >= 1, "orientations must be >= 1");
  require(lift_channels >= 1, "lift_channels must be >= 1");
  for (std::size_t c : gconv_channels) require(c >= 1, "gconv_channels entries must be >= 1");
  require(lift_kernel % 2 == 1 && gconv_kernel % 2 == 1, "kernel sizes must be odd");
  require(num_monomials >= 1, "num_monomials must be >= 1");
  require(num_angles >= 1, "num_angles must be >= 1");
  require(monomial_order >= 1 && monomial_order <= 4, "monomial_order must lie in 1..4");
  require(group_order >= 1, "group_order must be >= 1");
  require(r_max >= 0.0, "r_max must be >= 0");
  require(epsilon > 0.0 && epsilon < 1.0, "epsilon must lie in (0, 1)");
  require(ridge_lambda >= 0.0, "ridge_lambda must be >= 0");
  require(pool_size >= 1, "pool_size must be >= 1");
  require(patience >= 1, "patience must be >= 1");
  require(runs >= 1, "runs must be >= 1");
  if (source == "idx")
    require(!train_images.empty() && !train_labels.empty() && !test_images.empty() && !test_labels.empty(),
            "idx source needs train_images, train_labels, test_images, test_labels");
}

/// Applies one `key=value` assignment; unknown keys are rejected.
inline void set_config_value(TrainConfig& cfg, const std::string& key, const std::string& value) {
  const auto& fields = detail::config_fields();
  const auto it = fields.find(key);
  if (it == fields.end()) throw ConfigError("config: unknown key '" + key + "'");
  try {
    it->second.set(cfg, value);
  } catch (const ConfigError&) {
    throw ConfigError("config: bad value '" + value + "' for " + key);
  }
}

/// Parses `key = value` lines; '#' starts a comment. Duplicate or unknown
/// keys are errors.
inline TrainConfig parse_config(std::istream& in, TrainConfig cfg = {}) {
  std::string line;
  std::map<std::string, int> seen;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
    line = detail::trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = detail::trim(line.substr(0, eq));
    const std::string value = detail::trim(line.substr(eq + 1));
    if (seen.contains(key))
      throw ConfigError("config line " + std::to_string(lineno) + ": duplicate key '" + key + "'");
    seen[key] = lineno;
    try {
      set_config_value(cfg, key, value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(lineno) + ": " + e.what());
    }
  }
  cfg.validate();
  return cfg;
}

inline TrainConfig parse_config_string(const std::string& text) {
  std::istringstream in(text);
  return parse_config(in);
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config " + path);
  return parse_config(in);
}

inline nlohmann::json config_to_json(const TrainConfig& cfg) {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, f] : detail::config_fields()) j[key] = f.get(cfg);
  return j;
}

/// Inverse of config_to_json; same strictness as the text parser.
inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig cfg;
  for (const auto& [key, value] : j.items()) {
    const std::string text = detail::json_value_text(value);
    set_config_value(cfg, key, text);
  }
  cfg.validate();
  return cfg;
}

/// The config as `key = value` text, parseable by parse_config.
inline std::string config_to_text(const TrainConfig& cfg) {
  std::string out;
  const nlohmann::json j = config_to_json(cfg);
  for (const auto& [key, value] : j.items()) {
    const std::string text = detail::json_value_text(value);
    out += key + " = " + text + "\n";
  }
  return out;
}

}  // namespace iil
