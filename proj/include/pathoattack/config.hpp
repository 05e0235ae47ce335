#pragma once

// Campaign configuration: JSON document + dotted-path overrides, validated
// against one key table that also produces the --help listing.

#include <filesystem>
#include <fstream>
#include <map>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "pathoattack/campaign.hpp"

namespace pathoattack {

struct ConfigError : InvalidArgument {
  using InvalidArgument::InvalidArgument;
};

enum class KeyType { string, count, integer, number, optional_number, boolean, object, optional_seed };

struct ConfigKey {
  std::string path;
  KeyType type;
  nlohmann::json default_value;
  std::string help;
};

inline const std::vector<ConfigKey>& config_schema() {
  static const std::vector<ConfigKey> keys = {
      {"dataset.root", KeyType::string, "", "class-per-folder dataset directory"},
      {"dataset.per_class", KeyType::count, 5, "images sampled per class"},
      {"dataset.image_size", KeyType::count, 224, "square side images are resized to"},
      {"model.spec", KeyType::string, "toy", "toy | pretrained:<checkpoint dir or hub id>"},
      {"model.device", KeyType::string, "cpu", "device for pretrained checkpoints"},
      {"model.prompt_template", KeyType::string, kDefaultPromptTemplate, "zero-shot prompt, {} = tissue phrase"},
      {"model.temperature", KeyType::optional_number, nullptr, "logit scale; null = checkpoint value or 100"},
      {"attack.epsilon", KeyType::number, 8.0 / 255.0, "L-infinity radius in [0,1] pixel units"},
      {"attack.alpha", KeyType::number, 2.0 / 255.0, "step size in [0,1] pixel units"},
      {"attack.max_steps", KeyType::integer, 10, "PGD iterations"},
      {"attack.targeted", KeyType::boolean, true, "targeted (true) or untargeted (false)"},
      {"attack.random_start", KeyType::boolean, false, "uniform random start inside the ball"},
      {"attack.stop_on_success", KeyType::boolean, false, "stop at the first successful step"},
      {"target.strategy", KeyType::string, "next_class", "next_class | fixed_map | all_pairs"},
      {"target.fixed_map", KeyType::object, nlohmann::json::object(), "true label -> target label (fixed_map)"},
      {"ssim.window_size", KeyType::count, 11, "Gaussian window side (odd)"},
      {"ssim.sigma", KeyType::number, 1.5, "Gaussian window sigma"},
      {"ssim.k1", KeyType::number, 0.01, "SSIM luminance constant"},
      {"ssim.k2", KeyType::number, 0.03, "SSIM contrast constant"},
      {"ssim.dynamic_range", KeyType::number, 1.0, "pixel dynamic range L"},
      {"report.min_ssim_threshold", KeyType::number, 0.90, "SSIM level counted as 'high' in summaries"},
      {"output.dir", KeyType::string, "runs/latest", "artifact directory"},
      {"seed", KeyType::optional_seed, nullptr, "global seed; null = generate and print one"},
      {"workers", KeyType::count, 1, "parallel attack workers"},
  };
  return keys;
}

inline const ConfigKey* find_key(const std::string& path) {
  for (const auto& k : config_schema()) {
    if (k.path == path) return &k;
  }
  return nullptr;
}

/// "  key  (default: value)  help" lines, one per key.
inline std::string config_help() {
  std::ostringstream out;
  out << "Config keys (JSON nesting or dotted key=value overrides):\n";
  for (const auto& k : config_schema()) {
    out << "  " << k.path << "  (default: " << k.default_value.dump() << ")  " << k.help << "\n";
  }
  return out.str();
}

using FlatConfig = std::map<std::string, nlohmann::json>;

inline void check_type(const ConfigKey& key, const nlohmann::json& v) {
  bool ok = false;
  switch (key.type) {
    case KeyType::string: ok = v.is_string(); break;
    case KeyType::count: ok = v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); break;
    case KeyType::integer: ok = v.is_number_integer(); break;
    case KeyType::number: ok = v.is_number(); break;
    case KeyType::optional_number: ok = v.is_number() || v.is_null(); break;
    case KeyType::boolean: ok = v.is_boolean(); break;
    case KeyType::object:
      ok = v.is_object();
      if (ok) {
        for (const auto& [mk, mv] : v.items()) ok = ok && mv.is_string();
      }
      break;
    case KeyType::optional_seed: ok = v.is_null() || v.is_number_unsigned() || (v.is_number_integer() && v.get<long long>() >= 0); break;
  }
  if (!ok) throw ConfigError("config key '" + key.path + "' has invalid value " + v.dump());
}

namespace detail {

inline void flatten_into(const nlohmann::json& j, const std::string& prefix, FlatConfig& out) {
  for (const auto& [name, value] : j.items()) {
    const std::string path = prefix.empty() ? name : prefix + "." + name;
    if (const ConfigKey* key = find_key(path)) {
      check_type(*key, value);
      out[path] = value;
      continue;
    }
    bool is_section = false;
    for (const auto& k : config_schema()) is_section = is_section || k.path.starts_with(path + ".");
    if (!is_section || !value.is_object()) throw ConfigError("unknown config key '" + path + "'");
    flatten_into(value, path, out);
  }
}

}  // namespace detail

inline FlatConfig default_config() {
  FlatConfig flat;
  for (const auto& k : config_schema()) flat[k.path] = k.default_value;
  return flat;
}

/// Overlays a (nested) JSON document onto `flat`, rejecting unknown keys.
inline void merge_config(FlatConfig& flat, const nlohmann::json& doc) {
  if (!doc.is_object()) throw ConfigError("config document must be a JSON object");
  detail::flatten_into(doc, "", flat);
}

inline FlatConfig load_config_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file '" + path.string() + "'");
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("config file '" + path.string() + "' is not valid JSON: " + e.what());
  }
  FlatConfig flat = default_config();
  merge_config(flat, doc);
  return flat;
}

/// Applies "dotted.key=value". String keys take the text verbatim; other
/// keys parse the value as JSON.
inline void apply_override(FlatConfig& flat, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + assignment + "' is not key=value");
  const std::string path = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  const ConfigKey* key = find_key(path);
  if (!key) throw ConfigError("unknown config key '" + path + "'");
  nlohmann::json value;
  if (key->type == KeyType::string) {
    value = text;
  } else {
    try {
      value = nlohmann::json::parse(text);
    } catch (const nlohmann::json::parse_error&) {
      throw ConfigError("config key '" + path + "' has unparseable value '" + text + "'");
    }
  }
  check_type(*key, value);
  flat[path] = value;
}

inline std::uint64_t generate_seed() {
  std::random_device rd;
  return (static_cast<std::uint64_t>(rd()) << 32) ^ rd();
}

inline CampaignConfig to_campaign_config(const FlatConfig& flat) {
  auto get = [&](const std::string& k) -> const nlohmann::json& {
    auto it = flat.find(k);
    if (it == flat.end()) throw ConfigError("missing config key '" + k + "'");
    return it->second;
  };
  CampaignConfig c;
  c.dataset_root = get("dataset.root").get<std::string>();
  c.per_class = get("dataset.per_class").get<std::size_t>();
  c.image_size = get("dataset.image_size").get<std::size_t>();
  c.model = get("model.spec").get<std::string>();
  c.device = get("model.device").get<std::string>();
  c.prompt_template = get("model.prompt_template").get<std::string>();
  if (!get("model.temperature").is_null()) c.temperature = get("model.temperature").get<double>();
  c.attack.epsilon = get("attack.epsilon").get<double>();
  c.attack.alpha = get("attack.alpha").get<double>();
  c.attack.max_steps = get("attack.max_steps").get<int>();
  c.attack.targeted = get("attack.targeted").get<bool>();
  c.attack.random_start = get("attack.random_start").get<bool>();
  c.attack.stop_on_success = get("attack.stop_on_success").get<bool>();
  try {
    c.strategy.kind = parse_strategy_kind(get("target.strategy").get<std::string>());
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  c.strategy.fixed_map = get("target.fixed_map").get<std::map<std::string, std::string>>();
  c.ssim.window_size = get("ssim.window_size").get<std::size_t>();
  c.ssim.gaussian_sigma = get("ssim.sigma").get<double>();
  c.ssim.k1 = get("ssim.k1").get<double>();
  c.ssim.k2 = get("ssim.k2").get<double>();
  c.ssim.dynamic_range = get("ssim.dynamic_range").get<double>();
  c.min_ssim_report_threshold = get("report.min_ssim_threshold").get<double>();
  c.output_dir = get("output.dir").get<std::string>();
  if (!get("seed").is_null()) c.seed = get("seed").get<std::uint64_t>();
  c.workers = get("workers").get<std::size_t>();

  if (c.dataset_root.empty()) throw ConfigError("config key 'dataset.root' must be set");
  if (c.per_class < 1) throw ConfigError("config key 'dataset.per_class' must be >= 1");
  if (c.image_size < kMinImageSide) throw ConfigError("config key 'dataset.image_size' must be >= 8");
  if (c.workers < 1) throw ConfigError("config key 'workers' must be >= 1");
  try {
    check_attack_spec(c.attack);
    c.ssim.validate();
    if (c.ssim.window_size > c.image_size) {
      throw InvalidArgument("ssim.window_size " + std::to_string(c.ssim.window_size) + " exceeds dataset.image_size " +
                            std::to_string(c.image_size));
    }
    build_prompts(std::vector<std::string>{"x"}, c.prompt_template);
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return c;
}

}  // namespace pathoattack
