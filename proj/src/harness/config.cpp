#include "harness/config.hpp"

#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "common/error.hpp"
#include "json.hpp"

namespace fge {

using nlohmann::json;

double parse_pixel_fraction(const std::string& text) {
  const auto slash = text.find('/');
  if (slash == std::string::npos) {
    // plain decimal, e.g. "0.03137"
    try {
      std::size_t used = 0;
      const double v = std::stod(text, &used);
      while (used < text.size() &&
             std::isspace(static_cast<unsigned char>(text[used])))
        ++used;
      if (used == text.size()) return v;
    } catch (const std::exception&) {
    }
    raise(ErrorCode::ConfigError,
          "expected a number or \"a/b\" fraction, got \"" + text + "\"");
  }
  try {
    std::size_t used = 0;
    const double num = std::stod(text.substr(0, slash), &used);
    while (used < slash && std::isspace(static_cast<unsigned char>(text[used])))
      ++used;
    if (used != slash) throw std::invalid_argument("trailing junk");
    std::string den_s = text.substr(slash + 1);
    const double den = std::stod(den_s, &used);
    while (used < den_s.size() &&
           std::isspace(static_cast<unsigned char>(den_s[used])))
      ++used;
    if (used != den_s.size()) throw std::invalid_argument("trailing junk");
    if (den == 0.0)
      raise(ErrorCode::ConfigError, "fraction \"" + text + "\" divides by zero");
    return num / den;
  } catch (const Error&) {
    throw;
  } catch (const std::exception&) {
    raise(ErrorCode::ConfigError, "cannot parse fraction \"" + text + "\"");
  }
}

namespace {

double number_or_fraction(const json& v, const std::string& key) {
  if (v.is_number()) return v.get<double>();
  if (v.is_string()) return parse_pixel_fraction(v.get<std::string>());
  raise(ErrorCode::ConfigError,
        "config key \"" + key + "\" must be a number or fraction string");
}

std::size_t size_field(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<long long>() < 0)
    raise(ErrorCode::ConfigError,
          "config key \"" + key + "\" must be a nonnegative integer");
  return v.get<std::size_t>();
}

double num_field(const json& v, const std::string& key) {
  if (!v.is_number())
    raise(ErrorCode::ConfigError, "config key \"" + key + "\" must be a number");
  return v.get<double>();
}

std::string str_field(const json& v, const std::string& key) {
  if (!v.is_string())
    raise(ErrorCode::ConfigError, "config key \"" + key + "\" must be a string");
  return v.get<std::string>();
}

}  // namespace

RunConfig parse_config_text(const std::string& json_text) {
  return parse_config_text(json_text, RunConfig{});
}

RunConfig parse_config_text(const std::string& json_text, RunConfig base) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    raise(ErrorCode::ConfigError, std::string("config is not valid JSON: ") + e.what());
  }
  if (!j.is_object())
    raise(ErrorCode::ConfigError, "config root must be a JSON object");

  RunConfig cfg = std::move(base);
  for (const auto& [key, v] : j.items()) {
    if (key == "seed") {
      if (!v.is_number_integer() || v.get<long long>() < 0)
        raise(ErrorCode::ConfigError, "config key \"seed\" must be a nonnegative integer");
      cfg.seed = v.get<std::uint64_t>();
    } else if (key == "train_per_class") {
      cfg.train_per_class = size_field(v, key);
    } else if (key == "test_per_class") {
      cfg.test_per_class = size_field(v, key);
    } else if (key == "attack_per_class") {
      cfg.attack_per_class = size_field(v, key);
    } else if (key == "backbone_steps") {
      cfg.backbone_steps = size_field(v, key);
    } else if (key == "backbone_batch") {
      cfg.backbone_batch = size_field(v, key);
    } else if (key == "backbone_lr") {
      cfg.backbone_lr = num_field(v, key);
    } else if (key == "head_steps") {
      cfg.head_steps = size_field(v, key);
    } else if (key == "head_batch") {
      cfg.head_batch = size_field(v, key);
    } else if (key == "head_lr") {
      cfg.head_lr = num_field(v, key);
    } else if (key == "epsilon") {
      cfg.epsilon = number_or_fraction(v, key);
    } else if (key == "alpha") {
      cfg.alpha = number_or_fraction(v, key);
    } else if (key == "steps") {
      cfg.steps = size_field(v, key);
    } else if (key == "mu") {
      cfg.mu = num_field(v, key);
    } else if (key == "lambda") {
      cfg.lambda = num_field(v, key);
    } else if (key == "granularity") {
      cfg.granularity = str_field(v, key);
    } else if (key == "anchor_source") {
      cfg.anchor_source = str_field(v, key);
    } else if (key == "clamp_each_step") {
      if (!v.is_boolean())
        raise(ErrorCode::ConfigError, "config key \"clamp_each_step\" must be a boolean");
      cfg.clamp_each_step = v.get<bool>();
    } else if (key == "prompts") {
      cfg.prompts = str_field(v, key);
    } else if (key == "robust_sigmas") {
      if (!v.is_array())
        raise(ErrorCode::ConfigError, "config key \"robust_sigmas\" must be an array");
      cfg.robust_sigmas.clear();
      for (const auto& e : v) cfg.robust_sigmas.push_back(num_field(e, key));
    } else if (key == "robust_qualities") {
      if (!v.is_array())
        raise(ErrorCode::ConfigError, "config key \"robust_qualities\" must be an array");
      cfg.robust_qualities.clear();
      for (const auto& e : v) {
        if (!e.is_number_integer())
          raise(ErrorCode::ConfigError, "config key \"robust_qualities\" must hold integers");
        cfg.robust_qualities.push_back(e.get<int>());
      }
    } else {
      raise(ErrorCode::ConfigError, "unknown config key \"" + key + "\"");
    }
  }

  if (cfg.granularity != "fine" && cfg.granularity != "coarse" &&
      cfg.granularity != "untargeted")
    raise(ErrorCode::ConfigError,
          "granularity must be fine, coarse, or untargeted, got \"" +
              cfg.granularity + "\"");
  if (cfg.anchor_source != "matched" && cfg.anchor_source != "global" &&
      cfg.anchor_source != "local")
    raise(ErrorCode::ConfigError,
          "anchor_source must be matched, global, or local, got \"" +
              cfg.anchor_source + "\"");
  if (cfg.epsilon < 0.0)
    raise(ErrorCode::ConfigError, "epsilon must be nonnegative");
  if (cfg.alpha < 0.0) raise(ErrorCode::ConfigError, "alpha must be nonnegative");
  return cfg;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) raise(ErrorCode::Io, "cannot open config file " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_to_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["train_per_class"] = cfg.train_per_class;
  j["test_per_class"] = cfg.test_per_class;
  j["attack_per_class"] = cfg.attack_per_class;
  j["backbone_steps"] = cfg.backbone_steps;
  j["backbone_batch"] = cfg.backbone_batch;
  j["backbone_lr"] = cfg.backbone_lr;
  j["head_steps"] = cfg.head_steps;
  j["head_batch"] = cfg.head_batch;
  j["head_lr"] = cfg.head_lr;
  j["epsilon"] = cfg.epsilon;
  j["alpha"] = cfg.alpha;
  j["steps"] = cfg.steps;
  j["mu"] = cfg.mu;
  j["lambda"] = cfg.lambda;
  j["granularity"] = cfg.granularity;
  j["anchor_source"] = cfg.anchor_source;
  j["clamp_each_step"] = cfg.clamp_each_step;
  j["prompts"] = cfg.prompts;
  j["robust_sigmas"] = cfg.robust_sigmas;
  j["robust_qualities"] = cfg.robust_qualities;
  return j.dump(2);
}

std::string config_hash(const RunConfig& cfg) {
  const std::string text = config_to_json(cfg);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : text) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[20];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace fge
