#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace fge {

// Flat run configuration. Every field has a default; a config file may set
// any subset, and the full effective config is echoed into run manifests so
// a run directory is self-describing.
struct RunConfig {
  std::uint64_t seed = 7;

  std::size_t train_per_class = 500;
  std::size_t test_per_class = 200;
  std::size_t attack_per_class = 200;

  std::size_t backbone_steps = 2000;
  std::size_t backbone_batch = 64;
  double backbone_lr = 3e-4;

  std::size_t head_steps = 500;
  std::size_t head_batch = 128;
  double head_lr = 1e-2;

  double epsilon = 8.0 / 255.0;
  double alpha = 2.0 / 255.0;
  std::size_t steps = 8;
  double mu = 1.0;
  double lambda = 1.0;
  std::string granularity = "fine";       // fine | coarse | untargeted
  std::string anchor_source = "matched";  // matched | global | local
  bool clamp_each_step = false;
  std::string prompts;  // optional prompt-override JSON path

  std::vector<double> robust_sigmas = {0.0, 1.0, 2.0, 3.0};
  std::vector<int> robust_qualities = {100, 90, 70, 50};
};

// "8/255" and plain numbers both parse; anything else is a ConfigError.
double parse_pixel_fraction(const std::string& text);

// Parses a flat JSON object; unknown keys and wrong types raise ConfigError.
// The two-argument form lays the parsed keys over an existing config.
RunConfig parse_config_text(const std::string& json_text);
RunConfig parse_config_text(const std::string& json_text, RunConfig base);
RunConfig load_config(const std::string& path);

// Canonical JSON echo of the effective config (sorted keys, numeric values).
std::string config_to_json(const RunConfig& cfg);

// FNV-1a over the canonical echo, as a fixed-width hex string.
std::string config_hash(const RunConfig& cfg);

}  // namespace fge
