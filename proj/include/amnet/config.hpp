#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "amnet/network.hpp"

namespace amnet {

class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct LrSchedule {
  double initial = 1e-3;
  int decay_epoch = 150;  ///< first epoch (1-based) that runs at `decayed`
  double decayed = 1e-4;
  double new_layer_scale = 1.0;  ///< multiplier for the multitask-only layers

  double at(int epoch) const { return epoch >= decay_epoch ? decayed : initial; }
};

/// Every knob of a run. Resolution order: preset defaults, config file,
/// AMNET_* environment variables, command-line flags.
struct RunConfig {
  std::string preset = "micro";
  NetworkConfig network = NetworkConfig::from_preset("micro");
  std::uint64_t seed = 1;
  double lambda = 0.5;
  Index crop_height = 64;
  Index crop_width = 128;
  int batch = 4;
  int epochs = 200;
  LrSchedule lr;
  int threads = 1;
  std::string train_dir;
  std::string val_dir;
  std::string out_dir = "run";
  std::string checkpoint;  ///< checkpoint to start from (train) or to use (infer)
  bool checkpoint_every_epoch = true;
  bool augment = true;  ///< vertical flips, channel permutations and photometric jitter shared by both views

  /// Defaults for a preset: paper presets follow the published recipes,
  /// micro presets the desk-scale one.
  static RunConfig defaults(const std::string& preset);
};

nlohmann::json to_json(const NetworkConfig& c);
NetworkConfig network_from_json(const nlohmann::json& j);

nlohmann::json to_json(const RunConfig& c);
/// Applies the keys present in `j` on top of `base`. Unknown keys are rejected.
RunConfig apply_json(RunConfig base, const nlohmann::json& j);

/// Environment variables AMNET_<KEY> for the flat keys (PRESET, SEED, DMAX,
/// LAMBDA, EPOCHS, BATCH, LR, THREADS, OUT, TRAIN_DIR, VAL_DIR, CHECKPOINT).
/// `getenv` is injectable for tests.
RunConfig apply_env(RunConfig base, const std::function<const char*(const char*)>& getenv);

nlohmann::json read_json_file(const std::filesystem::path& path);
void write_json_file(const std::filesystem::path& path, const nlohmann::json& j);

/// Full resolution: the preset comes from flags, then env, then file, then
/// "micro"; its defaults are overlaid with the file, the environment and the
/// flags (flags use the same keys as the file).
RunConfig resolve_config(const nlohmann::json& file, const std::function<const char*(const char*)>& getenv,
                         const nlohmann::json& flags);

}  // namespace amnet
