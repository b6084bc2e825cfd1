#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "mta/losses.hpp"
#include "mta/model_config.hpp"
#include "mta/scenes.hpp"

namespace mta {

struct DatasetConfig {
  SceneSpec spec = default_scene_spec(6, 64, 64);
  std::int64_t root_seed = 0;
  int train_count = 16;
  int val_count = 64;
  std::string directory = "data";

  friend bool operator==(const DatasetConfig&, const DatasetConfig&) = default;
};

struct TrainConfig {
  std::string preset = "toy";
  int iterations = 2000;
  int batch_size = 4;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 1e-4;
  std::uint64_t seed = 0;
  bool augment = true;         // random dihedral transform and toroidal shift per batch slot
  int checkpoint_every = 500;  // 0: final checkpoint only
  std::string train_manifest;  // empty: <dataset.directory>/train
  std::string eval_manifest;   // empty: <dataset.directory>/val

  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

struct OutputConfig {
  std::string directory = "runs/toy";

  friend bool operator==(const OutputConfig&, const OutputConfig&) = default;
};

/// Everything a run needs, addressable as `section.key = value` lines.
struct RunConfig {
  DatasetConfig dataset;
  ModelConfig model;
  LossConfig loss;
  TrainConfig train;
  OutputConfig output;

  std::string train_manifest_path() const;
  std::string eval_manifest_path() const;

  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// 64x64 scenes, C=6, N=20, L=3, 2k iterations.
RunConfig toy_preset();
/// Published hyperparameters: 512x512 crops, C=150, batch 16, 160k iterations, lr 2e-4.
RunConfig paper_preset();
RunConfig preset_by_name(const std::string& name);

/// Throws ConfigError naming the violated invariant.
void validate(const RunConfig& config);

/// Every field as (dotted key, value), in serialization order.
std::vector<std::pair<std::string, std::string>> run_config_fields(const RunConfig& config);

/// Applies one dotted key; throws ConfigError for unknown keys or bad values.
void set_run_config_field(RunConfig& config, const std::string& key, const std::string& value);

std::string serialize(const RunConfig& config);

/// Starts from the preset named by `train.preset` (toy when absent) and
/// applies the remaining keys in file order.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

}  // namespace mta
