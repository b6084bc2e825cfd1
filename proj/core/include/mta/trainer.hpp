#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "mta/checkpoint.hpp"
#include "mta/decoder.hpp"
#include "mta/losses.hpp"
#include "mta/optimizer.hpp"
#include "mta/run_config.hpp"
#include "mta/scenes.hpp"

namespace mta {

inline constexpr int kPredictionStride = 4;

/// Per-class merged targets (background included) at the prediction resolution.
TrainingTargets make_targets(const SegmentationSample& sample, int num_classes, int background_class);

struct PreparedSample {
  SegmentationSample sample;
  TrainingTargets targets;
};

std::vector<PreparedSample> prepare_samples(std::vector<SegmentationSample> samples, int num_classes,
                                            int background_class);

/// Dihedral transform (bit 0: mirror x, bit 1: mirror y, bit 2: transpose)
/// followed by a toroidal shift.
struct Augmentation {
  int transform = 0;
  int shift_y = 0;
  int shift_x = 0;

  friend bool operator==(const Augmentation&, const Augmentation&) = default;
};

/// Drawn from (seed, iteration, slot); shifts are multiples of the prediction
/// stride and transposition is only drawn for square images.
Augmentation draw_augmentation(std::uint64_t seed, std::int64_t iteration, std::size_t slot, int height, int width);

/// Applies the transform to the image and every ground-truth mask.
SegmentationSample augment_sample(const SegmentationSample& sample, const Augmentation& augmentation);

/// Permutation of [0, n) for one epoch, seeded by (seed, epoch).
std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch);

/// Sample indices of 0-based iteration `iteration`: fixed-size batches, last partial batch dropped.
std::vector<std::size_t> batch_for_iteration(std::size_t n, int batch_size, std::uint64_t seed,
                                             std::int64_t iteration);

AdamWConfig optimizer_config(const TrainConfig& train);

/// Forward, loss, backward and one optimizer update; the loss is averaged over
/// the batch. On a non-finite loss throws NumericalFault carrying a dump of the
/// per-layer similarity ranges and the loss breakdown.
template <typename T>
LossBreakdown train_step(MaskTextModel<T>& model, const std::vector<const PreparedSample*>& batch,
                         AdamW<T>& optimizer, const LossConfig& loss);

struct MetricsRecord {
  std::int64_t iter = 0;  // 1-based
  LossBreakdown breakdown;
  double lr = 0.0;
  double wallclock_ms = 0.0;
};

std::string to_json_line(const MetricsRecord& record);

/// Owns the model, optimizer and training data for one run.
class Trainer {
 public:
  Trainer(RunConfig config, std::vector<SegmentationSample> train_samples);

  /// Resumes from a checkpoint written by this class; parameters, moments and
  /// iteration are restored so continuation matches an uninterrupted run.
  Trainer(const Checkpoint& checkpoint, std::vector<SegmentationSample> train_samples);

  MetricsRecord step();
  std::int64_t iteration() const { return iteration_; }
  const RunConfig& config() const { return config_; }
  MaskTextModel<float>& model() { return *model_; }
  const MaskTextModel<float>& model() const { return *model_; }
  const std::vector<PreparedSample>& samples() const { return samples_; }
  Checkpoint checkpoint() const;

 private:
  RunConfig config_;
  std::unique_ptr<MaskTextModel<float>> model_;
  std::unique_ptr<AdamW<float>> optimizer_;
  std::vector<PreparedSample> samples_;
  std::int64_t iteration_ = 0;
};

struct TrainLoopOptions {
  std::filesystem::path out_dir;
  std::filesystem::path resume_from;  // empty: fresh run
  std::int64_t stop_at = -1;          // stop early after this iteration (checkpoint written)
  std::function<void(const MetricsRecord&)> on_record;
};

struct TrainLoopResult {
  std::filesystem::path checkpoint_path;  // <out>/checkpoint.bin
  std::filesystem::path metrics_path;     // <out>/metrics.jsonl
  std::int64_t iterations = 0;
  std::vector<MetricsRecord> records;     // records produced by this invocation
};

/// Trains on the manifest named by the config, writing <out>/config.cfg,
/// <out>/metrics.jsonl (one record per iteration), periodic
/// <out>/checkpoint_<iter>.bin and <out>/checkpoint.bin. IoError names the path.
TrainLoopResult train_loop(const RunConfig& config, const TrainLoopOptions& options);

/// Same, with the training samples supplied directly.
TrainLoopResult train_loop(const RunConfig& config, std::vector<SegmentationSample> train_samples,
                           const TrainLoopOptions& options);

}  // namespace mta
