#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mta/decoder.hpp"
#include "mta/scenes.hpp"

namespace mta {

/// Global per-class pixel counts accumulated over a split.
struct IouCounts {
  explicit IouCounts(int num_classes = 0)
      : intersection(std::size_t(num_classes), 0), union_(std::size_t(num_classes), 0) {}

  std::vector<std::int64_t> intersection;
  std::vector<std::int64_t> union_;
  std::int64_t correct = 0;
  std::int64_t pixels = 0;
  std::int64_t samples = 0;

  void add(const std::vector<int>& prediction, const std::vector<int>& ground_truth);
};

struct EvalReport {
  std::vector<double> per_class_iou;  // 0 for classes absent from both maps
  std::vector<bool> class_counted;    // union > 0
  double miou = 0.0;
  double pixel_accuracy = 0.0;
  std::int64_t sample_count = 0;
  std::string config_echo;

  friend bool operator==(const EvalReport&, const EvalReport&) = default;
};

/// IoU_c = I_c / U_c; classes with U_c = 0 are excluded from the mean.
EvalReport report_from_counts(const IouCounts& counts);

/// Semantic prediction at full resolution from the final decoder layer.
std::vector<int> predict_semantic_map(const MaskTextModel<float>& model, const SegmentationSample& sample);

/// Runs inference on every sample (optionally on several threads) and
/// reduces the counts in sample order. Throws ConfigError on an empty set.
EvalReport evaluate_miou(const MaskTextModel<float>& model, const std::vector<SegmentationSample>& samples,
                         int background_class, unsigned threads = 1);

std::string to_json(const EvalReport& report);

}  // namespace mta
