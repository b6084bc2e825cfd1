#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "mta/run_config.hpp"
#include "mta/scenes.hpp"

namespace mta {

struct AblationVariant {
  std::string name;
  std::string table;  // "components", "prompts" or "attention"
  RunConfig config;
  std::optional<double> paper_miou;  // published ADE20k value in points, annotation only
};

/// Component rows (baseline, +Text-Enhanced, +MTCL, +MTPL), the K x strategy
/// grid and the separate-attention row, all derived from `base`.
std::vector<AblationVariant> ablation_variants(const RunConfig& base);

struct AblationRow {
  std::string name;
  std::string table;
  std::vector<std::uint64_t> seeds;
  std::vector<double> miou;  // per seed, in [0, 1]
  double mean = 0.0;
  double stdev = 0.0;  // sample standard deviation, 0 for a single seed
  std::optional<double> paper_miou;

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationReport {
  std::vector<AblationRow> components;  // 4 rows
  std::vector<AblationRow> prompts;     // 8 rows: K = 2..5 for SeparateNeg, then MixNeg
  std::vector<AblationRow> attention;   // separate attention
  std::vector<std::string> directional_flags;  // component rows whose mean drops more than 0.5 points

  friend bool operator==(const AblationReport&, const AblationReport&) = default;
};

struct AblationOptions {
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  int iterations = -1;  // overrides train.iterations when >= 0
  unsigned threads = 1;
  std::function<void(const std::string&)> log;
};

AblationReport run_ablation(const RunConfig& base, const std::vector<SegmentationSample>& train,
                            const std::vector<SegmentationSample>& eval, const AblationOptions& options = {});

/// Flags every component row whose mean falls more than `tolerance` below its predecessor.
std::vector<std::string> directional_flags(const std::vector<AblationRow>& components, double tolerance = 0.005);

std::string to_json(const AblationReport& report);
std::string to_markdown(const AblationReport& report);

}  // namespace mta
