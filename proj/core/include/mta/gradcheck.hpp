#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mta/losses.hpp"
#include "mta/model_config.hpp"

namespace mta {

struct GradCheckOptions {
  double step = 1e-6;        // central-difference step
  double tolerance = 1e-4;   // max relative error per group
  double abs_floor = 1e-4;   // denominator floor for gradients that vanish identically
  std::uint64_t seed = 0;
};

struct GradGroupResult {
  std::string group;
  double max_rel_error = 0.0;
  std::string worst_entry;  // "<parameter>[index]"
  std::size_t entries = 0;
};

struct GradCheckReport {
  std::string model;  // "tiny/mixneg", "tiny/separateneg", "linear-stub"
  std::vector<GradGroupResult> groups;
  double tolerance = 0.0;

  bool passed() const;
  std::vector<std::string> failing_groups() const;
  std::string summary() const;
};

/// N=3, C=2, K=2, L=1, d_model=4 on 32x32 scenes.
ModelConfig gradcheck_model_config();

/// Parameter group used in gradient-check reports: prompts, mask_queries,
/// projections, attention, heads or other.
std::string gradient_group_of(const std::string& parameter_name);

/// Float64 model; attention masks and matchings are held at their values from
/// an initial forward pass so the loss is smooth in every trainable parameter.
GradCheckReport gradient_check(const ModelConfig& config, NegativeStrategy strategy,
                               const GradCheckOptions& options = {});

/// f(W, b) = sum(C .* (X W + b)) for random quarter-integer X, C, W, b; the
/// step is rounded to the nearest power of two.
GradCheckReport gradient_check_linear_stub(const GradCheckOptions& options = {});

}  // namespace mta
