#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "mta/autograd.hpp"
#include "mta/decoder.hpp"
#include "mta/matrix.hpp"

namespace mta {

// ---- bipartite matching ---------------------------------------------------------

/// One-to-one pairing of mask queries with ground-truth segments.
struct Assignment {
  std::vector<std::pair<int, int>> pairs;  // (query, gt), ascending by gt
  std::vector<int> unmatched_queries;      // ascending; supervised as no-object
  double total_cost = 0.0;
};

/// Minimum-cost assignment of every column (gt) to a distinct row (query) of
/// a [N x G] cost matrix, G <= N. Shortest-augmenting-path Hungarian method;
/// scans queries in ascending order with strict comparisons, so equal-cost
/// alternatives resolve to the lowest query index first.
Assignment solve_assignment(const Matrix<double>& cost);

struct MatchCostWeights {
  double class_weight = 2.0;
  double mask_weight = 5.0;
  double dice_weight = 0.0;
};

/// Matching cost: class_weight * (-p(gt class)) + mask_weight * mean pixel BCE
/// (+ dice_weight * dice). `gt_masks` are at the prediction resolution.
template <typename T>
Matrix<double> matching_cost(const Matrix<T>& mask_logits, const Matrix<T>& class_logits,
                             const std::vector<std::vector<std::uint8_t>>& gt_masks,
                             const std::vector<int>& gt_labels, const MatchCostWeights& weights);

template <typename T>
Assignment hungarian_match(const Matrix<T>& mask_logits, const Matrix<T>& class_logits,
                           const std::vector<std::vector<std::uint8_t>>& gt_masks, const std::vector<int>& gt_labels,
                           const MatchCostWeights& weights);

// ---- contrastive losses ---------------------------------------------------------

enum class NegativeStrategy { MixNeg, SeparateNeg };
std::string to_string(NegativeStrategy s);
NegativeStrategy negative_strategy_from_string(const std::string& name);

/// A matched query and the class of its ground-truth segment.
struct MatchedClass {
  int query = 0;
  int label = 0;
};

std::vector<MatchedClass> matched_classes(const Assignment& assignment, const std::vector<int>& gt_labels);

/// Value and gradient of a scalar loss with respect to its matrix input.
template <typename T>
struct LossValue {
  T value = T(0);
  Matrix<T> grad;
};

/// Prompt k maximising S[query][c*K + k]; ties resolve to the smallest k.
template <typename T>
int select_positive_prompt(std::span<const T> similarity_row, int label, int num_prompts);

/// Single-prompt loss over S [N x C]: mean over matched queries of the
/// negative log-softmax of the ground-truth column.
template <typename T>
LossValue<T> loss_sim(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets);

/// Multi-prompt loss, normaliser over all K*C text queries.
template <typename T>
LossValue<T> loss_sim_mixneg(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets,
                             int num_prompts);

/// Multi-prompt loss, normaliser over the positive plus the K*(C-1) other-class queries.
template <typename T>
LossValue<T> loss_sim_separateneg(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets,
                                  int num_prompts);

template <typename T>
LossValue<T> loss_sim_strategy(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets,
                               int num_prompts, NegativeStrategy strategy) {
  return strategy == NegativeStrategy::MixNeg ? loss_sim_mixneg(similarity, targets, num_prompts)
                                              : loss_sim_separateneg(similarity, targets, num_prompts);
}

// ---- mask losses ----------------------------------------------------------------

/// Weighted cross-entropy over C+1 logits: matched queries target their gt
/// class with weight 1, the rest target no-object (index C) with
/// `no_object_weight`. Normalised by the total weight.
template <typename T>
LossValue<T> loss_mask_cls(const Matrix<T>& class_logits, const Assignment& assignment,
                           const std::vector<int>& gt_labels, double no_object_weight = 0.1);

/// Mean per-pixel binary cross-entropy over matched (query, gt) pairs; with
/// `dice` a dice term is added per pair.
template <typename T>
LossValue<T> loss_mask(const Matrix<T>& mask_logits, const Assignment& assignment,
                       const std::vector<std::vector<std::uint8_t>>& gt_masks, bool dice = false);

// ---- composite --------------------------------------------------------------------

struct LossWeights {
  double mask_cls = 2.0;  // lambda_1
  double mask = 5.0;      // lambda_2
  double sim = 1.0;       // lambda_3
};

struct LossConfig {
  LossWeights weights;
  NegativeStrategy strategy = NegativeStrategy::MixNeg;
  double no_object_weight = 0.1;
  bool dice = false;

  friend bool operator==(const LossConfig& a, const LossConfig& b) {
    return a.weights.mask_cls == b.weights.mask_cls && a.weights.mask == b.weights.mask &&
           a.weights.sim == b.weights.sim && a.strategy == b.strategy && a.no_object_weight == b.no_object_weight &&
           a.dice == b.dice;
  }
};

struct LossBreakdown {
  double l_mask_cls = 0.0;               // averaged over layers
  double l_mask = 0.0;                   // averaged over layers
  std::vector<double> l_sim_per_layer;   // summed into the total
  double total = 0.0;
  LossWeights weights;

  double l_sim_sum() const {
    double s = 0.0;
    for (double v : l_sim_per_layer) s += v;
    return s;
  }
};

/// total = w1 * l_mask_cls + w2 * l_mask + w3 * sum(l_sim_per_layer).
LossBreakdown compose_loss(double l_mask_cls, double l_mask, std::vector<double> l_sim_per_layer,
                           const LossWeights& weights);

/// Ground truth at the prediction resolution for one sample.
struct TrainingTargets {
  std::vector<std::vector<std::uint8_t>> masks;  // area-majority downsampled
  std::vector<int> labels;
};

template <typename T>
struct LossResult {
  LossBreakdown breakdown;
  ag::Var<T> total;                      // differentiable
  std::vector<Assignment> assignments;   // one per layer
};

/// Matches each layer independently, then composes the deep-supervised loss.
/// When `fixed_assignments` is given the matching step is skipped.
template <typename T>
LossResult<T> total_loss(const DecoderOutput<T>& output, const TrainingTargets& targets, const LossConfig& config,
                         int num_prompts, const std::vector<Assignment>* fixed_assignments = nullptr);

}  // namespace mta
