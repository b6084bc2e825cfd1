#include "mta/losses.hpp"

#include <cmath>
#include <iostream>
#include <limits>

#include "mta/errors.hpp"

namespace mta {

// ---- matching ---------------------------------------------------------------------

Assignment solve_assignment(const Matrix<double>& cost) {
  const std::size_t queries = cost.rows(), gts = cost.cols();
  Assignment out;
  if (gts > queries) throw ConfigError("matching requires G <= N");
  if (!cost.all_finite()) throw NumericalFault("non-finite matching cost");
  if (gts == 0) {
    for (std::size_t q = 0; q < queries; ++q) out.unmatched_queries.push_back(int(q));
    return out;
  }
  // Rows of the classic formulation are ground-truth segments, columns are
  // queries; 1-based with a virtual column 0.
  const double inf = std::numeric_limits<double>::infinity();
  const std::size_t n = gts, m = queries;
  std::vector<double> u(n + 1, 0.0), v(m + 1, 0.0);
  std::vector<std::size_t> owner(m + 1, 0), way(m + 1, 0);
  for (std::size_t row = 1; row <= n; ++row) {
    owner[0] = row;
    std::size_t col0 = 0;
    std::vector<double> minv(m + 1, inf);
    std::vector<char> used(m + 1, 0);
    do {
      used[col0] = 1;
      const std::size_t row0 = owner[col0];
      double delta = inf;
      std::size_t col1 = 0;
      for (std::size_t col = 1; col <= m; ++col) {
        if (used[col]) continue;
        const double cur = cost(col - 1, row0 - 1) - u[row0] - v[col];
        if (cur < minv[col]) {
          minv[col] = cur;
          way[col] = col0;
        }
        if (minv[col] < delta) {
          delta = minv[col];
          col1 = col;
        }
      }
      for (std::size_t col = 0; col <= m; ++col) {
        if (used[col]) {
          u[owner[col]] += delta;
          v[col] -= delta;
        } else {
          minv[col] -= delta;
        }
      }
      col0 = col1;
    } while (owner[col0] != 0);
    do {
      const std::size_t col1 = way[col0];
      owner[col0] = owner[col1];
      col0 = col1;
    } while (col0 != 0);
  }

  std::vector<int> query_of(gts, -1);
  for (std::size_t col = 1; col <= m; ++col)
    if (owner[col] != 0) query_of[owner[col] - 1] = int(col - 1);
  std::vector<char> taken(queries, 0);
  for (std::size_t g = 0; g < gts; ++g) {
    out.pairs.emplace_back(query_of[g], int(g));
    taken[std::size_t(query_of[g])] = 1;
    out.total_cost += cost(std::size_t(query_of[g]), g);
  }
  for (std::size_t q = 0; q < queries; ++q)
    if (!taken[q]) out.unmatched_queries.push_back(int(q));
  return out;
}

namespace {

template <typename T>
double bce(T logit, double target) {
  const double x = double(logit);
  return std::max(x, 0.0) - x * target + std::log1p(std::exp(-std::abs(x)));
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace

template <typename T>
Matrix<double> matching_cost(const Matrix<T>& mask_logits, const Matrix<T>& class_logits,
                             const std::vector<std::vector<std::uint8_t>>& gt_masks,
                             const std::vector<int>& gt_labels, const MatchCostWeights& weights) {
  const std::size_t queries = mask_logits.rows(), pixels = mask_logits.cols(), gts = gt_labels.size();
  if (gt_masks.size() != gts) throw ConfigError("matching: masks and labels differ in count");
  Matrix<double> cost(queries, gts);
  for (std::size_t q = 0; q < queries; ++q) {
    const auto logits = class_logits.row(q);
    double mx = -std::numeric_limits<double>::infinity();
    for (T v : logits) mx = std::max(mx, double(v));
    double total = 0.0;
    for (T v : logits) total += std::exp(double(v) - mx);
    double prob_sum = 0.0;
    std::vector<double> prob(pixels);
    for (std::size_t p = 0; p < pixels; ++p) {
      prob[p] = sigmoid(double(mask_logits(q, p)));
      prob_sum += prob[p];
    }
    for (std::size_t g = 0; g < gts; ++g) {
      const auto& gt = gt_masks[g];
      if (gt.size() != pixels) throw ConfigError("matching: gt mask resolution differs from predictions");
      const double p_class = std::exp(double(logits[std::size_t(gt_labels[g])]) - mx) / total;
      double mask_cost = 0.0, inter = 0.0, gt_sum = 0.0;
      for (std::size_t p = 0; p < pixels; ++p) {
        mask_cost += bce(mask_logits(q, p), gt[p]);
        inter += prob[p] * gt[p];
        gt_sum += gt[p];
      }
      mask_cost /= double(pixels);
      double c = -weights.class_weight * p_class + weights.mask_weight * mask_cost;
      if (weights.dice_weight != 0.0) c += weights.dice_weight * (1.0 - (2.0 * inter + 1.0) / (prob_sum + gt_sum + 1.0));
      cost(q, g) = c;
    }
  }
  return cost;
}

template <typename T>
Assignment hungarian_match(const Matrix<T>& mask_logits, const Matrix<T>& class_logits,
                           const std::vector<std::vector<std::uint8_t>>& gt_masks, const std::vector<int>& gt_labels,
                           const MatchCostWeights& weights) {
  return solve_assignment(matching_cost(mask_logits, class_logits, gt_masks, gt_labels, weights));
}

// ---- contrastive ------------------------------------------------------------------

std::string to_string(NegativeStrategy s) { return s == NegativeStrategy::MixNeg ? "mixneg" : "separateneg"; }

NegativeStrategy negative_strategy_from_string(const std::string& name) {
  if (name == "mixneg" || name == "MixNeg") return NegativeStrategy::MixNeg;
  if (name == "separateneg" || name == "SeparateNeg") return NegativeStrategy::SeparateNeg;
  throw ConfigError("unknown negative strategy '" + name + "' (expected mixneg or separateneg)");
}

std::vector<MatchedClass> matched_classes(const Assignment& assignment, const std::vector<int>& gt_labels) {
  std::vector<MatchedClass> out;
  for (auto [q, g] : assignment.pairs) out.push_back({q, gt_labels[std::size_t(g)]});
  return out;
}

template <typename T>
int select_positive_prompt(std::span<const T> row, int label, int num_prompts) {
  const std::size_t base = std::size_t(label) * std::size_t(num_prompts);
  int best = 0;
  for (int k = 1; k < num_prompts; ++k)
    if (row[base + std::size_t(k)] > row[base + std::size_t(best)]) best = k;
  return best;
}

namespace {

enum class Normaliser { All, OtherClassesPlusPositive };

// -log softmax of the positive entry over the included columns, averaged over
// matched queries. Columns are visited in ascending order for every variant,
// so with K = 1 all three losses perform identical arithmetic.
template <typename T>
LossValue<T> contrastive(const Matrix<T>& s, const std::vector<MatchedClass>& targets, int num_prompts,
                         Normaliser normaliser) {
  if (num_prompts < 1) throw ConfigError("contrastive loss: K must be >= 1");
  if (s.cols() % std::size_t(num_prompts) != 0) throw ConfigError("contrastive loss: S width is not a multiple of K");
  LossValue<T> out;
  out.grad = Matrix<T>(s.rows(), s.cols());
  if (targets.empty()) {
    std::clog << "warning: contrastive loss with no matched queries evaluates to 0\n";
    return out;
  }
  const std::size_t cols = s.cols(), kk = std::size_t(num_prompts);
  const T inv_n = T(1) / T(targets.size());
  T total = T(0);
  std::vector<T> e(cols);
  for (const auto& t : targets) {
    const auto row = s.row(std::size_t(t.query));
    const std::size_t label = std::size_t(t.label);
    if (label * kk >= cols) throw ConfigError("contrastive loss: label outside S columns");
    const std::size_t pos = label * kk + std::size_t(select_positive_prompt<T>(row, t.label, num_prompts));
    auto included = [&](std::size_t c) {
      return normaliser == Normaliser::All || c == pos || c / kk != label;
    };
    T mx = -std::numeric_limits<T>::infinity();
    for (std::size_t c = 0; c < cols; ++c)
      if (included(c)) mx = std::max(mx, row[c]);
    T sum = T(0);
    for (std::size_t c = 0; c < cols; ++c) {
      e[c] = included(c) ? std::exp(row[c] - mx) : T(0);
      sum += e[c];
    }
    total += std::log(sum) - (row[pos] - mx);
    auto g = out.grad.row(std::size_t(t.query));
    for (std::size_t c = 0; c < cols; ++c) g[c] += e[c] / sum * inv_n;
    g[pos] -= inv_n;
  }
  out.value = total * inv_n;
  return out;
}

}  // namespace

template <typename T>
LossValue<T> loss_sim(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets) {
  return contrastive(similarity, targets, 1, Normaliser::All);
}

template <typename T>
LossValue<T> loss_sim_mixneg(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets,
                             int num_prompts) {
  return contrastive(similarity, targets, num_prompts, Normaliser::All);
}

template <typename T>
LossValue<T> loss_sim_separateneg(const Matrix<T>& similarity, const std::vector<MatchedClass>& targets,
                                  int num_prompts) {
  return contrastive(similarity, targets, num_prompts, Normaliser::OtherClassesPlusPositive);
}

// ---- mask losses ------------------------------------------------------------------

template <typename T>
LossValue<T> loss_mask_cls(const Matrix<T>& class_logits, const Assignment& assignment,
                           const std::vector<int>& gt_labels, double no_object_weight) {
  const std::size_t queries = class_logits.rows(), width = class_logits.cols();
  const int no_object = int(width) - 1;
  std::vector<int> target(queries, no_object);
  std::vector<T> weight(queries, T(no_object_weight));
  for (auto [q, g] : assignment.pairs) {
    target[std::size_t(q)] = gt_labels[std::size_t(g)];
    weight[std::size_t(q)] = T(1);
  }
  T weight_sum = T(0);
  for (T w : weight) weight_sum += w;
  LossValue<T> out;
  out.grad = Matrix<T>(queries, width);
  if (weight_sum <= T(0)) return out;
  T total = T(0);
  for (std::size_t q = 0; q < queries; ++q) {
    const auto row = class_logits.row(q);
    T mx = row[0];
    for (T v : row) mx = std::max(mx, v);
    T sum = T(0);
    for (T v : row) sum += std::exp(v - mx);
    const T lse = std::log(sum) + mx;
    total += weight[q] * (lse - row[std::size_t(target[q])]);
    auto g = out.grad.row(q);
    for (std::size_t c = 0; c < width; ++c) g[c] = weight[q] * std::exp(row[c] - lse) / weight_sum;
    g[std::size_t(target[q])] -= weight[q] / weight_sum;
  }
  out.value = total / weight_sum;
  return out;
}

template <typename T>
LossValue<T> loss_mask(const Matrix<T>& mask_logits, const Assignment& assignment,
                       const std::vector<std::vector<std::uint8_t>>& gt_masks, bool dice) {
  const std::size_t pixels = mask_logits.cols();
  LossValue<T> out;
  out.grad = Matrix<T>(mask_logits.rows(), pixels);
  if (assignment.pairs.empty()) return out;
  const T inv_pairs = T(1) / T(assignment.pairs.size());
  T total = T(0);
  for (auto [q, g] : assignment.pairs) {
    const auto& gt = gt_masks[std::size_t(g)];
    if (gt.size() != pixels) throw ConfigError("loss_mask: gt mask resolution differs from predictions");
    const auto row = mask_logits.row(std::size_t(q));
    auto grad = out.grad.row(std::size_t(q));
    T pair_loss = T(0);
    for (std::size_t p = 0; p < pixels; ++p) {
      const T x = row[p], y = T(gt[p]);
      pair_loss += std::max(x, T(0)) - x * y + std::log1p(std::exp(-std::abs(x)));
      grad[p] += (T(1) / (T(1) + std::exp(-x)) - y) / T(pixels) * inv_pairs;
    }
    pair_loss /= T(pixels);
    if (dice) {
      T inter = T(0), prob_sum = T(0), gt_sum = T(0);
      std::vector<T> prob(pixels);
      for (std::size_t p = 0; p < pixels; ++p) {
        prob[p] = T(1) / (T(1) + std::exp(-row[p]));
        inter += prob[p] * T(gt[p]);
        prob_sum += prob[p];
        gt_sum += T(gt[p]);
      }
      const T num = T(2) * inter + T(1), den = prob_sum + gt_sum + T(1);
      pair_loss += T(1) - num / den;
      for (std::size_t p = 0; p < pixels; ++p) {
        const T dprob = -(T(2) * T(gt[p]) * den - num) / (den * den);
        grad[p] += dprob * prob[p] * (T(1) - prob[p]) * inv_pairs;
      }
    }
    total += pair_loss;
  }
  out.value = total * inv_pairs;
  return out;
}

// ---- composite --------------------------------------------------------------------

LossBreakdown compose_loss(double l_mask_cls, double l_mask, std::vector<double> l_sim_per_layer,
                           const LossWeights& weights) {
  LossBreakdown b;
  b.l_mask_cls = l_mask_cls;
  b.l_mask = l_mask;
  b.l_sim_per_layer = std::move(l_sim_per_layer);
  b.weights = weights;
  b.total = weights.mask_cls * l_mask_cls + weights.mask * l_mask + weights.sim * b.l_sim_sum();
  return b;
}

template <typename T>
LossResult<T> total_loss(const DecoderOutput<T>& output, const TrainingTargets& targets, const LossConfig& config,
                         int num_prompts, const std::vector<Assignment>* fixed_assignments) {
  const std::size_t layers = output.layers.size();
  if (layers == 0) throw ConfigError("total_loss: no decoder layers");
  if (fixed_assignments && fixed_assignments->size() != layers)
    throw ConfigError("total_loss: one fixed assignment per layer required");
  const MatchCostWeights cost_weights{config.weights.mask_cls, config.weights.mask, config.dice ? config.weights.mask : 0.0};

  LossResult<T> result;
  std::vector<ag::Var<T>> terms;
  std::vector<T> term_weights;
  double cls_sum = 0.0, mask_sum = 0.0;
  std::vector<double> sim(layers, 0.0);
  for (std::size_t l = 0; l < layers; ++l) {
    const auto& rec = output.layers[l];
    Assignment a = fixed_assignments ? (*fixed_assignments)[l]
                                     : hungarian_match(rec.mask_logits.value(), rec.class_logits.value(),
                                                       targets.masks, targets.labels, cost_weights);
    auto cls = loss_mask_cls(rec.class_logits.value(), a, targets.labels, config.no_object_weight);
    auto msk = loss_mask(rec.mask_logits.value(), a, targets.masks, config.dice);
    if (!std::isfinite(double(cls.value)) || !std::isfinite(double(msk.value)))
      throw NumericalFault("non-finite mask loss", int(l));
    cls_sum += double(cls.value);
    mask_sum += double(msk.value);
    terms.push_back(ag::external_scalar(rec.class_logits, cls.value, std::move(cls.grad)));
    term_weights.push_back(T(config.weights.mask_cls / double(layers)));
    terms.push_back(ag::external_scalar(rec.mask_logits, msk.value, std::move(msk.grad)));
    term_weights.push_back(T(config.weights.mask / double(layers)));
    if (rec.similarity.defined()) {
      auto s = loss_sim_strategy(rec.similarity.value(), matched_classes(a, targets.labels), num_prompts,
                                 config.strategy);
      if (!std::isfinite(double(s.value))) throw NumericalFault("non-finite similarity loss", int(l));
      sim[l] = double(s.value);
      terms.push_back(ag::external_scalar(rec.similarity, s.value, std::move(s.grad)));
      term_weights.push_back(T(config.weights.sim));
    }
    result.assignments.push_back(std::move(a));
  }
  result.breakdown = compose_loss(cls_sum / double(layers), mask_sum / double(layers), std::move(sim), config.weights);
  result.total = ag::weighted_sum(terms, term_weights);
  return result;
}

#define MTA_INSTANTIATE_LOSSES(T)                                                                                  \
  template Matrix<double> matching_cost<T>(const Matrix<T>&, const Matrix<T>&,                                     \
                                           const std::vector<std::vector<std::uint8_t>>&, const std::vector<int>&, \
                                           const MatchCostWeights&);                                               \
  template Assignment hungarian_match<T>(const Matrix<T>&, const Matrix<T>&,                                       \
                                         const std::vector<std::vector<std::uint8_t>>&, const std::vector<int>&,   \
                                         const MatchCostWeights&);                                                 \
  template int select_positive_prompt<T>(std::span<const T>, int, int);                                            \
  template LossValue<T> loss_sim<T>(const Matrix<T>&, const std::vector<MatchedClass>&);                           \
  template LossValue<T> loss_sim_mixneg<T>(const Matrix<T>&, const std::vector<MatchedClass>&, int);               \
  template LossValue<T> loss_sim_separateneg<T>(const Matrix<T>&, const std::vector<MatchedClass>&, int);          \
  template LossValue<T> loss_mask_cls<T>(const Matrix<T>&, const Assignment&, const std::vector<int>&, double);    \
  template LossValue<T> loss_mask<T>(const Matrix<T>&, const Assignment&,                                          \
                                     const std::vector<std::vector<std::uint8_t>>&, bool);                         \
  template LossResult<T> total_loss<T>(const DecoderOutput<T>&, const TrainingTargets&, const LossConfig&, int,    \
                                       const std::vector<Assignment>*);

MTA_INSTANTIATE_LOSSES(float)
MTA_INSTANTIATE_LOSSES(double)

}  // namespace mta
