#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include <gtest/gtest.h>

#include "mta/errors.hpp"
#include "mta/losses.hpp"

namespace mta {
namespace {

Matrix<double> rnd(std::size_t r, std::size_t c, std::uint64_t seed, double sd = 1.0) {
  Rng rng(seed);
  return rng.normal_matrix<double>(r, c, sd);
}

// -log softmax of column `pos` over the listed columns of one row
double nll(const Matrix<double>& s, std::size_t row, std::size_t pos, const std::vector<std::size_t>& columns) {
  double z = 0.0;
  for (auto c : columns) z += std::exp(s(row, c));
  return -(s(row, pos) - std::log(z));
}

template <typename F>
double fd_max_error(const Matrix<double>& x, const Matrix<double>& grad, F f) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    auto up = x, down = x;
    up[i] += 1e-6;
    down[i] -= 1e-6;
    const double numeric = (f(up) - f(down)) / 2e-6;
    worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-4}));
  }
  return worst;
}

TEST(Hungarian, DiagonalDominance) {
  Matrix<double> cost(2, 2, std::vector<double>{0, 9, 9, 0});
  const auto a = solve_assignment(cost);
  EXPECT_EQ(a.pairs, (std::vector<std::pair<int, int>>{{0, 0}, {1, 1}}));
  EXPECT_TRUE(a.unmatched_queries.empty());
  EXPECT_EQ(a.total_cost, 0.0);
}

TEST(Hungarian, MatchesExhaustiveInjections) {
  Rng rng(3);
  for (int trial = 0; trial < 50; ++trial) {
    const auto cost = rng.normal_matrix<double>(3, 2, 1.0);
    double best = std::numeric_limits<double>::infinity();
    for (int a = 0; a < 3; ++a)
      for (int b = 0; b < 3; ++b)
        if (a != b) best = std::min(best, cost(std::size_t(a), 0) + cost(std::size_t(b), 1));
    const auto res = solve_assignment(cost);
    ASSERT_EQ(res.pairs.size(), 2u);
    EXPECT_NE(res.pairs[0].first, res.pairs[1].first);
    EXPECT_EQ(res.pairs[0].second, 0);
    EXPECT_EQ(res.pairs[1].second, 1);
    EXPECT_EQ(res.unmatched_queries.size(), 1u);
    EXPECT_NEAR(res.total_cost, best, 1e-12);
  }
}

TEST(Hungarian, EmptyGroundTruth) {
  const auto a = solve_assignment(Matrix<double>(4, 0));
  EXPECT_TRUE(a.pairs.empty());
  EXPECT_EQ(a.unmatched_queries, (std::vector<int>{0, 1, 2, 3}));
}

TEST(Hungarian, Errors) {
  EXPECT_THROW(solve_assignment(Matrix<double>(2, 3)), ConfigError);
  Matrix<double> cost(2, 2, 1.0);
  cost(1, 0) = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(solve_assignment(cost), NumericalFault);
  cost(1, 0) = std::numeric_limits<double>::infinity();
  EXPECT_THROW(solve_assignment(cost), NumericalFault);
}

TEST(Hungarian, MatchingCostMatchesLoop) {
  const auto masks = rnd(3, 4, 1, 2.0);
  const auto cls = rnd(3, 3, 2, 2.0);
  const std::vector<std::vector<std::uint8_t>> gt = {{1, 0, 0, 1}, {0, 1, 1, 1}};
  const std::vector<int> labels = {1, 0};
  const auto cost = matching_cost(masks, cls, gt, labels, {2.0, 5.0, 0.0});
  for (std::size_t q = 0; q < 3; ++q)
    for (std::size_t g = 0; g < 2; ++g) {
      double z = 0.0;
      for (std::size_t c = 0; c < 3; ++c) z += std::exp(cls(q, c));
      const double p = std::exp(cls(q, std::size_t(labels[g]))) / z;
      double bce = 0.0;
      for (std::size_t i = 0; i < 4; ++i) {
        const double s = 1.0 / (1.0 + std::exp(-masks(q, i)));
        bce -= gt[g][i] ? std::log(s) : std::log(1.0 - s);
      }
      EXPECT_NEAR(cost(q, g), -2.0 * p + 5.0 * bce / 4.0, 1e-12);
    }
  const auto a = hungarian_match(masks, cls, gt, labels, {2.0, 5.0, 0.0});
  EXPECT_NEAR(a.total_cost, solve_assignment(cost).total_cost, 0.0);
}

TEST(PositivePrompt, Selection) {
  const std::vector<double> row = {5.0, 0.1, 0.9, 0.4, -1.0, -1.0, -1.0};  // C=2, K=3 plus spare
  EXPECT_EQ(select_positive_prompt<double>(std::span(row).first(6), 0, 3), 0);
  const std::vector<double> s = {0.0, 0.0, 0.0, 0.1, 0.9, 0.4};
  EXPECT_EQ(select_positive_prompt<double>(s, 1, 3), 1);
  const std::vector<double> single = {0.3, 2.0, -1.0};
  for (int c = 0; c < 3; ++c) EXPECT_EQ(select_positive_prompt<double>(single, c, 1), 0);
  const std::vector<double> tie = {1.0, 1.0, 0.5, 1.0};
  EXPECT_EQ(select_positive_prompt<double>(tie, 0, 4), 0);

  Rng rng(4);
  for (int trial = 0; trial < 50; ++trial) {
    const auto m = rng.normal_matrix<double>(1, 12, 1.0);  // C=3, K=4
    for (int c = 0; c < 3; ++c) {
      int best = 0;
      for (int k = 1; k < 4; ++k)
        if (m[std::size_t(c * 4 + k)] > m[std::size_t(c * 4 + best)]) best = k;
      EXPECT_EQ(select_positive_prompt<double>(m.row(0), c, 4), best);
    }
  }
}

TEST(LossSim, SymmetricColumnsGiveLn2) {
  Matrix<double> s(2, 2, 0.7);
  const auto v = loss_sim(s, {{0, 0}, {1, 1}});
  EXPECT_NEAR(v.value, std::log(2.0), 1e-15);
}

TEST(LossSim, MonotoneInPositive) {
  Matrix<double> s(1, 3, 0.0);
  double previous = std::numeric_limits<double>::infinity();
  for (double pos : {0.0, 2.0, 10.0, 40.0}) {
    s(0, 1) = pos;
    const double v = loss_sim(s, {{0, 1}}).value;
    EXPECT_LT(v, previous);
    previous = v;
  }
  EXPECT_LT(previous, 1e-15);
}

TEST(LossSim, MatchesDirectEvaluation) {
  const auto s = rnd(3, 3, 5, 3.0);
  const std::vector<MatchedClass> targets = {{0, 2}, {2, 0}};
  const double expected = (nll(s, 0, 2, {0, 1, 2}) + nll(s, 2, 0, {0, 1, 2})) / 2.0;
  const auto v = loss_sim(s, targets);
  EXPECT_NEAR(v.value, expected, 1e-10);
  EXPECT_LT(fd_max_error(s, v.grad, [&](const Matrix<double>& x) { return loss_sim(x, targets).value; }), 1e-6);
  for (std::size_t c = 0; c < 3; ++c) EXPECT_EQ(v.grad(1, c), 0.0);
}

TEST(LossSim, NoMatchesGivesZero) {
  const auto v = loss_sim(rnd(3, 3, 5), {});
  EXPECT_EQ(v.value, 0.0);
  for (double g : v.grad.storage()) EXPECT_EQ(g, 0.0);
}

TEST(LossSim, MixNegExamples) {
  const auto s1 = rnd(4, 3, 6);
  const std::vector<MatchedClass> targets = {{0, 1}, {3, 2}, {1, 0}};
  EXPECT_EQ(loss_sim_mixneg(s1, targets, 1).value, loss_sim(s1, targets).value);

  Matrix<double> flat(2, 4, -0.3);
  EXPECT_NEAR(loss_sim_mixneg(flat, {{0, 0}, {1, 1}}, 2).value, std::log(4.0), 1e-15);

  const auto s = rnd(4, 9, 7, 2.0);  // C=3, K=3
  const std::vector<MatchedClass> t = {{0, 2}, {1, 0}, {3, 1}};
  double expected = 0.0;
  std::vector<std::size_t> all(9);
  std::iota(all.begin(), all.end(), 0);
  for (auto [q, c] : t) {
    std::size_t pos = std::size_t(c * 3);
    for (std::size_t k = 1; k < 3; ++k)
      if (s(std::size_t(q), std::size_t(c * 3) + k) > s(std::size_t(q), pos)) pos = std::size_t(c * 3) + k;
    expected += nll(s, std::size_t(q), pos, all) / 3.0;
  }
  const auto v = loss_sim_mixneg(s, t, 3);
  EXPECT_NEAR(v.value, expected, 1e-10);
  EXPECT_LT(fd_max_error(s, v.grad, [&](const Matrix<double>& x) { return loss_sim_mixneg(x, t, 3).value; }), 1e-6);
}

TEST(LossSim, SeparateNegExamples) {
  const auto s1 = rnd(4, 3, 8);
  const std::vector<MatchedClass> targets = {{0, 1}, {2, 2}};
  EXPECT_EQ(loss_sim_separateneg(s1, targets, 1).value, loss_sim(s1, targets).value);

  Matrix<double> flat(2, 4, 1.1);
  EXPECT_NEAR(loss_sim_separateneg(flat, {{0, 0}, {1, 1}}, 2).value, std::log(3.0), 1e-15);

  const auto s = rnd(5, 8, 9, 2.0);  // C=4, K=2
  const std::vector<MatchedClass> t = {{0, 3}, {2, 1}, {4, 0}};
  double expected = 0.0;
  for (auto [q, c] : t) {
    const std::size_t a = std::size_t(c * 2), b = a + 1;
    const std::size_t pos = s(std::size_t(q), b) > s(std::size_t(q), a) ? b : a;
    std::vector<std::size_t> cols = {pos};
    for (std::size_t j = 0; j < 8; ++j)
      if (int(j / 2) != c) cols.push_back(j);
    expected += nll(s, std::size_t(q), pos, cols) / 3.0;
  }
  const auto v = loss_sim_separateneg(s, t, 2);
  EXPECT_NEAR(v.value, expected, 1e-10);
  EXPECT_LE(v.value, loss_sim_mixneg(s, t, 2).value);
  EXPECT_LT(fd_max_error(s, v.grad, [&](const Matrix<double>& x) { return loss_sim_separateneg(x, t, 2).value; }),
            1e-6);
}

TEST(LossMaskCls, Examples) {
  Assignment a;
  a.pairs = {{0, 0}, {1, 1}};
  const std::vector<int> labels = {2, 0};

  Matrix<double> sharp(2, 4, 0.0);
  sharp(0, 2) = 20.0;
  sharp(1, 0) = 20.0;
  EXPECT_LT(loss_mask_cls(sharp, a, labels).value, 1e-3);

  EXPECT_NEAR(loss_mask_cls(Matrix<double>(2, 4, 0.3), a, labels).value, std::log(4.0), 1e-14);

  const auto logits = rnd(4, 4, 10, 2.0);  // C=3 plus no-object, queries 2 and 3 unmatched
  Assignment b;
  b.pairs = {{1, 0}, {3, 1}};
  b.unmatched_queries = {0, 2};
  const std::vector<int> gl = {2, 1};
  auto ce = [&](std::size_t q, std::size_t target) {
    double z = 0.0;
    for (std::size_t c = 0; c < 4; ++c) z += std::exp(logits(q, c));
    return -(logits(q, target) - std::log(z));
  };
  const double expected = (ce(1, 2) + ce(3, 1) + 0.1 * ce(0, 3) + 0.1 * ce(2, 3)) / (2.0 + 0.2);
  const auto v = loss_mask_cls(logits, b, gl, 0.1);
  EXPECT_NEAR(v.value, expected, 1e-12);
  EXPECT_LT(fd_max_error(logits, v.grad, [&](const Matrix<double>& x) { return loss_mask_cls(x, b, gl, 0.1).value; }),
            1e-6);
}

TEST(LossMask, Examples) {
  Assignment a;
  a.pairs = {{1, 0}};
  a.unmatched_queries = {0};
  const std::vector<std::vector<std::uint8_t>> gt = {{1, 0, 0, 1}};

  Matrix<double> sharp(2, 4, 0.0);
  for (std::size_t p = 0; p < 4; ++p) sharp(1, p) = gt[0][p] ? 20.0 : -20.0;
  EXPECT_LT(loss_mask(sharp, a, gt).value, 1e-6);

  EXPECT_NEAR(loss_mask(Matrix<double>(2, 4, 0.0), a, gt).value, std::log(2.0), 1e-15);

  const auto logits = rnd(2, 4, 11, 2.0);
  double expected = 0.0;
  for (std::size_t p = 0; p < 4; ++p) {
    const double s = 1.0 / (1.0 + std::exp(-logits(1, p)));
    expected -= (gt[0][p] ? std::log(s) : std::log(1.0 - s)) / 4.0;
  }
  const auto v = loss_mask(logits, a, gt);
  EXPECT_NEAR(v.value, expected, 1e-12);
  EXPECT_LT(fd_max_error(logits, v.grad, [&](const Matrix<double>& x) { return loss_mask(x, a, gt).value; }), 1e-6);
  const auto d = loss_mask(logits, a, gt, true);
  EXPECT_GT(d.value, v.value);
  EXPECT_LT(fd_max_error(logits, d.grad, [&](const Matrix<double>& x) { return loss_mask(x, a, gt, true).value; }),
            1e-6);
}

TEST(Composite, HandComposedBreakdown) {
  const auto b = compose_loss(1.0, 2.0, {0.5, 0.5}, {2.0, 5.0, 1.0});
  EXPECT_EQ(b.total, 13.0);
  EXPECT_EQ(b.l_sim_sum(), 1.0);
  const LossConfig defaults;
  EXPECT_EQ(defaults.weights.mask_cls, 2.0);
  EXPECT_EQ(defaults.weights.mask, 5.0);
  EXPECT_EQ(defaults.weights.sim, 1.0);
}

struct CompositeFixture : ::testing::Test {
  static ModelConfig config() {
    ModelConfig c;
    c.num_queries = 6;
    c.num_classes = 3;
    c.num_prompts = 2;
    c.num_layers = 2;
    c.d_model = 8;
    c.num_heads = 2;
    c.d_text = 8;
    c.d_embed = 4;
    c.context_length = 2;
    c.ffn_dim = 16;
    c.trunk_width = 4;
    return c;
  }
  CompositeFixture() : model(config(), 0) {
    auto spec = default_scene_spec(3, 32, 32);
    sample = generate_scene(spec, 4);
    const auto map = semantic_map_of(sample, 0);
    const auto sem = semantic_targets(map, map.size(), 3);
    for (std::size_t i = 0; i < sem.masks.size(); ++i) {
      targets.masks.push_back(downsample_majority(sem.masks[i], 32, 32, 4));
      targets.labels.push_back(sem.labels[i]);
    }
  }
  MaskTextModel<double> model;
  SegmentationSample sample;
  TrainingTargets targets;
};

TEST_F(CompositeFixture, BreakdownInvariantHolds) {
  const auto out = model.forward(sample);
  for (auto strategy : {NegativeStrategy::MixNeg, NegativeStrategy::SeparateNeg}) {
    LossConfig cfg;
    cfg.strategy = strategy;
    const auto r = total_loss(out, targets, cfg, 2);
    ASSERT_EQ(r.breakdown.l_sim_per_layer.size(), 2u);
    ASSERT_EQ(r.assignments.size(), 2u);
    EXPECT_NEAR(r.breakdown.total, 2.0 * r.breakdown.l_mask_cls + 5.0 * r.breakdown.l_mask + r.breakdown.l_sim_sum(),
                1e-12);
    EXPECT_NEAR(r.total.item(), r.breakdown.total, 1e-12);
    for (const auto& a : r.assignments) EXPECT_EQ(a.pairs.size(), targets.labels.size());

    // per-layer pieces recomputed from the public losses
    double cls = 0.0, msk = 0.0;
    for (std::size_t l = 0; l < 2; ++l) {
      const auto& rec = out.layers[l];
      const auto& a = r.assignments[l];
      cls += loss_mask_cls(rec.class_logits.value(), a, targets.labels, 0.1).value / 2.0;
      msk += loss_mask(rec.mask_logits.value(), a, targets.masks).value / 2.0;
      const double sim =
          loss_sim_strategy(rec.similarity.value(), matched_classes(a, targets.labels), 2, strategy).value;
      EXPECT_NEAR(r.breakdown.l_sim_per_layer[l], sim, 1e-12);
    }
    EXPECT_NEAR(r.breakdown.l_mask_cls, cls, 1e-12);
    EXPECT_NEAR(r.breakdown.l_mask, msk, 1e-12);
  }
}

TEST_F(CompositeFixture, ZeroSimWeightIgnoresSimilarity) {
  auto out = model.forward(sample);
  LossConfig cfg;
  cfg.weights.sim = 0.0;
  const double before = total_loss(out, targets, cfg, 2).breakdown.total;
  for (auto& rec : out.layers) rec.similarity = ag::Var<double>::constant(rnd(6, 6, 12, 10.0));
  EXPECT_EQ(total_loss(out, targets, cfg, 2).breakdown.total, before);
}

TEST_F(CompositeFixture, FixedAssignmentsSkipMatching) {
  const auto out = model.forward(sample);
  const LossConfig cfg;
  const auto first = total_loss(out, targets, cfg, 2);
  const auto again = total_loss(out, targets, cfg, 2, &first.assignments);
  EXPECT_EQ(again.breakdown.total, first.breakdown.total);
}

TEST(Strategy, NamesRoundTrip) {
  for (auto s : {NegativeStrategy::MixNeg, NegativeStrategy::SeparateNeg})
    EXPECT_EQ(negative_strategy_from_string(to_string(s)), s);
  EXPECT_THROW(negative_strategy_from_string("bogus"), ConfigError);
}

}  // namespace
}  // namespace mta
