#include <cmath>

#include <gtest/gtest.h>

#include "mta/decoder.hpp"
#include "mta/errors.hpp"

namespace mta {
namespace {

using V = ag::Var<double>;

ModelConfig toy_config() {
  ModelConfig c;  // N=20, C=6, K=3, L=3, d_model=32, d_text=64
  c.trunk_width = 8;
  return c;
}

const SegmentationSample& scene() {
  static const auto s = generate_scene(default_scene_spec(6), 11);
  return s;
}

double spectral_norm(const Matrix<double>& w) {
  std::vector<double> v(w.cols(), 1.0);
  double sigma = 0.0;
  for (int it = 0; it < 500; ++it) {
    std::vector<double> u(w.rows(), 0.0), next(w.cols(), 0.0);
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) u[r] += w(r, c) * v[c];
    for (std::size_t r = 0; r < w.rows(); ++r)
      for (std::size_t c = 0; c < w.cols(); ++c) next[c] += w(r, c) * u[r];
    double n = 0.0;
    for (double x : next) n += x * x;
    n = std::sqrt(n);
    sigma = std::sqrt(n);
    for (std::size_t c = 0; c < v.size(); ++c) v[c] = next[c] / n;
  }
  return sigma;
}

TEST(Decoder, ReduceTextShapes) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto t = model.encode_text();
  const auto reduced = model.reduce_text(t.rows);
  EXPECT_EQ(reduced.rows(), 18u);
  EXPECT_EQ(reduced.cols(), 32u);
  const auto zero = model.reduce_text(V::constant(Matrix<double>(18, 64)));
  for (double v : zero.value().storage()) EXPECT_EQ(v, 0.0);
}

TEST(Decoder, ReduceTextPaperDimensions) {
  auto cfg = paper_model_config(2);
  cfg.trunk_width = 8;
  cfg.num_layers = 1;
  MaskTextModel<float> model(cfg, 0);
  const auto reduced = model.reduce_text(ag::Var<float>::constant(Matrix<float>(6, 1024, 0.1f)));
  EXPECT_EQ(reduced.rows(), 6u);
  EXPECT_EQ(reduced.cols(), 256u);
}

TEST(Decoder, LayerPreservesQueryCount) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto pyr = model.encode_image(scene());
  auto q = V::constant(Rng(3).normal_matrix<double>(18 + 20, 32, 1.0));
  for (int i = 0; i < 3; ++i) {
    q = model.decoder_layer(i, q, pyr, nullptr);
    EXPECT_EQ(q.rows(), 38u);
    EXPECT_EQ(q.cols(), 32u);
  }
  EXPECT_THROW(model.decoder_layer(0, V::constant(Matrix<double>(37, 32)), pyr, nullptr), ConfigError);
}

TEST(Decoder, DuplicateMaskQueriesStayIdentical) {
  auto cfg = toy_config();
  cfg.masked_attention = false;
  MaskTextModel<double> model(cfg, 0);
  auto& params = model.parameters();
  for (const char* name : {"decoder/mask_queries", "decoder/mask_query_pos"}) {
    auto& m = const_cast<V&>(params.find(name)->var).mutable_value();
    for (std::size_t c = 0; c < m.cols(); ++c) m(1, c) = m(0, c);
  }
  const auto out = model.forward(scene());
  const auto& q = out.final_queries.value();
  for (std::size_t c = 0; c < q.cols(); ++c) EXPECT_NEAR(q(18, c), q(19, c), 1e-12);
  const auto& logits = out.layers.back().mask_logits.value();
  for (std::size_t p = 0; p < logits.cols(); ++p) EXPECT_NEAR(logits(0, p), logits(1, p), 1e-10);
}

TEST(Decoder, AttentionRowsSumToOne) {
  MaskTextModel<double> model(toy_config(), 0);
  ForwardOptions opts;
  opts.trace_attention = true;
  const auto out = model.forward(scene(), opts);
  ASSERT_EQ(out.attention_probs.size(), 3u);
  for (std::size_t layer = 0; layer < 3; ++layer) {
    const auto& allowed = out.cross_attention_masks[layer];
    ASSERT_EQ(out.attention_probs[layer].size(), 8u);  // 4 cross heads, 4 self heads
    for (std::size_t h = 0; h < out.attention_probs[layer].size(); ++h) {
      const auto& p = out.attention_probs[layer][h];
      for (std::size_t r = 0; r < p.rows(); ++r) {
        double s = 0.0;
        for (std::size_t c = 0; c < p.cols(); ++c) {
          s += p(r, c);
          if (h < 4 && !allowed.empty() && !allowed[r * p.cols() + c]) EXPECT_EQ(p(r, c), 0.0);
        }
        EXPECT_NEAR(s, 1.0, 1e-6);
      }
    }
  }
}

TEST(Decoder, TextQueriesUseFullCrossAttention) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto out = model.forward(scene());
  for (const auto& allowed : out.cross_attention_masks) {
    const std::size_t keys = allowed.size() / 38;
    for (std::size_t r = 0; r < 18; ++r)
      for (std::size_t k = 0; k < keys; ++k) EXPECT_EQ(allowed[r * keys + k], 1);
    for (std::size_t r = 18; r < 38; ++r) {
      bool any = false;
      for (std::size_t k = 0; k < keys; ++k) any = any || allowed[r * keys + k];
      EXPECT_TRUE(any);
    }
  }
}

TEST(Decoder, ProjectionResidualIdentity) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto t0 = model.encode_text().rows;
  auto [tp, mp] = model.project_to_clip_space(V::constant(Matrix<double>(18, 32)),
                                              V::constant(Rng(1).normal_matrix<double>(20, 32, 1.0)), t0);
  EXPECT_EQ(tp.value(), t0.value());
  EXPECT_EQ(tp.rows(), 18u);
  EXPECT_EQ(tp.cols(), 64u);
  EXPECT_EQ(mp.rows(), 20u);
  EXPECT_EQ(mp.cols(), 64u);
}

TEST(Decoder, ProjectionOffsetBoundedAtInit) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto& params = model.parameters();
  const double bound_factor = spectral_norm(params.find("heads/text_up.l0.w")->var.value()) *
                              spectral_norm(params.find("heads/text_up.l1.w")->var.value());
  const auto t0 = model.encode_text().rows;
  const auto t_hat = model.reduce_text(t0);
  auto [tp, mp] = model.project_to_clip_space(t_hat, V::constant(Matrix<double>(20, 32)), t0);
  for (std::size_t r = 0; r < 18; ++r) {
    double diff = 0.0, in = 0.0;
    for (std::size_t c = 0; c < 64; ++c) diff += std::pow(tp.value()(r, c) - t0.value()(r, c), 2);
    for (std::size_t c = 0; c < 32; ++c) in += std::pow(t_hat.value()(r, c), 2);
    EXPECT_LE(std::sqrt(diff), bound_factor * std::sqrt(in) + 1e-12) << r;
  }
}

TEST(Decoder, SimilarityScores) {
  Rng rng(2);
  auto m = rng.normal_matrix<double>(3, 5, 1.0);
  const auto t = rng.normal_matrix<double>(4, 5, 1.0);
  for (std::size_t c = 0; c < 5; ++c) m(1, c) = 0.0;
  const auto s = similarity_scores(V::constant(m), V::constant(t), 0.07).value();
  const auto s2 = similarity_scores(V::constant(m), V::constant(t), 0.14).value();
  for (std::size_t i = 0; i < 3; ++i) {
    std::size_t arg1 = 0, arg2 = 0;
    for (std::size_t j = 0; j < 4; ++j) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 5; ++c) dot += m(i, c) * t(j, c);
      EXPECT_NEAR(s(i, j), dot / 0.07, 1e-12);
      EXPECT_NEAR(s2(i, j), s(i, j) / 2, 1e-12);
      if (i == 1) EXPECT_EQ(s(i, j), 0.0);
      if (s(i, j) > s(i, arg1)) arg1 = j;
      if (s2(i, j) > s2(i, arg2)) arg2 = j;
    }
    EXPECT_EQ(arg1, arg2);
  }
  EXPECT_THROW(similarity_scores(V::constant(m), V::constant(t), 0.0), ConfigError);
  EXPECT_THROW(similarity_scores(V::constant(m), V::constant(t), -1.0), ConfigError);
}

TEST(Decoder, PredictMasksIsPixelDotProduct) {
  MaskTextModel<double> model(toy_config(), 0);
  Matrix<double> eye(32, 32);
  for (std::size_t i = 0; i < 32; ++i) eye(i, i) = 1.0;
  const auto queries = V::constant(Rng(4).normal_matrix<double>(20, 32, 1.0));
  const auto embed = model.predict_masks(queries, V::constant(eye)).value();  // [20 x 32] mask embeddings
  const auto features = Rng(5).normal_matrix<double>(4, 32, 1.0);             // 2x2 map
  const auto logits = model.predict_masks(queries, V::constant(features)).value();
  ASSERT_EQ(logits.rows(), 20u);
  ASSERT_EQ(logits.cols(), 4u);
  for (std::size_t q = 0; q < 20; ++q)
    for (std::size_t p = 0; p < 4; ++p) {
      double dot = 0.0;
      for (std::size_t c = 0; c < 32; ++c) dot += embed(q, c) * features(p, c);
      EXPECT_NEAR(logits(q, p), dot, 1e-10);
    }
  const auto zero = model.predict_masks(V::constant(Matrix<double>(20, 32)), V::constant(features)).value();
  for (double v : zero.storage()) EXPECT_EQ(v, 0.0);
  const auto full = model.forward(scene()).layers.back().mask_logits;
  EXPECT_EQ(full.rows(), 20u);
  EXPECT_EQ(full.cols(), 256u);
}

TEST(Decoder, ClassifyMasks) {
  MaskTextModel<double> model(toy_config(), 0);
  auto q = Rng(6).normal_matrix<double>(20, 32, 1.0);
  for (std::size_t c = 0; c < 32; ++c) q(3, c) = q(2, c);
  const auto logits = model.classify_masks(V::constant(q)).value();
  ASSERT_EQ(logits.cols(), 7u);
  for (std::size_t c = 0; c < 7; ++c) EXPECT_EQ(logits(2, c), logits(3, c));
  for (std::size_t r = 0; r < 20; ++r) {
    double mx = logits(r, 0), s = 0.0;
    for (std::size_t c = 0; c < 7; ++c) mx = std::max(mx, logits(r, c));
    for (std::size_t c = 0; c < 7; ++c) s += std::exp(logits(r, c) - mx);
    double total = 0.0;
    for (std::size_t c = 0; c < 7; ++c) total += std::exp(logits(r, c) - mx) / s;
    EXPECT_NEAR(total, 1.0, 1e-6);
  }
}

TEST(Decoder, LevelSchedule) {
  auto cfg = toy_config();
  MaskTextModel<double> three(cfg, 0);
  const auto out = three.forward(scene());
  ASSERT_EQ(out.layers.size(), 3u);
  const auto pyr = three.encode_image(scene());
  for (int i = 0; i < 3; ++i) {
    EXPECT_EQ(out.layers[std::size_t(i)].level, i);
    EXPECT_EQ(pyr.level_height[std::size_t(i)], 64 / FeaturePyramid<double>::kLevelStrides[std::size_t(i)]);
  }
  EXPECT_EQ(FeaturePyramid<double>::kLevelStrides, (std::array<int, 3>{32, 16, 8}));

  cfg.num_layers = 9;
  MaskTextModel<float> nine(cfg, 0);
  const auto out9 = nine.forward(scene());
  ASSERT_EQ(out9.layers.size(), 9u);
  int uses[3] = {0, 0, 0};
  for (const auto& l : out9.layers) ++uses[l.level];
  EXPECT_EQ(uses[0], 3);
  EXPECT_EQ(uses[1], 3);
  EXPECT_EQ(uses[2], 3);
}

TEST(Decoder, LayerRecordShapes) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto out = model.forward(scene());
  for (const auto& l : out.layers) {
    EXPECT_EQ(l.text_proj.rows(), 18u);
    EXPECT_EQ(l.text_proj.cols(), 64u);
    EXPECT_EQ(l.mask_proj.rows(), 20u);
    EXPECT_EQ(l.similarity.rows(), 20u);
    EXPECT_EQ(l.similarity.cols(), 18u);
    EXPECT_TRUE(l.similarity.value().all_finite());
    EXPECT_EQ(l.class_logits.cols(), 7u);
  }
  EXPECT_EQ(out.initial_text.value(), model.encode_text().rows.value());
}

TEST(Decoder, ForwardIsDeterministic) {
  MaskTextModel<float> model(toy_config(), 0);
  const auto a = model.forward(scene()), b = model.forward(scene());
  for (std::size_t i = 0; i < a.layers.size(); ++i) {
    EXPECT_EQ(a.layers[i].similarity.value(), b.layers[i].similarity.value());
    EXPECT_EQ(a.layers[i].mask_logits.value(), b.layers[i].mask_logits.value());
    EXPECT_EQ(a.layers[i].class_logits.value(), b.layers[i].class_logits.value());
  }
  MaskTextModel<float> twin(toy_config(), 0);
  EXPECT_EQ(twin.forward(scene()).layers.back().mask_logits.value(), a.layers.back().mask_logits.value());
}

TEST(Decoder, InferenceSingleQuery) {
  Matrix<double> mask(1, 4, 50.0), cls(1, 4, -50.0);
  cls(0, 2) = 50.0;
  EXPECT_EQ(inference_semantic_map(mask, cls, 2, 2, 4), std::vector<int>(64, 2));
}

TEST(Decoder, InferenceMatchesBruteForce) {
  Rng rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const auto mask = rng.normal_matrix<double>(2, 4, 2.0);  // 2 queries, 2x2 pixels
    const auto cls = rng.normal_matrix<double>(2, 3, 2.0);   // 2 classes + no-object
    const auto map = inference_semantic_map(mask, cls, 2, 2, 1);
    for (std::size_t p = 0; p < 4; ++p) {
      double best = -1.0;
      int arg = -1;
      for (int c = 0; c < 2; ++c) {
        double score = 0.0;
        for (std::size_t q = 0; q < 2; ++q) {
          const double z = std::exp(cls(q, 0)) + std::exp(cls(q, 1)) + std::exp(cls(q, 2));
          score += std::exp(cls(q, std::size_t(c))) / z / (1.0 + std::exp(-mask(q, p)));
        }
        if (score > best) best = score, arg = c;
      }
      EXPECT_EQ(map[p], arg) << trial << " " << p;
    }
  }
}

TEST(Decoder, InferenceUpsamplesByNearestNeighbour) {
  Matrix<double> mask(2, 4, -20.0), cls(2, 3, 0.0);
  cls(0, 0) = 30.0;
  cls(1, 1) = 30.0;
  mask(0, 0) = mask(0, 1) = mask(0, 2) = mask(0, 3) = 0.0;
  mask(1, 3) = 20.0;
  const auto map = inference_semantic_map(mask, cls, 2, 2, 2);
  const std::vector<int> expected = {0, 0, 0, 0,  //
                                     0, 0, 0, 0,  //
                                     0, 0, 1, 1,  //
                                     0, 0, 1, 1};
  EXPECT_EQ(map, expected);
}

TEST(Decoder, HeadsIgnoreTextRowsForMaskOutputs) {
  MaskTextModel<double> model(toy_config(), 0);
  const auto pyr = model.encode_image(scene());
  const auto out = model.forward(pyr);
  auto q = out.final_queries.value();
  for (std::size_t r = 0; r < 18; ++r)
    for (std::size_t c = 0; c < 32; ++c) q(r, c) += 3.0 * std::sin(double(r * 7 + c));
  const auto rec = model.heads(V::constant(q), pyr, out.initial_text);
  EXPECT_EQ(rec.mask_logits.value(), out.layers.back().mask_logits.value());
  EXPECT_EQ(rec.class_logits.value(), out.layers.back().class_logits.value());
  EXPECT_NE(rec.text_proj.value(), out.layers.back().text_proj.value());
}

TEST(Decoder, BaselineHasNoTextQueries) {
  auto cfg = toy_config();
  cfg.use_text_queries = false;
  MaskTextModel<double> model(cfg, 0);
  const auto out = model.forward(scene());
  EXPECT_EQ(out.final_queries.rows(), 20u);
  EXPECT_FALSE(out.layers.back().similarity.defined());
}

}  // namespace
}  // namespace mta
