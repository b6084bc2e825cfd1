#include <cmath>
#include <fstream>

#include <gtest/gtest.h>

#include "mta/decoder.hpp"
#include "mta/encoders.hpp"
#include "mta/errors.hpp"
#include "test_util.hpp"

namespace mta {
namespace {

ModelConfig small_config() {
  ModelConfig c;
  c.num_queries = 4;
  c.num_classes = 5;
  c.num_prompts = 3;
  c.num_layers = 3;
  c.d_model = 32;
  c.d_text = 16;
  c.d_embed = 8;
  c.context_length = 4;
  c.ffn_dim = 32;
  c.trunk_width = 8;
  return c;
}

TEST(Encoders, PyramidShapes) {
  MaskTextModel<float> model(small_config(), 0);
  const auto pyr = model.encode_image(generate_scene(default_scene_spec(5), 1));
  const int expected[3] = {2, 4, 8};
  for (int l = 0; l < 3; ++l) {
    EXPECT_EQ(pyr.level_height[l], expected[l]);
    EXPECT_EQ(pyr.level_width[l], expected[l]);
    EXPECT_EQ(pyr.levels[l].rows(), std::size_t(expected[l] * expected[l]));
    EXPECT_EQ(pyr.levels[l].cols(), 32u);
  }
  EXPECT_EQ(pyr.prediction_height, 16);
  EXPECT_EQ(pyr.prediction_width, 16);
  EXPECT_EQ(pyr.prediction.rows(), 256u);
  EXPECT_EQ(pyr.prediction.cols(), 32u);
}

TEST(Encoders, PyramidContractForOtherGrids) {
  MaskTextModel<float> model(small_config(), 0);
  for (auto [h, w] : {std::pair{32, 32}, {32, 96}, {128, 64}}) {
    const auto pyr = model.encode_image(generate_scene(default_scene_spec(5, h, w), 2));
    for (int l = 0; l < 3; ++l) {
      EXPECT_EQ(pyr.level_height[l] * FeaturePyramid<float>::kLevelStrides[l], h);
      EXPECT_EQ(pyr.level_width[l] * FeaturePyramid<float>::kLevelStrides[l], w);
    }
    EXPECT_EQ(pyr.prediction.rows(), std::size_t(h / 4 * w / 4));
  }
}

TEST(Encoders, ZeroImageIsFiniteAndDeterministic) {
  MaskTextModel<float> model(small_config(), 0);
  SegmentationSample s;
  s.height = s.width = 64;
  s.image.assign(3 * 64 * 64, 0.0f);
  const auto a = model.encode_image(s), b = model.encode_image(s);
  for (int l = 0; l < 3; ++l) {
    EXPECT_TRUE(a.levels[l].value().all_finite());
    EXPECT_EQ(a.levels[l].value(), b.levels[l].value());
  }
  EXPECT_TRUE(a.prediction.value().all_finite());
  EXPECT_EQ(a.prediction.value(), b.prediction.value());
}

TEST(Encoders, IndivisibleImageRejected) {
  MaskTextModel<float> model(small_config(), 0);
  SegmentationSample s;
  s.height = 60;
  s.width = 64;
  s.image.assign(3 * 60 * 64, 0.0f);
  EXPECT_THROW(model.encode_image(s), ConfigError);
}

TEST(Encoders, TextRowCountAndOrder) {
  auto cfg = small_config();
  cfg.num_prompts = 1;
  MaskTextModel<float> model(cfg, 0);
  const auto t = model.encode_text();
  EXPECT_EQ(t.rows.rows(), 5u);
  EXPECT_EQ(t.rows.cols(), 16u);
  EXPECT_TRUE(t.rows.value().all_finite());
  EXPECT_EQ(t.row_of(3, 0), 3u);
  MaskTextModel<float> three(small_config(), 0);
  EXPECT_EQ(three.encode_text().row_of(2, 1), 7u);
  EXPECT_EQ(three.encode_text().rows.value(), three.encode_text().rows.value());
}

TEST(Encoders, ZeroPromptsRejected) {
  auto cfg = small_config();
  cfg.num_prompts = 0;
  EXPECT_THROW(MaskTextModel<float>(cfg, 0), ConfigError);
}

TEST(Encoders, PerturbingPromptIsLocal) {
  MaskTextModel<double> model(small_config(), 0);
  const auto before = model.encode_text().rows.value();
  auto& prompts = const_cast<ag::Var<double>&>(model.prompt_bank().prompts).mutable_value();
  const std::size_t ctx = 4;
  for (std::size_t r = 2 * ctx; r < 3 * ctx; ++r)
    for (std::size_t c = 0; c < prompts.cols(); ++c) prompts(r, c) += 0.3;
  const auto after = model.encode_text().rows.value();
  for (int c = 0; c < 5; ++c)
    for (int k = 0; k < 3; ++k) {
      const std::size_t row = std::size_t(c * 3 + k);
      bool changed = false;
      for (std::size_t j = 0; j < before.cols(); ++j) changed = changed || before(row, j) != after(row, j);
      EXPECT_EQ(changed, k == 2) << "c " << c << " k " << k;
    }
}

TEST(Encoders, TextGradientMatchesFiniteDifferences) {
  MaskTextModel<double> model(small_config(), 0);
  const auto& bank = model.prompt_bank();
  Rng rng(5);
  const auto weights = rng.normal_matrix<double>(15, 16, 1.0);
  auto objective = [&] {
    return ag::sum_all(ag::hadamard(model.encode_text().rows, ag::Var<double>::constant(weights)));
  };
  model.parameters().zero_grad();
  ag::backward(objective());
  const auto grad = bank.prompts.grad();
  auto& p = const_cast<ag::Var<double>&>(bank.prompts).mutable_value();
  double worst = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double orig = p[i];
    p[i] = orig + 1e-6;
    const double up = objective().item();
    p[i] = orig - 1e-6;
    const double down = objective().item();
    p[i] = orig;
    const double numeric = (up - down) / 2e-6;
    worst = std::max(worst, std::abs(numeric - grad[i]) / std::max({std::abs(numeric), std::abs(grad[i]), 1e-4}));
  }
  EXPECT_LT(worst, 1e-5);
}

TEST(Encoders, FrozenWeightsGetNoGradient) {
  MaskTextModel<double> model(small_config(), 0);
  const auto out = model.forward(generate_scene(default_scene_spec(5), 0));
  ag::backward(ag::sum_all(out.layers.back().similarity));
  for (const auto& p : model.parameters().all()) {
    const bool frozen_group = p.name.rfind("text_encoder/", 0) == 0 || p.name.rfind("image_encoder/", 0) == 0 ||
                              p.name == "prompt_bank/class_tokens";
    EXPECT_EQ(p.trainable, !frozen_group) << p.name;
    if (!p.trainable) EXPECT_TRUE(p.var.grad().empty()) << p.name;
  }
  EXPECT_FALSE(model.prompt_bank().prompts.grad().empty());
}

TEST(Encoders, EmbeddingRoundTrip) {
  test::TempDir dir;
  MaskTextModel<float> model(small_config(), 0);
  EmbeddingFile f{3, 5, 16, model.encode_text().rows.value()};
  write_embeddings(dir / "t.bin", f);
  const auto back = read_embeddings(dir / "t.bin", 3, 5, 16);
  EXPECT_EQ(back.rows, f.rows);

  MaskTextModel<float> imported(small_config(), 7);
  imported.use_imported_embeddings(back.rows);
  EXPECT_EQ(imported.encode_text().rows.value(), f.rows);
  EXPECT_FALSE(imported.parameters().find("prompt_bank/prompts")->trainable);
}

TEST(Encoders, EmbeddingShapeMismatchNamesValues) {
  test::TempDir dir;
  EmbeddingFile f{1, 5, 4, Matrix<float>(5, 4, 0.5f)};
  write_embeddings(dir / "t.bin", f);
  try {
    read_embeddings(dir / "t.bin", 1, 6, 4);
    FAIL();
  } catch (const ConfigError& e) {
    const std::string msg = e.what();
    EXPECT_NE(msg.find("expected 6"), std::string::npos) << msg;
    EXPECT_NE(msg.find("actual 5"), std::string::npos) << msg;
  }
}

TEST(Encoders, TruncatedEmbeddingReportsOffset) {
  EmbeddingFile f{1, 2, 3, Matrix<float>(2, 3, 1.0f)};
  test::TempDir dir;
  write_embeddings(dir / "t.bin", f);
  std::ifstream in(dir / "t.bin", std::ios::binary);
  std::vector<std::uint8_t> bytes(std::istreambuf_iterator<char>(in), {});
  ASSERT_EQ(bytes.size(), 8u + 12u + 24u);
  bytes.resize(8 + 12 + 4 * 4 + 2);  // four floats plus half of the fifth
  try {
    decode_embeddings(bytes);
    FAIL();
  } catch (const ParseError& e) {
    EXPECT_EQ(e.offset(), 8u + 12u + 16u);
  }
}

}  // namespace
}  // namespace mta
