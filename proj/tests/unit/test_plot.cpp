#include <sstream>

#include <gtest/gtest.h>

#include "mta/errors.hpp"
#include "mta/plot.hpp"
#include "mta/rng.hpp"
#include "mta/text_format.hpp"

namespace mta {
namespace {

TEST(Plot, HeatmapSidecarIsTheMatrix) {
  Matrix<float> s(2, 4, std::vector<float>{0.5f, -1.25f, 3.0f, 1e-3f, 7.0f, 0.1f, -0.2f, 2.5f});
  const auto plot = similarity_heatmap(s, 4);
  EXPECT_EQ(plot.image.width, 16);
  EXPECT_EQ(plot.image.height, 8);
  std::istringstream in(plot.sidecar);
  for (std::size_t r = 0; r < 2; ++r)
    for (std::size_t c = 0; c < 4; ++c) {
      std::string token;
      in >> token;
      EXPECT_EQ(text::parse_number<float>(token, "cell"), s(r, c));
    }
  std::string extra;
  EXPECT_FALSE(in >> extra);
}

TEST(Plot, LossCurvePassesNumbersThrough) {
  std::string metrics;
  for (int i = 1; i <= 10; ++i)
    metrics += "{\"iter\":" + std::to_string(i) + ",\"l_mask_cls\":1,\"total\":" + std::to_string(10.0 / i) +
               "e0,\"lr\":0.001}\n";
  const auto points = read_loss_curve(metrics);
  ASSERT_EQ(points.size(), 10u);
  const auto plot = loss_curve(points);
  std::istringstream in(plot.sidecar);
  int lines = 0;
  for (std::string line; std::getline(in, line); ++lines) {
    EXPECT_EQ(line, points[std::size_t(lines)].iter + " " + points[std::size_t(lines)].total);
  }
  EXPECT_EQ(lines, 10);
  EXPECT_EQ(points[0].iter, "1");
  EXPECT_THROW(read_loss_curve("{\"iter\":1}\n"), ConfigError);
  EXPECT_THROW(read_loss_curve("not json\n"), ConfigError);
}

TEST(Plot, ProjectionIsDeterministic) {
  Rng rng(1);
  const auto m = rng.normal_matrix<float>(5, 6, 1.0), t = rng.normal_matrix<float>(4, 6, 1.0);
  const auto a = embedding_projection(m, t, 3), b = embedding_projection(m, t, 3);
  EXPECT_EQ(a.sidecar, b.sidecar);
  EXPECT_EQ(a.image.pixels, b.image.pixels);
  std::istringstream in(a.sidecar);
  int masks = 0, texts = 0;
  for (std::string kind, idx, x, y; in >> kind >> idx >> x >> y;) (kind == "mask" ? masks : texts)++;
  EXPECT_EQ(masks, 5);
  EXPECT_EQ(texts, 4);
}

TEST(Plot, OverlaySidecarIsLabelMap) {
  const auto spec = default_scene_spec(3, 32, 32);
  const auto s = generate_scene(spec, 1);
  const auto labels = semantic_map_of(s, 0);
  const auto plot = segmentation_overlay(s, labels, 3);
  std::istringstream in(plot.sidecar);
  for (int l : labels) {
    int v = -1;
    in >> v;
    EXPECT_EQ(v, l);
  }
  EXPECT_THROW(segmentation_overlay(s, std::vector<int>(10, 0), 3), ConfigError);
}

TEST(Plot, PpmHeaderAndKinds) {
  const auto bytes = encode_ppm(RgbImage(3, 2));
  const std::string header = "P6\n3 2\n255\n";
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + long(header.size())), header);
  EXPECT_EQ(bytes.size(), header.size() + 18);
  for (auto k : {PlotKind::SimilarityHeatmap, PlotKind::SegmentationOverlay, PlotKind::EmbeddingProjection,
                 PlotKind::LossCurve})
    EXPECT_EQ(plot_kind_from_string(to_string(k)), k);
  EXPECT_THROW(plot_kind_from_string("pie-chart"), ConfigError);
}

}  // namespace
}  // namespace mta
