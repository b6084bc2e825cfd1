#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "mta/matrix.hpp"
#include "mta/scenes.hpp"

namespace mta {

struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;  // row-major RGB

  RgbImage() = default;
  RgbImage(int w, int h, std::uint8_t fill = 255) : width(w), height(h), pixels(std::size_t(w) * h * 3, fill) {}
  void set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b);
};

/// Binary PPM (P6).
std::vector<std::uint8_t> encode_ppm(const RgbImage& image);

/// A raster plus the exact numbers it shows.
struct Plot {
  RgbImage image;
  std::string sidecar;
};

enum class PlotKind { SimilarityHeatmap, SegmentationOverlay, EmbeddingProjection, LossCurve };
std::string to_string(PlotKind kind);
/// Throws ConfigError for unknown names.
PlotKind plot_kind_from_string(const std::string& name);

/// One cell per entry, blue (low) to red (high); sidecar is the matrix, one row per line.
Plot similarity_heatmap(const Matrix<float>& similarity, int cell = 16);

/// Image blended with per-class colours; sidecar is the label map, one row per line.
Plot segmentation_overlay(const SegmentationSample& sample, const std::vector<int>& labels, int num_classes);

/// 2-D principal-component projection of mask (m') and text (t') embeddings,
/// power iteration seeded by `seed`; sidecar lists "<kind> <index> <x> <y>".
Plot embedding_projection(const Matrix<float>& mask_embeddings, const Matrix<float>& text_embeddings,
                          std::uint64_t seed);

struct CurvePoint {
  std::string iter;   // numbers kept as written in the metrics stream
  std::string total;
};

/// Parses "iter" and "total" from every line of a metrics stream.
std::vector<CurvePoint> read_loss_curve(const std::string& metrics_jsonl);
Plot loss_curve(const std::vector<CurvePoint>& points);

/// Writes <stem>.ppm and <stem>.txt.
void write_plot(const Plot& plot, const std::filesystem::path& stem);

}  // namespace mta
