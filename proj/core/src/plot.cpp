#include "mta/plot.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include <json.hpp>

#include "mta/binary_io.hpp"
#include "mta/errors.hpp"
#include "mta/rng.hpp"
#include "mta/text_format.hpp"

namespace mta {

void RgbImage::set(int x, int y, std::uint8_t r, std::uint8_t g, std::uint8_t b) {
  if (x < 0 || y < 0 || x >= width || y >= height) return;
  auto* p = &pixels[(std::size_t(y) * std::size_t(width) + std::size_t(x)) * 3];
  p[0] = r;
  p[1] = g;
  p[2] = b;
}

std::vector<std::uint8_t> encode_ppm(const RgbImage& image) {
  const std::string header = "P6\n" + std::to_string(image.width) + " " + std::to_string(image.height) + "\n255\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.insert(out.end(), image.pixels.begin(), image.pixels.end());
  return out;
}

std::string to_string(PlotKind kind) {
  switch (kind) {
    case PlotKind::SimilarityHeatmap: return "similarity-heatmap";
    case PlotKind::SegmentationOverlay: return "segmentation-overlay";
    case PlotKind::EmbeddingProjection: return "embedding-projection";
    case PlotKind::LossCurve: return "loss-curve";
  }
  return "?";
}

PlotKind plot_kind_from_string(const std::string& name) {
  for (auto k : {PlotKind::SimilarityHeatmap, PlotKind::SegmentationOverlay, PlotKind::EmbeddingProjection,
                 PlotKind::LossCurve})
    if (to_string(k) == name) return k;
  throw ConfigError("unknown plot kind '" + name +
                    "' (expected similarity-heatmap, segmentation-overlay, embedding-projection or loss-curve)");
}

namespace {

std::uint8_t to_byte(double v) { return std::uint8_t(std::clamp(v, 0.0, 1.0) * 255.0 + 0.5); }

void palette(int c, double rgb[3]) {
  const double h = std::fmod(c * 0.61803398875, 1.0) * 6.0;
  const int i = int(h);
  const double f = h - i, q = 1.0 - f;
  const double table[6][3] = {{1, f, 0}, {q, 1, 0}, {0, 1, f}, {0, q, 1}, {f, 0, 1}, {1, 0, q}};
  for (int k = 0; k < 3; ++k) rgb[k] = 0.15 + 0.8 * table[i % 6][k];
}

void line(RgbImage& img, int x0, int y0, int x1, int y1) {
  const int steps = std::max({std::abs(x1 - x0), std::abs(y1 - y0), 1});
  for (int s = 0; s <= steps; ++s)
    img.set(x0 + (x1 - x0) * s / steps, y0 + (y1 - y0) * s / steps, 200, 30, 30);
}

}  // namespace

Plot similarity_heatmap(const Matrix<float>& s, int cell) {
  Plot plot;
  plot.image = RgbImage(int(s.cols()) * cell, int(s.rows()) * cell);
  float lo = 0.0f, hi = 0.0f;
  if (s.size() > 0) {
    lo = *std::min_element(s.storage().begin(), s.storage().end());
    hi = *std::max_element(s.storage().begin(), s.storage().end());
  }
  const double span = hi > lo ? double(hi) - double(lo) : 1.0;
  std::ostringstream side;
  for (std::size_t r = 0; r < s.rows(); ++r) {
    for (std::size_t c = 0; c < s.cols(); ++c) {
      const double t = (double(s(r, c)) - lo) / span;
      for (int y = 0; y < cell; ++y)
        for (int x = 0; x < cell; ++x)
          plot.image.set(int(c) * cell + x, int(r) * cell + y, to_byte(t), to_byte(0.2), to_byte(1.0 - t));
      side << (c ? " " : "") << text::format_number(s(r, c));
    }
    side << "\n";
  }
  plot.sidecar = side.str();
  return plot;
}

Plot segmentation_overlay(const SegmentationSample& sample, const std::vector<int>& labels, int num_classes) {
  const int h = sample.height, w = sample.width;
  if (labels.size() != std::size_t(h) * std::size_t(w)) throw ConfigError("overlay: label map size differs from image");
  Plot plot;
  plot.image = RgbImage(w, h);
  const std::size_t plane = std::size_t(h) * std::size_t(w);
  std::ostringstream side;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t i = std::size_t(y) * std::size_t(w) + std::size_t(x);
      const int label = labels[i];
      if (label < 0 || label >= num_classes) throw ConfigError("overlay: label outside [0, C)");
      double rgb[3];
      palette(label, rgb);
      plot.image.set(x, y, to_byte(0.5 * sample.image[i] + 0.5 * rgb[0]),
                     to_byte(0.5 * sample.image[plane + i] + 0.5 * rgb[1]),
                     to_byte(0.5 * sample.image[2 * plane + i] + 0.5 * rgb[2]));
      side << (x ? " " : "") << label;
    }
    side << "\n";
  }
  plot.sidecar = side.str();
  return plot;
}

Plot embedding_projection(const Matrix<float>& mask_embeddings, const Matrix<float>& text_embeddings,
                          std::uint64_t seed) {
  const std::size_t d = mask_embeddings.cols();
  if (text_embeddings.size() > 0 && text_embeddings.cols() != d)
    throw ConfigError("projection: mask and text embeddings differ in width");
  std::vector<std::vector<double>> points;
  for (const auto* m : {&mask_embeddings, &text_embeddings})
    for (std::size_t r = 0; r < m->rows(); ++r) {
      std::vector<double> p(d);
      for (std::size_t c = 0; c < d; ++c) p[c] = (*m)(r, c);
      points.push_back(std::move(p));
    }
  std::vector<double> mean(d, 0.0);
  for (const auto& p : points)
    for (std::size_t c = 0; c < d; ++c) mean[c] += p[c] / double(points.size());
  for (auto& p : points)
    for (std::size_t c = 0; c < d; ++c) p[c] -= mean[c];

  // two leading principal directions by deflated power iteration
  Rng rng(seed);
  std::vector<std::vector<double>> axes;
  for (int a = 0; a < 2 && d > 0; ++a) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.normal();
    for (int it = 0; it < 200; ++it) {
      std::vector<double> next(d, 0.0);
      for (const auto& p : points) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += p[c] * v[c];
        for (std::size_t c = 0; c < d; ++c) next[c] += dot * p[c];
      }
      for (const auto& prev : axes) {
        double dot = 0.0;
        for (std::size_t c = 0; c < d; ++c) dot += next[c] * prev[c];
        for (std::size_t c = 0; c < d; ++c) next[c] -= dot * prev[c];
      }
      double norm = 0.0;
      for (double x : next) norm += x * x;
      norm = std::sqrt(norm);
      if (norm == 0.0) break;
      for (std::size_t c = 0; c < d; ++c) v[c] = next[c] / norm;
    }
    axes.push_back(v);
  }

  std::vector<std::pair<double, double>> xy;
  for (const auto& p : points) {
    double coord[2] = {0.0, 0.0};
    for (std::size_t a = 0; a < axes.size(); ++a)
      for (std::size_t c = 0; c < d; ++c) coord[a] += p[c] * axes[a][c];
    xy.emplace_back(coord[0], coord[1]);
  }

  Plot plot;
  const int size = 256, margin = 8;
  plot.image = RgbImage(size, size);
  double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
  for (const auto& [x, y] : xy) {
    lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
  }
  const double sx = hi_x > lo_x ? hi_x - lo_x : 1.0, sy = hi_y > lo_y ? hi_y - lo_y : 1.0;
  std::ostringstream side;
  for (std::size_t i = 0; i < xy.size(); ++i) {
    const bool is_mask = i < mask_embeddings.rows();
    const std::size_t index = is_mask ? i : i - mask_embeddings.rows();
    const int px = margin + int((xy[i].first - lo_x) / sx * (size - 2 * margin - 1));
    const int py = size - 1 - margin - int((xy[i].second - lo_y) / sy * (size - 2 * margin - 1));
    for (int dy = -2; dy <= 2; ++dy)
      for (int dx = -2; dx <= 2; ++dx)
        if (is_mask) plot.image.set(px + dx, py + dy, 30, 90, 200);
        else if (dx == 0 || dy == 0) plot.image.set(px + dx, py + dy, 220, 60, 20);
    side << (is_mask ? "mask " : "text ") << index << " " << text::format_number(xy[i].first) << " "
         << text::format_number(xy[i].second) << "\n";
  }
  plot.sidecar = side.str();
  return plot;
}

std::vector<CurvePoint> read_loss_curve(const std::string& metrics_jsonl) {
  std::vector<CurvePoint> out;
  std::istringstream in(metrics_jsonl);
  int line_no = 0;
  for (std::string line; std::getline(in, line);) {
    ++line_no;
    if (text::trim(line).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::parse_error& e) {
      throw ConfigError("metrics line " + std::to_string(line_no) + ": " + e.what());
    }
    if (!j.contains("iter") || !j.contains("total"))
      throw ConfigError("metrics line " + std::to_string(line_no) + ": missing iter or total");
    out.push_back({j["iter"].dump(), j["total"].dump()});
  }
  return out;
}

Plot loss_curve(const std::vector<CurvePoint>& points) {
  Plot plot;
  const int w = 512, h = 256, margin = 10;
  plot.image = RgbImage(w, h);
  std::vector<std::pair<double, double>> xy;
  std::ostringstream side;
  for (const auto& p : points) {
    xy.emplace_back(text::parse_number<double>(p.iter, "iter"), text::parse_number<double>(p.total, "total"));
    side << p.iter << " " << p.total << "\n";
  }
  plot.sidecar = side.str();
  if (xy.empty()) return plot;
  double lo_x = xy.front().first, hi_x = lo_x, lo_y = xy.front().second, hi_y = lo_y;
  for (const auto& [x, y] : xy) {
    lo_x = std::min(lo_x, x), hi_x = std::max(hi_x, x);
    lo_y = std::min(lo_y, y), hi_y = std::max(hi_y, y);
  }
  const double sx = hi_x > lo_x ? hi_x - lo_x : 1.0, sy = hi_y > lo_y ? hi_y - lo_y : 1.0;
  auto px = [&](double x) { return margin + int((x - lo_x) / sx * (w - 2 * margin - 1)); };
  auto py = [&](double y) { return h - 1 - margin - int((y - lo_y) / sy * (h - 2 * margin - 1)); };
  for (int x = margin; x < w - margin; ++x) plot.image.set(x, h - 1 - margin, 0, 0, 0);
  for (int y = margin; y < h - margin; ++y) plot.image.set(margin, y, 0, 0, 0);
  for (std::size_t i = 1; i < xy.size(); ++i)
    line(plot.image, px(xy[i - 1].first), py(xy[i - 1].second), px(xy[i].first), py(xy[i].second));
  if (xy.size() == 1) plot.image.set(px(xy[0].first), py(xy[0].second), 200, 30, 30);
  return plot;
}

void write_plot(const Plot& plot, const std::filesystem::path& stem) {
  auto image = stem;
  image += ".ppm";
  auto side = stem;
  side += ".txt";
  io::write_file_atomic(image, encode_ppm(plot.image));
  io::write_file_atomic(side, plot.sidecar);
}

}  // namespace mta
