#include "mta/scenes.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "mta/binary_io.hpp"
#include "mta/errors.hpp"
#include "mta/rng.hpp"
#include "mta/text_format.hpp"

namespace mta {

std::string to_string(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Rectangle: return "rectangle";
    case ShapeKind::Disk: return "disk";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Ring: return "ring";
  }
  return "unknown";
}

ShapeKind shape_kind_from_string(const std::string& name) {
  if (name == "rectangle") return ShapeKind::Rectangle;
  if (name == "disk") return ShapeKind::Disk;
  if (name == "triangle") return ShapeKind::Triangle;
  if (name == "ring") return ShapeKind::Ring;
  throw ConfigError("unknown shape kind '" + name + "'");
}

namespace {

std::array<float, 3> hue_color(double hue) {
  // HSV with s=0.85, v=0.95
  const double h = hue * 6.0, v = 0.95, s = 0.85;
  const int i = static_cast<int>(std::floor(h)) % 6;
  const double f = h - std::floor(h);
  const double p = v * (1 - s), q = v * (1 - s * f), t = v * (1 - s * (1 - f));
  double r = v, g = t, b = p;
  switch (i) {
    case 0: r = v, g = t, b = p; break;
    case 1: r = q, g = v, b = p; break;
    case 2: r = p, g = v, b = t; break;
    case 3: r = p, g = q, b = v; break;
    case 4: r = t, g = p, b = v; break;
    default: r = v, g = p, b = q; break;
  }
  return {float(r), float(g), float(b)};
}

}  // namespace

SceneSpec default_scene_spec(int num_classes, int height, int width) {
  SceneSpec spec;
  spec.height = height;
  spec.width = width;
  spec.num_classes = num_classes;
  spec.raster_cell = 4;
  constexpr ShapeKind cycle[] = {ShapeKind::Rectangle, ShapeKind::Disk, ShapeKind::Triangle, ShapeKind::Ring};
  const float extent = float(std::min(height, width));
  for (int c = 0; c < num_classes; ++c) {
    ClassStyle style;
    if (c == spec.background_class) {
      style.color = {0.12f, 0.12f, 0.12f};
      style.size_min = style.size_max = extent;
    } else {
      const int k = c - (c > spec.background_class ? 1 : 0);
      style.shape = cycle[k % 4];
      style.color = hue_color(double(k) / double(std::max(1, num_classes - 1)));
      style.size_min = 0.30f * extent;
      style.size_max = 0.55f * extent;
    }
    spec.class_styles.push_back(style);
  }
  return spec;
}

void validate(const SceneSpec& spec) {
  auto fail = [](const std::string& invariant) { throw ConfigError("scene spec invariant violated: " + invariant); };
  if (spec.num_classes < 2) fail("num_classes >= 2");
  if (spec.num_classes > 256) fail("num_classes <= 256 (labels are stored as uint8)");
  if (spec.height <= 0 || spec.width <= 0 || spec.height % 32 != 0 || spec.width % 32 != 0)
    fail("grid dimensions are positive multiples of 32");
  if (spec.max_instances < 1) fail("max_instances_per_scene >= 1");
  if (spec.background_class < 0 || spec.background_class >= spec.num_classes)
    fail("background_class < num_classes");
  if (static_cast<int>(spec.class_styles.size()) != spec.num_classes)
    fail("class_to_shape_map has one entry per class index < num_classes");
  for (const auto& s : spec.class_styles) {
    if (!(s.size_min > 0 && s.size_min <= s.size_max)) fail("0 < size_min <= size_max");
    for (float c : s.color)
      if (!(c >= 0.0f && c <= 1.0f)) fail("class colors lie in [0,1]");
  }
  if (!(spec.noise_sigma >= 0.0f)) fail("noise_sigma >= 0");
  if (spec.raster_cell < 1 || 32 % spec.raster_cell != 0) fail("raster_cell divides 32");
}

std::vector<std::pair<std::string, std::string>> scene_spec_fields(const SceneSpec& spec) {
  using text::format_number;
  std::vector<std::pair<std::string, std::string>> out = {
      {"height", std::to_string(spec.height)},
      {"width", std::to_string(spec.width)},
      {"num_classes", std::to_string(spec.num_classes)},
      {"max_instances", std::to_string(spec.max_instances)},
      {"background_class", std::to_string(spec.background_class)},
      {"occlusion_allowed", spec.occlusion_allowed ? "true" : "false"},
      {"noise_sigma", format_number(spec.noise_sigma)},
      {"raster_cell", std::to_string(spec.raster_cell)},
  };
  for (std::size_t c = 0; c < spec.class_styles.size(); ++c) {
    const auto& s = spec.class_styles[c];
    out.emplace_back("class." + std::to_string(c),
                     to_string(s.shape) + " " + format_number(s.color[0]) + " " + format_number(s.color[1]) + " " +
                         format_number(s.color[2]) + " " + format_number(s.size_min) + " " +
                         format_number(s.size_max));
  }
  return out;
}

bool set_scene_spec_field(SceneSpec& spec, const std::string& key, const std::string& value) {
  using text::parse_number;
  if (key == "height") spec.height = parse_number<int>(value, key);
  else if (key == "width") spec.width = parse_number<int>(value, key);
  else if (key == "num_classes") {
    const int c = parse_number<int>(value, key);
    if (c >= 2 && c <= 256 && c != spec.num_classes) {
      // styles follow the class count unless overridden later by class.<i> keys
      const auto fresh = default_scene_spec(c, spec.height, spec.width);
      spec.class_styles = fresh.class_styles;
    }
    spec.num_classes = c;
  } else if (key == "max_instances") spec.max_instances = parse_number<int>(value, key);
  else if (key == "background_class") spec.background_class = parse_number<int>(value, key);
  else if (key == "occlusion_allowed") spec.occlusion_allowed = text::parse_bool(value, key);
  else if (key == "noise_sigma") spec.noise_sigma = parse_number<float>(value, key);
  else if (key == "raster_cell") spec.raster_cell = parse_number<int>(value, key);
  else if (key.rfind("class.", 0) == 0) {
    const int c = parse_number<int>(key.substr(6), key);
    if (c < 0 || c >= spec.num_classes)
      throw ConfigError("scene spec invariant violated: class index " + std::to_string(c) + " < num_classes");
    const auto parts = text::split_ws(value);
    if (parts.size() != 6) throw ConfigError(key + ": expected '<shape> r g b size_min size_max'");
    if (spec.class_styles.size() < std::size_t(spec.num_classes)) spec.class_styles.resize(spec.num_classes);
    auto& s = spec.class_styles[c];
    s.shape = shape_kind_from_string(parts[0]);
    for (int i = 0; i < 3; ++i) s.color[i] = parse_number<float>(parts[1 + i], key);
    s.size_min = parse_number<float>(parts[4], key);
    s.size_max = parse_number<float>(parts[5], key);
  } else {
    return false;
  }
  return true;
}

// ---- generation ------------------------------------------------------------

namespace {

struct Placement {
  ShapeKind shape;
  double cx, cy;
  double size_a, size_b;  // rectangle: w,h; disk/ring: diameter; triangle: side
  double angle;
};

bool inside(const Placement& p, double x, double y) {
  const double dx = x - p.cx, dy = y - p.cy;
  switch (p.shape) {
    case ShapeKind::Rectangle: return std::abs(dx) <= p.size_a / 2 && std::abs(dy) <= p.size_b / 2;
    case ShapeKind::Disk: return dx * dx + dy * dy <= (p.size_a / 2) * (p.size_a / 2);
    case ShapeKind::Ring: {
      const double r2 = dx * dx + dy * dy, outer = p.size_a / 2, inner = 0.5 * outer;
      return r2 <= outer * outer && r2 >= inner * inner;
    }
    case ShapeKind::Triangle: {
      // equilateral, circumradius side/sqrt(3), rotated by angle
      const double radius = p.size_a / std::sqrt(3.0);
      double vx[3], vy[3];
      for (int k = 0; k < 3; ++k) {
        const double a = p.angle + k * 2.0 * std::numbers::pi / 3.0;
        vx[k] = p.cx + radius * std::cos(a);
        vy[k] = p.cy + radius * std::sin(a);
      }
      bool neg = false, pos = false;
      for (int k = 0; k < 3; ++k) {
        const int n = (k + 1) % 3;
        const double cross = (vx[n] - vx[k]) * (y - vy[k]) - (vy[n] - vy[k]) * (x - vx[k]);
        neg = neg || cross < 0;
        pos = pos || cross > 0;
      }
      return !(neg && pos);
    }
  }
  return false;
}

// Inside-test at each cell centre; the whole cell takes the result.
std::vector<std::uint8_t> rasterize(const Placement& p, int height, int width, int cell) {
  std::vector<std::uint8_t> mask(std::size_t(height) * width, 0);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const double cy = (y / cell + 0.5) * cell, cx = (x / cell + 0.5) * cell;
      mask[std::size_t(y) * width + x] = inside(p, cx, cy) ? 1 : 0;
    }
  return mask;
}

Placement draw_placement(const ClassStyle& style, int height, int width, Rng& rng) {
  Placement p{};
  p.shape = style.shape;
  p.size_a = rng.uniform(style.size_min, style.size_max);
  p.size_b = style.shape == ShapeKind::Rectangle ? rng.uniform(style.size_min, style.size_max) : p.size_a;
  p.cx = rng.uniform(0.0, double(width));
  p.cy = rng.uniform(0.0, double(height));
  p.angle = rng.uniform(0.0, 2.0 * std::numbers::pi);
  return p;
}

}  // namespace

SegmentationSample generate_scene(const SceneSpec& spec, std::int64_t seed) {
  validate(spec);
  if (seed < 0) throw ConfigError("scene seed must be >= 0");
  Rng rng(static_cast<std::uint64_t>(seed));
  SegmentationSample sample;
  sample.height = spec.height;
  sample.width = spec.width;
  sample.sample_id = seed;

  std::vector<int> foreground;
  for (int c = 0; c < spec.num_classes; ++c)
    if (c != spec.background_class) foreground.push_back(c);

  const int wanted = rng.uniform_int(1, spec.max_instances);
  std::vector<std::uint8_t> occupied(std::size_t(spec.height) * spec.width, 0);
  for (int n = 0; n < wanted; ++n) {
    const int cls = foreground[std::size_t(rng.uniform_int(0, int(foreground.size()) - 1))];
    std::vector<std::uint8_t> mask;
    bool placed = false;
    for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
      const Placement p = draw_placement(spec.class_styles[std::size_t(cls)], spec.height, spec.width, rng);
      mask = rasterize(p, spec.height, spec.width, spec.raster_cell);
      bool nonempty = false, clash = false;
      for (std::size_t i = 0; i < mask.size(); ++i) {
        nonempty = nonempty || mask[i];
        clash = clash || (mask[i] && occupied[i]);
      }
      placed = nonempty && (spec.occlusion_allowed || !clash);
    }
    if (!placed) break;
    for (std::size_t i = 0; i < mask.size(); ++i) occupied[i] |= mask[i];
    sample.gt_masks.push_back(std::move(mask));
    sample.gt_labels.push_back(cls);
  }

  const auto labels = semantic_map_of(sample, spec.background_class);
  const std::size_t pixels = labels.size();
  sample.image.assign(pixels * SegmentationSample::kChannels, 0.0f);
  for (int ch = 0; ch < SegmentationSample::kChannels; ++ch)
    for (std::size_t i = 0; i < pixels; ++i) {
      const float base = spec.class_styles[std::size_t(labels[i])].color[std::size_t(ch)];
      const double noisy = base + rng.normal(0.0, spec.noise_sigma);
      sample.image[ch * pixels + i] = static_cast<float>(std::clamp(noisy, 0.0, 1.0));
    }
  return sample;
}

std::vector<int> semantic_map_of(const SegmentationSample& sample, int background_class) {
  std::vector<int> out(std::size_t(sample.height) * sample.width, background_class);
  for (std::size_t g = 0; g < sample.gt_masks.size(); ++g)
    for (std::size_t i = 0; i < out.size(); ++i)
      if (sample.gt_masks[g][i]) out[i] = sample.gt_labels[g];
  return out;
}

SemanticTargets semantic_targets(const std::vector<int>& semantic_map, std::size_t pixels, int num_classes) {
  SemanticTargets targets;
  for (int c = 0; c < num_classes; ++c) {
    bool present = false;
    for (std::size_t i = 0; i < pixels && !present; ++i) present = semantic_map[i] == c;
    if (!present) continue;
    std::vector<std::uint8_t> mask(pixels, 0);
    for (std::size_t i = 0; i < pixels; ++i) mask[i] = semantic_map[i] == c;
    targets.masks.push_back(std::move(mask));
    targets.labels.push_back(c);
  }
  return targets;
}

std::vector<std::uint8_t> downsample_majority(const std::vector<std::uint8_t>& mask, int height, int width,
                                              int factor) {
  const int h = height / factor, w = width / factor;
  std::vector<std::uint8_t> out(std::size_t(h) * w, 0);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      int count = 0;
      for (int dy = 0; dy < factor; ++dy)
        for (int dx = 0; dx < factor; ++dx) count += mask[std::size_t(y * factor + dy) * width + x * factor + dx];
      out[std::size_t(y) * w + x] = 2 * count >= factor * factor ? 1 : 0;
    }
  return out;
}

// ---- dataset files ------------------------------------------------------------

std::vector<DatasetManifest> plan_dataset(const SceneSpec& spec, std::int64_t root_seed,
                                          const std::vector<SplitRequest>& splits) {
  validate(spec);
  if (root_seed < 0) throw ConfigError("root_seed must be >= 0");
  std::vector<DatasetManifest> out;
  for (std::size_t s = 0; s < splits.size(); ++s) {
    const auto& req = splits[s];
    if (req.count <= 0) throw ConfigError("split '" + req.name + "' must have a positive sample count");
    if (req.count > kSplitSeedStride) throw ConfigError("split '" + req.name + "' exceeds the per-split seed stride");
    DatasetManifest m;
    m.spec = spec;
    m.split_name = req.name;
    m.sample_count = req.count;
    m.root_seed = root_seed;
    m.split_offset = std::int64_t(s) * kSplitSeedStride;
    for (std::int64_t i = 0; i < req.count; ++i)
      m.records.push_back({i, root_seed + m.split_offset + i, 0});
    out.push_back(std::move(m));
  }
  return out;
}

std::vector<DatasetManifest> build_dataset(const SceneSpec& spec, std::int64_t root_seed,
                                           const std::vector<SplitRequest>& splits,
                                           const std::filesystem::path& out_dir) {
  auto manifests = plan_dataset(spec, root_seed, splits);
  for (auto& m : manifests) {
    m.directory = out_dir / m.split_name;
    const auto samples_dir = m.directory / "samples";
    std::error_code ec;
    std::filesystem::create_directories(samples_dir, ec);
    if (ec) throw IoError("cannot create " + samples_dir.string() + ": " + ec.message());
    for (auto& rec : m.records) {
      const auto sample = generate_scene(spec, rec.sample_id);
      rec.instance_count = static_cast<int>(sample.instance_count());
      write_sample(sample, samples_dir);
    }
    write_manifest(m, m.directory);
  }
  return manifests;
}

std::string serialize_manifest(const DatasetManifest& m) {
  std::ostringstream out;
  out << "# mta synthetic segmentation dataset\n";
  out << "format = " << kSampleMagic << "\n";
  out << "split = " << m.split_name << "\n";
  out << "sample_count = " << m.sample_count << "\n";
  out << "root_seed = " << m.root_seed << "\n";
  out << "split_offset = " << m.split_offset << "\n";
  for (const auto& [k, v] : scene_spec_fields(m.spec)) out << "spec." << k << " = " << v << "\n";
  for (const auto& r : m.records)
    out << "record = " << r.index << " " << r.sample_id << " " << r.instance_count << "\n";
  return out.str();
}

DatasetManifest parse_manifest(const std::string& body) {
  DatasetManifest m;
  m.spec.class_styles.clear();
  m.spec.num_classes = 0;
  bool format_seen = false;
  for (const auto& kv : text::parse_key_values(body)) {
    if (kv.key == "format") {
      if (kv.value != kSampleMagic) throw ConfigError("unsupported manifest format '" + kv.value + "'");
      format_seen = true;
    } else if (kv.key == "split") {
      m.split_name = kv.value;
    } else if (kv.key == "sample_count") {
      m.sample_count = text::parse_number<std::int64_t>(kv.value, kv.key);
    } else if (kv.key == "root_seed") {
      m.root_seed = text::parse_number<std::int64_t>(kv.value, kv.key);
    } else if (kv.key == "split_offset") {
      m.split_offset = text::parse_number<std::int64_t>(kv.value, kv.key);
    } else if (kv.key.rfind("spec.", 0) == 0) {
      const auto field = kv.key.substr(5);
      if (field == "num_classes") {
        m.spec.num_classes = text::parse_number<int>(kv.value, kv.key);
        m.spec.class_styles.resize(std::size_t(std::max(0, m.spec.num_classes)));
      } else if (!set_scene_spec_field(m.spec, field, kv.value)) {
        throw ConfigError("manifest line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
      }
    } else if (kv.key == "record") {
      const auto parts = text::split_ws(kv.value);
      if (parts.size() != 3) throw ConfigError("manifest line " + std::to_string(kv.line) + ": malformed record");
      m.records.push_back({text::parse_number<std::int64_t>(parts[0], "record.index"),
                           text::parse_number<std::int64_t>(parts[1], "record.sample_id"),
                           text::parse_number<int>(parts[2], "record.instance_count")});
    } else {
      throw ConfigError("manifest line " + std::to_string(kv.line) + ": unknown key '" + kv.key + "'");
    }
  }
  if (!format_seen) throw ConfigError("manifest lacks a format line");
  if (m.sample_count != std::int64_t(m.records.size()))
    throw ConfigError("manifest sample_count " + std::to_string(m.sample_count) + " != listed records " +
                      std::to_string(m.records.size()));
  validate(m.spec);
  return m;
}

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir) {
  io::write_file_atomic(dir / "manifest.txt", serialize_manifest(manifest));
}

DatasetManifest load_manifest(const std::filesystem::path& manifest_file_or_dir) {
  auto file = manifest_file_or_dir;
  if (std::filesystem::is_directory(file)) file /= "manifest.txt";
  auto m = parse_manifest(io::read_text_file(file));
  m.directory = file.parent_path();
  return m;
}

namespace {

std::filesystem::path sample_path(const std::filesystem::path& dir, std::int64_t id, const char* ext) {
  return dir / (std::to_string(id) + ext);
}

void write_header(io::ByteWriter& w, std::initializer_list<std::uint32_t> dims) {
  w.magic(kSampleMagic);
  w.u32(static_cast<std::uint32_t>(dims.size()));
  for (auto d : dims) w.u32(d);
}

std::vector<std::uint32_t> read_header(io::ByteReader& r, const std::string& what, std::uint32_t expected_rank) {
  r.expect_magic(kSampleMagic, what);
  const auto offset = r.offset();
  const std::uint32_t rank = r.u32();
  if (rank != expected_rank)
    throw ParseError(what + ": expected rank " + std::to_string(expected_rank) + ", got " + std::to_string(rank),
                     offset);
  std::vector<std::uint32_t> dims(rank);
  for (auto& d : dims) d = r.u32();
  return dims;
}

}  // namespace

void write_sample(const SegmentationSample& sample, const std::filesystem::path& dir) {
  const auto h = std::uint32_t(sample.height), w = std::uint32_t(sample.width);
  const auto g = std::uint32_t(sample.gt_labels.size());
  {
    io::ByteWriter out;
    write_header(out, {std::uint32_t(SegmentationSample::kChannels), h, w});
    for (float v : sample.image) out.f32(v);
    io::write_file_atomic(sample_path(dir, sample.sample_id, ".img"), out.buffer());
  }
  {
    io::ByteWriter out;
    write_header(out, {g, h, w});
    for (const auto& m : sample.gt_masks) out.bytes(m.data(), m.size());
    io::write_file_atomic(sample_path(dir, sample.sample_id, ".masks"), out.buffer());
  }
  {
    io::ByteWriter out;
    write_header(out, {g});
    for (int l : sample.gt_labels) out.u8(static_cast<std::uint8_t>(l));
    io::write_file_atomic(sample_path(dir, sample.sample_id, ".labels"), out.buffer());
  }
}

SegmentationSample read_sample(const std::filesystem::path& dir, std::int64_t sample_id) {
  SegmentationSample s;
  s.sample_id = sample_id;
  {
    io::ByteReader in(io::read_file(sample_path(dir, sample_id, ".img")));
    const auto dims = read_header(in, "image", 3);
    if (dims[0] != std::uint32_t(SegmentationSample::kChannels))
      throw ParseError("image: expected 3 channels", 12);
    s.height = int(dims[1]);
    s.width = int(dims[2]);
    s.image.resize(std::size_t(dims[0]) * dims[1] * dims[2]);
    for (auto& v : s.image) v = in.f32();
  }
  const std::size_t pixels = std::size_t(s.height) * s.width;
  {
    io::ByteReader in(io::read_file(sample_path(dir, sample_id, ".masks")));
    const auto dims = read_header(in, "masks", 3);
    if (dims[1] != std::uint32_t(s.height) || dims[2] != std::uint32_t(s.width))
      throw ParseError("masks: grid differs from image", 16);
    s.gt_masks.assign(dims[0], std::vector<std::uint8_t>(pixels));
    for (auto& m : s.gt_masks) in.read(m.data(), pixels);
  }
  {
    io::ByteReader in(io::read_file(sample_path(dir, sample_id, ".labels")));
    const auto dims = read_header(in, "labels", 1);
    if (dims[0] != s.gt_masks.size()) throw ParseError("labels: count differs from masks", 12);
    s.gt_labels.resize(dims[0]);
    for (auto& l : s.gt_labels) l = in.u8();
  }
  return s;
}

std::vector<SegmentationSample> load_samples(const DatasetManifest& manifest) {
  std::vector<SegmentationSample> out;
  out.reserve(manifest.records.size());
  for (const auto& r : manifest.records) out.push_back(read_sample(manifest.directory / "samples", r.sample_id));
  return out;
}

}  // namespace mta
