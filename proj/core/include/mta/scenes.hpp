#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "mta/matrix.hpp"

namespace mta {

enum class ShapeKind { Rectangle, Disk, Triangle, Ring };

std::string to_string(ShapeKind kind);
ShapeKind shape_kind_from_string(const std::string& name);

/// Appearance of one class: which primitive it is drawn as, its base colour
/// and the range of its characteristic size in pixels.
struct ClassStyle {
  ShapeKind shape = ShapeKind::Rectangle;
  std::array<float, 3> color{0.5f, 0.5f, 0.5f};
  float size_min = 8.0f;
  float size_max = 16.0f;

  friend bool operator==(const ClassStyle&, const ClassStyle&) = default;
};

struct SceneSpec {
  int height = 64;
  int width = 64;
  int num_classes = 6;
  int max_instances = 4;
  int background_class = 0;
  bool occlusion_allowed = true;
  float noise_sigma = 0.05f;
  /// Shapes are rasterized on a lattice of raster_cell x raster_cell pixel
  /// cells (1 = pixel exact). Must divide 32.
  int raster_cell = 1;
  std::vector<ClassStyle> class_styles;  // one per class, indexed by class id

  friend bool operator==(const SceneSpec&, const SceneSpec&) = default;
};

/// Default toy spec: evenly spaced hues, shapes cycling through the vocabulary,
/// rasterized on the 4-pixel lattice of the stride-4 prediction grid.
SceneSpec default_scene_spec(int num_classes = 6, int height = 64, int width = 64);

/// Throws ConfigError naming the first violated invariant.
void validate(const SceneSpec& spec);

/// Flat key/value view of a spec (keys: height, width, ..., class.<i>), used
/// by both the manifest and the run-config formats.
std::vector<std::pair<std::string, std::string>> scene_spec_fields(const SceneSpec& spec);
/// Returns false when `key` is not a SceneSpec field.
bool set_scene_spec_field(SceneSpec& spec, const std::string& key, const std::string& value);

struct SegmentationSample {
  static constexpr int kChannels = 3;

  int height = 0;
  int width = 0;
  std::vector<float> image;                   // [3 x H x W], values in [0,1]
  std::vector<std::vector<std::uint8_t>> gt_masks;  // G masks of H*W, draw order
  std::vector<int> gt_labels;                 // [G]
  std::int64_t sample_id = 0;

  std::size_t instance_count() const { return gt_labels.size(); }
  friend bool operator==(const SegmentationSample&, const SegmentationSample&) = default;
};

/// Deterministic in (spec, seed). Later instances occlude earlier ones.
SegmentationSample generate_scene(const SceneSpec& spec, std::int64_t seed);

/// Label of the topmost covering instance per pixel, else the background class.
std::vector<int> semantic_map_of(const SegmentationSample& sample, int background_class);

/// One binary mask per class present in the semantic map, ascending class order.
struct SemanticTargets {
  std::vector<std::vector<std::uint8_t>> masks;
  std::vector<int> labels;
};
SemanticTargets semantic_targets(const std::vector<int>& semantic_map, std::size_t pixels, int num_classes);

/// Area-majority downsampling of a binary H x W mask by an integer factor.
std::vector<std::uint8_t> downsample_majority(const std::vector<std::uint8_t>& mask, int height, int width,
                                              int factor);

// ---- on-disk dataset -------------------------------------------------------

struct SampleRecord {
  std::int64_t index = 0;
  std::int64_t sample_id = 0;  // equals the generation seed
  int instance_count = 0;

  friend bool operator==(const SampleRecord&, const SampleRecord&) = default;
};

struct DatasetManifest {
  SceneSpec spec;
  std::string split_name;
  std::int64_t sample_count = 0;
  std::int64_t root_seed = 0;
  std::int64_t split_offset = 0;
  std::vector<SampleRecord> records;
  std::filesystem::path directory;  // not serialized

  friend bool operator==(const DatasetManifest& a, const DatasetManifest& b) {
    return a.spec == b.spec && a.split_name == b.split_name && a.sample_count == b.sample_count &&
           a.root_seed == b.root_seed && a.split_offset == b.split_offset && a.records == b.records;
  }
};

struct SplitRequest {
  std::string name;
  std::int64_t count = 0;
};

/// Seed spacing between consecutive splits; a split may hold at most this many samples.
inline constexpr std::int64_t kSplitSeedStride = 1'000'000;

/// Builds the manifests without touching the filesystem.
std::vector<DatasetManifest> plan_dataset(const SceneSpec& spec, std::int64_t root_seed,
                                          const std::vector<SplitRequest>& splits);

/// Generates and writes every split under out_dir/<split>/. Files are written
/// to a temporary name and renamed into place.
std::vector<DatasetManifest> build_dataset(const SceneSpec& spec, std::int64_t root_seed,
                                           const std::vector<SplitRequest>& splits,
                                           const std::filesystem::path& out_dir);

std::string serialize_manifest(const DatasetManifest& manifest);
DatasetManifest parse_manifest(const std::string& text);

void write_manifest(const DatasetManifest& manifest, const std::filesystem::path& dir);
DatasetManifest load_manifest(const std::filesystem::path& manifest_file_or_dir);

void write_sample(const SegmentationSample& sample, const std::filesystem::path& samples_dir);
SegmentationSample read_sample(const std::filesystem::path& samples_dir, std::int64_t sample_id);

/// Loads every sample listed in a manifest.
std::vector<SegmentationSample> load_samples(const DatasetManifest& manifest);

inline constexpr char kSampleMagic[9] = "MTAS0001";

}  // namespace mta
