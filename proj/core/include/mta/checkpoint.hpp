#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include "mta/decoder.hpp"
#include "mta/optimizer.hpp"
#include "mta/run_config.hpp"

namespace mta {

inline constexpr char kCheckpointMagic[] = "MTAC0001";
inline constexpr std::uint32_t kCheckpointVersion = 1;

struct CheckpointTensor {
  std::string name;  // "<group>/<path>"
  bool trainable = true;
  Matrix<float> value;
};

/// Container layout (little-endian):
///   magic "MTAC0001", u32 version, str config echo, u32 iteration lo/hi,
///   u32 tensor count, per tensor: str name, u8 trainable, u32 rows, u32 cols, f32 payload,
///   u32 optimizer step lo/hi, u32 moment count, per moment: str name, u32 rows, u32 cols,
///   f32 first moments, f32 second moments.
struct Checkpoint {
  std::string config_text;
  std::int64_t iteration = 0;
  std::vector<CheckpointTensor> tensors;
  std::int64_t optimizer_step = 0;
  std::vector<MomentState<float>> moments;

  const CheckpointTensor* find(const std::string& name) const;
};

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& checkpoint);
Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes);
void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint);
Checkpoint load_checkpoint(const std::filesystem::path& path);

inline constexpr char kImportedEmbeddingsTensor[] = "imported/text_embeddings";

/// Snapshot of every parameter (frozen included), imported embeddings and optimizer moments.
Checkpoint capture_checkpoint(const MaskTextModel<float>& model, const AdamW<float>* optimizer,
                              const RunConfig& config, std::int64_t iteration);

/// Copies tensor values into the model; every model parameter must be present with the same shape.
void restore_parameters(MaskTextModel<float>& model, const Checkpoint& checkpoint);

/// Model for `config`, seeded by train.seed, with imported text embeddings applied when configured.
std::unique_ptr<MaskTextModel<float>> build_model(const RunConfig& config);

/// Rebuilds the model described by the checkpoint's config echo and loads its parameters.
std::unique_ptr<MaskTextModel<float>> model_from_checkpoint(const Checkpoint& checkpoint, RunConfig* config_out = nullptr);

}  // namespace mta
