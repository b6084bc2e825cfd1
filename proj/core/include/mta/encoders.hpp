#pragma once

#include <array>
#include <filesystem>
#include <optional>
#include <vector>

#include "mta/autograd.hpp"
#include "mta/model_config.hpp"
#include "mta/params.hpp"
#include "mta/scenes.hpp"

namespace mta {

/// Multi-scale features: levels[0..2] at strides 32, 16, 8 and the stride-4
/// prediction map. All maps are [h*w x d_model].
template <typename T>
struct FeaturePyramid {
  static constexpr std::array<int, 3> kLevelStrides{32, 16, 8};
  static constexpr int kPredictionStride = 4;

  std::array<ag::Var<T>, 3> levels;
  std::array<int, 3> level_height{}, level_width{};
  ag::Var<T> prediction;
  int prediction_height = 0, prediction_width = 0;
};

/// [3 x H x W] channel-major image -> [H*W x 3] pixel-major matrix.
template <typename T>
Matrix<T> image_to_pixels(const std::vector<float>& image, int height, int width);

/// Frozen convolutional trunk (stride-4 patch stem and three stride-2 stages)
/// with a top-down pixel decoder using lateral additions.
template <typename T>
class ImageEncoder {
 public:
  ImageEncoder(ParameterSet<T>& params, const ModelConfig& config);

  FeaturePyramid<T> encode(const Matrix<T>& pixels, int height, int width) const;

 private:
  struct Conv {
    Linear<T> proj;  // [k*k*cin x cout]
    int kernel = 1, stride = 1, pad = 0;
  };
  ag::Var<T> apply(const Conv& conv, const ag::Var<T>& x, int height, int width) const;

  Conv stem_, stage2_, stage3_, stage4_;
  Conv lateral4_, lateral8_, lateral16_, lateral32_;
  Conv mask_features_;
};

/// Learnable context prompts plus frozen class-name tokens.
template <typename T>
struct PromptBank {
  ag::Var<T> prompts;       // [K*context_length x d_embed], learnable
  ag::Var<T> class_tokens;  // [C x d_embed], frozen
  int num_prompts = 0;
  int context_length = 0;

  static PromptBank create(ParameterSet<T>& params, const ModelConfig& config, Rng& prompt_rng);
};

/// Text embeddings t, one row per (class c, prompt k) at index c*K + k.
template <typename T>
struct TextEmbeddingSet {
  ag::Var<T> rows;
  int num_prompts = 0;
  int num_classes = 0;

  std::size_t row_of(int c, int k) const { return std::size_t(c) * std::size_t(num_prompts) + std::size_t(k); }
};

/// Frozen two-layer map over [mean-pooled prompt k || class token c].
/// Differentiable with respect to the prompts; each output row depends only
/// on its own (k, c) pair.
template <typename T>
class TextEncoder {
 public:
  TextEncoder(ParameterSet<T>& params, const ModelConfig& config);

  TextEmbeddingSet<T> encode(const PromptBank<T>& bank) const;

 private:
  int d_text_ = 0;
  Linear<T> hidden_, output_;
};

// ---- embedding import / export ----------------------------------------------

inline constexpr char kEmbeddingMagic[9] = "MTAT0001";

/// Plain float payload of an embedding file.
struct EmbeddingFile {
  int num_prompts = 0;
  int num_classes = 0;
  int d_text = 0;
  Matrix<float> rows;  // [(K*C) x d_text], c-major
};

void write_embeddings(const std::filesystem::path& path, const EmbeddingFile& file);
/// Decodes and validates against the expected shape; mismatches raise
/// ConfigError naming expected and actual values, corrupt files ParseError.
EmbeddingFile read_embeddings(const std::filesystem::path& path, int num_prompts, int num_classes, int d_text);
EmbeddingFile decode_embeddings(std::vector<std::uint8_t> bytes);

}  // namespace mta
