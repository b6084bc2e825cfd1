#pragma once

#include <cstdint>
#include <optional>
#include <utility>
#include <vector>

#include "mta/autograd.hpp"
#include "mta/encoders.hpp"
#include "mta/model_config.hpp"
#include "mta/params.hpp"
#include "mta/scenes.hpp"

namespace mta {

/// Per-layer outputs of the mask-text decoder.
template <typename T>
struct LayerRecord {
  int level = 0;              // pyramid level used by this layer (0: stride 32, 1: 16, 2: 8)
  ag::Var<T> text_proj;       // t' [K*C x d_text]; undefined without text queries
  ag::Var<T> mask_proj;       // m' [N x d_text]
  ag::Var<T> similarity;      // S  [N x K*C];     undefined without text queries
  ag::Var<T> mask_logits;     // [N x h4*w4]
  ag::Var<T> class_logits;    // [N x C+1]
};

template <typename T>
struct DecoderOutput {
  std::vector<LayerRecord<T>> layers;
  ag::Var<T> initial_text;    // t^0, constant within the pass
  ag::Var<T> final_queries;   // q^(L), text rows first
  int prediction_height = 0;
  int prediction_width = 0;
  /// allowed[(row * keys) + key] per layer for the cross-attention softmax
  std::vector<std::vector<std::uint8_t>> cross_attention_masks;
  /// Attention probabilities per layer, {cross heads..., self heads...}; only with trace_attention.
  std::vector<std::vector<Matrix<T>>> attention_probs;
};

struct ForwardOptions {
  /// Replaces the masks derived from intermediate predictions (gradient checks
  /// hold them fixed so the loss is smooth in the parameters).
  const std::vector<std::vector<std::uint8_t>>* fixed_cross_masks = nullptr;
  bool trace_attention = false;
};

/// Frozen encoders, prompt bank and the mask-text decoder with its heads.
template <typename T>
class MaskTextModel {
 public:
  MaskTextModel(const ModelConfig& config, std::uint64_t init_seed);

  MaskTextModel(const MaskTextModel&) = delete;
  MaskTextModel& operator=(const MaskTextModel&) = delete;

  DecoderOutput<T> forward(const SegmentationSample& sample, const ForwardOptions& options = {}) const;
  DecoderOutput<T> forward(const FeaturePyramid<T>& pyramid, const ForwardOptions& options = {}) const;

  FeaturePyramid<T> encode_image(const SegmentationSample& sample) const;
  TextEmbeddingSet<T> encode_text() const;

  /// t_hat = MLP(t): d_text -> d_model.
  ag::Var<T> reduce_text(const ag::Var<T>& text) const;

  /// Masked cross-attention to the layer's pyramid level, then self-attention
  /// over all queries, then the feed-forward block (pre-norm residuals).
  ag::Var<T> decoder_layer(int layer, const ag::Var<T>& queries, const FeaturePyramid<T>& pyramid,
                           const std::vector<std::uint8_t>* cross_allowed,
                           std::vector<Matrix<T>>* attention_trace = nullptr) const;

  /// t' = MLP(t_hat) + t^0, m' = MLP(m).
  std::pair<ag::Var<T>, ag::Var<T>> project_to_clip_space(const ag::Var<T>& text_queries,
                                                          const ag::Var<T>& mask_queries,
                                                          const ag::Var<T>& initial_text) const;

  ag::Var<T> predict_masks(const ag::Var<T>& mask_queries, const ag::Var<T>& prediction_features) const;
  ag::Var<T> classify_masks(const ag::Var<T>& mask_queries) const;

  /// Shared output norm followed by every head, for a full query set q.
  LayerRecord<T> heads(const ag::Var<T>& queries, const FeaturePyramid<T>& pyramid,
                       const ag::Var<T>& initial_text) const;

  /// Pyramid level index used by layer i: i mod 3.
  static int level_for_layer(int layer) { return layer % 3; }

  /// Replaces prompt-derived text embeddings by a fixed matrix (prompt learning off).
  void use_imported_embeddings(const Matrix<T>& rows);
  bool has_imported_embeddings() const { return imported_.has_value(); }

  ParameterSet<T>& parameters() { return params_; }
  const ParameterSet<T>& parameters() const { return params_; }
  const ModelConfig& config() const { return config_; }
  const PromptBank<T>& prompt_bank() const { return bank_; }

  /// Raw bytes of every frozen parameter, in registration order.
  std::vector<std::uint8_t> frozen_state_bytes() const;

 private:
  struct Attention {
    Linear<T> q, k, v, o;
  };
  struct Layer {
    LayerNormParams<T> cross_norm, self_norm, ffn_norm;
    Attention cross, self;
    Linear<T> ffn_in, ffn_out;
  };

  ag::Var<T> attend(const Attention& attn, const ag::Var<T>& queries, const ag::Var<T>& keys,
                    const ag::Var<T>& values, const std::vector<std::uint8_t>* allowed,
                    std::vector<Matrix<T>>* trace) const;
  ag::Var<T> query_positions() const;
  std::vector<std::uint8_t> cross_mask_from(const Matrix<T>& mask_logits, int pred_h, int pred_w, int level_h,
                                            int level_w) const;

  ModelConfig config_;
  ParameterSet<T> params_;
  ImageEncoder<T> image_encoder_;
  TextEncoder<T> text_encoder_;
  PromptBank<T> bank_;
  std::optional<Matrix<T>> imported_;

  Mlp<T> text_reduce_, text_up_, mask_up_, mask_embed_;
  Linear<T> class_head_;
  LayerNormParams<T> output_norm_;
  ag::Var<T> mask_queries_, mask_query_pos_, level_embed_;
  std::vector<Layer> layers_;
  std::vector<std::uint8_t> self_allowed_;  // empty when attention is joint
};

/// S = m' t'^T / tau. Throws ConfigError when tau <= 0.
template <typename T>
ag::Var<T> similarity_scores(const ag::Var<T>& mask_proj, const ag::Var<T>& text_proj, double temperature);

/// 2-D sinusoidal position encoding [h*w x d] with normalised coordinates.
template <typename T>
Matrix<T> sine_position_encoding(int height, int width, int channels);

/// Semantic inference from the final layer's mask tokens only: per-pixel
/// score_c = sum_q softmax(class_q)[c] * sigmoid(mask_q), no-object column
/// dropped, argmax over c, nearest-neighbour upsampling by `stride`.
template <typename T>
std::vector<int> inference_semantic_map(const Matrix<T>& mask_logits, const Matrix<T>& class_logits,
                                        int prediction_height, int prediction_width, int stride);

}  // namespace mta
