#pragma once

#include <cstdint>
#include <string>

namespace mta {

/// Architecture of the encoders and the mask-text decoder.
struct ModelConfig {
  int num_queries = 20;    // N mask queries
  int num_classes = 6;     // C
  int num_prompts = 3;     // K context prompts shared across classes
  int num_layers = 3;      // L decoder layers
  int d_model = 32;
  int d_text = 64;
  int d_embed = 32;        // width of prompt / class tokens fed to the text encoder
  int context_length = 8;  // tokens per context prompt
  int num_heads = 4;
  int ffn_dim = 128;
  int trunk_width = 32;
  int text_mlp_depth = 2;  // depth of the text_up projection
  double temperature = 0.07;
  bool masked_attention = true;
  bool use_text_queries = true;      // false: plain mask-query decoder (ablation baseline)
  bool joint_self_attention = true;  // false: text and mask queries self-attend separately
  bool trunk_trainable = false;
  std::uint64_t encoder_seed = 1234;  // frozen encoder weights and class tokens
  std::string text_embeddings_path;   // when set, imported embeddings replace prompt learning

  std::size_t text_query_count() const {
    return use_text_queries ? std::size_t(num_prompts) * std::size_t(num_classes) : 0;
  }
  std::size_t total_query_count() const { return text_query_count() + std::size_t(num_queries); }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Throws ConfigError naming the violated invariant.
void validate(const ModelConfig& config);

/// Decoder sizes used in the published configuration (N=100, L=9, K=3,
/// context length 8, 1024-d text space reduced to 256).
ModelConfig paper_model_config(int num_classes);

}  // namespace mta
