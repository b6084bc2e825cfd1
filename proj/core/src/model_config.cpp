#include "mta/model_config.hpp"

#include "mta/errors.hpp"

namespace mta {

void validate(const ModelConfig& c) {
  auto fail = [](const std::string& invariant) { throw ConfigError("model config invariant violated: " + invariant); };
  if (c.num_queries < 1) fail("N >= 1");
  if (c.num_layers < 1) fail("L >= 1");
  if (c.num_classes < 1) fail("C >= 1");
  if (c.num_prompts < 1) fail("K >= 1");
  if (!(c.temperature > 0.0)) fail("tau > 0");
  if (c.d_model < 2 || c.d_text < 1 || c.d_embed < 1) fail("positive embedding widths");
  if (c.num_heads < 1 || c.d_model % c.num_heads != 0) fail("num_heads divides d_model");
  if (c.context_length < 1) fail("context_length >= 1");
  if (c.ffn_dim < 1 || c.trunk_width < 4) fail("positive ffn_dim and trunk_width >= 4");
  if (c.text_mlp_depth < 1) fail("text_mlp_depth >= 1");
}

ModelConfig paper_model_config(int num_classes) {
  ModelConfig c;
  c.num_queries = 100;
  c.num_classes = num_classes;
  c.num_prompts = 3;
  c.num_layers = 9;
  c.context_length = 8;
  c.d_text = 1024;
  c.d_model = 256;
  c.d_embed = 512;
  c.num_heads = 8;
  c.ffn_dim = 2048;
  c.trunk_width = 256;
  return c;
}

}  // namespace mta
