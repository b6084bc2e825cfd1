#include <gtest/gtest.h>

#include "mta/checkpoint.hpp"
#include "mta/errors.hpp"
#include "test_util.hpp"

namespace mta {
namespace {

RunConfig small_run() {
  auto c = toy_preset();
  c.dataset.spec = default_scene_spec(3, 32, 32);
  c.model.num_classes = 3;
  c.model.num_queries = 4;
  c.model.num_layers = 1;
  c.model.d_model = 8;
  c.model.num_heads = 2;
  c.model.d_text = 8;
  c.model.d_embed = 4;
  c.model.context_length = 2;
  c.model.ffn_dim = 8;
  c.model.trunk_width = 4;
  return c;
}

TEST(Checkpoint, EncodeDecodeRoundTrip) {
  const auto config = small_run();
  auto model = build_model(config);
  AdamW<float> opt(model->parameters(), {});
  const auto ck = capture_checkpoint(*model, &opt, config, 0x1'0000'0007LL);
  const auto bytes = encode_checkpoint(ck);
  EXPECT_EQ(std::string(bytes.begin(), bytes.begin() + 8), "MTAC0001");
  const auto back = decode_checkpoint(bytes);
  EXPECT_EQ(back.config_text, serialize(config));
  EXPECT_EQ(back.iteration, 0x1'0000'0007LL);
  ASSERT_EQ(back.tensors.size(), model->parameters().all().size());
  for (std::size_t i = 0; i < back.tensors.size(); ++i) {
    EXPECT_EQ(back.tensors[i].name, ck.tensors[i].name);
    EXPECT_EQ(back.tensors[i].trainable, ck.tensors[i].trainable);
    EXPECT_EQ(back.tensors[i].value, ck.tensors[i].value);
  }
  EXPECT_EQ(back.moments.size(), opt.state().size());
  EXPECT_EQ(encode_checkpoint(back), bytes);
  ASSERT_NE(back.find("prompt_bank/prompts"), nullptr);
  EXPECT_EQ(back.find("nope"), nullptr);
}

TEST(Checkpoint, CorruptInputIsParseError) {
  const auto config = small_run();
  auto model = build_model(config);
  const auto bytes = encode_checkpoint(capture_checkpoint(*model, nullptr, config, 3));
  for (std::size_t cut : {std::size_t(4), std::size_t(20), bytes.size() / 2, bytes.size() - 1}) {
    auto truncated = bytes;
    truncated.resize(cut);
    EXPECT_THROW(decode_checkpoint(truncated), ParseError) << cut;
  }
  auto trailing = bytes;
  trailing.push_back(0);
  EXPECT_THROW(decode_checkpoint(trailing), ParseError);
  auto magic = bytes;
  magic[0] = 'X';
  EXPECT_THROW(decode_checkpoint(magic), ParseError);
}

TEST(Checkpoint, ModelFromCheckpointReproducesForward) {
  test::TempDir dir;
  const auto config = small_run();
  auto model = build_model(config);
  // move away from the seeded initialisation so a fresh build would differ
  for (auto& p : model->parameters().all())
    if (p.trainable)
      for (auto& v : p.var.mutable_value().storage()) v += 0.01f;
  save_checkpoint(dir / "ck.bin", capture_checkpoint(*model, nullptr, config, 0));
  RunConfig restored_config;
  auto restored = model_from_checkpoint(load_checkpoint(dir / "ck.bin"), &restored_config);
  EXPECT_EQ(restored_config, config);
  const auto sample = generate_scene(config.dataset.spec, 2);
  EXPECT_EQ(restored->forward(sample).layers.back().mask_logits.value(),
            model->forward(sample).layers.back().mask_logits.value());
  EXPECT_EQ(restored->frozen_state_bytes(), model->frozen_state_bytes());
}

TEST(Checkpoint, MismatchedModelRejected) {
  const auto config = small_run();
  auto model = build_model(config);
  auto ck = capture_checkpoint(*model, nullptr, config, 0);
  ck.tensors.pop_back();
  EXPECT_THROW(restore_parameters(*model, ck), ConfigError);
}

TEST(Checkpoint, MissingFileIsIoError) {
  EXPECT_THROW(load_checkpoint("/nonexistent/ck.bin"), IoError);
}

}  // namespace
}  // namespace mta
