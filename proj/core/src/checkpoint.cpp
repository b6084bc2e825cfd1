#include "mta/checkpoint.hpp"

#include "mta/binary_io.hpp"
#include "mta/encoders.hpp"
#include "mta/errors.hpp"

namespace mta {

namespace {

void write_i64(io::ByteWriter& w, std::int64_t v) {
  const auto u = static_cast<std::uint64_t>(v);
  w.u32(static_cast<std::uint32_t>(u));
  w.u32(static_cast<std::uint32_t>(u >> 32));
}

std::int64_t read_i64(io::ByteReader& r) {
  const std::uint64_t lo = r.u32();
  const std::uint64_t hi = r.u32();
  return static_cast<std::int64_t>(lo | (hi << 32));
}

void write_payload(io::ByteWriter& w, const Matrix<float>& m) {
  for (float v : m.storage()) w.f32(v);
}

Matrix<float> read_payload(io::ByteReader& r, std::size_t rows, std::size_t cols) {
  if (rows * cols * 4 > r.remaining())
    throw ParseError("checkpoint tensor payload truncated", r.offset());
  Matrix<float> m(rows, cols);
  for (auto& v : m.storage()) v = r.f32();
  return m;
}

}  // namespace

const CheckpointTensor* Checkpoint::find(const std::string& name) const {
  for (const auto& t : tensors)
    if (t.name == name) return &t;
  return nullptr;
}

std::vector<std::uint8_t> encode_checkpoint(const Checkpoint& ck) {
  io::ByteWriter w;
  w.magic(kCheckpointMagic);
  w.u32(kCheckpointVersion);
  w.str(ck.config_text);
  write_i64(w, ck.iteration);
  w.u32(static_cast<std::uint32_t>(ck.tensors.size()));
  for (const auto& t : ck.tensors) {
    w.str(t.name);
    w.u8(t.trainable ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(t.value.rows()));
    w.u32(static_cast<std::uint32_t>(t.value.cols()));
    write_payload(w, t.value);
  }
  write_i64(w, ck.optimizer_step);
  w.u32(static_cast<std::uint32_t>(ck.moments.size()));
  for (const auto& m : ck.moments) {
    w.str(m.name);
    w.u32(static_cast<std::uint32_t>(m.m.rows()));
    w.u32(static_cast<std::uint32_t>(m.m.cols()));
    write_payload(w, m.m);
    write_payload(w, m.v);
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::vector<std::uint8_t> bytes) {
  io::ByteReader r(std::move(bytes));
  r.expect_magic(kCheckpointMagic, "checkpoint");
  const auto version = r.u32();
  if (version != kCheckpointVersion)
    throw ParseError("unsupported checkpoint version " + std::to_string(version), 8);
  Checkpoint ck;
  ck.config_text = r.str();
  ck.iteration = read_i64(r);
  const auto count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    CheckpointTensor t;
    t.name = r.str();
    t.trainable = r.u8() != 0;
    const auto rows = r.u32(), cols = r.u32();
    t.value = read_payload(r, rows, cols);
    ck.tensors.push_back(std::move(t));
  }
  ck.optimizer_step = read_i64(r);
  const auto moments = r.u32();
  for (std::uint32_t i = 0; i < moments; ++i) {
    MomentState<float> m;
    m.name = r.str();
    const auto rows = r.u32(), cols = r.u32();
    m.m = read_payload(r, rows, cols);
    m.v = read_payload(r, rows, cols);
    ck.moments.push_back(std::move(m));
  }
  if (r.remaining() != 0) throw ParseError("trailing bytes after checkpoint", r.offset());
  return ck;
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& checkpoint) {
  io::write_file_atomic(path, encode_checkpoint(checkpoint));
}

Checkpoint load_checkpoint(const std::filesystem::path& path) { return decode_checkpoint(io::read_file(path)); }

Checkpoint capture_checkpoint(const MaskTextModel<float>& model, const AdamW<float>* optimizer,
                              const RunConfig& config, std::int64_t iteration) {
  Checkpoint ck;
  ck.config_text = serialize(config);
  ck.iteration = iteration;
  for (const auto& p : model.parameters().all()) ck.tensors.push_back({p.name, p.trainable, p.var.value()});
  if (model.has_imported_embeddings())
    ck.tensors.push_back({kImportedEmbeddingsTensor, false, model.encode_text().rows.value()});
  if (optimizer) {
    ck.optimizer_step = optimizer->step_count();
    ck.moments = optimizer->state();
  }
  return ck;
}

void restore_parameters(MaskTextModel<float>& model, const Checkpoint& checkpoint) {
  if (const auto* imported = checkpoint.find(kImportedEmbeddingsTensor))
    model.use_imported_embeddings(imported->value);
  for (auto& p : model.parameters().all()) {
    const auto* t = checkpoint.find(p.name);
    if (!t) throw ConfigError("checkpoint lacks parameter " + p.name);
    if (!t->value.same_shape(p.var.value()))
      throw ConfigError("checkpoint parameter " + p.name + " has shape " + std::to_string(t->value.rows()) + "x" +
                        std::to_string(t->value.cols()) + ", model expects " + std::to_string(p.var.rows()) + "x" +
                        std::to_string(p.var.cols()));
    p.var.mutable_value() = t->value;
  }
}

std::unique_ptr<MaskTextModel<float>> build_model(const RunConfig& config) {
  validate(config);
  auto model = std::make_unique<MaskTextModel<float>>(config.model, config.train.seed);
  if (!config.model.text_embeddings_path.empty()) {
    const auto file = read_embeddings(config.model.text_embeddings_path, config.model.num_prompts,
                                      config.model.num_classes, config.model.d_text);
    model->use_imported_embeddings(file.rows);
  }
  return model;
}

std::unique_ptr<MaskTextModel<float>> model_from_checkpoint(const Checkpoint& checkpoint, RunConfig* config_out) {
  RunConfig config = parse_run_config(checkpoint.config_text);
  validate(config);
  auto model = std::make_unique<MaskTextModel<float>>(config.model, config.train.seed);
  restore_parameters(*model, checkpoint);
  if (config_out) *config_out = std::move(config);
  return model;
}

}  // namespace mta
