#include "mta/run_config.hpp"

#include <filesystem>
#include <functional>
#include <sstream>

#include "mta/binary_io.hpp"
#include "mta/errors.hpp"
#include "mta/text_format.hpp"

namespace mta {

namespace {

using text::format_number;
using text::parse_bool;
using text::parse_number;

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

std::string bool_text(bool b) { return b ? "true" : "false"; }

template <typename T, typename Member>
Field number_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return format_number<T>(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_number<T>(v, key); }};
}

template <typename Member>
Field bool_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return bool_text(member(const_cast<RunConfig&>(c))); },
          [member, key](RunConfig& c, const std::string& v) { member(c) = parse_bool(v, key); }};
}

template <typename Member>
Field string_field(std::string key, Member member) {
  return {key, [member](const RunConfig& c) { return member(const_cast<RunConfig&>(c)); },
          [member](RunConfig& c, const std::string& v) { member(c) = v; }};
}

#define MTA_REF(expr) [](RunConfig & c) -> auto& { return expr; }

const std::vector<Field>& fields() {
  static const std::vector<Field> table = {
      number_field<std::int64_t>("dataset.root_seed", MTA_REF(c.dataset.root_seed)),
      number_field<int>("dataset.train_count", MTA_REF(c.dataset.train_count)),
      number_field<int>("dataset.val_count", MTA_REF(c.dataset.val_count)),
      string_field("dataset.directory", MTA_REF(c.dataset.directory)),

      number_field<int>("model.N", MTA_REF(c.model.num_queries)),
      number_field<int>("model.K", MTA_REF(c.model.num_prompts)),
      number_field<int>("model.L", MTA_REF(c.model.num_layers)),
      number_field<int>("model.d_model", MTA_REF(c.model.d_model)),
      number_field<int>("model.d_text", MTA_REF(c.model.d_text)),
      number_field<int>("model.d_embed", MTA_REF(c.model.d_embed)),
      number_field<int>("model.context_length", MTA_REF(c.model.context_length)),
      number_field<int>("model.num_heads", MTA_REF(c.model.num_heads)),
      number_field<int>("model.ffn_dim", MTA_REF(c.model.ffn_dim)),
      number_field<int>("model.trunk_width", MTA_REF(c.model.trunk_width)),
      number_field<int>("model.text_mlp_depth", MTA_REF(c.model.text_mlp_depth)),
      number_field<double>("model.temperature", MTA_REF(c.model.temperature)),
      bool_field("model.masked_attention", MTA_REF(c.model.masked_attention)),
      bool_field("model.use_text_queries", MTA_REF(c.model.use_text_queries)),
      bool_field("model.joint_self_attention", MTA_REF(c.model.joint_self_attention)),
      bool_field("model.trunk_trainable", MTA_REF(c.model.trunk_trainable)),
      number_field<std::uint64_t>("model.encoder_seed", MTA_REF(c.model.encoder_seed)),
      string_field("model.text_embeddings", MTA_REF(c.model.text_embeddings_path)),

      number_field<double>("loss.lambda_mask_cls", MTA_REF(c.loss.weights.mask_cls)),
      number_field<double>("loss.lambda_mask", MTA_REF(c.loss.weights.mask)),
      number_field<double>("loss.lambda_sim", MTA_REF(c.loss.weights.sim)),
      {"loss.strategy", [](const RunConfig& c) { return to_string(c.loss.strategy); },
       [](RunConfig& c, const std::string& v) { c.loss.strategy = negative_strategy_from_string(v); }},
      number_field<double>("loss.no_object_weight", MTA_REF(c.loss.no_object_weight)),
      bool_field("loss.dice", MTA_REF(c.loss.dice)),

      number_field<int>("train.iterations", MTA_REF(c.train.iterations)),
      number_field<int>("train.batch_size", MTA_REF(c.train.batch_size)),
      number_field<double>("train.learning_rate", MTA_REF(c.train.learning_rate)),
      number_field<double>("train.beta1", MTA_REF(c.train.beta1)),
      number_field<double>("train.beta2", MTA_REF(c.train.beta2)),
      number_field<double>("train.epsilon", MTA_REF(c.train.epsilon)),
      number_field<double>("train.weight_decay", MTA_REF(c.train.weight_decay)),
      number_field<std::uint64_t>("train.seed", MTA_REF(c.train.seed)),
      bool_field("train.augment", MTA_REF(c.train.augment)),
      number_field<int>("train.checkpoint_every", MTA_REF(c.train.checkpoint_every)),
      string_field("train.train_manifest", MTA_REF(c.train.train_manifest)),
      string_field("train.eval_manifest", MTA_REF(c.train.eval_manifest)),

      string_field("output.directory", MTA_REF(c.output.directory)),
  };
  return table;
}

#undef MTA_REF

}  // namespace

std::string RunConfig::train_manifest_path() const {
  return train.train_manifest.empty() ? (std::filesystem::path(dataset.directory) / "train").string()
                                      : train.train_manifest;
}

std::string RunConfig::eval_manifest_path() const {
  return train.eval_manifest.empty() ? (std::filesystem::path(dataset.directory) / "val").string()
                                     : train.eval_manifest;
}

RunConfig toy_preset() {
  RunConfig c;
  c.model.num_classes = c.dataset.spec.num_classes;
  return c;
}

RunConfig paper_preset() {
  RunConfig c;
  c.dataset.spec = default_scene_spec(150, 512, 512);
  c.dataset.spec.max_instances = 8;
  c.dataset.train_count = 20210;
  c.dataset.val_count = 2000;
  c.model = paper_model_config(150);
  c.train.preset = "paper";
  c.train.iterations = 160000;
  c.train.batch_size = 16;
  c.train.learning_rate = 2e-4;
  c.train.checkpoint_every = 16000;
  c.output.directory = "runs/paper";
  return c;
}

RunConfig preset_by_name(const std::string& name) {
  if (name == "toy") return toy_preset();
  if (name == "paper") return paper_preset();
  throw ConfigError("unknown preset '" + name + "' (expected toy or paper)");
}

void validate(const RunConfig& c) {
  auto fail = [](const std::string& invariant) { throw ConfigError("run config invariant violated: " + invariant); };
  validate(c.dataset.spec);
  validate(c.model);
  if (c.model.num_classes != c.dataset.spec.num_classes) fail("model C equals dataset.num_classes");
  if (c.dataset.train_count < 1 || c.dataset.val_count < 0) fail("train_count >= 1 and val_count >= 0");
  if (c.train.iterations < 0) fail("iterations >= 0");
  if (c.train.batch_size < 1) fail("batch_size >= 1");
  if (!(c.train.learning_rate > 0.0)) fail("learning_rate > 0");
  if (!(c.train.beta1 >= 0.0 && c.train.beta1 < 1.0 && c.train.beta2 >= 0.0 && c.train.beta2 < 1.0))
    fail("betas in [0, 1)");
  if (!(c.train.epsilon > 0.0) || c.train.weight_decay < 0.0) fail("epsilon > 0 and weight_decay >= 0");
  if (c.train.checkpoint_every < 0) fail("checkpoint_every >= 0");
  if (c.loss.weights.mask_cls < 0.0 || c.loss.weights.mask < 0.0 || c.loss.weights.sim < 0.0)
    fail("loss weights >= 0");
  if (c.loss.no_object_weight < 0.0) fail("no_object_weight >= 0");
  if (c.train.preset != "toy" && c.train.preset != "paper") fail("preset in {toy, paper}");
}

std::vector<std::pair<std::string, std::string>> run_config_fields(const RunConfig& config) {
  std::vector<std::pair<std::string, std::string>> out;
  out.emplace_back("train.preset", config.train.preset);
  for (const auto& [k, v] : scene_spec_fields(config.dataset.spec)) out.emplace_back("dataset." + k, v);
  for (const auto& f : fields()) out.emplace_back(f.key, f.get(config));
  return out;
}

void set_run_config_field(RunConfig& config, const std::string& key, const std::string& value) {
  if (key == "train.preset") {
    config.train.preset = value;
    return;
  }
  for (const auto& f : fields()) {
    if (f.key == key) {
      f.set(config, value);
      return;
    }
  }
  if (key.rfind("dataset.", 0) == 0 && set_scene_spec_field(config.dataset.spec, key.substr(8), value)) {
    config.model.num_classes = config.dataset.spec.num_classes;
    return;
  }
  throw ConfigError("unknown config key '" + key + "'");
}

std::string serialize(const RunConfig& config) {
  std::ostringstream out;
  std::string section;
  for (const auto& [k, v] : run_config_fields(config)) {
    const auto s = k.substr(0, k.find('.'));
    if (s != section) {
      if (!section.empty()) out << "\n";
      out << "# " << s << "\n";
      section = s;
    }
    out << k << " = " << v << "\n";
  }
  return out.str();
}

RunConfig parse_run_config(const std::string& body) {
  const auto entries = text::parse_key_values(body);
  std::string preset = "toy";
  for (const auto& kv : entries)
    if (kv.key == "train.preset") preset = kv.value;
  RunConfig config = preset_by_name(preset);
  for (const auto& kv : entries) {
    try {
      set_run_config_field(config, kv.key, kv.value);
    } catch (const ConfigError& e) {
      throw ConfigError("config line " + std::to_string(kv.line) + ": " + e.what());
    }
  }
  return config;
}

RunConfig load_run_config(const std::string& path) { return parse_run_config(io::read_text_file(path)); }

}  // namespace mta
