#include <fstream>
#include <sstream>

#include <gtest/gtest.h>
#include <json.hpp>

#include "cli.hpp"
#include "mta/binary_io.hpp"
#include "mta/checkpoint.hpp"
#include "mta/evaluation.hpp"
#include "mta/trainer.hpp"
#include "test_util.hpp"

namespace mta {
namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = cli::run(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p);
  return std::string(std::istreambuf_iterator<char>(in), {});
}

RunConfig tiny_run(const std::filesystem::path& data) {
  auto c = toy_preset();
  c.dataset.spec = default_scene_spec(3, 32, 32);
  c.dataset.train_count = 2;
  c.dataset.val_count = 2;
  c.dataset.directory = data.string();
  c.model.num_classes = 3;
  c.model.num_queries = 4;
  c.model.num_prompts = 2;
  c.model.num_layers = 1;
  c.model.d_model = 16;
  c.model.d_text = 16;
  c.model.d_embed = 8;
  c.model.context_length = 2;
  c.model.ffn_dim = 32;
  c.model.trunk_width = 8;
  c.train.batch_size = 2;
  c.train.iterations = 3;
  c.train.checkpoint_every = 0;
  return c;
}

std::filesystem::path write_config(const test::TempDir& dir, const RunConfig& c) {
  const auto path = dir / "run.cfg";
  io::write_file_atomic(path, serialize(c));
  return path;
}

TEST(Cli, GenerateDataAndRefuseRerun) {
  test::TempDir dir;
  const auto cfg = write_config(dir, tiny_run(dir / "data"));
  auto r = run({"generate-data", "--config", cfg.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "train" / "manifest.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "val" / "manifest.txt"));
  EXPECT_TRUE(std::filesystem::exists(dir / "data" / "config.cfg"));
  EXPECT_NE(r.out.find("train: 2 samples"), std::string::npos) << r.out;
  EXPECT_EQ(run({"generate-data", "--config", cfg.string()}).code, 3);
  EXPECT_EQ(run({"generate-data", "--config", cfg.string(), "--force"}).code, 0);
}

TEST(Cli, InvalidGridIsConfigError) {
  test::TempDir dir;
  auto c = tiny_run(dir / "data");
  c.dataset.spec.height = c.dataset.spec.width = 60;
  const auto r = run({"generate-data", "--config", write_config(dir, c).string()});
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.err.find("multiples of 32"), std::string::npos) << r.err;
}

TEST(Cli, ParseErrorsAreConfigErrors) {
  EXPECT_EQ(run({"train", "--no-such-flag"}).code, 2);
  EXPECT_EQ(run({}).code, 2);
  test::TempDir dir;
  io::write_file_atomic(dir / "bad.cfg", std::string("model.nonsense = 3\n"));
  EXPECT_EQ(run({"train", "--config", (dir / "bad.cfg").string()}).code, 2);
  EXPECT_EQ(run({"train", "--config", (dir / "missing.cfg").string()}).code, 3);
}

TEST(Cli, TrainWritesArtifacts) {
  test::TempDir dir;
  const auto cfg = write_config(dir, tiny_run(dir / "data"));
  ASSERT_EQ(run({"generate-data", "--config", cfg.string()}).code, 0);
  const auto out = dir / "run";
  auto r = run({"train", "--config", cfg.string(), "--out", out.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  for (const char* f : {"config.cfg", "metrics.jsonl", "checkpoint.bin", "eval.json"})
    EXPECT_TRUE(std::filesystem::exists(out / f)) << f;
  std::istringstream metrics(slurp(out / "metrics.jsonl"));
  int lines = 0;
  for (std::string l; std::getline(metrics, l);) ++lines;
  EXPECT_EQ(lines, 3);
  EXPECT_EQ(run({"train", "--config", cfg.string(), "--out", out.string()}).code, 3);

  const auto plot = dir / "plots" / "loss";
  r = run({"plot", "--kind", "loss-curve", "--input", (out / "metrics.jsonl").string(), "--out", plot.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream side(slurp(dir / "plots" / "loss.txt"));
  lines = 0;
  for (std::string l; std::getline(side, l);) ++lines;
  EXPECT_EQ(lines, 3);

  for (const char* kind : {"similarity-heatmap", "embedding-projection", "segmentation-overlay"}) {
    const auto stem = dir / "plots" / kind;
    r = run({"plot", "--kind", kind, "--checkpoint", (out / "checkpoint.bin").string(), "--out", stem.string()});
    ASSERT_EQ(r.code, 0) << kind << r.err;
    auto txt = stem;
    txt += ".txt";
    EXPECT_FALSE(slurp(txt).empty()) << kind;
  }
}

TEST(Cli, UnknownPlotKindIsConfigError) {
  test::TempDir dir;
  EXPECT_EQ(run({"plot", "--kind", "pie", "--out", (dir / "p").string()}).code, 2);
}

TEST(Cli, GradcheckPasses) {
  const auto r = run({"gradcheck"});
  EXPECT_EQ(r.code, 0) << r.out << r.err;
  EXPECT_NE(r.out.find("tiny/mixneg"), std::string::npos) << r.out;
  EXPECT_NE(r.out.find("tiny/separateneg"), std::string::npos) << r.out;
}

TEST(Cli, EvalMissingCheckpointIsIoError) {
  EXPECT_EQ(run({"eval", "--checkpoint", "/nonexistent/ck.bin"}).code, 3);
  EXPECT_EQ(run({"eval"}).code, 2);
}

// A checkpoint that reproduces the ground truth of a 2-sample split exactly,
// obtained by overfitting those two samples.
TEST(Cli, EvalOfOracleCheckpointIsPerfect) {
  test::TempDir dir;
  auto c = tiny_run(dir / "data");
  c.model.trunk_trainable = true;
  c.model.num_layers = 2;
  c.train.augment = false;
  c.train.iterations = 400;
  c.train.learning_rate = 3e-3;
  const auto cfg = write_config(dir, c);
  ASSERT_EQ(run({"generate-data", "--config", cfg.string()}).code, 0);

  TrainLoopOptions opts;
  opts.out_dir = dir / "oracle";
  const auto train_manifest = load_manifest(dir / "data" / "train");
  const auto samples = load_samples(train_manifest);
  const auto result = train_loop(c, samples, opts);
  auto model = model_from_checkpoint(load_checkpoint(result.checkpoint_path));
  ASSERT_EQ(evaluate_miou(*model, samples, 0).miou, 1.0) << "overfit did not reach the oracle";

  const auto r = run({"eval", "--checkpoint", result.checkpoint_path.string(), "--manifest",
                      (dir / "data" / "train").string(), "--out", (dir / "eval").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir / "eval" / "eval.json"));
  EXPECT_EQ(report["miou"].get<double>(), 1.0);
  EXPECT_EQ(report["sample_count"].get<int>(), 2);
  EXPECT_TRUE(std::filesystem::exists(dir / "eval" / "config.cfg"));
}

TEST(Cli, AblateCarriesSeedList) {
  test::TempDir dir;
  auto c = tiny_run(dir / "data");
  c.output.directory = (dir / "out").string();
  const auto cfg = write_config(dir, c);
  const auto r = run({"ablate", "--config", cfg.string(), "--seeds", "1,2", "--iterations", "1", "--out",
                      (dir / "abl").string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto report = nlohmann::json::parse(slurp(dir / "abl" / "ablation.json"));
  int rows = 0;
  for (const auto* table : {"components", "prompts", "attention"})
    for (const auto& row : report[table]) {
      EXPECT_EQ(row["seeds"], nlohmann::json::array({1, 2}));
      ++rows;
    }
  EXPECT_EQ(rows, 13);
  EXPECT_TRUE(std::filesystem::exists(dir / "abl" / "config.cfg"));
  EXPECT_TRUE(std::filesystem::exists(dir / "abl" / "ablation.md"));
}

}  // namespace
}  // namespace mta
