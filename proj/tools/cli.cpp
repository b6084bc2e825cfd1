#include "cli.hpp"

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <thread>

#include "mta/ablation.hpp"
#include "mta/binary_io.hpp"
#include "mta/checkpoint.hpp"
#include "mta/errors.hpp"
#include "mta/evaluation.hpp"
#include "mta/gradcheck.hpp"
#include "mta/plot.hpp"
#include "mta/run_config.hpp"
#include "mta/trainer.hpp"

namespace mta::cli {

namespace fs = std::filesystem;

namespace {

struct Common {
  std::string config;
  std::string out;
  std::optional<std::uint64_t> seed;
  std::string preset;
  bool force = false;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "Run configuration file (dotted key = value)");
  cmd->add_option("--out", c.out, "Output directory");
  cmd->add_option("--seed", c.seed, "Overrides train.seed");
  cmd->add_option("--preset", c.preset, "Base preset when no --config is given: toy or paper");
  cmd->add_flag("--force", c.force, "Overwrite existing outputs");
}

RunConfig resolve_config(const Common& c) {
  RunConfig config;
  if (!c.config.empty()) {
    config = load_run_config(c.config);
    if (!c.preset.empty() && c.preset != config.train.preset)
      throw ConfigError("--preset " + c.preset + " conflicts with train.preset = " + config.train.preset + " in " +
                        c.config);
  } else {
    config = preset_by_name(c.preset.empty() ? "toy" : c.preset);
  }
  if (c.seed) config.train.seed = *c.seed;
  validate(config);
  return config;
}

bool non_empty_dir(const fs::path& p) { return fs::is_directory(p) && !fs::is_empty(p); }

void ensure_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void write_config(const fs::path& dir, const RunConfig& config) {
  ensure_dir(dir);
  io::write_file_atomic(dir / "config.cfg", serialize(config));
}

std::vector<SegmentationSample> split_samples(const RunConfig& config, const std::string& manifest_path,
                                              const std::string& split, int count, std::ostream& out) {
  if (fs::exists(manifest_path)) {
    const auto manifest = load_manifest(manifest_path);
    if (!(manifest.spec == config.dataset.spec))
      throw ConfigError("scene spec of " + manifest_path + " differs from the run config");
    return load_samples(manifest);
  }
  out << "note: " << manifest_path << " not found; generating the " << split << " split in memory\n";
  const auto plan = plan_dataset(config.dataset.spec, config.dataset.root_seed,
                                 {{"train", config.dataset.train_count}, {"val", std::max(1, config.dataset.val_count)}});
  const auto& records = plan[split == "train" ? 0 : 1].records;
  std::vector<SegmentationSample> samples;
  for (int i = 0; i < count && std::size_t(i) < records.size(); ++i)
    samples.push_back(generate_scene(config.dataset.spec, records[std::size_t(i)].sample_id));
  return samples;
}

// ---- commands ---------------------------------------------------------------------

int cmd_generate(const Common& c, std::ostream& out) {
  RunConfig config = resolve_config(c);
  const fs::path dir = c.out.empty() ? fs::path(config.dataset.directory) : fs::path(c.out);
  if (non_empty_dir(dir) && !c.force)
    throw IoError(dir.string() + " exists and is not empty (pass --force to overwrite)");
  if (c.force) {
    for (const char* sub : {"train", "val"}) fs::remove_all(dir / sub);
  }
  config.dataset.directory = dir.string();
  std::vector<SplitRequest> splits = {{"train", config.dataset.train_count}};
  if (config.dataset.val_count > 0) splits.push_back({"val", config.dataset.val_count});
  const auto manifests = build_dataset(config.dataset.spec, config.dataset.root_seed, splits, dir);
  write_config(dir, config);
  for (const auto& m : manifests) {
    std::int64_t instances = 0;
    for (const auto& r : m.records) instances += r.instance_count;
    out << m.split_name << ": " << m.sample_count << " samples, " << instances << " instances, root_seed "
        << m.root_seed << ", seeds from " << m.split_offset << " -> " << (dir / m.split_name / "manifest.txt").string()
        << "\n";
  }
  return kOk;
}

int cmd_train(const Common& c, const std::string& resume, std::ostream& out) {
  RunConfig config = resolve_config(c);
  const fs::path dir = c.out.empty() ? fs::path(config.output.directory) : fs::path(c.out);
  if (resume.empty() && fs::exists(dir / "checkpoint.bin") && !c.force)
    throw IoError((dir / "checkpoint.bin").string() + " exists (pass --force to overwrite or --resume to continue)");
  config.output.directory = dir.string();
  out << "optimizer: AdamW lr " << config.train.learning_rate << " betas (" << config.train.beta1 << ", "
      << config.train.beta2 << ") eps " << config.train.epsilon << " weight_decay " << config.train.weight_decay
      << ", no schedule; dice " << (config.loss.dice ? "on" : "off") << "; strategy " << to_string(config.loss.strategy)
      << "\n";
  TrainLoopOptions options;
  options.out_dir = dir;
  options.resume_from = resume;
  const std::int64_t every = std::max<std::int64_t>(1, config.train.iterations / 10);
  options.on_record = [&](const MetricsRecord& r) {
    if (r.iter % every == 0 || r.iter == 1)
      out << "iter " << r.iter << " total " << r.breakdown.total << " l_mask_cls " << r.breakdown.l_mask_cls
          << " l_mask " << r.breakdown.l_mask << " l_sim_sum " << r.breakdown.l_sim_sum() << "\n";
  };
  const auto result = train_loop(config, options);
  out << "checkpoint: " << result.checkpoint_path.string() << "\nmetrics: " << result.metrics_path.string() << "\n";

  const auto eval_path = config.eval_manifest_path();
  if (fs::exists(eval_path)) {
    RunConfig trained;
    auto model = model_from_checkpoint(load_checkpoint(result.checkpoint_path), &trained);
    auto report = evaluate_miou(*model, load_samples(load_manifest(eval_path)), trained.dataset.spec.background_class,
                                std::max(1u, std::thread::hardware_concurrency()));
    report.config_echo = serialize(trained);
    io::write_file_atomic(dir / "eval.json", to_json(report));
    out << "eval mIoU " << report.miou << " on " << report.sample_count << " samples (" << eval_path << ")\n";
  }
  return kOk;
}

int cmd_eval(const Common& c, const std::string& checkpoint_path, std::string manifest, std::ostream& out) {
  if (checkpoint_path.empty()) throw ConfigError("eval needs --checkpoint");
  RunConfig config;
  auto model = model_from_checkpoint(load_checkpoint(checkpoint_path), &config);
  if (manifest.empty()) manifest = config.eval_manifest_path();
  auto samples = load_samples(load_manifest(manifest));
  auto report = evaluate_miou(*model, samples, config.dataset.spec.background_class,
                              std::max(1u, std::thread::hardware_concurrency()));
  report.config_echo = serialize(config);
  const auto json = to_json(report);
  out << json << "\n";
  if (!c.out.empty()) {
    write_config(c.out, config);
    io::write_file_atomic(fs::path(c.out) / "eval.json", json);
  }
  return kOk;
}

int cmd_ablate(const Common& c, const std::vector<std::uint64_t>& seeds, int iterations, unsigned threads,
               std::ostream& out) {
  RunConfig config = resolve_config(c);
  const fs::path dir = c.out.empty() ? fs::path(config.output.directory) / "ablation" : fs::path(c.out);
  const auto train = split_samples(config, config.train_manifest_path(), "train", config.dataset.train_count, out);
  const auto eval = split_samples(config, config.eval_manifest_path(), "val", config.dataset.val_count, out);
  AblationOptions options;
  if (!seeds.empty()) options.seeds = seeds;
  options.iterations = iterations;
  options.threads = threads;
  options.log = [&](const std::string& line) { out << line << "\n" << std::flush; };
  const auto report = run_ablation(config, train, eval, options);
  write_config(dir, config);
  io::write_file_atomic(dir / "ablation.json", to_json(report));
  const auto md = to_markdown(report);
  io::write_file_atomic(dir / "ablation.md", md);
  out << md;
  return kOk;
}

int cmd_gradcheck(const Common& c, std::ostream& out) {
  ModelConfig model = gradcheck_model_config();
  if (!c.config.empty()) model = resolve_config(c).model;
  GradCheckOptions options;
  if (c.seed) options.seed = *c.seed;
  std::vector<GradCheckReport> reports = {gradient_check_linear_stub(options)};
  for (auto s : {NegativeStrategy::MixNeg, NegativeStrategy::SeparateNeg})
    reports.push_back(gradient_check(model, s, options));
  std::string text;
  bool ok = true;
  for (const auto& r : reports) {
    text += r.summary();
    if (!r.passed()) {
      ok = false;
      for (const auto& g : r.failing_groups()) text += "failing group: " + r.model + "/" + g + "\n";
    }
  }
  out << text;
  if (!c.out.empty()) {
    ensure_dir(c.out);
    io::write_file_atomic(fs::path(c.out) / "gradcheck.txt", text);
  }
  return ok ? kOk : kCheckFailed;
}

struct PlotArgs {
  std::string kind;
  std::string input;
  std::string checkpoint;
  std::string manifest;
  int index = 0;
};

int cmd_plot(const Common& c, const PlotArgs& a, std::ostream& out) {
  const PlotKind kind = plot_kind_from_string(a.kind);
  if (c.out.empty()) throw ConfigError("plot needs --out <stem>");
  const fs::path stem = c.out;
  if (stem.has_parent_path()) ensure_dir(stem.parent_path());
  Plot plot;
  if (kind == PlotKind::LossCurve) {
    if (a.input.empty()) throw ConfigError("loss-curve needs --input <metrics.jsonl>");
    plot = loss_curve(read_loss_curve(io::read_text_file(a.input)));
  } else {
    if (a.checkpoint.empty()) throw ConfigError(a.kind + " needs --checkpoint");
    RunConfig config;
    auto model = model_from_checkpoint(load_checkpoint(a.checkpoint), &config);
    const auto manifest = load_manifest(a.manifest.empty() ? config.eval_manifest_path() : a.manifest);
    if (a.index < 0 || std::size_t(a.index) >= manifest.records.size())
      throw ConfigError("--index " + std::to_string(a.index) + " outside the manifest's " +
                        std::to_string(manifest.records.size()) + " samples");
    const auto sample = read_sample(manifest.directory / "samples", manifest.records[std::size_t(a.index)].sample_id);
    if (kind == PlotKind::SegmentationOverlay) {
      plot = segmentation_overlay(sample, predict_semantic_map(*model, sample), config.model.num_classes);
    } else {
      const auto output = model->forward(sample);
      const auto& last = output.layers.back();
      if (!last.similarity.defined()) throw ConfigError(a.kind + " needs a model with text queries");
      plot = kind == PlotKind::SimilarityHeatmap
                 ? similarity_heatmap(last.similarity.value())
                 : embedding_projection(last.mask_proj.value(), last.text_proj.value(), c.seed.value_or(0));
    }
    auto cfg = stem;
    cfg += ".cfg";
    io::write_file_atomic(cfg, serialize(config));
  }
  write_plot(plot, stem);
  out << "wrote " << stem.string() << ".ppm and " << stem.string() << ".txt\n";
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Mask-text alignment toolkit: data generation, training, evaluation, ablation, checks, plots"};
  app.require_subcommand(1);

  Common generate_c, train_c, eval_c, ablate_c, grad_c, plot_c;
  auto* generate = app.add_subcommand("generate-data", "Render the synthetic train/val splits");
  add_common(generate, generate_c);

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoints and metrics.jsonl");
  add_common(train, train_c);
  std::string resume;
  train->add_option("--resume", resume, "Continue from a checkpoint");

  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint (mIoU)");
  add_common(eval, eval_c);
  std::string checkpoint, manifest;
  eval->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  eval->add_option("--manifest", manifest, "Split manifest (file or directory)");

  auto* ablate = app.add_subcommand("ablate", "Component and prompt-count ablation tables");
  add_common(ablate, ablate_c);
  std::vector<std::uint64_t> seeds;
  int iterations = -1;
  unsigned threads = 1;
  ablate->add_option("--seeds", seeds, "Comma-separated seed list (default 1,2,3,4,5)")->delimiter(',');
  ablate->add_option("--iterations", iterations, "Training iterations per run (default: train.iterations)");
  ablate->add_option("--threads", threads, "Concurrent training runs");

  auto* grad = app.add_subcommand("gradcheck", "Finite-difference gradient check on the tiny model");
  add_common(grad, grad_c);

  auto* plot = app.add_subcommand("plot", "Render a plot and its numeric sidecar");
  add_common(plot, plot_c);
  PlotArgs plot_args;
  plot->add_option("--kind", plot_args.kind,
                   "similarity-heatmap | segmentation-overlay | embedding-projection | loss-curve")
      ->required();
  plot->add_option("--input", plot_args.input, "Metrics stream for loss-curve");
  plot->add_option("--checkpoint", plot_args.checkpoint, "Checkpoint for model-based plots");
  plot->add_option("--manifest", plot_args.manifest, "Manifest holding the sample to plot");
  plot->add_option("--index", plot_args.index, "Sample index within the manifest");

  std::vector<std::string> reversed(args.rbegin(), args.rend());
  try {
    app.parse(reversed);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kConfigError;
  }

  try {
    if (*generate) return cmd_generate(generate_c, out);
    if (*train) return cmd_train(train_c, resume, out);
    if (*eval) return cmd_eval(eval_c, checkpoint, manifest, out);
    if (*ablate) return cmd_ablate(ablate_c, seeds, iterations, threads, out);
    if (*grad) return cmd_gradcheck(grad_c, out);
    if (*plot) return cmd_plot(plot_c, plot_args, out);
  } catch (const ConfigError& e) {
    err << "config error: " << e.what() << "\n";
    return kConfigError;
  } catch (const IoError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const ParseError& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const fs::filesystem_error& e) {
    err << "i/o error: " << e.what() << "\n";
    return kIoError;
  } catch (const NumericalFault& e) {
    err << "numerical fault: " << e.what() << "\n";
    return kCheckFailed;
  }
  return kOk;
}

}  // namespace mta::cli
