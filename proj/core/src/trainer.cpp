#include "mta/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include <json.hpp>

#include "mta/binary_io.hpp"
#include "mta/errors.hpp"
#include "mta/rng.hpp"

namespace mta {

TrainingTargets make_targets(const SegmentationSample& sample, int num_classes, int background_class) {
  const auto semantic = semantic_map_of(sample, background_class);
  const auto full = semantic_targets(semantic, semantic.size(), num_classes);
  TrainingTargets t;
  t.labels = full.labels;
  for (const auto& m : full.masks)
    t.masks.push_back(downsample_majority(m, sample.height, sample.width, kPredictionStride));
  return t;
}

std::vector<PreparedSample> prepare_samples(std::vector<SegmentationSample> samples, int num_classes,
                                            int background_class) {
  std::vector<PreparedSample> out;
  out.reserve(samples.size());
  for (auto& s : samples) {
    auto targets = make_targets(s, num_classes, background_class);
    out.push_back({std::move(s), std::move(targets)});
  }
  return out;
}

Augmentation draw_augmentation(std::uint64_t seed, std::int64_t iteration, std::size_t slot, int height, int width) {
  Rng rng(mix_seed(mix_seed(seed ^ 0xA5A5A5A5ULL, static_cast<std::uint64_t>(iteration)), slot));
  Augmentation a;
  a.transform = rng.uniform_int(0, height == width ? 7 : 3);
  a.shift_y = kPredictionStride * rng.uniform_int(0, height / kPredictionStride - 1);
  a.shift_x = kPredictionStride * rng.uniform_int(0, width / kPredictionStride - 1);
  return a;
}

SegmentationSample augment_sample(const SegmentationSample& sample, const Augmentation& a) {
  const int h = sample.height, w = sample.width;
  const bool transpose = (a.transform & 4) != 0;
  if (transpose && h != w) throw ConfigError("transposing augmentation needs a square image");
  std::vector<std::size_t> target(std::size_t(h) * std::size_t(w));
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      int ty = (a.transform & 2) ? h - 1 - y : y;
      int tx = (a.transform & 1) ? w - 1 - x : x;
      if (transpose) std::swap(ty, tx);
      ty = (ty + a.shift_y) % h;
      tx = (tx + a.shift_x) % w;
      target[std::size_t(y) * std::size_t(w) + std::size_t(x)] = std::size_t(ty) * std::size_t(w) + std::size_t(tx);
    }
  }
  SegmentationSample out = sample;
  const std::size_t plane = target.size();
  for (int c = 0; c < SegmentationSample::kChannels; ++c)
    for (std::size_t i = 0; i < plane; ++i) out.image[std::size_t(c) * plane + target[i]] = sample.image[std::size_t(c) * plane + i];
  for (std::size_t g = 0; g < sample.gt_masks.size(); ++g)
    for (std::size_t i = 0; i < plane; ++i) out.gt_masks[g][target[i]] = sample.gt_masks[g][i];
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, std::int64_t epoch) {
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng rng(mix_seed(seed, static_cast<std::uint64_t>(epoch)));
  for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[std::size_t(rng.uniform_int(0, int(i - 1)))]);
  return order;
}

std::vector<std::size_t> batch_for_iteration(std::size_t n, int batch_size, std::uint64_t seed,
                                             std::int64_t iteration) {
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  const std::int64_t per_epoch = std::int64_t(n) / batch_size;
  if (per_epoch == 0)
    throw ConfigError("training split has " + std::to_string(n) + " samples, fewer than batch_size " +
                      std::to_string(batch_size));
  const auto order = epoch_order(n, seed, iteration / per_epoch);
  const auto begin = std::size_t(iteration % per_epoch) * std::size_t(batch_size);
  return {order.begin() + std::ptrdiff_t(begin), order.begin() + std::ptrdiff_t(begin) + batch_size};
}

AdamWConfig optimizer_config(const TrainConfig& train) {
  return {train.learning_rate, train.beta1, train.beta2, train.epsilon, train.weight_decay};
}

namespace {

template <typename T>
std::string fault_dump(const DecoderOutput<T>& out, const LossBreakdown& b) {
  std::ostringstream s;
  s << "loss breakdown: l_mask_cls=" << b.l_mask_cls << " l_mask=" << b.l_mask << " l_sim_sum=" << b.l_sim_sum()
    << " total=" << b.total << "\n";
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    const auto& sim = out.layers[l].similarity;
    if (!sim.defined()) continue;
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    std::size_t bad = 0;
    for (T v : sim.value().storage()) {
      if (!std::isfinite(double(v))) {
        ++bad;
        continue;
      }
      lo = std::min(lo, double(v));
      hi = std::max(hi, double(v));
    }
    s << "layer " << l << " similarity: min=" << lo << " max=" << hi << " non-finite=" << bad << "\n";
  }
  return s.str();
}

}  // namespace

template <typename T>
LossBreakdown train_step(MaskTextModel<T>& model, const std::vector<const PreparedSample*>& batch,
                         AdamW<T>& optimizer, const LossConfig& loss) {
  if (batch.empty()) throw ConfigError("empty batch");
  model.parameters().zero_grad();
  const double inv = 1.0 / double(batch.size());
  LossBreakdown mean;
  mean.weights = loss.weights;
  for (const auto* item : batch) {
    DecoderOutput<T> out;
    try {
      out = model.forward(item->sample);
    } catch (const NumericalFault& e) {
      throw NumericalFault(std::string(e.what()) + " (sample " + std::to_string(item->sample.sample_id) + ")",
                           e.layer());
    }
    auto result = total_loss(out, item->targets, loss, model.config().num_prompts);
    if (!std::isfinite(double(result.total.item())))
      throw NumericalFault("non-finite training loss\n" + fault_dump(out, result.breakdown));
    ag::backward(ag::scale(result.total, T(inv)));
    const auto& b = result.breakdown;
    mean.l_mask_cls += b.l_mask_cls * inv;
    mean.l_mask += b.l_mask * inv;
    if (mean.l_sim_per_layer.empty()) mean.l_sim_per_layer.assign(b.l_sim_per_layer.size(), 0.0);
    for (std::size_t l = 0; l < b.l_sim_per_layer.size(); ++l) mean.l_sim_per_layer[l] += b.l_sim_per_layer[l] * inv;
    mean.total += b.total * inv;
  }
  optimizer.step(model.parameters());
  return mean;
}

template LossBreakdown train_step<float>(MaskTextModel<float>&, const std::vector<const PreparedSample*>&,
                                         AdamW<float>&, const LossConfig&);
template LossBreakdown train_step<double>(MaskTextModel<double>&, const std::vector<const PreparedSample*>&,
                                          AdamW<double>&, const LossConfig&);

std::string to_json_line(const MetricsRecord& r) {
  nlohmann::ordered_json j;
  j["iter"] = r.iter;
  j["l_mask_cls"] = r.breakdown.l_mask_cls;
  j["l_mask"] = r.breakdown.l_mask;
  j["l_sim_sum"] = r.breakdown.l_sim_sum();
  j["total"] = r.breakdown.total;
  j["lr"] = r.lr;
  j["wallclock_ms"] = r.wallclock_ms;
  return j.dump();
}

// ---- Trainer ----------------------------------------------------------------------

Trainer::Trainer(RunConfig config, std::vector<SegmentationSample> train_samples) : config_(std::move(config)) {
  model_ = build_model(config_);
  optimizer_ = std::make_unique<AdamW<float>>(model_->parameters(), optimizer_config(config_.train));
  samples_ = prepare_samples(std::move(train_samples), config_.model.num_classes,
                             config_.dataset.spec.background_class);
  if (samples_.size() < std::size_t(config_.train.batch_size))
    throw ConfigError("training split has fewer samples than batch_size");
}

Trainer::Trainer(const Checkpoint& checkpoint, std::vector<SegmentationSample> train_samples) {
  model_ = model_from_checkpoint(checkpoint, &config_);
  optimizer_ = std::make_unique<AdamW<float>>(model_->parameters(), optimizer_config(config_.train));
  optimizer_->restore(checkpoint.moments, checkpoint.optimizer_step);
  iteration_ = checkpoint.iteration;
  samples_ = prepare_samples(std::move(train_samples), config_.model.num_classes,
                             config_.dataset.spec.background_class);
  if (samples_.size() < std::size_t(config_.train.batch_size))
    throw ConfigError("training split has fewer samples than batch_size");
}

MetricsRecord Trainer::step() {
  const auto start = std::chrono::steady_clock::now();
  const auto indices = batch_for_iteration(samples_.size(), config_.train.batch_size, config_.train.seed, iteration_);
  std::vector<PreparedSample> augmented;
  std::vector<const PreparedSample*> batch;
  if (config_.train.augment) {
    augmented.reserve(indices.size());
    for (std::size_t slot = 0; slot < indices.size(); ++slot) {
      const auto& src = samples_[indices[slot]].sample;
      auto sample = augment_sample(src, draw_augmentation(config_.train.seed, iteration_, slot, src.height, src.width));
      auto targets = make_targets(sample, config_.model.num_classes, config_.dataset.spec.background_class);
      augmented.push_back({std::move(sample), std::move(targets)});
    }
    for (const auto& a : augmented) batch.push_back(&a);
  } else {
    for (auto i : indices) batch.push_back(&samples_[i]);
  }
  MetricsRecord r;
  r.breakdown = train_step(*model_, batch, *optimizer_, config_.loss);
  ++iteration_;
  r.iter = iteration_;
  r.lr = optimizer_->config().learning_rate;
  r.wallclock_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start).count();
  return r;
}

Checkpoint Trainer::checkpoint() const { return capture_checkpoint(*model_, optimizer_.get(), config_, iteration_); }

// ---- loop -------------------------------------------------------------------------

namespace {

std::vector<SegmentationSample> load_training_split(const RunConfig& config) {
  const auto manifest = load_manifest(config.train_manifest_path());
  if (!(manifest.spec == config.dataset.spec))
    throw ConfigError("scene spec of " + config.train_manifest_path() + " differs from the run config");
  return load_samples(manifest);
}

std::vector<std::string> read_metric_lines(const std::filesystem::path& path, std::int64_t keep) {
  std::vector<std::string> lines;
  if (!std::filesystem::exists(path)) return lines;
  std::istringstream in(io::read_text_file(path));
  for (std::string line; std::int64_t(lines.size()) < keep && std::getline(in, line);)
    if (!line.empty()) lines.push_back(line);
  return lines;
}

}  // namespace

TrainLoopResult train_loop(const RunConfig& config, const TrainLoopOptions& options) {
  RunConfig effective = config;
  if (!options.resume_from.empty()) effective = parse_run_config(load_checkpoint(options.resume_from).config_text);
  return train_loop(config, load_training_split(effective), options);
}

TrainLoopResult train_loop(const RunConfig& config, std::vector<SegmentationSample> train_samples,
                           const TrainLoopOptions& options) {
  namespace fs = std::filesystem;
  validate(config);
  std::error_code ec;
  fs::create_directories(options.out_dir, ec);
  if (ec) throw IoError("cannot create " + options.out_dir.string() + ": " + ec.message());

  std::unique_ptr<Trainer> trainer;
  if (options.resume_from.empty()) {
    trainer = std::make_unique<Trainer>(config, std::move(train_samples));
  } else {
    trainer = std::make_unique<Trainer>(load_checkpoint(options.resume_from), std::move(train_samples));
  }
  const std::int64_t total = config.train.iterations;
  const std::int64_t stop = options.stop_at >= 0 ? std::min(options.stop_at, total) : total;
  const int every = trainer->config().train.checkpoint_every;

  TrainLoopResult result;
  result.metrics_path = options.out_dir / "metrics.jsonl";
  result.checkpoint_path = options.out_dir / "checkpoint.bin";
  io::write_file_atomic(options.out_dir / "config.cfg", serialize(trainer->config()));

  std::string prefix;
  for (const auto& line : read_metric_lines(result.metrics_path, trainer->iteration())) prefix += line + "\n";
  io::write_file_atomic(result.metrics_path, prefix);
  std::ofstream metrics(result.metrics_path, std::ios::app);
  if (!metrics) throw IoError("cannot open " + result.metrics_path.string());

  while (trainer->iteration() < stop) {
    auto record = trainer->step();
    metrics << to_json_line(record) << "\n";
    metrics.flush();
    if (!metrics) throw IoError("write failed: " + result.metrics_path.string());
    if (options.on_record) options.on_record(record);
    if (every > 0 && record.iter % every == 0 && record.iter < stop)
      save_checkpoint(options.out_dir / ("checkpoint_" + std::to_string(record.iter) + ".bin"), trainer->checkpoint());
    result.records.push_back(std::move(record));
  }
  save_checkpoint(result.checkpoint_path, trainer->checkpoint());
  result.iterations = trainer->iteration();
  return result;
}

}  // namespace mta
