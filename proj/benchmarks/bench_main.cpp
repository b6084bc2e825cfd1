#include <benchmark/benchmark.h>

#include "mta/decoder.hpp"
#include "mta/losses.hpp"
#include "mta/run_config.hpp"
#include "mta/trainer.hpp"

namespace {

using namespace mta;

ModelConfig bench_model() {
  ModelConfig cfg;
  cfg.trunk_width = 16;
  return cfg;
}

void BM_Forward(benchmark::State& state) {
  auto cfg = bench_model();
  cfg.num_layers = int(state.range(0));
  MaskTextModel<float> model(cfg, 0);
  const auto sample = generate_scene(default_scene_spec(cfg.num_classes), 1);
  for (auto _ : state) {
    auto out = model.forward(model.encode_image(sample));
    benchmark::DoNotOptimize(out.final_queries.value().data());
  }
}
BENCHMARK(BM_Forward)->Arg(1)->Arg(3)->Arg(9)->Unit(benchmark::kMillisecond);

void BM_Hungarian(benchmark::State& state) {
  const auto n = std::size_t(state.range(0));
  Rng rng(3);
  const auto cost = rng.normal_matrix<double>(n, n / 2, 1.0);
  for (auto _ : state) benchmark::DoNotOptimize(solve_assignment(cost).total_cost);
}
BENCHMARK(BM_Hungarian)->Arg(8)->Arg(32)->Arg(100);

void BM_ContrastiveLoss(benchmark::State& state) {
  const int k = int(state.range(0)), classes = 20, n = 100;
  Rng rng(5);
  const auto s = rng.normal_matrix<double>(n, std::size_t(classes * k), 2.0);
  std::vector<MatchedClass> targets;
  for (int q = 0; q < n; q += 3) targets.push_back({q, q % classes});
  for (auto _ : state) {
    benchmark::DoNotOptimize(loss_sim_mixneg(s, targets, k).value);
    benchmark::DoNotOptimize(loss_sim_separateneg(s, targets, k).value);
  }
}
BENCHMARK(BM_ContrastiveLoss)->Arg(1)->Arg(3)->Arg(5);

void BM_TrainStep(benchmark::State& state) {
  RunConfig config = toy_preset();
  config.model.trunk_trainable = state.range(0) != 0;
  std::vector<SegmentationSample> samples;
  for (int i = 0; i < config.train.batch_size; ++i) samples.push_back(generate_scene(config.dataset.spec, i));
  Trainer trainer(config, samples);
  for (auto _ : state) benchmark::DoNotOptimize(trainer.step().breakdown.total);
}
BENCHMARK(BM_TrainStep)->Arg(0)->Arg(1)->Unit(benchmark::kMillisecond);

}  // namespace
BENCHMARK_MAIN();
