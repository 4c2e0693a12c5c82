#include <string>

#include <benchmark/benchmark.h>

#include "scorelab/distill.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/presets.hpp"
#include "scorelab/sampler.hpp"

namespace {

using namespace scorelab;

void BM_EpsPred(benchmark::State& state) {
  const auto world = presets::view_bias(0.7);
  const auto& e = world.prompt("back");
  const Vector x = (Vector(3) << 1.0, -0.5, 0.3).finished();
  for (auto _ : state) benchmark::DoNotOptimize(eps_pred_at(world, e, x, 0.5));
}
BENCHMARK(BM_EpsPred);

// One full 50-step chain per sample.
void BM_GeneratePerpNeg(benchmark::State& state) {
  const auto world = presets::view_bias(0.7);
  const auto sched = default_schedule();
  SampleRun run;
  run.n = static_cast<int>(state.range(0));
  run.composer = ComposerKind::PerpNeg;
  run.positive = std::string("back");
  run.negatives = {{std::string("front"), 1.0}, {std::string("side"), 1.0}};
  for (auto _ : state) benchmark::DoNotOptimize(generate(world, run, sched));
  state.SetItemsProcessed(state.iterations() * run.n);
}
BENCHMARK(BM_GeneratePerpNeg)->Arg(1)->Arg(64);

void BM_DistillIteration(benchmark::State& state) {
  const auto world = presets::view_bias(0.75);
  const auto plan = presets::view_plan(world);
  const auto sched = default_schedule();
  std::mt19937_64 rng(1);
  const Scene scene = Scene::random(24, 3, 0.5, rng);
  SDSConfig cfg;
  cfg.iterations = 100;
  for (auto _ : state) benchmark::DoNotOptimize(optimize(scene, world, plan, cfg, DistillVariant::PerpNeg, sched));
  state.SetItemsProcessed(state.iterations() * cfg.iterations);
}
BENCHMARK(BM_DistillIteration);

}  // namespace
