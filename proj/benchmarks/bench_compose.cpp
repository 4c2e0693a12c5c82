#include <random>
#include <vector>

#include <benchmark/benchmark.h>

#include "scorelab/compose.hpp"

namespace {

scorelab::Vector randn(std::mt19937_64& rng, int d) {
  std::normal_distribution<double> n;
  scorelab::Vector v(d);
  for (int i = 0; i < d; ++i) v[i] = n(rng);
  return v;
}

void BM_PerpendicularComponent(benchmark::State& state) {
  std::mt19937_64 rng(1);
  const int d = static_cast<int>(state.range(0));
  const auto a = randn(rng, d), b = randn(rng, d);
  for (auto _ : state) benchmark::DoNotOptimize(scorelab::perpendicular_component(a, b));
}
BENCHMARK(BM_PerpendicularComponent)->Arg(2)->Arg(8)->Arg(64);

void BM_PerpNegCompose(benchmark::State& state) {
  std::mt19937_64 rng(2);
  const int d = 8;
  const auto u = randn(rng, d), p = randn(rng, d);
  std::vector<scorelab::Vector> negs;
  scorelab::ComposerConfig cfg{7.5, 1.0, {}};
  for (int i = 0; i < state.range(0); ++i) {
    negs.push_back(randn(rng, d));
    cfg.neg_weights.push_back(1.0);
  }
  for (auto _ : state) benchmark::DoNotOptimize(scorelab::perp_neg_compose(u, p, negs, cfg));
}
BENCHMARK(BM_PerpNegCompose)->Arg(0)->Arg(1)->Arg(4);

void BM_NaiveNegationCompose(benchmark::State& state) {
  std::mt19937_64 rng(3);
  const auto u = randn(rng, 8), p = randn(rng, 8), n = randn(rng, 8);
  const std::vector<scorelab::Vector> negs{n};
  const scorelab::ComposerConfig cfg{6.5, 1.0, {1.5}};
  for (auto _ : state) benchmark::DoNotOptimize(scorelab::naive_negation_compose(u, p, negs, cfg));
}
BENCHMARK(BM_NaiveNegationCompose);

}  // namespace
