#pragma once

#include <cstdint>
#include <iosfwd>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "scorelab/compose.hpp"
#include "scorelab/oracle.hpp"
#include "scorelab/schedule.hpp"

namespace scorelab {

enum class ComposerKind { Cfg, NaiveNegation, PerpNeg };

std::string_view to_string(ComposerKind kind) noexcept;
/// Accepts "cfg", "naive" and "perp_neg", plus the aliases "vanilla" for cfg
/// and "cebm" for naive (a signed fusion of the same deltas).
ComposerKind parse_composer(std::string_view name);

struct NegativePrompt {
  Condition condition;
  double weight = 1.0;  // magnitude
};

/// One batch of reverse-process samples sharing a seed and a composer.
///
/// `guidance` is handed to the selected composer unchanged, so it means tau
/// for Cfg and NaiveNegation ((1 + tau) eps_c - tau eps_u) and the overall
/// multiplier for PerpNeg (eps_u + guidance * (...)). PerpNeg with guidance
/// g and no negatives therefore matches Cfg with tau = g - 1.
struct SampleRun {
  std::uint64_t seed = 0;
  int n = 1;
  int steps = 50;
  ComposerKind composer = ComposerKind::Cfg;
  double guidance = 7.5;
  double w_pos = 1.0;
  Condition positive = Unconditional{};
  std::vector<NegativePrompt> negatives;
  bool trajectory_capture = false;
  double eta = 0.0;
  std::string label;

  void validate() const;
};

struct TrajectoryPoint {
  int step = 0;  // 0 is the initial draw at t = T
  int t = 0;
  Vector x;
};

struct GenerateResult {
  std::vector<Vector> samples;
  std::vector<std::vector<TrajectoryPoint>> trajectories;  // empty unless captured
};

/// Engine for sample `index` of a run seeded with `seed`. Every random draw of
/// that sample comes from this engine, so results do not depend on how
/// samples are spread across threads.
std::mt19937_64 sample_engine(std::uint64_t seed, std::uint64_t index);

/// Fills a vector of independent standard normals from `engine`.
Vector standard_normal(std::mt19937_64& engine, int dim);

/// Full DDIM reverse chain from x_T ~ N(0, I), composing oracle predictions
/// with the selected composer at every step. Deterministic in (world, run,
/// sched) for any thread count.
GenerateResult generate(const OracleWorld& world, const SampleRun& run,
                        const VarianceSchedule& sched, int threads = 1);

/// Composed prediction at a single (x, alpha_bar): the per-step kernel of
/// generate().
EpsPrediction composed_eps(const OracleWorld& world, const SampleRun& run,
                           const Vector& x, double alpha_bar);

/// Index of the mode with the largest clean component likelihood at x
/// (equal mode priors). Ties go to the lowest index.
std::size_t classify_mode(const OracleWorld& world, const Vector& x);

/// Mode posterior at x under equal mode priors; classify_mode is its argmax.
std::vector<double> mode_posterior(const OracleWorld& world, const Vector& x);

struct RunOutcome {
  std::string label;
  std::uint64_t seed = 0;
  std::string combination;
  std::vector<std::string> assignments;  // mode id per sample
  int successes = 0;
  int n = 0;

  double rate() const noexcept { return n == 0 ? 0.0 : static_cast<double>(successes) / n; }
};

struct CombinationStat {
  std::string combination;
  int successes = 0;
  int n = 0;
  double rate = 0.0;
};

struct SuccessReport {
  std::string target;
  std::vector<RunOutcome> runs;
  std::vector<CombinationStat> combinations;  // first-seen order
  int successes = 0;
  int total = 0;
  double success_rate = 0.0;  // successes / total
};

/// "+pos -neg1 -neg2" with labels, or "<embedding>" for raw embeddings.
std::string combination_label(const SampleRun& run);

/// generate() for each run; results[i] belongs to runs[i].
std::vector<GenerateResult> generate_all(const OracleWorld& world, std::span<const SampleRun> runs,
                                         const VarianceSchedule& sched, int threads = 1);

/// Classifies already generated samples; results[i] belongs to runs[i].
SuccessReport success_report(const OracleWorld& world, std::span<const SampleRun> runs,
                             std::span<const GenerateResult> results, std::string_view target);

/// Generates every run and counts samples that classify to `target`.
SuccessReport success_table(const OracleWorld& world, std::span<const SampleRun> runs,
                            std::string_view target, const VarianceSchedule& sched,
                            int threads = 1);

/// CSV rows run_id,sample_idx,step,t,x0,x1,... for captured trajectories.
void write_trajectories_csv(std::ostream& os, std::string_view run_id,
                            const GenerateResult& result, bool header = true);

}  // namespace scorelab
