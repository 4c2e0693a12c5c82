#include "scorelab/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <ostream>

#include "scorelab/errors.hpp"
#include "scorelab/parallel.hpp"

namespace scorelab {

std::string_view to_string(ComposerKind kind) noexcept {
  switch (kind) {
    case ComposerKind::Cfg: return "cfg";
    case ComposerKind::NaiveNegation: return "naive";
    case ComposerKind::PerpNeg: return "perp_neg";
  }
  return "?";
}

ComposerKind parse_composer(std::string_view name) {
  if (name == "cfg" || name == "vanilla") return ComposerKind::Cfg;
  if (name == "naive" || name == "cebm") return ComposerKind::NaiveNegation;
  if (name == "perp_neg") return ComposerKind::PerpNeg;
  throw ParameterError("composer", "unknown composer '" + std::string(name) +
                                       "' (expected cfg, naive or perp_neg)");
}

void SampleRun::validate() const {
  if (n < 1) throw ParameterError("n", "sample count must be >= 1");
  if (steps < 1) throw ParameterError("steps", "must be >= 1");
  if (!(guidance >= 0.0)) throw ParameterError("guidance", "must be >= 0");
  if (!(w_pos > 0.0)) throw ParameterError("w_pos", "must be > 0");
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta", "must lie in [0, 1]");
  for (const auto& neg : negatives) {
    if (!(neg.weight >= 0.0)) throw ParameterError("negatives.weight", "must be >= 0");
  }
}

std::mt19937_64 sample_engine(std::uint64_t seed, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(index), static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

Vector standard_normal(std::mt19937_64& engine, int dim) {
  std::normal_distribution<double> normal(0.0, 1.0);
  Vector v(dim);
  for (int i = 0; i < dim; ++i) v[i] = normal(engine);
  return v;
}

EpsPrediction composed_eps(const OracleWorld& world, const SampleRun& run,
                           const Vector& x, double alpha_bar) {
  const EpsPrediction eps_u = eps_pred_at(world, world.unconditional(), x, alpha_bar);
  const EpsPrediction eps_pos = eps_pred_at(world, resolve(world, run.positive), x, alpha_bar);
  if (run.composer == ComposerKind::Cfg) return cfg_compose(eps_u, eps_pos, run.guidance);

  std::vector<EpsPrediction> eps_neg;
  ComposerConfig cfg{run.guidance, run.w_pos, {}};
  eps_neg.reserve(run.negatives.size());
  cfg.neg_weights.reserve(run.negatives.size());
  for (const auto& neg : run.negatives) {
    eps_neg.push_back(eps_pred_at(world, resolve(world, neg.condition), x, alpha_bar));
    cfg.neg_weights.push_back(neg.weight);
  }
  if (run.composer == ComposerKind::NaiveNegation) {
    return naive_negation_compose(eps_u, eps_pos, eps_neg, cfg);
  }
  return perp_neg_compose(eps_u, eps_pos, eps_neg, cfg);
}

namespace {

void generate_one(const OracleWorld& world, const SampleRun& run,
                  const VarianceSchedule& sched, std::span<const int> timesteps,
                  std::size_t index, GenerateResult& out) {
  auto engine = sample_engine(run.seed, index);
  Vector x = standard_normal(engine, world.dim());
  std::vector<TrajectoryPoint>* traj =
      run.trajectory_capture ? &out.trajectories[index] : nullptr;
  if (traj) traj->push_back({0, timesteps.front(), x});

  const Vector no_noise;
  for (std::size_t k = 0; k < timesteps.size(); ++k) {
    const int t = timesteps[k];
    const int t_prev = k + 1 < timesteps.size() ? timesteps[k + 1] : 0;
    const EpsPrediction eps = composed_eps(world, run, x, sched.alpha_bar(t));
    if (run.eta > 0.0) {
      x = ddim_step(x, eps, t, t_prev, run.eta, standard_normal(engine, world.dim()), sched);
    } else {
      x = ddim_step(x, eps, t, t_prev, 0.0, no_noise, sched);
    }
    if (traj) traj->push_back({static_cast<int>(k + 1), t_prev, x});
  }
  out.samples[index] = std::move(x);
}

}  // namespace

GenerateResult generate(const OracleWorld& world, const SampleRun& run,
                        const VarianceSchedule& sched, int threads) {
  run.validate();
  if (run.steps > sched.steps()) {
    throw ParameterError("steps", "DDIM steps exceed the schedule length T");
  }
  // Resolve every label up front so errors surface before any work starts.
  (void)resolve(world, run.positive);
  for (const auto& neg : run.negatives) (void)resolve(world, neg.condition);

  const auto timesteps = ddim_timesteps(sched, run.steps);
  GenerateResult out;
  out.samples.resize(run.n);
  if (run.trajectory_capture) out.trajectories.resize(run.n);

  parallel_for(static_cast<std::size_t>(run.n), threads, [&](std::size_t i) {
    generate_one(world, run, sched, timesteps, static_cast<int>(i), out);
  });
  return out;
}

namespace {

std::vector<double> mode_log_likelihoods(const OracleWorld& world, const Vector& x) {
  if (x.size() != world.dim()) throw ShapeError("classify_mode: dimension mismatch");
  const auto& modes = world.modes();
  std::vector<double> ll(modes.size());
  for (std::size_t k = 0; k < modes.size(); ++k) {
    const double s = modes[k].cov_scale;
    ll[k] = -0.5 * world.dim() * std::log(2.0 * std::numbers::pi * s) -
            0.5 * (x - modes[k].mean).squaredNorm() / s;
  }
  return ll;
}

}  // namespace

std::size_t classify_mode(const OracleWorld& world, const Vector& x) {
  const auto ll = mode_log_likelihoods(world, x);
  std::size_t best = 0;
  for (std::size_t k = 1; k < ll.size(); ++k) {
    if (ll[k] > ll[best]) best = k;
  }
  return best;
}

std::vector<double> mode_posterior(const OracleWorld& world, const Vector& x) {
  auto ll = mode_log_likelihoods(world, x);
  const double m = *std::max_element(ll.begin(), ll.end());
  double sum = 0.0;
  for (double& v : ll) {
    v = std::exp(v - m);
    sum += v;
  }
  for (double& v : ll) v /= sum;
  return ll;
}

std::string combination_label(const SampleRun& run) {
  auto name = [](const Condition& c) -> std::string {
    if (std::holds_alternative<Unconditional>(c)) return "<unconditional>";
    if (const auto* s = std::get_if<std::string>(&c)) return *s;
    return "<embedding>";
  };
  std::string out = "+" + name(run.positive);
  for (const auto& neg : run.negatives) out += " -" + name(neg.condition);
  return out;
}

std::vector<GenerateResult> generate_all(const OracleWorld& world, std::span<const SampleRun> runs,
                                         const VarianceSchedule& sched, int threads) {
  // Many small runs parallelize across runs, a few large ones within.
  std::vector<GenerateResult> results(runs.size());
  const bool across = runs.size() >= static_cast<std::size_t>(std::max(threads, 1));
  parallel_for(runs.size(), across ? threads : 1, [&](std::size_t i) {
    results[i] = generate(world, runs[i], sched, across ? 1 : threads);
  });
  return results;
}

SuccessReport success_report(const OracleWorld& world, std::span<const SampleRun> runs,
                             std::span<const GenerateResult> results, std::string_view target) {
  if (runs.empty()) throw ParameterError("runs", "success_table needs at least one run");
  if (runs.size() != results.size()) throw ShapeError("success_report: one result per run expected");
  const std::size_t target_idx = world.mode_index(target);

  SuccessReport report;
  report.target = std::string(target);
  for (std::size_t r = 0; r < runs.size(); ++r) {
    const auto& run = runs[r];
    RunOutcome outcome;
    outcome.label = run.label;
    outcome.seed = run.seed;
    outcome.combination = combination_label(run);
    outcome.n = static_cast<int>(results[r].samples.size());
    for (const auto& x : results[r].samples) {
      const std::size_t k = classify_mode(world, x);
      outcome.assignments.push_back(world.modes()[k].id);
      if (k == target_idx) ++outcome.successes;
    }
    report.successes += outcome.successes;
    report.total += outcome.n;

    auto it = std::find_if(report.combinations.begin(), report.combinations.end(),
                           [&](const CombinationStat& c) { return c.combination == outcome.combination; });
    if (it == report.combinations.end()) {
      report.combinations.push_back({outcome.combination, 0, 0, 0.0});
      it = std::prev(report.combinations.end());
    }
    it->successes += outcome.successes;
    it->n += outcome.n;
    report.runs.push_back(std::move(outcome));
  }
  for (auto& c : report.combinations) c.rate = static_cast<double>(c.successes) / c.n;
  report.success_rate = static_cast<double>(report.successes) / report.total;
  return report;
}

SuccessReport success_table(const OracleWorld& world, std::span<const SampleRun> runs,
                            std::string_view target, const VarianceSchedule& sched,
                            int threads) {
  if (runs.empty()) throw ParameterError("runs", "success_table needs at least one run");
  (void)world.mode_index(target);
  const auto results = generate_all(world, runs, sched, threads);
  return success_report(world, runs, results, target);
}

void write_trajectories_csv(std::ostream& os, std::string_view run_id,
                            const GenerateResult& result, bool header) {
  const auto dim = result.samples.empty() ? 0 : result.samples.front().size();
  if (header) {
    os << "run_id,sample_idx,step,t";
    for (Eigen::Index j = 0; j < dim; ++j) os << ",x" << j;
    os << '\n';
  }
  const auto old_precision = os.precision(17);
  for (std::size_t i = 0; i < result.trajectories.size(); ++i) {
    for (const auto& p : result.trajectories[i]) {
      os << run_id << ',' << i << ',' << p.step << ',' << p.t;
      for (Eigen::Index j = 0; j < p.x.size(); ++j) os << ',' << p.x[j];
      os << '\n';
    }
  }
  os.precision(old_precision);
}

}  // namespace scorelab
