#include "scorelab/oracle.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>

#include "scorelab/errors.hpp"

namespace scorelab {

namespace {

constexpr double kSumTolerance = 1e-9;

double log_gauss_iso(const Vector& x, const Vector& mean, double var) {
  const double d = static_cast<double>(x.size());
  return -0.5 * d * std::log(2.0 * std::numbers::pi * var) -
         0.5 * (x - mean).squaredNorm() / var;
}

void check_dim(const OracleWorld& world, const Vector& x, const char* op) {
  if (x.size() != world.dim()) {
    throw ShapeError(std::string(op) + ": point has dimension " +
                     std::to_string(x.size()) + ", world has " +
                     std::to_string(world.dim()));
  }
}

void check_embedding(const OracleWorld& world, const PromptEmbedding& e, const char* op) {
  if (e.size() != world.modes().size()) {
    throw ShapeError(std::string(op) + ": embedding has " + std::to_string(e.size()) +
                     " weights, world has " + std::to_string(world.modes().size()) +
                     " modes");
  }
}

// Per-component log(w_k N(x; sqrt(ab) mu_k, v_k I)); -inf for zero weights.
void component_logs(const OracleWorld& world, const PromptEmbedding& e,
                    const Vector& x, double ab, std::vector<double>& out) {
  const auto& modes = world.modes();
  out.resize(modes.size());
  const double sab = std::sqrt(ab);
  for (std::size_t k = 0; k < modes.size(); ++k) {
    if (e[k] <= 0.0) {
      out[k] = -std::numeric_limits<double>::infinity();
      continue;
    }
    const double v = ab * modes[k].cov_scale + (1.0 - ab);
    out[k] = std::log(e[k]) + log_gauss_iso(x, sab * modes[k].mean, v);
  }
}

double log_sum_exp(const std::vector<double>& a) {
  const double m = *std::max_element(a.begin(), a.end());
  if (!std::isfinite(m)) return m;
  double s = 0.0;
  for (double v : a) s += std::exp(v - m);
  return m + std::log(s);
}

}  // namespace

PromptEmbedding PromptEmbedding::from_weights(std::vector<double> weights) {
  if (weights.empty()) throw ParameterError("weights", "embedding must not be empty");
  double sum = 0.0;
  for (double w : weights) {
    if (!(w >= 0.0) || !std::isfinite(w)) {
      throw ParameterError("weights", "embedding weights must be finite and >= 0");
    }
    sum += w;
  }
  if (std::abs(sum - 1.0) > kSumTolerance) {
    throw ParameterError("weights", "embedding weights must sum to 1, got " +
                                        std::to_string(sum));
  }
  return PromptEmbedding(std::move(weights));
}

PromptEmbedding PromptEmbedding::interpolate(double r, const PromptEmbedding& a,
                                             const PromptEmbedding& b) {
  if (a.size() != b.size()) throw ShapeError("interpolate: embeddings differ in size");
  r = std::clamp(r, 0.0, 1.0);
  std::vector<double> w(a.size());
  double sum = 0.0;
  for (std::size_t k = 0; k < w.size(); ++k) {
    w[k] = r * a[k] + (1.0 - r) * b[k];
    sum += w[k];
  }
  for (double& v : w) v /= sum;
  return PromptEmbedding(std::move(w));
}

OracleWorld::OracleWorld(int dim, std::vector<Mode> modes, std::vector<NamedPrompt> prompts)
    : dim_(dim), modes_(std::move(modes)), prompts_(std::move(prompts)) {
  if (dim_ < 1) throw ParameterError("dim", "must be >= 1");
  if (modes_.empty()) throw ParameterError("modes", "world needs at least one mode");
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    const auto& m = modes_[k];
    if (m.mean.size() != dim_) {
      throw ShapeError("mode '" + m.id + "' mean has wrong dimension");
    }
    if (!(m.cov_scale > 0.0)) {
      throw ParameterError("cov_scale", "mode '" + m.id + "' needs cov_scale > 0");
    }
    for (std::size_t j = 0; j < k; ++j) {
      if (modes_[j].id == m.id) throw ParameterError("modes", "duplicate mode id '" + m.id + "'");
    }
  }
  if (prompts_.empty()) throw ParameterError("prompts", "world needs at least one prompt");
  double prior_sum = 0.0;
  std::vector<double> uncond(modes_.size(), 0.0);
  for (std::size_t i = 0; i < prompts_.size(); ++i) {
    const auto& p = prompts_[i];
    if (p.embedding.size() != modes_.size()) {
      throw ShapeError("prompt '" + p.label + "' references " +
                       std::to_string(p.embedding.size()) + " modes, world has " +
                       std::to_string(modes_.size()));
    }
    if (!(p.prior >= 0.0)) throw ParameterError("prior", "prompt '" + p.label + "' has negative prior");
    for (std::size_t j = 0; j < i; ++j) {
      if (prompts_[j].label == p.label) {
        throw ParameterError("prompts", "duplicate prompt label '" + p.label + "'");
      }
    }
    prior_sum += p.prior;
    for (std::size_t k = 0; k < modes_.size(); ++k) uncond[k] += p.prior * p.embedding[k];
  }
  if (std::abs(prior_sum - 1.0) > kSumTolerance) {
    throw ParameterError("prior", "prompt prior must sum to 1, got " + std::to_string(prior_sum));
  }
  const double s = std::accumulate(uncond.begin(), uncond.end(), 0.0);
  for (double& w : uncond) w /= s;
  unconditional_ = PromptEmbedding::from_weights(std::move(uncond));
}

const PromptEmbedding& OracleWorld::prompt(std::string_view label) const {
  for (const auto& p : prompts_) {
    if (p.label == label) return p.embedding;
  }
  throw LookupError("unknown prompt label '" + std::string(label) + "'");
}

bool OracleWorld::has_prompt(std::string_view label) const noexcept {
  return std::any_of(prompts_.begin(), prompts_.end(),
                     [&](const NamedPrompt& p) { return p.label == label; });
}

std::size_t OracleWorld::mode_index(std::string_view id) const {
  for (std::size_t k = 0; k < modes_.size(); ++k) {
    if (modes_[k].id == id) return k;
  }
  throw LookupError("unknown mode id '" + std::string(id) + "'");
}

const PromptEmbedding& resolve(const OracleWorld& world, const Condition& condition) {
  if (std::holds_alternative<Unconditional>(condition)) return world.unconditional();
  if (const auto* label = std::get_if<std::string>(&condition)) return world.prompt(*label);
  const auto& e = std::get<PromptEmbedding>(condition);
  check_embedding(world, e, "resolve");
  return e;
}

double log_density_at(const OracleWorld& world, const PromptEmbedding& embedding,
                      const Vector& x, double alpha_bar) {
  check_dim(world, x, "log_noised_density");
  check_embedding(world, embedding, "log_noised_density");
  std::vector<double> logs;
  component_logs(world, embedding, x, alpha_bar, logs);
  return log_sum_exp(logs);
}

double log_noised_density(const OracleWorld& world, const PromptEmbedding& embedding,
                          const Vector& x, int t, const VarianceSchedule& sched) {
  return log_density_at(world, embedding, x, sched.alpha_bar(t));
}

double noised_density(const OracleWorld& world, const PromptEmbedding& embedding,
                      const Vector& x, int t, const VarianceSchedule& sched) {
  return std::exp(log_noised_density(world, embedding, x, t, sched));
}

EpsPrediction eps_pred_at(const OracleWorld& world, const PromptEmbedding& embedding,
                          const Vector& x, double alpha_bar) {
  check_dim(world, x, "eps_pred");
  check_embedding(world, embedding, "eps_pred");
  const auto& modes = world.modes();
  std::vector<double> logs;
  component_logs(world, embedding, x, alpha_bar, logs);
  const double lse = log_sum_exp(logs);

  const double sab = std::sqrt(alpha_bar);
  EpsPrediction eps = EpsPrediction::Zero(x.size());
  for (std::size_t k = 0; k < modes.size(); ++k) {
    if (!std::isfinite(logs[k])) continue;
    const double r = std::exp(logs[k] - lse);
    const double v = alpha_bar * modes[k].cov_scale + (1.0 - alpha_bar);
    eps.noalias() += (r / v) * (x - sab * modes[k].mean);
  }
  return std::sqrt(1.0 - alpha_bar) * eps;
}

EpsPrediction eps_pred(const OracleWorld& world, const Condition& condition,
                       const Vector& x, int t, const VarianceSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw IndexError("eps_pred: t out of range [1, T]");
  return eps_pred_at(world, resolve(world, condition), x, sched.alpha_bar(t));
}

std::vector<double> mode_responsibilities(const OracleWorld& world, const Vector& x) {
  check_dim(world, x, "mode_responsibilities");
  std::vector<double> logs;
  component_logs(world, world.unconditional(), x, 1.0, logs);
  const double lse = log_sum_exp(logs);
  if (!std::isfinite(lse)) {
    throw DegenerateInputError("unconditional density vanishes at x");
  }
  for (double& l : logs) l = std::isfinite(l) ? std::exp(l - lse) : 0.0;
  return logs;
}

double overlap_ratio(const OracleWorld& world, std::string_view c1,
                     std::string_view c2, const Vector& x) {
  const auto& e1 = world.prompt(c1);
  const auto& e2 = world.prompt(c2);
  double pi1 = 0.0;
  double pi2 = 0.0;
  for (const auto& p : world.prompts()) {
    if (p.label == c1) pi1 = p.prior;
    if (p.label == c2) pi2 = p.prior;
  }
  const auto rho = mode_responsibilities(world, x);
  const auto& u = world.unconditional();

  // p(c | k) = pi_c w_ck / u_k; modes with u_k == 0 have rho_k == 0.
  double post1 = 0.0;
  double post2 = 0.0;
  double joint = 0.0;
  for (std::size_t k = 0; k < rho.size(); ++k) {
    if (u[k] <= 0.0) continue;
    const double p1 = pi1 * e1[k] / u[k];
    const double p2 = pi2 * e2[k] / u[k];
    post1 += rho[k] * p1;
    post2 += rho[k] * p2;
    joint += rho[k] * p1 * p2;
  }
  if (!(post1 > 0.0) || !(post2 > 0.0)) {
    throw DegenerateInputError("overlap_ratio: prompt posterior is zero at x");
  }
  if (c1 == c2) return 1.0 / post1;
  return joint / (post1 * post2);
}

}  // namespace scorelab
