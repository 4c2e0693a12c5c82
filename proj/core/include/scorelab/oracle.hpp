#pragma once

#include <cstddef>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "scorelab/schedule.hpp"
#include "scorelab/types.hpp"

namespace scorelab {

/// One Gaussian component N(mean, cov_scale * I).
struct Mode {
  std::string id;
  Vector mean;
  double cov_scale = 1.0;
};

/// Mixture weights over a world's modes. Stands in for a text embedding:
/// two embeddings can be blended linearly and the result is again a valid
/// prompt.
class PromptEmbedding {
 public:
  PromptEmbedding() = default;

  /// Validates nonnegativity and sum == 1 (within 1e-9).
  static PromptEmbedding from_weights(std::vector<double> weights);

  /// r * a + (1 - r) * b, renormalized. r is clamped to [0, 1].
  static PromptEmbedding interpolate(double r, const PromptEmbedding& a,
                                     const PromptEmbedding& b);

  const std::vector<double>& weights() const noexcept { return weights_; }
  std::size_t size() const noexcept { return weights_.size(); }
  double operator[](std::size_t k) const { return weights_[k]; }

  friend bool operator==(const PromptEmbedding&, const PromptEmbedding&) = default;

 private:
  explicit PromptEmbedding(std::vector<double> w) : weights_(std::move(w)) {}
  std::vector<double> weights_;
};

struct NamedPrompt {
  std::string label;
  PromptEmbedding embedding;
  double prior = 0.0;
};

/// A closed-form "prompt world": shared Gaussian modes and a table of
/// prompts, each a mixture over those modes. The unconditional density is the
/// prior-weighted mixture of the prompt conditionals. Immutable once built.
class OracleWorld {
 public:
  OracleWorld(int dim, std::vector<Mode> modes, std::vector<NamedPrompt> prompts);

  int dim() const noexcept { return dim_; }
  const std::vector<Mode>& modes() const noexcept { return modes_; }
  const std::vector<NamedPrompt>& prompts() const noexcept { return prompts_; }

  const PromptEmbedding& prompt(std::string_view label) const;
  bool has_prompt(std::string_view label) const noexcept;
  std::size_t mode_index(std::string_view id) const;

  /// Prior-weighted average of all prompt embeddings.
  const PromptEmbedding& unconditional() const noexcept { return unconditional_; }

 private:
  int dim_;
  std::vector<Mode> modes_;
  std::vector<NamedPrompt> prompts_;
  PromptEmbedding unconditional_;
};

struct Unconditional {
  friend bool operator==(const Unconditional&, const Unconditional&) = default;
};

/// What a noise prediction is conditioned on.
using Condition = std::variant<Unconditional, std::string, PromptEmbedding>;

/// Resolves a condition against the world's prompt table.
const PromptEmbedding& resolve(const OracleWorld& world, const Condition& condition);

/// Density of forward-diffused samples of the mixture at step t (0..T).
double noised_density(const OracleWorld& world, const PromptEmbedding& embedding,
                      const Vector& x, int t, const VarianceSchedule& sched);

/// log of noised_density, computed without underflow.
double log_noised_density(const OracleWorld& world, const PromptEmbedding& embedding,
                          const Vector& x, int t, const VarianceSchedule& sched);

/// Optimal noise prediction -sqrt(1 - abar_t) * grad log q_t(x | condition),
/// t in 1..T.
EpsPrediction eps_pred(const OracleWorld& world, const Condition& condition,
                       const Vector& x, int t, const VarianceSchedule& sched);

/// Same as eps_pred, parameterized directly by alpha_bar in (0, 1].
EpsPrediction eps_pred_at(const OracleWorld& world, const PromptEmbedding& embedding,
                          const Vector& x, double alpha_bar);

double log_density_at(const OracleWorld& world, const PromptEmbedding& embedding,
                      const Vector& x, double alpha_bar);

/// Overlap ratio R(c1, c2) = p(c1, c2 | x) / (p(c1 | x) p(c2 | x)) on clean
/// densities.
///
/// Prompt posteriors come from Bayes on the prompt prior. The joint treats
/// the two prompts as independent given the generating mode, so
/// p(c1, c2 | x) = sum_k p(k | x) p(c1 | k) p(c2 | k). When c1 == c2 the
/// joint is the single event and R = 1 / p(c | x). R == 1 whenever either
/// prompt carries no information about the mode, and R > 1 when the prompts
/// share modes that x is likely to come from.
double overlap_ratio(const OracleWorld& world, std::string_view c1,
                     std::string_view c2, const Vector& x);

/// Mode posterior p(k | x) under the clean unconditional mixture.
std::vector<double> mode_responsibilities(const OracleWorld& world, const Vector& x);

}  // namespace scorelab
