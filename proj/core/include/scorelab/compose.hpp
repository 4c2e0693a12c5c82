#pragma once

#include <span>
#include <vector>

#include "scorelab/types.hpp"

namespace scorelab {

/// Weights shared by the negation composers. Negative-prompt weights are
/// stored as nonnegative magnitudes; every formula subtracts them explicitly.
struct ComposerConfig {
  double guidance = 7.5;
  double w_pos = 1.0;
  std::vector<double> neg_weights;

  /// Throws ParameterError when guidance < 0, w_pos <= 0 or a weight < 0.
  void validate() const;
};

/// Below this norm the main direction is treated as zero and no projection
/// is applied.
inline constexpr double kProjectionEpsilon = 1e-12;

/// e_i minus its projection onto e_main. Returns e_i unchanged when
/// ||e_main|| < kProjectionEpsilon.
Vector perpendicular_component(const Vector& e_i, const Vector& e_main);

/// Classifier-free guidance: (1 + tau) * eps_c - tau * eps_u.
EpsPrediction cfg_compose(const EpsPrediction& eps_u, const EpsPrediction& eps_c,
                          double tau);

/// Compositional fusion eps_u + sum_i w_i (eps_i - eps_u). Weights are signed.
EpsPrediction cebm_compose(const EpsPrediction& eps_u,
                           std::span<const EpsPrediction> eps_list,
                           std::span<const double> weights);

/// Classifier-free guidance on the positive prompt, then subtract each
/// negative's conditional delta: cfg(eps_u, eps_pos, tau) - sum_i w_i (eps_neg_i - eps_u).
EpsPrediction naive_negation_compose(const EpsPrediction& eps_u,
                                     const EpsPrediction& eps_pos,
                                     std::span<const EpsPrediction> eps_neg,
                                     const ComposerConfig& cfg);

/// Perpendicular negation:
///   eps_u + tau * (w_pos * d_pos - sum_i w_i * perp(d_i, d_pos))
/// with d_pos = eps_pos - eps_u and d_i = eps_neg_i - eps_u. Negatives never
/// change the component of the output along d_pos.
EpsPrediction perp_neg_compose(const EpsPrediction& eps_u, const EpsPrediction& eps_pos,
                               std::span<const EpsPrediction> eps_neg,
                               const ComposerConfig& cfg);

}  // namespace scorelab
