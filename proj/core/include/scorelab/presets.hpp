#pragma once

#include "scorelab/distill.hpp"
#include "scorelab/oracle.hpp"

namespace scorelab::presets {

/// One mode N(mean, cov_scale I) and a single prompt "x" selecting it.
OracleWorld unimodal(const Vector& mean, double cov_scale);

/// Modes "a" at (-sep/2, 0...) and "b" at (+sep/2, 0...), unit covariance,
/// prompts "a", "b" and "ab" (equal mix), uniform prior.
OracleWorld symmetric_pair(int dim, double separation);

/// Object seen from three views plus an unrelated "other" concept. The
/// "back" prompt puts `back_front_weight` of its mass on the front mode,
/// modelling a generator that was mostly shown front views. Prompts: front,
/// side, back, object (no view), other.
OracleWorld view_bias(double back_front_weight = 0.7);

/// View plan tuned for view_bias() worlds. The 2D sweep saturates on this
/// world, so the weight functions were picked against the distillation runs.
ViewPromptPlan view_plan(const OracleWorld& world);

}  // namespace scorelab::presets
