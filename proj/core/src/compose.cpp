#include "scorelab/compose.hpp"

#include <cmath>
#include <string>

#include "scorelab/errors.hpp"

namespace scorelab {

namespace {

void require_same_dim(const Vector& a, const Vector& b, const char* op) {
  if (a.size() != b.size()) {
    throw ShapeError(std::string(op) + ": dimension mismatch (" + std::to_string(a.size()) +
                     " vs " + std::to_string(b.size()) + ")");
  }
}

void require_weight_count(std::size_t n_eps, std::size_t n_w, const char* op) {
  if (n_eps != n_w) {
    throw ShapeError(std::string(op) + ": " + std::to_string(n_eps) + " predictions but " +
                     std::to_string(n_w) + " weights");
  }
}

}  // namespace

void ComposerConfig::validate() const {
  if (!(guidance >= 0.0)) throw ParameterError("guidance", "must be >= 0");
  if (!(w_pos > 0.0)) throw ParameterError("w_pos", "must be > 0");
  for (double w : neg_weights) {
    if (!(w >= 0.0)) {
      throw ParameterError("neg_weights",
                           "weights are magnitudes and must be >= 0; got " + std::to_string(w));
    }
  }
}

Vector perpendicular_component(const Vector& e_i, const Vector& e_main) {
  require_same_dim(e_i, e_main, "perpendicular_component");
  const double nn = e_main.squaredNorm();
  if (std::sqrt(nn) < kProjectionEpsilon) return e_i;
  return e_i - (e_i.dot(e_main) / nn) * e_main;
}

EpsPrediction cfg_compose(const EpsPrediction& eps_u, const EpsPrediction& eps_c,
                          double tau) {
  require_same_dim(eps_u, eps_c, "cfg_compose");
  return (1.0 + tau) * eps_c - tau * eps_u;
}

EpsPrediction cebm_compose(const EpsPrediction& eps_u,
                           std::span<const EpsPrediction> eps_list,
                           std::span<const double> weights) {
  require_weight_count(eps_list.size(), weights.size(), "cebm_compose");
  EpsPrediction out = eps_u;
  for (std::size_t i = 0; i < eps_list.size(); ++i) {
    require_same_dim(eps_u, eps_list[i], "cebm_compose");
    out += weights[i] * (eps_list[i] - eps_u);
  }
  return out;
}

EpsPrediction naive_negation_compose(const EpsPrediction& eps_u,
                                     const EpsPrediction& eps_pos,
                                     std::span<const EpsPrediction> eps_neg,
                                     const ComposerConfig& cfg) {
  require_weight_count(eps_neg.size(), cfg.neg_weights.size(), "naive_negation_compose");
  cfg.validate();
  EpsPrediction out = cfg_compose(eps_u, eps_pos, cfg.guidance);
  for (std::size_t i = 0; i < eps_neg.size(); ++i) {
    require_same_dim(eps_u, eps_neg[i], "naive_negation_compose");
    out -= cfg.neg_weights[i] * (eps_neg[i] - eps_u);
  }
  return out;
}

EpsPrediction perp_neg_compose(const EpsPrediction& eps_u, const EpsPrediction& eps_pos,
                               std::span<const EpsPrediction> eps_neg,
                               const ComposerConfig& cfg) {
  require_same_dim(eps_u, eps_pos, "perp_neg_compose");
  require_weight_count(eps_neg.size(), cfg.neg_weights.size(), "perp_neg_compose");
  cfg.validate();
  const Vector d_pos = eps_pos - eps_u;
  Vector guided = cfg.w_pos * d_pos;
  for (std::size_t i = 0; i < eps_neg.size(); ++i) {
    require_same_dim(eps_u, eps_neg[i], "perp_neg_compose");
    guided -= cfg.neg_weights[i] * perpendicular_component(eps_neg[i] - eps_u, d_pos);
  }
  return eps_u + cfg.guidance * guided;
}

}  // namespace scorelab
