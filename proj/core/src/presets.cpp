#include "scorelab/presets.hpp"

#include "scorelab/errors.hpp"

namespace scorelab::presets {

OracleWorld unimodal(const Vector& mean, double cov_scale) {
  std::vector<Mode> modes{{"m", mean, cov_scale}};
  std::vector<NamedPrompt> prompts{{"x", PromptEmbedding::from_weights({1.0}), 1.0}};
  return OracleWorld(static_cast<int>(mean.size()), std::move(modes), std::move(prompts));
}

OracleWorld symmetric_pair(int dim, double separation) {
  Vector a = Vector::Zero(dim);
  Vector b = Vector::Zero(dim);
  a[0] = -separation / 2.0;
  b[0] = separation / 2.0;
  std::vector<Mode> modes{{"a", a, 1.0}, {"b", b, 1.0}};
  std::vector<NamedPrompt> prompts{
      {"a", PromptEmbedding::from_weights({1.0, 0.0}), 1.0 / 3.0},
      {"b", PromptEmbedding::from_weights({0.0, 1.0}), 1.0 / 3.0},
      {"ab", PromptEmbedding::from_weights({0.5, 0.5}), 1.0 / 3.0},
  };
  return OracleWorld(dim, std::move(modes), std::move(prompts));
}

OracleWorld view_bias(double back_front_weight) {
  if (!(back_front_weight >= 0.0 && back_front_weight <= 1.0)) {
    throw ParameterError("back_front_weight", "must lie in [0, 1]");
  }
  const double s = 0.25;
  std::vector<Mode> modes{
      {"front", (Vector(3) << 3.0, 2.0, 0.0).finished(), s},
      {"side", (Vector(3) << 3.0, 0.0, 2.0).finished(), s},
      {"back", (Vector(3) << 3.0, -2.0, 0.0).finished(), s},
      {"other", (Vector(3) << -3.0, 0.0, 0.0).finished(), s},
  };
  const double bf = back_front_weight;
  std::vector<NamedPrompt> prompts{
      {"front", PromptEmbedding::from_weights({0.9, 0.1, 0.0, 0.0}), 0.1},
      {"side", PromptEmbedding::from_weights({0.6, 0.4, 0.0, 0.0}), 0.1},
      {"back", PromptEmbedding::from_weights({bf, 0.0, 1.0 - bf, 0.0}), 0.1},
      {"object", PromptEmbedding::from_weights({0.3, 0.5, 0.2, 0.0}), 0.2},
      {"other", PromptEmbedding::from_weights({0.0, 0.0, 0.0, 1.0}), 0.5},
  };
  return OracleWorld(3, std::move(modes), std::move(prompts));
}

ViewPromptPlan view_plan(const OracleWorld& world) {
  ViewPromptPlan plan = ViewPromptPlan::from_world(world);
  // The side prompt already leans front, so the side negative on the
  // side/back arc only pulls those views toward back.
  plan.f_fs = {2.0, 0.0, 0.0};
  plan.f_sb = {0.0, 0.0, 0.0};
  plan.f_fsb = {1.0, 0.0, 0.0};
  return plan;
}

}  // namespace scorelab::presets
