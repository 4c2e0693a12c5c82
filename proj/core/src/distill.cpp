#include "scorelab/distill.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "scorelab/compose.hpp"
#include "scorelab/errors.hpp"
#include "scorelab/sampler.hpp"

namespace scorelab {

namespace {

constexpr double kTwoPi = 2.0 * std::numbers::pi;
constexpr double kDivergenceNorm = 1e6;
constexpr double kAnchorTolDeg = 1e-9;

}  // namespace

Scene::Scene(std::vector<Vector> bins) : bins_(std::move(bins)) {
  if (bins_.size() < 3) throw ParameterError("bins", "a scene needs at least 3 bins");
  const auto d = bins_.front().size();
  if (d < 1) throw ShapeError("scene bins must have dimension >= 1");
  for (const auto& b : bins_) {
    if (b.size() != d) throw ShapeError("scene bins differ in dimension");
    if (!b.allFinite()) throw ParameterError("bins", "scene features must be finite");
  }
}

Scene Scene::random(int bins, int dim, double scale, std::mt19937_64& engine) {
  std::vector<Vector> v;
  v.reserve(bins);
  for (int b = 0; b < bins; ++b) v.push_back(scale * standard_normal(engine, dim));
  return Scene(std::move(v));
}

double Scene::bin_azimuth(int b) const { return kTwoPi * b / size(); }

void Scene::apply(const std::vector<Vector>& grad, double step) {
  if (grad.size() != bins_.size()) throw ShapeError("gradient has wrong bin count");
  for (std::size_t b = 0; b < bins_.size(); ++b) {
    if (grad[b].size() == 0) continue;
    bins_[b] -= step * grad[b];
  }
}

std::string_view to_string(Sector s) noexcept {
  switch (s) {
    case Sector::Front: return "front";
    case Sector::Side: return "side";
    case Sector::Back: return "back";
  }
  return "?";
}

CameraView::CameraView(double azimuth) {
  double a = std::fmod(azimuth, kTwoPi);
  if (a < 0.0) a += kTwoPi;
  if (a >= kTwoPi) a = 0.0;
  azimuth_ = a;
}

CameraView CameraView::degrees(double deg) { return CameraView(deg * std::numbers::pi / 180.0); }

double CameraView::azimuth_degrees() const noexcept { return azimuth_ * 180.0 / std::numbers::pi; }

Sector CameraView::sector() const noexcept {
  const double d = azimuth_degrees();
  if (d < 45.0 || d >= 315.0) return Sector::Front;
  if (d >= 135.0 && d < 225.0) return Sector::Back;
  return Sector::Side;
}

RenderStencil render_stencil(int bins, const CameraView& view) {
  const double pos = view.azimuth() * bins / kTwoPi;
  const double fl = std::floor(pos);
  RenderStencil s;
  s.lo = static_cast<int>(fl) % bins;
  s.hi = (s.lo + 1) % bins;
  s.w_hi = pos - fl;
  s.w_lo = 1.0 - s.w_hi;
  return s;
}

Vector render(const Scene& scene, const CameraView& view) {
  const auto s = render_stencil(scene.size(), view);
  if (s.w_hi == 0.0) return scene.bin(s.lo);
  return s.w_lo * scene.bin(s.lo) + s.w_hi * scene.bin(s.hi);
}

void WeightFn::validate() const {
  if (!(a >= 0.0) || !(b >= 0.0) || !(c >= 0.0)) {
    throw ParameterError("weight_fn", "a, b and c must all be >= 0");
  }
}

double WeightFn::operator()(double r) const { return a * std::exp(-b * r) + c; }

void ViewPromptPlan::validate() const {
  if (front.size() == 0 || front.size() != side.size() || side.size() != back.size()) {
    throw ShapeError("view plan embeddings are missing or differ in size");
  }
  for (double w : {w_back_side, w_back_front, w_side_front, w_front_side}) {
    if (!(w >= 0.0)) throw ParameterError("plan.weights", "static negative weights must be >= 0");
  }
  f_sb.validate();
  f_fsb.validate();
  f_fs.validate();
  f_sf.validate();
  if (!(r_perturb_delta >= 0.0)) throw ParameterError("r_perturb_delta", "must be >= 0");
}

ViewPromptPlan ViewPromptPlan::from_world(const OracleWorld& world) {
  ViewPromptPlan plan;
  plan.front = world.prompt("front");
  plan.side = world.prompt("side");
  plan.back = world.prompt("back");
  return plan;
}

AssembledPrompts pair_prompts(ViewPair pair, double r, const ViewPromptPlan& plan) {
  r = std::clamp(r, 0.0, 1.0);
  AssembledPrompts out;
  out.r_inter = r;
  if (pair == ViewPair::FrontSide) {
    out.positive = PromptEmbedding::interpolate(r, plan.front, plan.side);
    const double sf_arg = plan.flip_sf_argument ? r : 1.0 - r;
    out.negatives = {{plan.front, plan.f_fs(r)}, {plan.side, plan.f_sf(sf_arg)}};
  } else {
    out.positive = PromptEmbedding::interpolate(r, plan.side, plan.back);
    out.negatives = {{plan.side, plan.f_sb(r)}, {plan.front, plan.f_fsb(r)}};
  }
  return out;
}

AssembledPrompts assemble_view_prompts(const CameraView& view, const ViewPromptPlan& plan,
                                       double r_noise) {
  if (std::abs(r_noise) > plan.r_perturb_delta) {
    throw ParameterError("r_noise", "perturbation exceeds r_perturb_delta");
  }
  const double d = view.azimuth_degrees();

  if (r_noise == 0.0) {
    auto near = [&](double anchor) { return std::abs(d - anchor) < kAnchorTolDeg; };
    AssembledPrompts s;
    s.anchored = true;
    if (near(0.0) || near(360.0)) {
      s.r_inter = 1.0;
      s.positive = plan.front;
      s.negatives = {{plan.side, plan.w_front_side}};
      return s;
    }
    if (near(90.0) || near(270.0)) {
      s.r_inter = 1.0;
      s.positive = plan.side;
      s.negatives = {{plan.front, plan.w_side_front}};
      return s;
    }
    if (near(180.0)) {
      s.r_inter = 0.0;
      s.positive = plan.back;
      s.negatives = {{plan.side, plan.w_back_side}, {plan.front, plan.w_back_front}};
      return s;
    }
  }

  if (d <= 90.0 || d >= 270.0) {
    const double from_front = std::min(d, 360.0 - d);
    return pair_prompts(ViewPair::FrontSide, 1.0 - from_front / 90.0 + r_noise, plan);
  }
  const double from_back = std::abs(d - 180.0);
  return pair_prompts(ViewPair::SideBack, from_back / 90.0 + r_noise, plan);
}

void SDSConfig::validate() const {
  if (!(guidance >= 0.0)) throw ParameterError("guidance", "must be >= 0");
  if (!(t_min >= 0.0 && t_min < t_max && t_max <= 1.0)) {
    throw ParameterError("t_range", "need 0 <= t_min < t_max <= 1");
  }
  if (!(step_size > 0.0)) throw ParameterError("step_size", "must be > 0");
  if (iterations < 0) throw ParameterError("iterations", "must be >= 0");
}

double SDSConfig::loss_weight(int t, const VarianceSchedule& sched) const {
  switch (weighting) {
    case LossWeighting::Constant: return 1.0;
    case LossWeighting::OneMinusAlphaBar: return 1.0 - sched.alpha_bar(t);
  }
  return 1.0;
}

SdsDraw draw_sds(std::mt19937_64& engine, const SDSConfig& cfg,
                 const VarianceSchedule& sched, int dim) {
  const int T = sched.steps();
  const int lo = std::max(1, static_cast<int>(std::ceil(cfg.t_min * T)));
  const int hi = std::max(lo, std::min(T, static_cast<int>(std::floor(cfg.t_max * T))));
  std::uniform_int_distribution<int> pick(lo, hi);
  SdsDraw draw;
  draw.t = pick(engine);
  draw.noise = standard_normal(engine, dim);
  return draw;
}

namespace {

SceneGradient scatter(const Scene& scene, const CameraView& view, const Vector& pixel_grad) {
  const auto s = render_stencil(scene.size(), view);
  SceneGradient g(scene.size(), Vector::Zero(scene.dim()));
  g[s.lo] += s.w_lo * pixel_grad;
  g[s.hi] += s.w_hi * pixel_grad;
  return g;
}

}  // namespace

SceneGradient sds_grad(const Scene& scene, const CameraView& view,
                       const PromptEmbedding& positive, const OracleWorld& world,
                       const VarianceSchedule& sched, const SDSConfig& cfg,
                       const SdsDraw& draw) {
  const Vector x = render(scene, view);
  const Vector x_t = forward_sample(x, draw.t, draw.noise, sched);
  const double ab = sched.alpha_bar(draw.t);
  const EpsPrediction eps_u = eps_pred_at(world, world.unconditional(), x_t, ab);
  const EpsPrediction eps_c = eps_pred_at(world, positive, x_t, ab);
  const EpsPrediction d_pos = eps_c - eps_u;
  const EpsPrediction eps_hat = eps_u + cfg.guidance * d_pos;
  return scatter(scene, view, cfg.loss_weight(draw.t, sched) * (eps_hat - draw.noise));
}

SceneGradient perp_neg_sds_grad(const Scene& scene, const CameraView& view,
                                const AssembledPrompts& prompts, const OracleWorld& world,
                                const VarianceSchedule& sched, const SDSConfig& cfg,
                                const SdsDraw& draw) {
  const Vector x = render(scene, view);
  const Vector x_t = forward_sample(x, draw.t, draw.noise, sched);
  const double ab = sched.alpha_bar(draw.t);
  const EpsPrediction eps_u = eps_pred_at(world, world.unconditional(), x_t, ab);
  const EpsPrediction d_pos = eps_pred_at(world, prompts.positive, x_t, ab) - eps_u;
  EpsPrediction guided = d_pos;
  for (const auto& neg : prompts.negatives) {
    const EpsPrediction d_neg = eps_pred_at(world, neg.embedding, x_t, ab) - eps_u;
    guided -= neg.weight * perpendicular_component(d_neg, d_pos);
  }
  const EpsPrediction eps_hat = eps_u + cfg.guidance * guided;
  return scatter(scene, view, cfg.loss_weight(draw.t, sched) * (eps_hat - draw.noise));
}

std::string_view to_string(DistillVariant v) noexcept {
  return v == DistillVariant::Vanilla ? "vanilla" : "perp_neg";
}

DistillVariant parse_variant(std::string_view name) {
  if (name == "vanilla") return DistillVariant::Vanilla;
  if (name == "perp_neg") return DistillVariant::PerpNeg;
  throw ParameterError("variant", "unknown distill variant '" + std::string(name) +
                                      "' (expected vanilla or perp_neg)");
}

ViewModes ViewModes::from_world(const OracleWorld& world) {
  return {world.mode_index("front"), world.mode_index("side"), world.mode_index("back")};
}

std::size_t ViewModes::for_sector(Sector s) const noexcept {
  switch (s) {
    case Sector::Front: return front;
    case Sector::Side: return side;
    case Sector::Back: return back;
  }
  return front;
}

double janus_score(const Scene& scene, const OracleWorld& world, const ViewModes& views) {
  int correct = 0;
  for (int b = 0; b < scene.size(); ++b) {
    const Sector s = CameraView(scene.bin_azimuth(b)).sector();
    if (classify_mode(world, scene.bin(b)) == views.for_sector(s)) ++correct;
  }
  return static_cast<double>(correct) / scene.size();
}

double janus_score(const Scene& scene, const OracleWorld& world) {
  return janus_score(scene, world, ViewModes::from_world(world));
}

DistillResult optimize(Scene scene, const OracleWorld& world, const ViewPromptPlan& plan,
                       const SDSConfig& cfg, DistillVariant variant,
                       const VarianceSchedule& sched) {
  cfg.validate();
  plan.validate();
  if (scene.dim() != world.dim()) throw ShapeError("scene and world differ in dimension");
  const bool track_views = world.modes().size() >= 3 && [&] {
    try {
      (void)ViewModes::from_world(world);
      return true;
    } catch (const LookupError&) {
      return false;
    }
  }();
  const ViewModes views = track_views ? ViewModes::from_world(world) : ViewModes{};

  std::mt19937_64 engine(cfg.seed);
  std::uniform_real_distribution<double> azimuth(0.0, kTwoPi);
  std::uniform_real_distribution<double> perturb(-1.0, 1.0);

  DistillResult result{scene, {}};
  result.log.reserve(cfg.iterations);
  for (long it = 0; it < cfg.iterations; ++it) {
    const CameraView view(azimuth(engine));
    const SdsDraw draw = draw_sds(engine, cfg, sched, world.dim());
    const double r_noise = plan.r_perturb_delta * perturb(engine);

    SceneGradient grad;
    if (variant == DistillVariant::Vanilla) {
      const Sector s = view.sector();
      const PromptEmbedding& pos =
          s == Sector::Front ? plan.front : (s == Sector::Side ? plan.side : plan.back);
      grad = sds_grad(result.scene, view, pos, world, sched, cfg, draw);
    } else {
      const auto prompts = assemble_view_prompts(view, plan, r_noise);
      grad = perp_neg_sds_grad(result.scene, view, prompts, world, sched, cfg, draw);
    }
    double norm2 = 0.0;
    for (const auto& g : grad) norm2 += g.squaredNorm();
    result.scene.apply(grad, cfg.step_size);

    for (const auto& b : result.scene.bins()) {
      if (!(b.norm() <= kDivergenceNorm)) {
        throw DivergenceError(it, "scene diverged at iteration " + std::to_string(it));
      }
    }
    IterationRecord rec;
    rec.iter = it;
    rec.azimuth = view.azimuth();
    rec.t = draw.t;
    rec.grad_norm = std::sqrt(norm2);
    rec.janus_score = track_views ? janus_score(result.scene, world, views) : 0.0;
    result.log.push_back(rec);
  }
  return result;
}



std::vector<SweepPoint> interpolation_sweep(const OracleWorld& world, const ViewPromptPlan& plan,
                                            ViewPair pair, const SweepConfig& cfg,
                                            const VarianceSchedule& sched) {
  plan.validate();
  if (cfg.samples < 1) throw ParameterError("samples", "must be >= 1");
  const ViewModes views = ViewModes::from_world(world);
  const std::size_t anchor_one = pair == ViewPair::FrontSide ? views.front : views.side;
  const std::size_t anchor_zero = pair == ViewPair::FrontSide ? views.side : views.back;

  std::vector<SweepPoint> out;
  out.reserve(cfg.rs.size());
  for (double r : cfg.rs) {
    const auto prompts = pair_prompts(pair, r, plan);
    SampleRun run;
    run.seed = cfg.seed;
    run.n = cfg.samples;
    run.steps = cfg.steps;
    run.composer = ComposerKind::PerpNeg;
    run.guidance = cfg.guidance;
    run.positive = prompts.positive;
    for (const auto& neg : prompts.negatives) run.negatives.push_back({neg.embedding, neg.weight});
    const auto result = generate(world, run, sched, cfg.threads);

    SweepPoint p;
    p.r = prompts.r_inter;
    for (const auto& x : result.samples) {
      const auto post = mode_posterior(world, x);
      p.anchor_responsibility += post[anchor_one];
      const std::size_t k = classify_mode(world, x);
      if (k == anchor_one) p.anchor_fraction += 1.0;
      if (k == anchor_zero) p.other_fraction += 1.0;
    }
    const double n = static_cast<double>(result.samples.size());
    p.anchor_responsibility /= n;
    p.anchor_fraction /= n;
    p.other_fraction /= n;
    out.push_back(p);
  }
  return out;
}

double view_accuracy(std::span<const SweepPoint> sweep) {
  double acc = 0.0;
  int counted = 0;
  for (const auto& p : sweep) {
    if (p.r == 0.5) continue;
    acc += p.r > 0.5 ? p.anchor_fraction : p.other_fraction;
    ++counted;
  }
  return counted == 0 ? 0.0 : acc / counted;
}

std::vector<WeightFn> WeightFnGrid::expand() const {
  std::vector<WeightFn> fns;
  for (double av : a) {
    for (double bv : b) {
      for (double cv : c) fns.push_back({av, bv, cv});
    }
  }
  return fns;
}

WeightFnChoice select_weight_fns(const OracleWorld& world, const ViewPromptPlan& plan,
                                 ViewPair pair, const WeightFnGrid& grid,
                                 const SweepConfig& cfg, const VarianceSchedule& sched) {
  const auto fns = grid.expand();
  if (fns.empty()) throw ParameterError("grid", "weight-function grid is empty");
  WeightFnChoice best;
  best.accuracy = -1.0;
  ViewPromptPlan trial = plan;
  for (const auto& f1 : fns) {
    for (const auto& f2 : fns) {
      if (pair == ViewPair::FrontSide) {
        trial.f_fs = f1;
        trial.f_sf = f2;
      } else {
        trial.f_sb = f1;
        trial.f_fsb = f2;
      }
      const double acc = view_accuracy(interpolation_sweep(world, trial, pair, cfg, sched));
      if (acc > best.accuracy) best = {f1, f2, acc};
    }
  }
  return best;
}

}  // namespace scorelab
