#include <doctest.h>

#include <cmath>
#include <numbers>
#include <random>
#include <vector>

#include "scorelab/errors.hpp"
#include "scorelab/presets.hpp"
#include "scorelab/distill.hpp"
#include "scorelab/sampler.hpp"
#include "support/oracles.hpp"

using namespace scorelab;

namespace {

Vector vec(std::initializer_list<double> v) {
  Vector out(static_cast<Eigen::Index>(v.size()));
  Eigen::Index i = 0;
  for (double x : v) out[i++] = x;
  return out;
}

Scene line_scene(std::initializer_list<double> values) {
  std::vector<Vector> bins;
  for (double v : values) bins.push_back(vec({v}));
  return Scene(std::move(bins));
}

// Three modes, one per view, and prompts that each pick exactly one of them.
OracleWorld clean_views(double s) {
  std::vector<Mode> modes{
      {"front", vec({2.0, 0.0}), s},
      {"side", vec({0.0, 2.0}), s},
      {"back", vec({-2.0, 0.0}), s},
  };
  std::vector<NamedPrompt> prompts{
      {"front", PromptEmbedding::from_weights({1, 0, 0}), 1.0 / 3.0},
      {"side", PromptEmbedding::from_weights({0, 1, 0}), 1.0 / 3.0},
      {"back", PromptEmbedding::from_weights({0, 0, 1}), 1.0 / 3.0},
  };
  return OracleWorld(2, std::move(modes), std::move(prompts));
}

// Single mode with front/side/back prompts all selecting it.
OracleWorld one_mode_views(const Vector& m, double s) {
  std::vector<Mode> modes{{"front", m, s}};
  const auto one = PromptEmbedding::from_weights({1.0});
  std::vector<NamedPrompt> prompts{{"front", one, 1.0 / 3.0}, {"side", one, 1.0 / 3.0},
                                   {"back", one, 1.0 / 3.0}};
  return OracleWorld(static_cast<int>(m.size()), std::move(modes), std::move(prompts));
}

double max_dist(const Scene& scene, const Vector& m) {
  double d = 0.0;
  for (const auto& b : scene.bins()) d = std::max(d, (b - m).norm());
  return d;
}

}  // namespace

TEST_SUITE("distill") {

TEST_CASE("scene construction") {
  CHECK_THROWS_AS(line_scene({1.0, 2.0}), ParameterError);
  CHECK_THROWS_AS(Scene({vec({1.0}), vec({1.0, 2.0}), vec({0.0})}), ShapeError);
  CHECK_THROWS_AS(line_scene({1.0, NAN, 0.0}), ParameterError);
  const Scene s = line_scene({0, 1, 2, 3});
  CHECK(s.size() == 4);
  CHECK(s.dim() == 1);
  CHECK(s.bin_azimuth(1) == doctest::Approx(std::numbers::pi / 2));
}

TEST_CASE("camera views normalize and fall into sectors") {
  CHECK(CameraView::degrees(-90).azimuth_degrees() == doctest::Approx(270));
  CHECK(CameraView::degrees(720).azimuth() == doctest::Approx(0.0));
  CHECK(CameraView::degrees(44.9).sector() == Sector::Front);
  CHECK(CameraView::degrees(45).sector() == Sector::Side);
  CHECK(CameraView::degrees(134.9).sector() == Sector::Side);
  CHECK(CameraView::degrees(135).sector() == Sector::Back);
  CHECK(CameraView::degrees(224.9).sector() == Sector::Back);
  CHECK(CameraView::degrees(225).sector() == Sector::Side);
  CHECK(CameraView::degrees(315).sector() == Sector::Front);
  CHECK(to_string(Sector::Back) == "back");
}

TEST_CASE("render interpolates between neighbouring bins") {
  const Scene s = line_scene({0, 1, 2, 3});
  CHECK(render(s, CameraView::degrees(0))[0] == 0.0);
  CHECK(render(s, CameraView::degrees(90))[0] == doctest::Approx(1.0));
  CHECK(render(s, CameraView::degrees(45))[0] == doctest::Approx(0.5));
  CHECK(render(s, CameraView::degrees(135))[0] == doctest::Approx(1.5));
  // Wraps from the last bin back to the first.
  CHECK(render(s, CameraView::degrees(315))[0] == doctest::Approx(1.5));
  CHECK(render(s, CameraView::degrees(360 - 1e-9))[0] == doctest::Approx(0.0).epsilon(1e-9));
  CHECK(render(s, CameraView::degrees(30))[0] == doctest::Approx(render(s, CameraView::degrees(390))[0]));

  const auto st = render_stencil(4, CameraView::degrees(300));
  CHECK(st.lo == 3);
  CHECK(st.hi == 0);
  CHECK(st.w_lo + st.w_hi == doctest::Approx(1.0));
  CHECK(st.w_hi == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("weight functions") {
  const WeightFn f{2.0, 1.0, 0.1};
  CHECK(f(0.0) == doctest::Approx(2.1));
  CHECK(f(1.0) == doctest::Approx(2.0 * std::exp(-1.0) + 0.1));
  try {
    WeightFn{1.0, -1.0, 0.0}.validate();
    FAIL("expected ParameterError");
  } catch (const ParameterError& e) {
    CHECK(e.field() == "weight_fn");
  }
  CHECK(WeightFnGrid{}.expand().size() == 32);
}

TEST_CASE("static prompt sets at the anchor views") {
  const auto world = presets::view_bias(0.7);
  const auto plan = ViewPromptPlan::from_world(world);

  const auto back = assemble_view_prompts(CameraView::degrees(180), plan, 0.0);
  CHECK(back.anchored);
  CHECK(back.positive == plan.back);
  REQUIRE(back.negatives.size() == 2);
  CHECK(back.negatives[0].embedding == plan.side);
  CHECK(back.negatives[0].weight == plan.w_back_side);
  CHECK(back.negatives[1].embedding == plan.front);
  CHECK(back.negatives[1].weight == plan.w_back_front);

  const auto front = assemble_view_prompts(CameraView::degrees(0), plan, 0.0);
  CHECK(front.positive == plan.front);
  REQUIRE(front.negatives.size() == 1);
  CHECK(front.negatives[0].embedding == plan.side);
  CHECK(front.negatives[0].weight == plan.w_front_side);

  for (double deg : {90.0, 270.0}) {
    const auto side = assemble_view_prompts(CameraView::degrees(deg), plan, 0.0);
    CHECK(side.positive == plan.side);
    REQUIRE(side.negatives.size() == 1);
    CHECK(side.negatives[0].embedding == plan.front);
  }

  // Any perturbation leaves the static sets.
  CHECK_FALSE(assemble_view_prompts(CameraView::degrees(180), plan, 0.01).anchored);
}

TEST_CASE("interpolated prompts between anchors") {
  const auto world = presets::view_bias(0.7);
  const auto plan = ViewPromptPlan::from_world(world);

  const auto sb = pair_prompts(ViewPair::SideBack, 1.0, plan);
  CHECK(sb.positive == plan.side);
  REQUIRE(sb.negatives.size() == 2);
  CHECK(sb.negatives[0].weight == doctest::Approx(plan.f_sb(1.0)));
  CHECK(sb.negatives[1].weight == doctest::Approx(plan.f_fsb(1.0)));

  const auto mid = assemble_view_prompts(CameraView::degrees(135), plan, 0.0);
  CHECK(mid.r_inter == doctest::Approx(0.5));
  const auto expect = PromptEmbedding::interpolate(0.5, plan.side, plan.back);
  for (std::size_t k = 0; k < expect.size(); ++k) CHECK(mid.positive[k] == doctest::Approx(expect[k]));

  const auto fs = assemble_view_prompts(CameraView::degrees(30), plan, 0.02);
  CHECK(fs.r_inter == doctest::Approx(1.0 - 30.0 / 90.0 + 0.02));
  CHECK(fs.negatives[0].embedding == plan.front);
  CHECK(fs.negatives[0].weight == doctest::Approx(plan.f_fs(fs.r_inter)));
  CHECK(fs.negatives[1].weight == doctest::Approx(plan.f_sf(1.0 - fs.r_inter)));

  ViewPromptPlan flipped = plan;
  flipped.flip_sf_argument = true;
  const auto ff = assemble_view_prompts(CameraView::degrees(30), flipped, 0.0);
  CHECK(ff.negatives[1].weight == doctest::Approx(plan.f_sf(ff.r_inter)));

  // r is clipped to [0, 1] after perturbation.
  CHECK(assemble_view_prompts(CameraView::degrees(1e-3), plan, 0.05).r_inter == 1.0);

  try {
    assemble_view_prompts(CameraView::degrees(30), plan, 0.051);
    FAIL("expected ParameterError");
  } catch (const ParameterError& e) {
    CHECK(e.field() == "r_noise");
  }
}

TEST_CASE("prompts are continuous in azimuth away from the anchors' static sets") {
  const auto world = presets::view_bias(0.7);
  const auto plan = ViewPromptPlan::from_world(world);
  const double eps = 1e-7;
  auto close = [](const AssembledPrompts& a, const AssembledPrompts& b, bool negatives) {
    for (std::size_t k = 0; k < a.positive.size(); ++k) {
      if (std::abs(a.positive[k] - b.positive[k]) > 1e-6) return false;
    }
    if (!negatives) return true;
    if (a.negatives.size() != b.negatives.size()) return false;
    for (std::size_t i = 0; i < a.negatives.size(); ++i) {
      if (std::abs(a.negatives[i].weight - b.negatives[i].weight) > 1e-5) return false;
      if (!(a.negatives[i].embedding == b.negatives[i].embedding)) return false;
    }
    return true;
  };
  for (double deg : {0.0, 37.0, 135.0, 180.0, 222.0, 300.0}) {
    const auto lo = assemble_view_prompts(CameraView::degrees(deg - eps), plan, 0.01);
    const auto hi = assemble_view_prompts(CameraView::degrees(deg + eps), plan, 0.01);
    CHECK_MESSAGE(close(lo, hi, true), "azimuth " << deg);
  }
  // Crossing the side anchor switches arcs: the positive stays continuous.
  for (double deg : {90.0, 270.0}) {
    const auto lo = assemble_view_prompts(CameraView::degrees(deg - eps), plan, 0.0);
    const auto hi = assemble_view_prompts(CameraView::degrees(deg + eps), plan, 0.0);
    CHECK(close(lo, hi, false));
  }
}

TEST_CASE("sds gradient by hand in one dimension") {
  const double m = 0.4, s = 0.3;
  const auto world = presets::unimodal(vec({m}), s);
  const auto sched = default_schedule();
  const Scene scene = line_scene({1.0, -2.0, 5.0});
  SDSConfig cfg;
  cfg.guidance = 7.5;
  SdsDraw draw{300, vec({0.8})};

  const auto g = sds_grad(scene, CameraView::degrees(0), world.prompt("x"), world, sched, cfg, draw);
  REQUIRE(g.size() == 3);
  const double ab = sched.alpha_bar(300);
  const double xt = std::sqrt(ab) * 1.0 + std::sqrt(1 - ab) * 0.8;
  const double eps = std::sqrt(1 - ab) * (xt - std::sqrt(ab) * m) / (ab * s + 1 - ab);
  CHECK(g[0][0] == doctest::Approx(eps - 0.8).epsilon(1e-12));
  CHECK(g[1][0] == 0.0);
  CHECK(g[2][0] == 0.0);

  // Between bins 0 and 1 the gradient splits by the render weights.
  const auto h = sds_grad(scene, CameraView::degrees(40), world.prompt("x"), world, sched, cfg, draw);
  const double x = (1.0 - 1.0 / 3.0) * 1.0 + (1.0 / 3.0) * -2.0;
  const double xt2 = std::sqrt(ab) * x + std::sqrt(1 - ab) * 0.8;
  const double e2 = std::sqrt(1 - ab) * (xt2 - std::sqrt(ab) * m) / (ab * s + 1 - ab) - 0.8;
  CHECK(h[0][0] == doctest::Approx(2.0 / 3.0 * e2).epsilon(1e-12));
  CHECK(h[1][0] == doctest::Approx(1.0 / 3.0 * e2).epsilon(1e-12));
  CHECK(h[2][0] == 0.0);

  cfg.weighting = LossWeighting::OneMinusAlphaBar;
  const auto w = sds_grad(scene, CameraView::degrees(0), world.prompt("x"), world, sched, cfg, draw);
  CHECK(w[0][0] == doctest::Approx((1 - ab) * (eps - 0.8)).epsilon(1e-12));
}

TEST_CASE("sds draws stay in the timestep window") {
  const auto sched = default_schedule();
  SDSConfig cfg;
  std::mt19937_64 rng(1);
  int lo = 10000, hi = 0;
  for (int i = 0; i < 20000; ++i) {
    const auto d = draw_sds(rng, cfg, sched, 2);
    lo = std::min(lo, d.t);
    hi = std::max(hi, d.t);
    REQUIRE(d.noise.size() == 2);
  }
  CHECK(lo == 20);
  CHECK(hi == 980);
  cfg.t_min = 0.5;
  cfg.t_max = 0.4;
  CHECK_THROWS_AS(cfg.validate(), ParameterError);
}

TEST_CASE("sds pulls a displaced feature back toward the mode") {
  const auto world = presets::unimodal(vec({0.0, 0.0}), 0.5);
  const auto sched = default_schedule();
  std::vector<Vector> bins{vec({1.5, -1.0}), vec({0.0, 0.0}), vec({0.0, 0.0})};
  const Scene scene(bins);
  SDSConfig cfg;
  std::mt19937_64 rng(2);
  Vector mean = Vector::Zero(2);
  const int n = 4000;
  for (int i = 0; i < n; ++i) {
    const auto d = draw_sds(rng, cfg, sched, 2);
    mean += sds_grad(scene, CameraView(0.0), world.prompt("x"), world, sched, cfg, d)[0];
  }
  mean /= n;
  // Descent direction -mean points from the feature back to the mode.
  CHECK(mean.dot(bins[0]) > 0.0);
}

TEST_CASE("perpendicular sds reduces to plain sds when negatives are inert") {
  const auto world = presets::view_bias(0.7);
  const auto sched = default_schedule();
  std::mt19937_64 rng(4);
  const Scene scene = Scene::random(6, 3, 1.0, rng);
  SDSConfig cfg;
  for (int i = 0; i < 20; ++i) {
    const auto draw = draw_sds(rng, cfg, sched, 3);
    const CameraView view(0.37 * i);
    AssembledPrompts p;
    p.positive = world.prompt("side");
    const auto ref = sds_grad(scene, view, p.positive, world, sched, cfg, draw);
    const auto bare = perp_neg_sds_grad(scene, view, p, world, sched, cfg, draw);
    p.negatives = {{p.positive, 2.0}};
    const auto par = perp_neg_sds_grad(scene, view, p, world, sched, cfg, draw);
    for (std::size_t b = 0; b < ref.size(); ++b) {
      CHECK((ref[b] - bare[b]).lpNorm<Eigen::Infinity>() <= 1e-12);
      CHECK((ref[b] - par[b]).lpNorm<Eigen::Infinity>() <= 1e-9);
    }
  }
}

TEST_CASE("sds estimator matches its quadrature expectation") {
  // E over t and noise of the single-draw gradient for a two-mode world in
  // one dimension, against trapezoid quadrature over the noise for every t.
  const auto world = presets::symmetric_pair(1, 4.0);
  const auto sched = default_schedule();
  const Scene scene = line_scene({0.5, 0.0, 0.0});
  SDSConfig cfg;
  cfg.guidance = 3.0;

  const std::vector<oracle::Component> uncond{{vec({-2.0}), 1.0, 0.5}, {vec({2.0}), 1.0, 0.5}};
  const std::vector<oracle::Component> cond{{vec({-2.0}), 1.0, 1.0}};
  auto eps_of = [](const std::vector<oracle::Component>& c, double x, double ab) {
    auto logp = [&](const Eigen::VectorXd& y) { return std::log(oracle::diffused_mixture_pdf(c, y, ab)); };
    return -std::sqrt(1.0 - ab) * oracle::fd_gradient(logp, vec({x}), 1e-5)[0];
  };

  double expect = 0.0;
  int count = 0;
  const int nq = 400;
  const double lim = 8.0, h = 2.0 * lim / nq;
  for (int t = 20; t <= 980; ++t, ++count) {
    const double ab = sched.alpha_bar(t);
    double inner = 0.0;
    for (int i = 0; i <= nq; ++i) {
      const double z = -lim + i * h;
      const double xt = std::sqrt(ab) * 0.5 + std::sqrt(1.0 - ab) * z;
      const double eu = eps_of(uncond, xt, ab);
      const double ec = eps_of(cond, xt, ab);
      const double val = (eu + cfg.guidance * (ec - eu) - z) * std::exp(-0.5 * z * z) / std::sqrt(2.0 * std::numbers::pi);
      inner += (i == 0 || i == nq ? 0.5 : 1.0) * val * h;
    }
    expect += inner;
  }
  expect /= count;

  std::mt19937_64 rng(8);
  const int n = 100000;
  double mc = 0.0;
  for (int i = 0; i < n; ++i) {
    const auto d = draw_sds(rng, cfg, sched, 1);
    mc += sds_grad(scene, CameraView(0.0), world.prompt("a"), world, sched, cfg, d)[0][0];
  }
  mc /= n;
  CHECK(std::abs(mc - expect) <= 0.05 * std::abs(expect));
}

TEST_CASE("janus score examples") {
  const auto world = presets::view_bias(0.7);
  const auto views = ViewModes::from_world(world);
  CHECK(views.for_sector(Sector::Back) == world.mode_index("back"));

  std::vector<Vector> at_modes, all_front;
  for (int b = 0; b < 24; ++b) {
    const Sector s = CameraView(2.0 * std::numbers::pi * b / 24).sector();
    at_modes.push_back(world.modes()[views.for_sector(s)].mean);
    all_front.push_back(world.modes()[views.front].mean);
  }
  CHECK(janus_score(Scene(at_modes), world) == 1.0);
  CHECK(janus_score(Scene(all_front), world) == 0.25);
  CHECK_THROWS_AS(janus_score(Scene(all_front), presets::symmetric_pair(3, 2.0)), LookupError);
}

TEST_CASE("distillation converges on a single mode with either variant") {
  const Vector m = vec({1.0, -0.5});
  const auto world = one_mode_views(m, 1e-4);
  const auto plan = ViewPromptPlan::from_world(world);
  const auto sched = default_schedule();
  std::vector<Vector> bins(3, m + vec({2.0, 0.0}));
  SDSConfig cfg;
  cfg.iterations = 2000;
  cfg.step_size = 0.05;
  for (auto variant : {DistillVariant::Vanilla, DistillVariant::PerpNeg}) {
    cfg.seed = 21;
    const auto res = optimize(Scene(bins), world, plan, cfg, variant, sched);
    CHECK_MESSAGE(max_dist(res.scene, m) <= 1e-2, to_string(variant));
    CHECK(res.log.size() == 2000);
    CHECK(res.log.back().janus_score == 0.0);  // no side/back modes to score against
  }
}

TEST_CASE("vanilla distillation on an unbiased world gets views right") {
  const auto world = clean_views(0.05);
  const auto plan = ViewPromptPlan::from_world(world);
  const auto sched = default_schedule();
  std::mt19937_64 rng(30);
  SDSConfig cfg;
  cfg.iterations = 3000;
  cfg.seed = 30;
  const auto res = optimize(Scene::random(24, 2, 0.5, rng), world, plan, cfg,
                            DistillVariant::Vanilla, sched);
  CHECK(janus_score(res.scene, world) >= 0.9);
  CHECK(res.log.back().janus_score == janus_score(res.scene, world));
}

TEST_CASE("optimize is deterministic in its seed") {
  const auto world = presets::view_bias(0.7);
  const auto plan = presets::view_plan(world);
  const auto sched = default_schedule();
  std::mt19937_64 rng(3);
  const Scene init = Scene::random(8, 3, 0.5, rng);
  SDSConfig cfg;
  cfg.iterations = 200;
  const auto a = optimize(init, world, plan, cfg, DistillVariant::PerpNeg, sched);
  const auto b = optimize(init, world, plan, cfg, DistillVariant::PerpNeg, sched);
  for (int i = 0; i < init.size(); ++i) CHECK((a.scene.bin(i).array() == b.scene.bin(i).array()).all());
  // Both variants consume the same view and timestep stream.
  const auto v = optimize(init, world, plan, cfg, DistillVariant::Vanilla, sched);
  for (std::size_t i = 0; i < v.log.size(); ++i) {
    REQUIRE(v.log[i].azimuth == a.log[i].azimuth);
    REQUIRE(v.log[i].t == a.log[i].t);
  }
}

TEST_CASE("divergence guard") {
  const auto world = one_mode_views(vec({0.0}), 1.0);
  const auto plan = ViewPromptPlan::from_world(world);
  const auto sched = default_schedule();
  SDSConfig cfg;
  cfg.step_size = 1e4;
  cfg.iterations = 1000;
  try {
    optimize(line_scene({1.0, 1.0, 1.0}), world, plan, cfg, DistillVariant::Vanilla, sched);
    FAIL("expected DivergenceError");
  } catch (const DivergenceError& e) {
    CHECK(e.iteration() < 1000);
  }
  CHECK_THROWS_AS(optimize(line_scene({1.0, 1.0, 1.0}), clean_views(1.0), plan, SDSConfig{},
                           DistillVariant::Vanilla, sched),
                  ShapeError);
}

TEST_CASE("variant names") {
  CHECK(parse_variant("vanilla") == DistillVariant::Vanilla);
  CHECK(parse_variant("perp_neg") == DistillVariant::PerpNeg);
  CHECK(to_string(DistillVariant::PerpNeg) == "perp_neg");
  CHECK_THROWS_AS(parse_variant("dreamfusion"), ParameterError);
}

TEST_CASE("view accuracy skips the midpoint") {
  std::vector<SweepPoint> sweep{
      {0.0, 0.1, 0.1, 0.8}, {0.25, 0.0, 0.2, 0.6}, {0.5, 0.3, 0.5, 0.3}, {1.0, 1.0, 0.9, 0.0}};
  CHECK(view_accuracy(sweep) == doctest::Approx((0.8 + 0.6 + 1.0) / 3.0));
  CHECK(view_accuracy(std::vector<SweepPoint>{}) == 0.0);
}

TEST_CASE("interpolation sweep moves from one anchor to the other") {
  const auto world = presets::view_bias(0.75);
  const auto plan = presets::view_plan(world);
  const auto sched = default_schedule();
  SweepConfig cfg;
  cfg.rs = {0.0, 1.0};
  cfg.samples = 50;
  cfg.threads = 4;
  const auto fs = interpolation_sweep(world, plan, ViewPair::FrontSide, cfg, sched);
  REQUIRE(fs.size() == 2);
  CHECK(fs[0].anchor_fraction < fs[1].anchor_fraction);
  CHECK(fs[1].anchor_fraction >= 0.8);
  CHECK(fs[0].other_fraction >= 0.8);
  CHECK(fs[0].anchor_responsibility < fs[1].anchor_responsibility);

  cfg.threads = 1;
  const auto again = interpolation_sweep(world, plan, ViewPair::FrontSide, cfg, sched);
  CHECK(again[0].anchor_responsibility == fs[0].anchor_responsibility);

  cfg.samples = 0;
  CHECK_THROWS_AS(interpolation_sweep(world, plan, ViewPair::SideBack, cfg, sched), ParameterError);
}

TEST_CASE("weight function selection keeps the first best pair") {
  const auto world = presets::view_bias(0.75);
  const auto plan = presets::view_plan(world);
  const auto sched = default_schedule();
  SweepConfig cfg;
  cfg.rs = {0.0, 1.0};
  cfg.samples = 4;
  WeightFnGrid grid;
  grid.a = {0.0, 1.0};
  grid.b = {0.0};
  grid.c = {0.0};
  const auto pick = select_weight_fns(world, plan, ViewPair::SideBack, grid, cfg, sched);
  CHECK(pick.accuracy >= 0.0);
  CHECK(pick.accuracy <= 1.0);
  // Verify against a direct evaluation of the chosen pair.
  ViewPromptPlan chosen = plan;
  chosen.f_sb = pick.first;
  chosen.f_fsb = pick.second;
  CHECK(view_accuracy(interpolation_sweep(world, chosen, ViewPair::SideBack, cfg, sched)) == pick.accuracy);

  grid.a.clear();
  CHECK_THROWS_AS(select_weight_fns(world, plan, ViewPair::SideBack, grid, cfg, sched), ParameterError);
}

}  // TEST_SUITE
