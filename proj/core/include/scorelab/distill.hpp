#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string_view>
#include <vector>

#include "scorelab/oracle.hpp"
#include "scorelab/schedule.hpp"
#include "scorelab/types.hpp"

namespace scorelab {

/// Toy 3D object: B azimuth bins, each holding a feature point in R^d.
/// Bin b is centred at azimuth 2*pi*b/B.
class Scene {
 public:
  explicit Scene(std::vector<Vector> bins);

  /// B bins with every coordinate drawn from N(0, scale^2).
  static Scene random(int bins, int dim, double scale, std::mt19937_64& engine);

  int size() const noexcept { return static_cast<int>(bins_.size()); }
  int dim() const noexcept { return static_cast<int>(bins_.front().size()); }
  const Vector& bin(int b) const { return bins_.at(static_cast<std::size_t>(b)); }
  const std::vector<Vector>& bins() const noexcept { return bins_; }
  double bin_azimuth(int b) const;

  /// Gradient-descent update: bins -= step * grad.
  void apply(const std::vector<Vector>& grad, double step);

 private:
  std::vector<Vector> bins_;
};

enum class Sector { Front, Side, Back };
std::string_view to_string(Sector s) noexcept;

/// Camera azimuth in radians, normalized to [0, 2*pi).
class CameraView {
 public:
  explicit CameraView(double azimuth);
  static CameraView degrees(double deg);

  double azimuth() const noexcept { return azimuth_; }
  double azimuth_degrees() const noexcept;

  /// front [-45, 45), side [45, 135) and [225, 315), back [135, 225) degrees.
  Sector sector() const noexcept;

 private:
  double azimuth_;
};

/// The two bins a view interpolates between and their weights. These
/// weights are also d render / d phi for the two bins.
struct RenderStencil {
  int lo = 0;
  int hi = 1;
  double w_lo = 1.0;
  double w_hi = 0.0;
};

RenderStencil render_stencil(int bins, const CameraView& view);

/// Circular linear interpolation between the bins bracketing the view.
Vector render(const Scene& scene, const CameraView& view);

/// f(r) = a * exp(-b * r) + c with a, b, c >= 0.
struct WeightFn {
  double a = 0.0;
  double b = 0.0;
  double c = 0.0;

  void validate() const;
  double operator()(double r) const;
};

struct ViewPromptPlan {
  PromptEmbedding front;
  PromptEmbedding side;
  PromptEmbedding back;

  // Static negative weights used at the exact anchor views.
  double w_back_side = 1.0;
  double w_back_front = 1.0;
  double w_side_front = 1.5;
  double w_front_side = 1.5;

  WeightFn f_sb{1.0, 3.0, 0.0};   // side negative on the side<->back arc
  WeightFn f_fsb{1.0, 0.0, 0.0};  // front negative on the side<->back arc
  WeightFn f_fs{1.5, 3.0, 0.0};   // front negative on the front<->side arc
  WeightFn f_sf{1.5, 3.0, 0.0};   // side negative on the front<->side arc

  double r_perturb_delta = 0.05;
  bool flip_sf_argument = false;  // evaluate f_sf(r) instead of f_sf(1 - r)

  void validate() const;

  /// Embeddings taken from prompts labelled "front", "side" and "back".
  static ViewPromptPlan from_world(const OracleWorld& world);
};

enum class ViewPair { FrontSide, SideBack };

struct WeightedEmbedding {
  PromptEmbedding embedding;
  double weight = 0.0;
};

struct AssembledPrompts {
  PromptEmbedding positive;
  std::vector<WeightedEmbedding> negatives;
  double r_inter = 0.0;
  bool anchored = false;  // static prompt set at an exact anchor view
};

/// Prompts for interpolation degree r on one arc, with no azimuth logic:
///   FrontSide: r * front + (1 - r) * side, negatives [front f_fs(r), side f_sf(1 - r)]
///   SideBack:  r * side + (1 - r) * back,  negatives [side f_sb(r), front f_fsb(r)]
AssembledPrompts pair_prompts(ViewPair pair, double r, const ViewPromptPlan& plan);

/// Positive and weighted negatives for a camera view. r_inter is linear in the
/// angular distance between the two anchor views (front 0, side 90/270,
/// back 180 degrees), perturbed by r_noise and clipped to [0, 1]. At an exact
/// anchor view with r_noise == 0 the static prompt sets apply.
AssembledPrompts assemble_view_prompts(const CameraView& view, const ViewPromptPlan& plan,
                                       double r_noise);

enum class LossWeighting { Constant, OneMinusAlphaBar };

struct SDSConfig {
  double guidance = 7.5;  // eps_u + guidance * (eps_c - eps_u)
  double t_min = 0.02;
  double t_max = 0.98;
  LossWeighting weighting = LossWeighting::Constant;
  double step_size = 0.05;
  int iterations = 2000;
  std::uint64_t seed = 0;

  void validate() const;
  double loss_weight(int t, const VarianceSchedule& sched) const;
};

struct SdsDraw {
  int t = 1;
  Vector noise;
};

/// t uniform over the integer steps in [t_min * T, t_max * T], noise ~ N(0, I).
SdsDraw draw_sds(std::mt19937_64& engine, const SDSConfig& cfg,
                 const VarianceSchedule& sched, int dim);

/// Per-bin gradient; only the two bins bracketing the view are nonzero.
using SceneGradient = std::vector<Vector>;

/// Single-draw score-distillation gradient w(t) (eps_hat - eps) dx/dphi with
/// x = render(scene, v), x_t the forward sample and eps_hat the guided
/// prediction eps_u + guidance * (eps_pos - eps_u).
SceneGradient sds_grad(const Scene& scene, const CameraView& view,
                       const PromptEmbedding& positive, const OracleWorld& world,
                       const VarianceSchedule& sched, const SDSConfig& cfg,
                       const SdsDraw& draw);

/// Same estimator with eps_hat = eps_u + guidance * (d_pos - sum_i w_i perp(d_i, d_pos)),
/// where d_pos and d_i are the conditional deltas of the assembled prompts.
SceneGradient perp_neg_sds_grad(const Scene& scene, const CameraView& view,
                                const AssembledPrompts& prompts, const OracleWorld& world,
                                const VarianceSchedule& sched, const SDSConfig& cfg,
                                const SdsDraw& draw);

enum class DistillVariant { Vanilla, PerpNeg };
std::string_view to_string(DistillVariant v) noexcept;
DistillVariant parse_variant(std::string_view name);

/// Mode indices of the three view modes.
struct ViewModes {
  std::size_t front = 0;
  std::size_t side = 1;
  std::size_t back = 2;

  /// Looks up modes with ids "front", "side" and "back".
  static ViewModes from_world(const OracleWorld& world);
  std::size_t for_sector(Sector s) const noexcept;
};

struct IterationRecord {
  long iter = 0;
  double azimuth = 0.0;
  int t = 0;
  double grad_norm = 0.0;
  double janus_score = 0.0;
};

struct DistillResult {
  Scene scene;
  std::vector<IterationRecord> log;
};

/// Fixed-step gradient descent on the scene. Each iteration draws a view
/// uniformly over azimuth, a timestep, noise and an interpolation
/// perturbation (always, so both variants see the same view/t/noise stream).
/// Vanilla conditions on the view's sector prompt with plain guidance;
/// PerpNeg uses the assembled view prompts. Throws DivergenceError when any
/// bin's norm exceeds 1e6.
DistillResult optimize(Scene scene, const OracleWorld& world, const ViewPromptPlan& plan,
                       const SDSConfig& cfg, DistillVariant variant,
                       const VarianceSchedule& sched);

/// One point of a 2D interpolation sweep along an arc.
struct SweepPoint {
  double r = 0.0;
  double anchor_fraction = 0.0;        // samples classified to the r = 1 anchor's mode
  double anchor_responsibility = 0.0;  // mean posterior of that mode
  double other_fraction = 0.0;         // samples classified to the r = 0 anchor's mode
};

struct SweepConfig {
  std::vector<double> rs{0.0, 0.25, 0.5, 0.75, 1.0};
  int samples = 10;  // per r, all drawn from one run seeded with `seed`
  std::uint64_t seed = 0;
  int steps = 50;
  double guidance = 7.5;
  int threads = 1;
};

/// Generates 2D samples along one arc with the perpendicular composer and
/// the plan's interpolated prompts (no perturbation).
std::vector<SweepPoint> interpolation_sweep(const OracleWorld& world, const ViewPromptPlan& plan,
                                            ViewPair pair, const SweepConfig& cfg,
                                            const VarianceSchedule& sched);

/// Mean over the sweep of the fraction of samples that land on the anchor the
/// interpolation is closer to. r == 0.5 is skipped.
double view_accuracy(std::span<const SweepPoint> sweep);

struct WeightFnGrid {
  std::vector<double> a{0.5, 1.0, 1.5, 2.0};
  std::vector<double> b{0.0, 1.0, 2.0, 4.0};
  std::vector<double> c{0.0, 0.5};

  std::vector<WeightFn> expand() const;
};

struct WeightFnChoice {
  WeightFn first;   // f_fs or f_sb
  WeightFn second;  // f_sf or f_fsb
  double accuracy = 0.0;
};

/// Exhaustive search over pairs of weight functions for one arc, keeping the
/// pair with the highest view accuracy (first in grid order on ties).
WeightFnChoice select_weight_fns(const OracleWorld& world, const ViewPromptPlan& plan,
                                 ViewPair pair, const WeightFnGrid& grid,
                                 const SweepConfig& cfg, const VarianceSchedule& sched);

/// Fraction of bins whose feature classifies to the mode of the bin's view sector.
double janus_score(const Scene& scene, const OracleWorld& world, const ViewModes& views);
double janus_score(const Scene& scene, const OracleWorld& world);

}  // namespace scorelab
