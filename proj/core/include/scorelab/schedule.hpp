#pragma once

#include <span>
#include <vector>

#include "scorelab/types.hpp"

namespace scorelab {

enum class ScheduleKind { Linear };

/// Discrete-time variance schedule over steps t = 1..T.
///
/// Index conventions: beta(t) and sigma(t) are defined for 1 <= t <= T,
/// alpha_bar(t) for 0 <= t <= T with alpha_bar(0) == 1 standing for clean
/// data. alpha_bar is the cumulative product of (1 - beta).
///
/// sigma(t) is the ancestral (posterior) standard deviation
/// sqrt(beta_t * (1 - alpha_bar(t-1)) / (1 - alpha_bar(t))), which is zero
/// at t = 1.
class VarianceSchedule {
 public:
  static VarianceSchedule build(int steps, double beta_start, double beta_end,
                                ScheduleKind kind = ScheduleKind::Linear);

  int steps() const noexcept { return static_cast<int>(betas_.size()); }

  double beta(int t) const;
  double alpha_bar(int t) const;
  double sigma(int t) const;

  std::span<const double> betas() const noexcept { return betas_; }
  std::span<const double> alpha_bars() const noexcept { return alpha_bars_; }
  std::span<const double> sigmas() const noexcept { return sigmas_; }

 private:
  VarianceSchedule() = default;

  std::vector<double> betas_;
  std::vector<double> alpha_bars_;
  std::vector<double> sigmas_;
};

/// Default schedule used throughout: T = 1000, linear beta 1e-4 .. 0.02.
VarianceSchedule default_schedule();

/// Evenly spaced DDIM timesteps, largest first: for T = 1000 and 50 steps
/// this is {1000, 980, ..., 20}. The chain finishes by stepping to t = 0.
std::vector<int> ddim_timesteps(const VarianceSchedule& sched, int steps);

/// sqrt(alpha_bar_t) * x0 + sqrt(1 - alpha_bar_t) * noise, for 0 <= t <= T.
Vector forward_sample(const Vector& x0, int t, const Vector& noise,
                      const VarianceSchedule& sched);

/// One DDIM update from t to t_prev < t. With eta == 0 the update is
/// deterministic and `noise` is not read (it may be empty).
Vector ddim_step(const Vector& x_t, const EpsPrediction& eps_hat, int t,
                 int t_prev, double eta, const Vector& noise,
                 const VarianceSchedule& sched);

/// One ancestral DDPM update from t to t - 1. No noise is added when t == 1,
/// in which case `noise` may be empty.
Vector ddpm_step(const Vector& x_t, const EpsPrediction& eps_hat, int t,
                 const Vector& noise, const VarianceSchedule& sched);

}  // namespace scorelab
