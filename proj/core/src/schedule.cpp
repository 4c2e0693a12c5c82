#include "scorelab/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "scorelab/errors.hpp"

namespace scorelab {

VarianceSchedule VarianceSchedule::build(int steps, double beta_start,
                                         double beta_end, ScheduleKind kind) {
  if (steps < 1) {
    throw ParameterError("T", "step count must be >= 1, got " + std::to_string(steps));
  }
  if (!(beta_start > 0.0) || !(beta_start < 1.0)) {
    throw ParameterError("beta_start", "must lie in (0, 1)");
  }
  if (!(beta_end >= beta_start) || !(beta_end < 1.0)) {
    throw ParameterError("beta_end", "must lie in [beta_start, 1)");
  }
  if (kind != ScheduleKind::Linear) {
    throw ParameterError("kind", "only the linear schedule is supported");
  }

  VarianceSchedule s;
  s.betas_.resize(steps);
  for (int i = 0; i < steps; ++i) {
    const double frac = steps == 1 ? 0.0 : static_cast<double>(i) / (steps - 1);
    s.betas_[i] = beta_start + frac * (beta_end - beta_start);
  }
  s.alpha_bars_.resize(steps + 1);
  s.alpha_bars_[0] = 1.0;
  for (int t = 1; t <= steps; ++t) {
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * (1.0 - s.betas_[t - 1]);
  }
  s.sigmas_.resize(steps);
  for (int t = 1; t <= steps; ++t) {
    const double var = s.betas_[t - 1] * (1.0 - s.alpha_bars_[t - 1]) /
                       (1.0 - s.alpha_bars_[t]);
    s.sigmas_[t - 1] = std::sqrt(var);
  }
  return s;
}

double VarianceSchedule::beta(int t) const {
  if (t < 1 || t > steps()) throw IndexError("beta: t out of range [1, T]");
  return betas_[t - 1];
}

double VarianceSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw IndexError("alpha_bar: t out of range [0, T]");
  return alpha_bars_[t];
}

double VarianceSchedule::sigma(int t) const {
  if (t < 1 || t > steps()) throw IndexError("sigma: t out of range [1, T]");
  return sigmas_[t - 1];
}

VarianceSchedule default_schedule() {
  return VarianceSchedule::build(1000, 1e-4, 0.02);
}

std::vector<int> ddim_timesteps(const VarianceSchedule& sched, int steps) {
  const int T = sched.steps();
  if (steps < 1) throw ParameterError("steps", "must be >= 1");
  if (steps > T) throw ParameterError("steps", "cannot exceed the schedule length T");
  std::vector<int> ts(steps);
  for (int k = 0; k < steps; ++k) {
    // Integer arithmetic keeps the grid exact: the k-th largest index.
    ts[k] = static_cast<int>((static_cast<long long>(steps - k) * T) / steps);
  }
  return ts;
}

Vector forward_sample(const Vector& x0, int t, const Vector& noise,
                      const VarianceSchedule& sched) {
  if (t < 0 || t > sched.steps()) {
    throw IndexError("forward_sample: t out of range [0, T]");
  }
  if (noise.size() != x0.size()) {
    throw ShapeError("forward_sample: noise and x0 differ in dimension");
  }
  if (t == 0) return x0;
  const double ab = sched.alpha_bar(t);
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * noise;
}

Vector ddim_step(const Vector& x_t, const EpsPrediction& eps_hat, int t,
                 int t_prev, double eta, const Vector& noise,
                 const VarianceSchedule& sched) {
  if (t_prev >= t) throw OrderingError("ddim_step: t_prev must be < t");
  if (t < 1 || t > sched.steps() || t_prev < 0) {
    throw IndexError("ddim_step: timestep out of range");
  }
  if (eps_hat.size() != x_t.size()) {
    throw ShapeError("ddim_step: eps_hat and x_t differ in dimension");
  }
  if (!(eta >= 0.0 && eta <= 1.0)) throw ParameterError("eta", "must lie in [0, 1]");

  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const Vector x0_hat = (x_t - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab);

  double sigma = 0.0;
  if (eta > 0.0) {
    sigma = eta * std::sqrt((1.0 - ab_prev) / (1.0 - ab)) *
            std::sqrt(1.0 - ab / ab_prev);
  }
  // Rounding can push the radicand a hair below zero at eta == 1.
  const double dir_coef = std::sqrt(std::max(0.0, 1.0 - ab_prev - sigma * sigma));

  Vector out = std::sqrt(ab_prev) * x0_hat + dir_coef * eps_hat;
  if (sigma > 0.0) {
    if (noise.size() != x_t.size()) {
      throw ShapeError("ddim_step: noise and x_t differ in dimension");
    }
    out += sigma * noise;
  }
  return out;
}

Vector ddpm_step(const Vector& x_t, const EpsPrediction& eps_hat, int t,
                 const Vector& noise, const VarianceSchedule& sched) {
  if (t < 1 || t > sched.steps()) throw IndexError("ddpm_step: t out of range [1, T]");
  if (eps_hat.size() != x_t.size()) {
    throw ShapeError("ddpm_step: eps_hat and x_t differ in dimension");
  }
  const double beta = sched.beta(t);
  const double ab = sched.alpha_bar(t);
  Vector mean = (x_t - (beta / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(1.0 - beta);
  if (t == 1) return mean;
  if (noise.size() != x_t.size()) {
    throw ShapeError("ddpm_step: noise and x_t differ in dimension");
  }
  return mean + sched.sigma(t) * noise;
}

}  // namespace scorelab
