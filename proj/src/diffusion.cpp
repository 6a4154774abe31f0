#include "lively/diffusion.hpp"

#include "lively/error.hpp"

#include <cmath>
#include <numbers>

namespace lively::diffusion {

namespace {

void check_step(const NoiseSchedule& s, int t) {
  if (t < 0 || t > s.steps()) {
    fail(Errc::StepOutOfRange, "timestep " + std::to_string(t) + " outside [0, " + std::to_string(s.steps()) + "]");
  }
}

void check_same_shape(const Mat& a, const Mat& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) fail(Errc::ShapeMismatch, what);
}

}  // namespace

double NoiseSchedule::alpha_bar(int t) const {
  check_step(*this, t);
  return alpha_bars[static_cast<std::size_t>(t)];
}

NoiseSchedule NoiseSchedule::from_betas(std::vector<double> betas) {
  require(!betas.empty(), Errc::BadRange, "schedule needs at least one step");
  NoiseSchedule s;
  s.alpha_bars.reserve(betas.size() + 1);
  s.alpha_bars.push_back(1.0);
  for (double b : betas) {
    require(std::isfinite(b) && b >= 0.0 && b < 1.0, Errc::BadRange, "beta outside [0, 1)");
    s.alpha_bars.push_back(s.alpha_bars.back() * (1.0 - b));
  }
  s.betas = std::move(betas);
  return s;
}

NoiseSchedule make_linear_schedule(int T, double beta_1, double beta_T) {
  require(T >= 1, Errc::BadRange, "T must be positive");
  require(beta_1 > 0.0 && beta_1 <= beta_T && beta_T < 1.0, Errc::BadRange, "need 0 < beta_1 <= beta_T < 1");
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int i = 0; i < T; ++i) {
    betas[static_cast<std::size_t>(i)] = T == 1 ? beta_1 : beta_1 + (beta_T - beta_1) * i / (T - 1);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

NoiseSchedule make_cosine_schedule(int T, double offset) {
  require(T >= 1, Errc::BadRange, "T must be positive");
  auto f = [&](double t) {
    const double c = std::cos((t / T + offset) / (1.0 + offset) * std::numbers::pi / 2.0);
    return c * c;
  };
  std::vector<double> betas(static_cast<std::size_t>(T));
  for (int t = 1; t <= T; ++t) {
    betas[static_cast<std::size_t>(t - 1)] = std::min(1.0 - f(t) / f(t - 1), 0.999);
  }
  return NoiseSchedule::from_betas(std::move(betas));
}

void DdimPlan::validate(int T) const {
  require(!timesteps.empty(), Errc::BadRange, "DDIM plan is empty");
  require(eta >= 0.0 && eta <= 1.0, Errc::BadRange, "eta outside [0, 1]");
  for (std::size_t i = 0; i < timesteps.size(); ++i) {
    const int t = timesteps[i];
    if (t < 1 || t > T) fail(Errc::StepOutOfRange, "plan timestep outside [1, T]");
    if (i > 0 && t >= timesteps[i - 1]) fail(Errc::BadRange, "plan timesteps must strictly decrease");
  }
}

DdimPlan make_uniform_plan(int T, int n_steps, double eta) {
  require(n_steps >= 1 && n_steps <= T, Errc::BadRange, "DDIM step count must lie in [1, T]");
  DdimPlan plan;
  plan.eta = eta;
  for (int i = n_steps - 1; i >= 0; --i) {
    plan.timesteps.push_back(static_cast<int>(std::lround(static_cast<double>(i + 1) * T / n_steps)));
  }
  plan.validate(T);
  return plan;
}

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng) {
  Mat m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

Mat q_sample(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& schedule) {
  check_same_shape(x0, eps, "q_sample: noise shape differs from x0");
  const double ab = schedule.alpha_bar(t);
  if (t == 0) return x0;
  return std::sqrt(ab) * x0 + std::sqrt(1.0 - ab) * eps;
}

Mat x0_to_eps(const Mat& x_t, const Mat& x0_hat, int t, const NoiseSchedule& schedule) {
  check_same_shape(x_t, x0_hat, "x0_to_eps: shape mismatch");
  if (t < 1) fail(Errc::StepOutOfRange, "x0_to_eps needs t >= 1");
  const double ab = schedule.alpha_bar(t);
  return (x_t - std::sqrt(ab) * x0_hat) / std::sqrt(1.0 - ab);
}

Mat ddim_step(const Mat& x_t, const Mat& x0_hat, int t, int t_prev, double eta, const Mat& noise,
              const NoiseSchedule& schedule) {
  check_step(schedule, t);
  check_step(schedule, t_prev);
  if (t <= t_prev) fail(Errc::StepOutOfRange, "ddim_step needs t > t_prev");
  const double ab_t = schedule.alpha_bar(t);
  const double ab_p = schedule.alpha_bar(t_prev);
  const double sigma = eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
  const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
  Mat out = std::sqrt(ab_p) * x0_hat;
  if (dir > 0.0) out += dir * x0_to_eps(x_t, x0_hat, t, schedule);
  if (sigma > 0.0) {
    check_same_shape(x_t, noise, "ddim_step: noise shape mismatch");
    out += sigma * noise;
  }
  return out;
}

Mat cfg_combine(const Mat& pred_cond, const Mat& pred_uncond, double w) {
  check_same_shape(pred_cond, pred_uncond, "cfg_combine: shape mismatch");
  if (w == 1.0) return pred_cond;
  if (w == 0.0) return pred_uncond;
  return pred_uncond + w * (pred_cond - pred_uncond);
}

Mat guided_prediction(const Denoiser& denoiser, const Mat& x_t, int t, double w) {
  if (w == 1.0) return denoiser(x_t, t, true);
  if (w == 0.0) return denoiser(x_t, t, false);
  return cfg_combine(denoiser(x_t, t, true), denoiser(x_t, t, false), w);
}

Mat ddim_run(const Denoiser& denoiser, Mat x, const DdimPlan& plan, std::size_t first, const NoiseSchedule& schedule,
             Rng& rng, const SampleOptions& options) {
  const Mat* seed = options.seed_frames ? &*options.seed_frames : nullptr;
  if (seed) {
    require(seed->cols() == x.cols() && seed->rows() <= x.rows(), Errc::ShapeMismatch,
            "seed frames do not fit the sample");
  }
  const Eigen::Index ns = seed ? seed->rows() : 0;
  for (std::size_t i = first; i < plan.timesteps.size(); ++i) {
    const int t = plan.timesteps[i];
    const int t_prev = i + 1 < plan.timesteps.size() ? plan.timesteps[i + 1] : 0;
    if (ns > 0) x.topRows(ns) = *seed;
    Mat x0_hat = guided_prediction(denoiser, x, t, options.w);
    if (ns > 0) x0_hat.topRows(ns) = *seed;
    Mat noise;
    if (plan.eta > 0.0) noise = gaussian(x.rows(), x.cols(), rng);
    x = ddim_step(x, x0_hat, t, t_prev, plan.eta, noise, schedule);
  }
  if (ns > 0) x.topRows(ns) = *seed;
  return x;
}

Mat ddim_sample(const Denoiser& denoiser, Eigen::Index rows, Eigen::Index cols, const DdimPlan& plan,
                const NoiseSchedule& schedule, Rng& rng, const SampleOptions& options) {
  plan.validate(schedule.steps());
  Mat x = gaussian(rows, cols, rng);
  return ddim_run(denoiser, std::move(x), plan, 0, schedule, rng, options);
}

Mat sdedit_empower(const Denoiser& denoiser, const Mat& x_in, int K, int n_steps, const NoiseSchedule& schedule,
                   Rng& rng, const SampleOptions& options, double eta) {
  if (K < 0 || K > n_steps) {
    fail(Errc::KOutOfRange, "K=" + std::to_string(K) + " outside [0, " + std::to_string(n_steps) + "]");
  }
  if (K == 0) return x_in;
  const DdimPlan plan = make_uniform_plan(schedule.steps(), n_steps, eta);
  const std::size_t first = static_cast<std::size_t>(n_steps - K);
  const int t_k = plan.timesteps[first];
  Mat x = q_sample(x_in, t_k, gaussian(x_in.rows(), x_in.cols(), rng), schedule);
  return ddim_run(denoiser, std::move(x), plan, first, schedule, rng, options);
}

}  // namespace lively::diffusion
