#pragma once

#include "lively/nn/tensor.hpp"
#include "lively/rng.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace lively::diffusion {

using Mat = nn::Mat<double>;

struct NoiseSchedule {
  std::vector<double> betas;       // betas[t-1] = beta_t, t = 1..T
  std::vector<double> alpha_bars;  // alpha_bars[t], alpha_bars[0] = 1

  int steps() const { return static_cast<int>(betas.size()); }
  double alpha_bar(int t) const;

  // Accepts beta in [0, 1) so degenerate test schedules can be built.
  static NoiseSchedule from_betas(std::vector<double> betas);
};

// Throws BadRange unless 0 < beta_1 <= beta_T < 1 and T >= 1.
NoiseSchedule make_linear_schedule(int T = 1000, double beta_1 = 1e-4, double beta_T = 0.02);
NoiseSchedule make_cosine_schedule(int T = 1000, double offset = 0.008);

struct DdimPlan {
  std::vector<int> timesteps;  // strictly decreasing, all in [1, T]
  double eta = 0.0;

  void validate(int T) const;
};

// t_i = round((i+1) T / n) for i = n-1 .. 0.
DdimPlan make_uniform_plan(int T, int n_steps, double eta = 0.0);

Mat gaussian(Eigen::Index rows, Eigen::Index cols, Rng& rng);

Mat q_sample(const Mat& x0, int t, const Mat& eps, const NoiseSchedule& schedule);
Mat x0_to_eps(const Mat& x_t, const Mat& x0_hat, int t, const NoiseSchedule& schedule);
Mat ddim_step(const Mat& x_t, const Mat& x0_hat, int t, int t_prev, double eta, const Mat& noise,
              const NoiseSchedule& schedule);

// uncond + w (cond - uncond); exact at w = 0 and w = 1.
Mat cfg_combine(const Mat& pred_cond, const Mat& pred_uncond, double w);

// x0 prediction for x_t at step t. The condition lives inside the callable.
using Denoiser = std::function<Mat(const Mat& x_t, int t, bool cond_enabled)>;

// Evaluates the denoiser once (w = 1 or w = 0) or twice and combines.
Mat guided_prediction(const Denoiser& denoiser, const Mat& x_t, int t, double w);

struct SampleOptions {
  double w = 1.0;
  // Leading rows pinned to these clean values at every step; the denoiser sees them unnoised.
  std::optional<Mat> seed_frames;
};

Mat ddim_sample(const Denoiser& denoiser, Eigen::Index rows, Eigen::Index cols, const DdimPlan& plan,
                const NoiseSchedule& schedule, Rng& rng, const SampleOptions& options = {});

// Runs plan steps [first, end) starting from x at level plan.timesteps[first].
Mat ddim_run(const Denoiser& denoiser, Mat x, const DdimPlan& plan, std::size_t first, const NoiseSchedule& schedule,
             Rng& rng, const SampleOptions& options);

// Noises x_in in one shot to the level of the K-th plan step counted from the
// low-noise end, then denoises the remaining K steps. K = 0 returns x_in.
Mat sdedit_empower(const Denoiser& denoiser, const Mat& x_in, int K, int n_steps, const NoiseSchedule& schedule,
                   Rng& rng, const SampleOptions& options = {}, double eta = 0.0);

}  // namespace lively::diffusion
