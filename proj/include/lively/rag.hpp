#pragma once

#include "lively/diffusion.hpp"
#include "lively/normalization.hpp"
#include "lively/nn/checkpoint.hpp"
#include "lively/nn/ops.hpp"
#include "lively/nn/optim.hpp"
#include "lively/rng.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

namespace lively::rag {

using nn::Mat;

struct RagConfig {
  int frames = 34;
  int pose_dims = 30;
  // Not given for the MLP backbone; 512 mirrors the semantic branch width.
  int latent_dim = 512;
  int n_blocks = 4;
  std::vector<int> audio_channels = {64, 128, 256, 256};
  std::vector<int> audio_strides = {8, 8, 4, 4};
  int audio_kernel = 15;
  int sample_rate = 16000;
  double fps = 15.0;
  int n_speakers = 4;
  int speaker_dim = 32;
  int style_dim = 32;
  double p_uncond = 0.1;
  // Fraction of training items whose first kSeedFrames rows of x_t are the clean
  // x0 rows, so the network learns to continue a pinned prefix.
  double p_seed = 0.5;
  double leaky_slope = 0.2;
  // false adds the timestep embedding once at the input instead of per block.
  bool per_block_temb = true;
  // > 0 adds a fixed input skip: x0_hat = c_skip x_t + c_out net(...) with the
  // linear least-squares coefficients for data of this per-element scale, so
  // near-clean inputs pass through. 0 disables it.
  double skip_sigma = 0.0;
  double huber_delta = 0.1;
  double kl_weight = 1e-2;
  double vel_weight = 1.0;

  void validate() const;
  int audio_samples() const;
  int audio_dim() const { return audio_channels.back(); }
  int seq_len() const { return frames + 1; }
  int conv_output_length() const;
};

// Leading frames shared by consecutive clips of a long sequence.
inline constexpr int kSeedFrames = 4;

// SmoothL1 form: 0.5 d^2 / delta inside the threshold, |d| - delta/2 outside.
double huber(double d, double delta);
double huber_grad(double d, double delta);

enum class StyleMode { Train, Eval };

template <typename T>
struct StyleSample {
  Mat<T> s, mu, logvar;  // [1 x style_dim]
};

struct LossParts {
  double total = 0.0;
  double rec = 0.0;
  double vel = 0.0;
  double kl = 0.0;
};

// One training item in normalized pose space.
struct RagExample {
  Mat<double> x0;            // [frames x pose_dims]
  std::vector<float> audio;  // audio_samples() samples
  int speaker = 0;
};

// The random choices of one loss evaluation, fixed so the loss is a deterministic function of the weights.
struct RagDraws {
  std::vector<int> t;
  std::vector<Mat<double>> eps;
  std::vector<bool> drop;
  std::vector<Mat<double>> z;  // [1 x style_dim]
  std::vector<bool> seeded;     // clean leading frames in x_t
};

template <typename T>
class RagModel {
 public:
  RagModel() = default;
  RagModel(RagConfig config, std::uint64_t seed);

  const RagConfig& config() const { return config_; }
  nn::ParamTree<T>& params() { return params_; }
  const nn::ParamTree<T>& params() const { return params_; }

  // Waveform (zero-padded to audio_samples()) -> [frames x audio_dim].
  Mat<T> encode_audio(std::span<const float> samples) const;
  // Projected timestep embedding [1 x latent_dim].
  Mat<T> timestep_embedding(int t) const;
  StyleSample<T> style_sample(int speaker, StyleMode mode, const Mat<T>* z = nullptr) const;
  // x_t [frames x pose_dims] -> x0 prediction. Audio is ignored when cond_enabled is false.
  Mat<T> denoise(const Mat<T>& x_t, int t, const Mat<T>& audio_feat, const Mat<T>& style, bool cond_enabled,
                 const diffusion::NoiseSchedule& schedule) const;

  // Evaluates the loss for fixed draws; with backward=true, zeroes and fills the gradients.
  LossParts loss(const std::vector<const RagExample*>& batch, const RagDraws& draws,
                 const diffusion::NoiseSchedule& schedule, bool backward);
  LossParts loss(const std::vector<RagExample>& batch, const RagDraws& draws, const diffusion::NoiseSchedule& schedule,
                 bool backward);

  template <typename U>
  RagModel<U> cast() const {
    RagModel<U> out;
    out.config_ = config_;
    out.params_ = params_.template cast<U>();
    return out;
  }

 private:
  template <typename>
  friend class RagModel;
  struct Impl;

  RagConfig config_;
  nn::ParamTree<T> params_;
};

RagDraws draw_rag_draws(std::size_t batch_size, const RagConfig& config, const diffusion::NoiseSchedule& schedule,
                        Rng& rng);

using lively::PoseNorm;

struct RagTrainOptions {
  int epochs = 20;
  int batch_size = 32;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::AdamW, 1e-3, 0.9, 0.999, 1e-8, 0.0};
  // Cosine decay to lr * final_lr_fraction over all epochs.
  double final_lr_fraction = 0.1;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
};

struct EpochRecord {
  int epoch = 0;
  LossParts loss;
};

// Training state that survives a checkpoint round trip.
struct RagTrainer {
  RagModel<float> model;
  PoseNorm norm;
  nn::Optimizer<float> optimizer;
  int epoch = 0;

  void save(nn::TensorMap& out) const;
  static RagTrainer load(const nn::TensorMap& in);
};

RagConfig config_from_checkpoint(const nn::TensorMap& in);
void config_to_checkpoint(const RagConfig& config, nn::TensorMap& out);

struct RagClip {
  Mat<double> poses;  // raw pose space [frames x pose_dims]
  std::vector<float> audio;
  int speaker = 0;
};

// Runs epochs [trainer.epoch, options.epochs). Fits the normalization when starting at epoch 0.
std::vector<EpochRecord> train_rag(RagTrainer& trainer, const std::vector<RagClip>& data,
                                   const RagTrainOptions& options, const diffusion::NoiseSchedule& schedule,
                                   const std::function<void(const EpochRecord&)>& on_epoch = {});

struct GenerateOptions {
  double w = 1.0;
  int ddim_steps = 100;
  double eta = 0.0;
};

// Denoiser over normalized pose space for one clip's audio and speaker.
diffusion::Denoiser make_denoiser(const RagModel<float>& model, std::span<const float> audio, int speaker,
                                  const diffusion::NoiseSchedule& schedule);

// Raw-space clip [frames x pose_dims]. seed_frames (raw space) pin the leading rows.
Mat<double> generate_clip(const RagModel<float>& model, const PoseNorm& norm, std::span<const float> audio,
                          int speaker, const GenerateOptions& options, const diffusion::NoiseSchedule& schedule,
                          Rng& rng, const Mat<double>* seed_frames = nullptr);

// Number of clips needed for total_frames at stride frames - overlap.
int clip_count(int total_frames, int frames = 34, int overlap = 4);

// Clip-by-clip generation over an arbitrary-length waveform, each clip seeded
// with the previous clip's last 4 frames. Output has 34 + 30 (n - 1) frames.
Mat<double> generate_long(const RagModel<float>& model, const PoseNorm& norm, std::span<const float> audio,
                          int speaker, const GenerateOptions& options, const diffusion::NoiseSchedule& schedule,
                          Rng& rng);

// Beat empowerment of an existing motion (raw space), clip by clip with the same seeding and stitching.
Mat<double> empower_long(const RagModel<float>& model, const PoseNorm& norm, const Mat<double>& motion,
                         std::span<const float> audio, int speaker, int K, const GenerateOptions& options,
                         const diffusion::NoiseSchedule& schedule, Rng& rng);

// Drops the first `overlap` rows of every clip after the first.
Mat<double> stitch_rows(const std::vector<Mat<double>>& clips, int overlap = 4);

}  // namespace lively::rag
