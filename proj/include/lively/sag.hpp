#pragma once

#include "lively/nn/checkpoint.hpp"
#include "lively/nn/ops.hpp"
#include "lively/nn/optim.hpp"
#include "lively/normalization.hpp"
#include "lively/text_embedding.hpp"

#include <cstdint>
#include <functional>
#include <string_view>
#include <vector>

namespace lively::sag {

using nn::Mat;

struct SagConfig {
  int frames = 34;
  int pose_dims = 30;
  int d_model = 512;
  int ff_dim = 1024;
  int enc_layers = 3;
  int dec_layers = 3;
  int heads = 8;
  int latent_dim = text::kEmbeddingDim;
  double lambda_cos = 1.0;

  void validate() const;
};

struct SagLossParts {
  double total = 0.0;
  double rec = 0.0;
  double cos = 0.0;
};

// Normalized-space training pair.
struct SagExample {
  Mat<double> x;       // [frames x pose_dims]
  Mat<double> z_text;  // [1 x latent_dim]
};

// Post-norm transformer autoencoder. The encoder mean-pools its output into the
// latent; the decoder's learned frame queries cross-attend to one memory token
// projected from the unit-normalized latent.
template <typename T>
class SagModel {
 public:
  SagModel() = default;
  SagModel(SagConfig config, std::uint64_t seed);

  const SagConfig& config() const { return config_; }
  nn::ParamTree<T>& params() { return params_; }
  const nn::ParamTree<T>& params() const { return params_; }

  Mat<T> encode(const Mat<T>& x) const;  // [frames x pose_dims] -> [1 x latent_dim]
  Mat<T> decode(const Mat<T>& z) const;  // [1 x latent_dim] -> [frames x pose_dims]

  SagLossParts loss(const std::vector<const SagExample*>& batch, bool backward);
  SagLossParts loss(const std::vector<SagExample>& batch, bool backward);

  template <typename U>
  SagModel<U> cast() const {
    SagModel<U> out;
    out.config_ = config_;
    out.params_ = params_.template cast<U>();
    return out;
  }

 private:
  template <typename>
  friend class SagModel;
  struct Impl;

  SagConfig config_;
  nn::ParamTree<T> params_;
};

// 1 - cos(a, b); throws ZeroVector when either norm is below 1e-10.
double cosine_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b);

struct SagTrainOptions {
  int epochs = 40;
  int batch_size = 32;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::Adam, 1e-4, 0.9, 0.99, 1e-8, 0.0};
  double final_lr_fraction = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

struct SagEpochRecord {
  int epoch = 0;
  SagLossParts loss;
};

struct SagTrainer {
  SagModel<float> model;
  PoseNorm norm;
  nn::Optimizer<float> optimizer;
  int epoch = 0;

  void save(nn::TensorMap& out) const;
  static SagTrainer load(const nn::TensorMap& in);
};

struct SagClip {
  Mat<double> poses;        // raw pose space
  Eigen::VectorXd text;     // script embedding
};

std::vector<SagEpochRecord> train_sag(SagTrainer& trainer, const std::vector<SagClip>& data,
                                      const SagTrainOptions& options,
                                      const std::function<void(const SagEpochRecord&)>& on_epoch = {});

// Raw-space clip decoded from the script's embedding.
Mat<double> generate_from_text(const SagModel<float>& model, const PoseNorm& norm, std::string_view script,
                               const text::EmbeddingProvider& provider);

// generate_from_text on script + " " + extra_prompt.
Mat<double> prompt_edit(const SagModel<float>& model, const PoseNorm& norm, std::string_view script,
                        std::string_view extra_prompt, const text::EmbeddingProvider& provider);

}  // namespace lively::sag
