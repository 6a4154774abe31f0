#pragma once

#include "lively/nn/checkpoint.hpp"
#include "lively/nn/ops.hpp"
#include "lively/nn/optim.hpp"
#include "lively/normalization.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace lively::metrics {

using nn::Mat;

struct FeatureAeConfig {
  int frames = 34;
  int pose_dims = 30;
  int hidden = 64;
  int latent = 32;
  int pool_bins = 3;
  int decoder_hidden = 256;
  double leaky_slope = 0.2;

  void validate() const;
};

// Two strided temporal convolutions, adaptive average pooling, and a linear
// head map one clip to the latent; a two-layer MLP maps it back.
template <typename T>
class FeatureAutoencoder {
 public:
  FeatureAutoencoder() = default;
  FeatureAutoencoder(FeatureAeConfig config, std::uint64_t seed);

  const FeatureAeConfig& config() const { return config_; }
  nn::ParamTree<T>& params() { return params_; }
  const nn::ParamTree<T>& params() const { return params_; }

  Mat<T> encode(const Mat<T>& x) const;  // normalized [frames x pose_dims] -> [1 x latent]
  Mat<T> decode(const Mat<T>& z) const;  // -> [frames x pose_dims]

  // Mean squared reconstruction error over the batch; fills gradients when backward.
  double loss(const std::vector<const Mat<double>*>& batch, bool backward);

  template <typename U>
  FeatureAutoencoder<U> cast() const {
    FeatureAutoencoder<U> out;
    out.config_ = config_;
    out.params_ = params_.template cast<U>();
    return out;
  }

 private:
  template <typename>
  friend class FeatureAutoencoder;
  struct Impl;

  FeatureAeConfig config_;
  nn::ParamTree<T> params_;
};

struct AeTrainOptions {
  int epochs = 30;
  int batch_size = 32;
  nn::OptimizerConfig optimizer{nn::OptimizerKind::Adam, 1e-3, 0.9, 0.999, 1e-8, 0.0};
  double final_lr_fraction = 0.1;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;
};

// Trained evaluator: model plus the normalization it was trained under.
struct FeatureExtractor {
  FeatureAutoencoder<float> model;
  PoseNorm norm;
  nn::Optimizer<float> optimizer;
  int epoch = 0;
  double final_mse = 0.0;  // normalized-space reconstruction error after the last epoch

  // Raw-space clips -> [N x latent] features.
  Mat<double> embed(const std::vector<Mat<double>>& clips) const;
  Mat<double> reconstruct(const Mat<double>& clip) const;

  void save(nn::TensorMap& out) const;
  static FeatureExtractor load(const nn::TensorMap& in);
};

// Throws EmptyBatch on no clips. Records one mean loss per epoch.
std::vector<double> train_feature_autoencoder(FeatureExtractor& fx, const std::vector<Mat<double>>& clips,
                                              const AeTrainOptions& options,
                                              const std::function<void(int, double)>& on_epoch = {});

}  // namespace lively::metrics
