#pragma once

#include "lively/nn/checkpoint.hpp"
#include "lively/nn/tensor.hpp"

#include <cstdint>
#include <map>
#include <string>

namespace lively::nn {

enum class OptimizerKind { Adam, AdamW };

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::AdamW;
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

// Adam with bias correction. AdamW applies decoupled decay w -= lr*wd*w before
// the moment update; Adam folds wd*w into the gradient (L2).
template <typename T>
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig config = {}) : config_(config) {}

  void step(ParamTree<T>& params);

  std::int64_t steps() const { return step_; }
  const OptimizerConfig& config() const { return config_; }
  void set_lr(double lr) { config_.lr = lr; }

  // Moments under prefix + "m." / "v." and the step counter.
  void export_state(const std::string& prefix, TensorMap& out) const;
  void import_state(const std::string& prefix, const TensorMap& in);

 private:
  OptimizerConfig config_;
  std::int64_t step_ = 0;
  std::map<std::string, Tensor<T>> m_, v_;
};

// Rescales all gradients so their global L2 norm is at most max_norm (0 disables). Returns the norm before scaling.
template <typename T>
double clip_grad_norm(ParamTree<T>& params, double max_norm);

// Cosine decay from base to base * final_fraction as progress goes 0 -> 1.
double cosine_lr(double base, double final_fraction, double progress);

}  // namespace lively::nn
