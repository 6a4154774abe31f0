#pragma once

#include "lively/nn/checkpoint.hpp"
#include "lively/nn/tensor.hpp"

#include <string>
#include <vector>

namespace lively {

// Per-channel standardization of pose clips; models train and sample in the normalized space.
struct PoseNorm {
  Eigen::VectorXd mean, std;

  static PoseNorm fit(const std::vector<nn::Mat<double>>& clips, double std_floor = 1e-3);
  static PoseNorm identity(int dims);
  nn::Mat<double> apply(const nn::Mat<double>& x) const;
  nn::Mat<double> invert(const nn::Mat<double>& x) const;
  void save(const std::string& prefix, nn::TensorMap& out) const;
  static PoseNorm load(const std::string& prefix, const nn::TensorMap& in);
};

}  // namespace lively
