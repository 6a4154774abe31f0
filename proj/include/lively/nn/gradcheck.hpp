#pragma once

#include "lively/nn/tensor.hpp"

#include <cstdint>
#include <functional>
#include <string>

namespace lively::nn {

struct GradCheckOptions {
  double eps = 1e-5;
  // Denominator floor, so entries whose true gradient is ~0 are compared absolutely.
  double floor = 1e-4;
  // 0 checks every entry; otherwise a seeded random subset of each tensor.
  std::size_t max_per_tensor = 0;
  std::uint64_t seed = 0;
};

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// `loss(true)` must zero and fill params' gradients and return the loss;
// `loss(false)` only evaluates. Compares against central differences.
GradCheckResult grad_check(ParamTree<double>& params, const std::function<double(bool)>& loss,
                           const GradCheckOptions& options = {});

}  // namespace lively::nn
