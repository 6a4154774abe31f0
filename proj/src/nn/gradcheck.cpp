#include "lively/nn/gradcheck.hpp"

#include "lively/rng.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace lively::nn {

GradCheckResult grad_check(ParamTree<double>& params, const std::function<double(bool)>& loss,
                           const GradCheckOptions& options) {
  loss(true);
  std::map<std::string, Tensor<double>> analytic = params.grads();

  GradCheckResult result;
  Rng rng(options.seed);
  for (auto& [name, w] : params.weights()) {
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), std::size_t{0});
    if (options.max_per_tensor > 0 && idx.size() > options.max_per_tensor) {
      for (std::size_t i = 0; i < options.max_per_tensor; ++i) {
        std::swap(idx[i], idx[i + rng.below(idx.size() - i)]);
      }
      idx.resize(options.max_per_tensor);
    }
    const Tensor<double>& g = analytic.at(name);
    for (std::size_t i : idx) {
      const double orig = w[i];
      w[i] = orig + options.eps;
      const double up = loss(false);
      w[i] = orig - options.eps;
      const double down = loss(false);
      w[i] = orig;
      const double numeric = (up - down) / (2.0 * options.eps);
      const double a = g[i];
      const double err = std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), options.floor);
      ++result.checked;
      if (err > result.max_rel_error || !std::isfinite(err)) {
        result.max_rel_error = std::isfinite(err) ? err : std::numeric_limits<double>::infinity();
        result.worst_param = name;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace lively::nn
