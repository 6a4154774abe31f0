#include "lively/nn/optim.hpp"

#include <cmath>
#include <numbers>

namespace lively::nn {

template <typename T>
void Optimizer<T>::step(ParamTree<T>& params) {
  ++step_;
  const double b1 = config_.beta1;
  const double b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(step_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(step_));
  const bool decoupled = config_.kind == OptimizerKind::AdamW;
  for (auto& [name, w] : params.weights()) {
    const Tensor<T>& g = params.grad(name);
    auto [mit, fresh] = m_.try_emplace(name, Tensor<T>(w.shape()));
    auto& m = mit->second;
    auto& v = v_.try_emplace(name, Tensor<T>(w.shape())).first->second;
    (void)fresh;
    for (std::size_t i = 0; i < w.size(); ++i) {
      double grad = static_cast<double>(g[i]);
      double wi = static_cast<double>(w[i]);
      if (config_.weight_decay != 0.0) {
        if (decoupled) {
          wi -= config_.lr * config_.weight_decay * wi;
        } else {
          grad += config_.weight_decay * wi;
        }
      }
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * grad;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * grad * grad;
      m[i] = static_cast<T>(mi);
      v[i] = static_cast<T>(vi);
      wi -= config_.lr * (mi / c1) / (std::sqrt(vi / c2) + config_.eps);
      w[i] = static_cast<T>(wi);
    }
  }
}

template <typename T>
void Optimizer<T>::export_state(const std::string& prefix, TensorMap& out) const {
  for (const auto& [name, t] : m_) out[prefix + "m." + name] = t.template cast<float>();
  for (const auto& [name, t] : v_) out[prefix + "v." + name] = t.template cast<float>();
  put_scalar(out, prefix + "step", static_cast<double>(step_));
}

template <typename T>
void Optimizer<T>::import_state(const std::string& prefix, const TensorMap& in) {
  m_.clear();
  v_.clear();
  const std::string mp = prefix + "m.";
  const std::string vp = prefix + "v.";
  for (const auto& [name, t] : in) {
    if (name.starts_with(mp)) m_[name.substr(mp.size())] = t.template cast<T>();
    if (name.starts_with(vp)) v_[name.substr(vp.size())] = t.template cast<T>();
  }
  step_ = static_cast<std::int64_t>(get_scalar(in, prefix + "step", 0.0));
}

template <typename T>
double clip_grad_norm(ParamTree<T>& params, double max_norm) {
  double sq = 0.0;
  for (auto& [_, g] : params.grads()) {
    for (T v : g.values()) sq += static_cast<double>(v) * static_cast<double>(v);
  }
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const T scale = static_cast<T>(max_norm / norm);
    for (auto& [_, g] : params.grads()) {
      for (T& v : g.values()) v *= scale;
    }
  }
  return norm;
}

double cosine_lr(double base, double final_fraction, double progress) {
  return base * (final_fraction + (1.0 - final_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress)));
}

template double clip_grad_norm<float>(ParamTree<float>&, double);
template double clip_grad_norm<double>(ParamTree<double>&, double);

template class Optimizer<float>;
template class Optimizer<double>;

}  // namespace lively::nn
