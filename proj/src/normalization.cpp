#include "lively/normalization.hpp"

#include "lively/error.hpp"

namespace lively {

PoseNorm PoseNorm::fit(const std::vector<nn::Mat<double>>& clips, double std_floor) {
  if (clips.empty()) fail(Errc::EmptyBatch, "cannot fit normalization on no clips");
  const Eigen::Index P = clips.front().cols();
  Eigen::VectorXd sum = Eigen::VectorXd::Zero(P), sq = Eigen::VectorXd::Zero(P);
  double n = 0;
  for (const auto& c : clips) {
    require(c.cols() == P, Errc::ShapeMismatch, "clips differ in channel count");
    sum += c.colwise().sum().transpose();
    n += static_cast<double>(c.rows());
  }
  PoseNorm out;
  out.mean = sum / n;
  for (const auto& c : clips) sq += (c.rowwise() - out.mean.transpose()).array().square().colwise().sum().matrix().transpose();
  out.std = (sq / n).cwiseSqrt().cwiseMax(std_floor);
  // Checkpoints store float32; rounding here keeps a resumed run on the same normalization.
  out.mean = out.mean.cast<float>().cast<double>();
  out.std = out.std.cast<float>().cast<double>();
  return out;
}

PoseNorm PoseNorm::identity(int dims) {
  return {Eigen::VectorXd::Zero(dims), Eigen::VectorXd::Ones(dims)};
}

nn::Mat<double> PoseNorm::apply(const nn::Mat<double>& x) const {
  require(x.cols() == mean.size(), Errc::ShapeMismatch, "normalization width mismatch");
  return (x.rowwise() - mean.transpose()).array().rowwise() / std.transpose().array();
}

nn::Mat<double> PoseNorm::invert(const nn::Mat<double>& x) const {
  require(x.cols() == mean.size(), Errc::ShapeMismatch, "normalization width mismatch");
  return (x.array().rowwise() * std.transpose().array()).rowwise() + mean.transpose().array();
}

void PoseNorm::save(const std::string& prefix, nn::TensorMap& out) const {
  const auto n = static_cast<std::size_t>(mean.size());
  nn::Tensor<float> m({n}), s({n});
  for (std::size_t i = 0; i < n; ++i) {
    m[i] = static_cast<float>(mean[static_cast<Eigen::Index>(i)]);
    s[i] = static_cast<float>(std[static_cast<Eigen::Index>(i)]);
  }
  out[prefix + "mean"] = std::move(m);
  out[prefix + "std"] = std::move(s);
}

PoseNorm PoseNorm::load(const std::string& prefix, const nn::TensorMap& in) {
  auto get = [&](const std::string& name) -> const nn::Tensor<float>& {
    auto it = in.find(prefix + name);
    if (it == in.end()) fail(Errc::BadIndex, "checkpoint lacks " + prefix + name);
    return it->second;
  };
  const auto& m = get("mean");
  const auto& s = get("std");
  require(m.size() == s.size(), Errc::ShapeMismatch, "normalization tensors differ in size");
  PoseNorm out;
  out.mean.resize(static_cast<Eigen::Index>(m.size()));
  out.std.resize(static_cast<Eigen::Index>(s.size()));
  for (std::size_t i = 0; i < m.size(); ++i) {
    out.mean[static_cast<Eigen::Index>(i)] = m[i];
    out.std[static_cast<Eigen::Index>(i)] = s[i];
  }
  return out;
}

}  // namespace lively
