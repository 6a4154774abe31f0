#include "lively/metrics.hpp"

#include "lively/error.hpp"
#include "lively/rng.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>

namespace lively::metrics {

Gaussian fit_gaussian(const Mat<double>& rows) {
  require(rows.rows() >= 1, Errc::EmptyBatch, "cannot fit a Gaussian to no samples");
  Gaussian g;
  g.mean = rows.colwise().mean().transpose();
  const Eigen::MatrixXd centered = rows.rowwise() - g.mean.transpose();
  const double denom = rows.rows() > 1 ? static_cast<double>(rows.rows() - 1) : 1.0;
  g.cov = centered.transpose() * centered / denom;
  return g;
}

namespace {

Eigen::MatrixXd clamped_psd(const Eigen::MatrixXd& s, double floor, Eigen::MatrixXd* sqrt_out) {
  const Eigen::MatrixXd sym = 0.5 * (s + s.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(sym);
  if (es.info() != Eigen::Success) fail(Errc::BadCovariance, "eigendecomposition failed");
  const Eigen::VectorXd lam = es.eigenvalues().cwiseMax(floor);
  if (sqrt_out) *sqrt_out = es.eigenvectors() * lam.cwiseSqrt().asDiagonal() * es.eigenvectors().transpose();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2) {
  const Eigen::Index d = mu1.size();
  if (mu2.size() != d || s1.rows() != d || s1.cols() != d || s2.rows() != d || s2.cols() != d) {
    fail(Errc::BadCovariance, "Gaussian statistics have mismatched dimensions");
  }
  if (!mu1.allFinite() || !mu2.allFinite() || !s1.allFinite() || !s2.allFinite()) {
    fail(Errc::BadCovariance, "Gaussian statistics contain non-finite values");
  }
  Eigen::MatrixXd root1;
  const Eigen::MatrixXd c1 = clamped_psd(s1, kEigenClamp, &root1);
  const Eigen::MatrixXd c2 = clamped_psd(s2, kEigenClamp, nullptr);
  const Eigen::MatrixXd inner = root1 * c2 * root1;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
  if (es.info() != Eigen::Success) fail(Errc::BadCovariance, "eigendecomposition failed");
  const double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
  const double value = (mu1 - mu2).squaredNorm() + c1.trace() + c2.trace() - 2.0 * tr_sqrt;
  return std::max(0.0, value);
}

FgdResult fgd_from_features(const Mat<double>& real, const Mat<double>& gen) {
  require(real.cols() == gen.cols(), Errc::ShapeMismatch, "feature widths differ");
  const Gaussian a = fit_gaussian(real);
  const Gaussian b = fit_gaussian(gen);
  FgdResult r;
  r.value = frechet_distance(a.mean, a.cov, b.mean, b.cov);
  r.degenerate = real.rows() <= real.cols() || gen.rows() <= gen.cols();
  return r;
}

FgdResult fgd(const std::vector<Mat<double>>& real, const std::vector<Mat<double>>& gen, const FeatureExtractor& fx) {
  return fgd_from_features(fx.embed(real), fx.embed(gen));
}

double diversity_from_features(const Mat<double>& features, int n_pairs, std::uint64_t seed) {
  const auto n = static_cast<std::uint64_t>(features.rows());
  require(n >= 2, Errc::EmptyBatch, "diversity needs at least two clips");
  require(n_pairs >= 1, Errc::BadRange, "n_pairs must be positive");
  Rng rng(seed);
  double sum = 0.0;
  for (int k = 0; k < n_pairs; ++k) {
    const auto i = rng.below(n);
    auto j = rng.below(n - 1);
    if (j >= i) ++j;
    sum += (features.row(static_cast<Eigen::Index>(i)) - features.row(static_cast<Eigen::Index>(j))).cwiseAbs().sum();
  }
  return sum / n_pairs;
}

double diversity(const std::vector<Mat<double>>& clips, const FeatureExtractor& fx, int n_pairs, std::uint64_t seed) {
  return diversity_from_features(fx.embed(clips), n_pairs, seed);
}

nlohmann::json MetricReport::to_json() const {
  return nlohmann::json{{"fgd", fgd},
                        {"bc", bc},
                        {"diversity", diversity},
                        {"n_clips", n_clips},
                        {"n_audio_beats", n_audio_beats},
                        {"seed", seed},
                        {"sigma_bc", sigma_bc},
                        {"n_pairs", n_pairs},
                        {"warnings", warnings}};
}

MetricReport MetricReport::from_json(const nlohmann::json& j) {
  MetricReport r;
  try {
    r.fgd = j.at("fgd").get<double>();
    r.bc = j.at("bc").get<double>();
    r.diversity = j.at("diversity").get<double>();
    r.n_clips = j.at("n_clips").get<std::size_t>();
    r.n_audio_beats = j.at("n_audio_beats").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.sigma_bc = j.at("sigma_bc").get<double>();
    r.n_pairs = j.at("n_pairs").get<int>();
    r.warnings = j.at("warnings").get<std::vector<std::string>>();
  } catch (const nlohmann::json::exception& e) {
    fail(Errc::BadConfig, std::string("metric report: ") + e.what());
  }
  return r;
}

}  // namespace lively::metrics
