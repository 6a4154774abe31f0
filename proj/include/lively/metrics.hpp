#pragma once

#include "lively/beats.hpp"
#include "lively/feature_ae.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lively::metrics {

inline constexpr double kEigenClamp = 1e-10;

struct Gaussian {
  Eigen::VectorXd mean;
  Eigen::MatrixXd cov;
};

// Sample mean and (N-1)-normalized covariance of the rows. One row gives a zero covariance.
Gaussian fit_gaussian(const Mat<double>& rows);

// |mu1 - mu2|^2 + Tr(S1 + S2 - 2 (S1^1/2 S2 S1^1/2)^1/2), with both covariances
// symmetrized and their eigenvalues clamped at 1e-10. Throws BadCovariance on
// non-finite or mismatched inputs.
double frechet_distance(const Eigen::VectorXd& mu1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& mu2,
                        const Eigen::MatrixXd& s2);

struct FgdResult {
  double value = 0.0;
  // Fewer clips than latent dimensions: the covariance is rank-deficient and clamping dominates.
  bool degenerate = false;
};

FgdResult fgd_from_features(const Mat<double>& real, const Mat<double>& gen);
FgdResult fgd(const std::vector<Mat<double>>& real, const std::vector<Mat<double>>& gen, const FeatureExtractor& fx);

// Mean L1 distance over n_pairs seeded random pairs of distinct rows. Needs at least two rows.
double diversity_from_features(const Mat<double>& features, int n_pairs = 500, std::uint64_t seed = 0);
double diversity(const std::vector<Mat<double>>& clips, const FeatureExtractor& fx, int n_pairs = 500,
                 std::uint64_t seed = 0);

struct MetricReport {
  double fgd = 0.0;
  double bc = 0.0;
  double diversity = 0.0;
  std::size_t n_clips = 0;
  std::size_t n_audio_beats = 0;
  std::uint64_t seed = 0;
  double sigma_bc = kBeatSigma;
  int n_pairs = 500;
  std::vector<std::string> warnings;

  nlohmann::json to_json() const;
  static MetricReport from_json(const nlohmann::json& j);
};

}  // namespace lively::metrics
