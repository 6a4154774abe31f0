#include "helpers.hpp"
#include "lively/metrics.hpp"
#include "lively/synth.hpp"

#include <cmath>
#include <numbers>

using namespace lively;
using namespace lively::metrics;

namespace {

// Denman-Beavers iteration for the principal square root of an SPD matrix.
Eigen::MatrixXd sqrtm_db(const Eigen::MatrixXd& a) {
  Eigen::MatrixXd y = a, z = Eigen::MatrixXd::Identity(a.rows(), a.cols());
  for (int i = 0; i < 100; ++i) {
    const Eigen::MatrixXd yn = 0.5 * (y + z.inverse());
    const Eigen::MatrixXd zn = 0.5 * (z + y.inverse());
    const double change = (yn - y).norm();
    y = yn;
    z = zn;
    if (change < 1e-14 * y.norm()) break;
  }
  return y;
}

double frechet_oracle(const Eigen::VectorXd& m1, const Eigen::MatrixXd& s1, const Eigen::VectorXd& m2,
                      const Eigen::MatrixXd& s2) {
  const Eigen::MatrixXd r1 = sqrtm_db(s1);
  return (m1 - m2).squaredNorm() + (s1 + s2 - 2.0 * sqrtm_db(r1 * s2 * r1)).trace();
}

Eigen::MatrixXd random_spd(int n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.size(); ++i) a.data()[i] = rng.normal();
  return a * a.transpose() + 0.5 * Eigen::MatrixXd::Identity(n, n);
}

// Noise bursts at the given times over a quiet carrier.
audio::AudioClip pulse_train(const std::vector<double>& times, double duration, Rng& rng) {
  audio::AudioClip clip;
  const int n = static_cast<int>(duration * clip.sample_rate);
  clip.samples.assign(static_cast<std::size_t>(n), 0.0f);
  for (int i = 0; i < n; ++i) clip.samples[i] = static_cast<float>(0.01 * rng.normal());
  for (double t : times) {
    const int start = static_cast<int>(t * clip.sample_rate);
    for (int k = 0; k < 2400 && start + k < n; ++k)
      clip.samples[start + k] += static_cast<float>(0.6 * std::exp(-k / 480.0) * rng.uniform(-1, 1));
  }
  return clip;
}

FeatureExtractor untrained_extractor(std::uint64_t seed) {
  return FeatureExtractor{FeatureAutoencoder<float>(FeatureAeConfig{}, seed), PoseNorm::identity(30),
                          nn::Optimizer<float>(), 0, 0.0};
}

std::vector<Mat<double>> synthetic_clips(int n, std::uint64_t seed) {
  synth::SynthConfig sc;
  sc.n_samples = n;
  sc.seed = seed;
  std::vector<Mat<double>> clips;
  for (int i = 0; i < n; ++i) clips.push_back(synth::pose_matrix(synth::make_sample(sc, i, sc.clip_len).poses));
  return clips;
}

}  // namespace

TEST_CASE("frechet distance closed forms") {
  Rng rng(1);
  const Eigen::MatrixXd s = random_spd(4, rng);
  const Eigen::VectorXd m = Eigen::VectorXd::Random(4);
  CHECK(std::abs(frechet_distance(m, s, m, s)) < 1e-9);

  Eigen::VectorXd m1(1), m2(1);
  m1 << 0;
  m2 << 3;
  Eigen::MatrixXd v1(1, 1), v2(1, 1);
  v1 << 1;
  v2 << 4;
  CHECK(frechet_distance(m1, v1, m2, v2) == doctest::Approx(10.0).epsilon(1e-12));
}

TEST_CASE("frechet distance matches a Denman-Beavers oracle") {
  Rng rng(2);
  for (int trial = 0; trial < 20; ++trial) {
    const int n = 2 + trial % 6;
    const Eigen::MatrixXd s1 = random_spd(n, rng), s2 = random_spd(n, rng);
    Eigen::VectorXd m1(n), m2(n);
    for (int i = 0; i < n; ++i) {
      m1[i] = rng.normal();
      m2[i] = rng.normal();
    }
    CHECK(std::abs(frechet_distance(m1, s1, m2, s2) - frechet_oracle(m1, s1, m2, s2)) < 1e-6);
  }
  Eigen::MatrixXd bad = Eigen::MatrixXd::Identity(2, 2);
  bad(0, 0) = std::nan("");
  CHECK_ERRC(frechet_distance(Eigen::VectorXd::Zero(2), bad, Eigen::VectorXd::Zero(2), bad), Errc::BadCovariance);
  CHECK_ERRC(frechet_distance(Eigen::VectorXd::Zero(2), Eigen::MatrixXd::Identity(2, 2), Eigen::VectorXd::Zero(3),
                              Eigen::MatrixXd::Identity(3, 3)),
             Errc::BadCovariance);
}

TEST_CASE("fit_gaussian") {
  Mat<double> rows(3, 2);
  rows << 1, 2, 3, 6, 5, 10;
  const auto g = fit_gaussian(rows);
  CHECK(g.mean[0] == doctest::Approx(3.0));
  CHECK(g.mean[1] == doctest::Approx(6.0));
  CHECK(g.cov(0, 0) == doctest::Approx(4.0));
  CHECK(g.cov(0, 1) == doctest::Approx(8.0));
  CHECK(g.cov(1, 1) == doctest::Approx(16.0));
}

TEST_CASE("diversity") {
  CHECK(diversity_from_features(Mat<double>::Constant(5, 3, 1.5), 100, 0) == 0.0);

  // Two equal clusters, L1 distance d apart: 4 of the 6 unordered pairs cross.
  Mat<double> f(4, 2);
  f << 0, 0, 0, 0, 1.5, 2.5, 1.5, 2.5;
  double brute = 0.0;
  int pairs = 0;
  for (int i = 0; i < 4; ++i)
    for (int j = i + 1; j < 4; ++j, ++pairs) brute += (f.row(i) - f.row(j)).cwiseAbs().sum();
  brute /= pairs;
  CHECK(brute == doctest::Approx(2.0 / 3.0 * 4.0));
  CHECK(diversity_from_features(f, 200000, 3) == doctest::Approx(brute).epsilon(0.01));
  CHECK(diversity_from_features(f, 500, 7) == diversity_from_features(f, 500, 7));
  CHECK_ERRC(diversity_from_features(f.topRows(1), 10, 0), Errc::EmptyBatch);
}

TEST_CASE("beat consistency") {
  CHECK(beat_consistency({0.5, 1.0, 1.5}, {0.5, 1.0, 1.5}) == doctest::Approx(1.0));
  CHECK(beat_consistency({0.5, 1.5}, {0.4, 1.6}) == doctest::Approx(std::exp(-0.5)).epsilon(1e-12));
  CHECK(beat_consistency({0.5, 1.5}, {}) == 0.0);
  CHECK_ERRC(beat_consistency({}, {0.2}), Errc::NoAudioBeats);

  BeatScore pooled;
  pooled.add({0.5}, {0.5});
  pooled.add({0.5, 1.5}, {});
  CHECK(pooled.value() == doctest::Approx(1.0 / 3.0));
  CHECK_ERRC(BeatScore{}.value(), Errc::NoAudioBeats);
}

TEST_CASE("match_beats") {
  const auto m = match_beats({0.1, 0.5, 0.52, 2.0}, {0.12, 0.5, 1.0}, 0.067);
  CHECK(m.matched == 2);
  CHECK(m.precision() == doctest::Approx(0.5));
  CHECK(m.recall() == doctest::Approx(2.0 / 3.0));
}

TEST_CASE("audio beat detection") {
  Rng rng(4);
  std::vector<double> truth;
  for (double t = 0.3; t < 7.8; t += 0.5) truth.push_back(t);
  const auto clip = pulse_train(truth, 8.0, rng);
  const auto detected = detect_audio_beats(clip);
  const auto m = match_beats(detected, truth, 1.0 / 15.0);
  INFO("detected " << detected.size() << " truth " << truth.size());
  CHECK(m.f1() >= 0.95);

  CHECK(detect_audio_beats(audio::AudioClip{16000, std::vector<float>(32000, 0.0f)}).empty());

  audio::AudioClip impulse{16000, std::vector<float>(32000, 0.0f)};
  impulse.samples[16000] = 0.9f;
  CHECK(detect_audio_beats(impulse).size() == 1);
}

TEST_CASE("motion beat detection") {
  using motion::FrameMatrix;
  FrameMatrix line(40, 3);
  for (int f = 0; f < 40; ++f) line.row(f).setConstant(0.0625f * static_cast<float>(f));  // exact steps, constant speed
  CHECK(detect_motion_beats(line, 3, 15.0).empty());
  CHECK(detect_motion_beats(FrameMatrix(line.topRows(2)), 3, 15.0).empty());

  // Position cos(pi (f - 1/2) / P): the speed between frames 12k and 12k+1 vanishes, so beats sit at (12k + 1/2) / fps.
  const int period = 12;
  FrameMatrix stroke(60, 3);
  for (int f = 0; f < 60; ++f)
    stroke.row(f).setConstant(static_cast<float>(std::cos(std::numbers::pi * (f - 0.5) / period)));
  std::vector<double> truth;
  for (int f = period; f + 1 < 59; f += period) truth.push_back((f + 0.5) / 15.0);
  const auto found = detect_motion_beats(stroke, 3, 15.0);
  const auto m = match_beats(found, truth, 1.0 / 15.0);
  CHECK(m.matched == truth.size());
  CHECK(m.detected == truth.size());
}

TEST_CASE("fgd behaviour") {
  const auto fx = untrained_extractor(3);
  const auto real = synthetic_clips(60, 5);
  CHECK(std::abs(fgd(real, real, fx).value) < 1e-8);

  double last = 0.0;
  for (double offset : {0.25, 0.5, 1.0, 2.0}) {
    std::vector<Mat<double>> shifted;
    for (const auto& c : real) shifted.push_back(c.array() + offset);
    const double v = fgd(real, shifted, fx).value;
    CHECK(v > last);
    last = v;
  }

  const std::vector<Mat<double>> few(real.begin(), real.begin() + 10);
  const auto r = fgd(few, few, fx);
  CHECK(r.degenerate);
  CHECK(std::isfinite(r.value));
}

TEST_CASE("feature autoencoder training") {
  const auto clips = synthetic_clips(240, 6);
  AeTrainOptions opts;
  opts.epochs = 30;
  opts.seed = 1;
  FeatureExtractor fx{FeatureAutoencoder<float>(FeatureAeConfig{}, 2), PoseNorm{}, nn::Optimizer<float>(opts.optimizer), 0,
                      0.0};
  CHECK_ERRC(train_feature_autoencoder(fx, {}, opts), Errc::EmptyBatch);
  const auto history = train_feature_autoencoder(fx, clips, opts);
  REQUIRE(history.size() == 30);

  double mse = 0.0, var = 0.0;
  Eigen::RowVectorXd mean = Eigen::RowVectorXd::Zero(30 * 34);
  for (const auto& c : clips) mean += Eigen::Map<const Eigen::RowVectorXd>(c.data(), c.size());
  mean /= static_cast<double>(clips.size());
  for (const auto& c : clips) {
    const Eigen::Map<const Eigen::RowVectorXd> flat(c.data(), c.size());
    const Mat<double> rec = fx.reconstruct(c);
    mse += (rec - c).squaredNorm();
    var += (flat - mean).squaredNorm();
  }
  INFO("mse " << mse << " variance " << var);
  CHECK(mse < 0.25 * var);

  // Same seed, same bytes.
  FeatureExtractor again{FeatureAutoencoder<float>(FeatureAeConfig{}, 2), PoseNorm{}, nn::Optimizer<float>(opts.optimizer),
                         0, 0.0};
  train_feature_autoencoder(again, clips, opts);
  nn::TensorMap a, b;
  fx.save(a);
  again.save(b);
  CHECK(nn::encode_checkpoint(a) == nn::encode_checkpoint(b));
}

TEST_CASE("metric report json") {
  MetricReport r;
  r.fgd = 1.5;
  r.bc = 0.7;
  r.diversity = 3.0;
  r.n_clips = 10;
  r.warnings = {"x"};
  const auto back = MetricReport::from_json(r.to_json());
  CHECK(back.to_json() == r.to_json());
}
