#include "lively/beats.hpp"

#include "lively/error.hpp"

#include <unsupported/Eigen/FFT>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <numeric>

namespace lively::metrics {

std::vector<double> onset_envelope(const audio::AudioClip& clip, const AudioBeatOptions& options) {
  require(options.window >= 2 && options.hop >= 1, Errc::BadRange, "STFT window and hop must be positive");
  const int n = static_cast<int>(clip.samples.size());
  if (n == 0) return {};
  const int frames = n <= options.window ? 1 : 1 + (n - options.window) / options.hop;
  std::vector<double> hann(static_cast<std::size_t>(options.window));
  for (int i = 0; i < options.window; ++i) {
    hann[static_cast<std::size_t>(i)] = 0.5 - 0.5 * std::cos(2.0 * std::numbers::pi * i / options.window);
  }
  Eigen::FFT<double> fft;
  std::vector<double> buf(static_cast<std::size_t>(options.window));
  std::vector<std::complex<double>> spec;
  std::vector<double> prev, mag;
  std::vector<double> flux(static_cast<std::size_t>(frames), 0.0);
  for (int f = 0; f < frames; ++f) {
    const int start = f * options.hop;
    for (int i = 0; i < options.window; ++i) {
      const int s = start + i;
      buf[static_cast<std::size_t>(i)] = s < n ? clip.samples[static_cast<std::size_t>(s)] * hann[static_cast<std::size_t>(i)] : 0.0;
    }
    fft.fwd(spec, buf);
    const std::size_t bins = static_cast<std::size_t>(options.window / 2 + 1);
    mag.resize(bins);
    for (std::size_t k = 0; k < bins; ++k) mag[k] = std::abs(spec[k]);
    if (f > 0) {
      double sum = 0.0;
      for (std::size_t k = 0; k < bins; ++k) sum += std::max(0.0, mag[k] - prev[k]);
      flux[static_cast<std::size_t>(f)] = sum;
    }
    std::swap(prev, mag);
  }
  return flux;
}

double envelope_time(int n, const AudioBeatOptions& options, int sample_rate) {
  return (static_cast<double>(n) * options.hop + options.window / 2.0) / sample_rate;
}

std::vector<double> detect_audio_beats(const audio::AudioClip& clip, const AudioBeatOptions& options) {
  const std::vector<double> flux = onset_envelope(clip, options);
  const int n = static_cast<int>(flux.size());
  if (n < 3) return {};
  const double frame_s = static_cast<double>(options.hop) / clip.sample_rate;
  const int half = std::max(1, static_cast<int>(std::lround(options.threshold_window_s / 2.0 / frame_s)));
  const double floor = options.relative_floor * *std::max_element(flux.begin(), flux.end());

  std::vector<int> candidates;
  for (int i = 1; i < n; ++i) {
    const double v = flux[static_cast<std::size_t>(i)];
    if (!(v > flux[static_cast<std::size_t>(i - 1)])) continue;
    if (i + 1 < n && v < flux[static_cast<std::size_t>(i + 1)]) continue;
    const int lo = std::max(0, i - half), hi = std::min(n - 1, i + half);
    double mean = 0.0, sq = 0.0;
    for (int k = lo; k <= hi; ++k) mean += flux[static_cast<std::size_t>(k)];
    mean /= (hi - lo + 1);
    for (int k = lo; k <= hi; ++k) sq += std::pow(flux[static_cast<std::size_t>(k)] - mean, 2);
    const double sd = std::sqrt(sq / (hi - lo + 1));
    if (v > mean + options.threshold_std * sd && v > floor) candidates.push_back(i);
  }
  // Strongest first; ties resolved by earlier frame.
  std::stable_sort(candidates.begin(), candidates.end(),
                   [&](int a, int b) { return flux[static_cast<std::size_t>(a)] > flux[static_cast<std::size_t>(b)]; });
  std::vector<double> beats;
  for (int c : candidates) {
    const double t = envelope_time(c, options, clip.sample_rate);
    const bool clear = std::none_of(beats.begin(), beats.end(), [&](double b) {
      return std::abs(b - t) < options.min_separation_s;
    });
    if (clear) beats.push_back(t);
  }
  std::sort(beats.begin(), beats.end());
  return beats;
}

std::vector<double> joint_speed(const motion::FrameMatrix& data, int dims_per_joint) {
  require(dims_per_joint >= 1 && data.cols() % dims_per_joint == 0, Errc::ShapeMismatch,
          "channel count is not a multiple of the joint dimension");
  const Eigen::Index joints = data.cols() / dims_per_joint;
  std::vector<double> v;
  for (Eigen::Index f = 0; f + 1 < data.rows(); ++f) {
    double sum = 0.0;
    for (Eigen::Index j = 0; j < joints; ++j) {
      const auto d = (data.row(f + 1).segment(j * dims_per_joint, dims_per_joint) -
                      data.row(f).segment(j * dims_per_joint, dims_per_joint))
                         .cast<double>();
      sum += d.norm();
    }
    v.push_back(joints > 0 ? sum / static_cast<double>(joints) : 0.0);
  }
  return v;
}

std::vector<double> detect_motion_beats(const motion::FrameMatrix& data, int dims_per_joint, double fps,
                                        const MotionBeatOptions& options) {
  const std::vector<double> v = joint_speed(data, dims_per_joint);
  const int n = static_cast<int>(v.size());
  if (n < 3) return {};
  const auto [mn, mx] = std::minmax_element(v.begin(), v.end());
  const double range = *mx - *mn;
  std::vector<double> beats;
  for (int f = 1; f + 1 < n; ++f) {
    const std::size_t i = static_cast<std::size_t>(f);
    if (!(v[i] < v[i - 1] && v[i] < v[i + 1])) continue;
    // Climb back to the top of the preceding descent (the sequence start counts).
    int k = f;
    while (k > 0 && v[static_cast<std::size_t>(k - 1)] >= v[static_cast<std::size_t>(k)]) --k;
    if (v[static_cast<std::size_t>(k)] - v[i] > options.drop_fraction * range) beats.push_back((f + 0.5) / fps);
  }
  return beats;
}

std::vector<double> detect_motion_beats(const motion::PoseSequence& seq, const MotionBeatOptions& options) {
  return detect_motion_beats(seq.data, seq.layout.dims_per_joint(), seq.fps, options);
}

double beat_consistency(const std::vector<double>& audio_beats, const std::vector<double>& motion_beats,
                        double sigma) {
  BeatScore s;
  s.add(audio_beats, motion_beats, sigma);
  return s.value();
}

void BeatScore::add(const std::vector<double>& a, const std::vector<double>& m, double sigma) {
  require(sigma > 0.0, Errc::BadRange, "sigma must be positive");
  audio_beats += a.size();
  if (m.empty()) return;
  for (double b : a) {
    double gap = std::numeric_limits<double>::infinity();
    for (double t : m) gap = std::min(gap, std::abs(b - t));
    sum += std::exp(-gap * gap / (2.0 * sigma * sigma));
  }
}

double BeatScore::value() const {
  if (audio_beats == 0) fail(Errc::NoAudioBeats, "beat consistency needs at least one audio beat");
  return sum / static_cast<double>(audio_beats);
}

BeatMatch match_beats(const std::vector<double>& detected, const std::vector<double>& truth, double tolerance) {
  BeatMatch m{0, detected.size(), truth.size()};
  std::vector<bool> used(detected.size(), false);
  for (double t : truth) {
    std::size_t best = detected.size();
    double best_gap = tolerance;
    for (std::size_t i = 0; i < detected.size(); ++i) {
      const double g = std::abs(detected[i] - t);
      if (!used[i] && g <= best_gap) {
        best = i;
        best_gap = g;
      }
    }
    if (best < detected.size()) {
      used[best] = true;
      ++m.matched;
    }
  }
  return m;
}

}  // namespace lively::metrics
