#pragma once

#include "lively/audio.hpp"
#include "lively/motion.hpp"

#include <vector>

namespace lively::metrics {

struct AudioBeatOptions {
  int window = 512;
  int hop = 256;
  double threshold_std = 1.5;
  double threshold_window_s = 1.0;  // centered
  double min_separation_s = 0.2;
  // Peaks must also exceed this fraction of the clip's largest flux value,
  // which keeps noise-only stretches between sparse onsets quiet.
  double relative_floor = 0.1;
};

// Half-wave rectified spectral flux per STFT frame; flux[0] = 0.
std::vector<double> onset_envelope(const audio::AudioClip& clip, const AudioBeatOptions& options = {});
// Centre time of STFT frame n.
double envelope_time(int n, const AudioBeatOptions& options, int sample_rate);

std::vector<double> detect_audio_beats(const audio::AudioClip& clip, const AudioBeatOptions& options = {});

struct MotionBeatOptions {
  double drop_fraction = 0.1;
};

// v_f = mean over joints of |x_{f+1,j} - x_{f,j}|, f = 0 .. F-2.
std::vector<double> joint_speed(const motion::FrameMatrix& data, int dims_per_joint);

// Strict local minima of joint speed whose drop from the preceding local maximum
// exceeds drop_fraction of the speed range. Times at (f + 0.5) / fps.
std::vector<double> detect_motion_beats(const motion::FrameMatrix& data, int dims_per_joint, double fps,
                                        const MotionBeatOptions& options = {});
std::vector<double> detect_motion_beats(const motion::PoseSequence& seq, const MotionBeatOptions& options = {});

inline constexpr double kBeatSigma = 0.1;

// Mean over audio beats of exp(-gap^2 / 2 sigma^2) with gap to the nearest motion beat.
// 0 when there are no motion beats; throws NoAudioBeats when audio_beats is empty.
double beat_consistency(const std::vector<double>& audio_beats, const std::vector<double>& motion_beats,
                        double sigma = kBeatSigma);

// Sum form for pooling over many clips.
struct BeatScore {
  double sum = 0.0;
  std::size_t audio_beats = 0;

  void add(const std::vector<double>& audio_beats, const std::vector<double>& motion_beats,
           double sigma = kBeatSigma);
  // Throws NoAudioBeats when nothing was pooled.
  double value() const;
};

// One-to-one greedy matching within tolerance.
struct BeatMatch {
  std::size_t matched = 0;
  std::size_t detected = 0;
  std::size_t truth = 0;

  double precision() const { return detected ? static_cast<double>(matched) / detected : 0.0; }
  double recall() const { return truth ? static_cast<double>(matched) / truth : 0.0; }
  double f1() const {
    const double d = static_cast<double>(detected + truth);
    return d > 0 ? 2.0 * static_cast<double>(matched) / d : 1.0;
  }
  BeatMatch& operator+=(const BeatMatch& o) {
    matched += o.matched;
    detected += o.detected;
    truth += o.truth;
    return *this;
  }
};

BeatMatch match_beats(const std::vector<double>& detected, const std::vector<double>& truth, double tolerance);

}  // namespace lively::metrics
