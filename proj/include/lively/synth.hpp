#pragma once

#include "lively/audio.hpp"
#include "lively/motion.hpp"
#include "lively/nn/tensor.hpp"
#include "lively/text_embedding.hpp"

#include <json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace lively::synth {

using nn::Mat;

struct SynthConfig {
  int n_speakers = 4;
  int n_samples = 2222;  // 2000 train + 222 val
  int clip_len = 34;
  double fps = 15.0;
  int sample_rate = 16000;
  double period_min = 0.6;
  double period_max = 1.1;
  // No beat lands closer than this to either clip edge, where speed minima are unobservable.
  double edge_margin = 0.1;
  int n_motifs = 8;
  int n_fillers = 24;
  int min_fillers = 2;
  int max_fillers = 5;
  double p_two_motifs = 0.1;
  double p_amplitude = 0.25;
  double amplitude_gain = 1.6;
  std::string amplitude_token = "emphatic";
  double filler_weight = 0.35;
  double stroke_amplitude = 0.45;
  double motif_amplitude = 0.55;
  double speaker_offset = 0.25;
  double carrier_amplitude = 0.1;
  double pulse_amplitude = 0.6;
  double audio_noise = 0.01;
  double val_fraction = 0.1;
  std::uint64_t seed = 0;

  // Throws BadConfig.
  void validate() const;
  int pose_dims() const { return 30; }

  nlohmann::json to_json() const;
  // Missing keys keep their defaults; unknown keys throw BadConfig.
  static SynthConfig from_json(const nlohmann::json& j);
};

struct SpeechSample {
  std::string id;
  audio::AudioClip audio;
  std::string script;
  std::vector<float> text_embedding;  // kEmbeddingDim entries
  motion::PoseSequence poses;
  int speaker = 0;
  std::vector<double> beats;  // seconds, inside the clip
  std::vector<int> motifs;
  bool amplified = false;

  std::vector<std::string> tokens() const { return text::tokenize(script); }
  bool operator==(const SpeechSample&) const = default;
};

struct Corpus {
  SynthConfig config;
  std::vector<SpeechSample> train;
  std::vector<SpeechSample> val;
};

// Pure function of the config; sample i draws from Rng(seed).fork(i).
Corpus make_corpus(const SynthConfig& config);

// One sample of arbitrary length (frames), drawn from stream `index`.
SpeechSample make_sample(const SynthConfig& config, std::uint64_t index, int frames);

// Script token vocabulary weights: fillers weigh filler_weight, everything else 1.
text::CodebookProvider make_text_provider(const SynthConfig& config);

// Motif templates rendered on the canonical posture without strokes or time warp.
struct MotifCodebook {
  std::vector<Mat<double>> templates;  // [clip_len x 30]
};

MotifCodebook make_motif_codebook(const SynthConfig& config);

// argmin over motifs of the mean squared distance after removing each clip's mean
// posture. Ties go to the lowest id.
int motif_recover(const Mat<double>& clip, const MotifCodebook& codebook);

std::string motif_token(int m);

Mat<double> pose_matrix(const motion::PoseSequence& seq);
motion::PoseSequence pose_sequence(const Mat<double>& m, double fps = 15.0);

}  // namespace lively::synth
