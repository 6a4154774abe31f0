#pragma once

#include "lively/motion.hpp"

#include <filesystem>
#include <vector>

namespace lively::audio {

inline constexpr int kCanonicalRate = 16000;

struct AudioClip {
  int sample_rate = kCanonicalRate;
  std::vector<float> samples;  // mono, [-1, 1]

  double duration() const { return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0; }
  void validate() const;
  bool operator==(const AudioClip&) const = default;
};

struct AudioSpan {
  AudioClip clip;
  bool padded = false;  // true when the window ran past the end of the source
};

// RIFF/WAVE, PCM16, mono only.
AudioClip load_wav(const std::filesystem::path& path);
AudioClip decode_wav(const std::vector<std::uint8_t>& bytes);

// Samples are clamped to [-1, 1] and quantized to 16 bits.
void write_wav(const std::filesystem::path& path, const AudioClip& clip);
std::vector<std::uint8_t> encode_wav(const AudioClip& clip);

// Rounds every sample onto the PCM16 grid, so encode/decode is lossless afterwards.
void quantize_pcm16(AudioClip& clip);

AudioClip resample_audio(const AudioClip& clip, int target_rate = kCanonicalRate);

// Number of samples covering `frames` motion frames.
int samples_for_frames(int frames, double fps, int sample_rate);

AudioSpan clip_audio_span(const AudioClip& audio, const motion::ClipWindow& window, double fps = 15.0);

}  // namespace lively::audio
