#include "lively/audio.hpp"

#include "lively/binary_io.hpp"
#include "lively/error.hpp"

#include <algorithm>
#include <cmath>

namespace lively::audio {

namespace {

std::uint32_t tag(const char* s) {
  return static_cast<std::uint32_t>(s[0]) | static_cast<std::uint32_t>(s[1]) << 8 |
         static_cast<std::uint32_t>(s[2]) << 16 | static_cast<std::uint32_t>(s[3]) << 24;
}

std::int16_t to_pcm16(float v) {
  const double scaled = std::round(std::clamp(static_cast<double>(v), -1.0, 1.0) * 32768.0);
  return static_cast<std::int16_t>(std::clamp(scaled, -32768.0, 32767.0));
}

}  // namespace

void AudioClip::validate() const {
  require(sample_rate > 0, Errc::BadRange, "sample rate must be positive");
  for (float s : samples) require(std::isfinite(s), Errc::BadRange, "audio samples must be finite");
}

AudioClip decode_wav(const std::vector<std::uint8_t>& bytes) {
  io::ByteReader r(bytes);
  if (r.u32() != tag("RIFF")) fail(Errc::UnsupportedWav, "missing RIFF header");
  r.u32();
  if (r.u32() != tag("WAVE")) fail(Errc::UnsupportedWav, "missing WAVE tag");

  bool have_fmt = false;
  AudioClip clip;
  while (true) {
    const std::uint32_t id = r.u32();
    const std::uint32_t size = r.u32();
    if (id == tag("fmt ")) {
      if (size < 16) fail(Errc::UnsupportedWav, "short fmt chunk");
      const std::uint16_t format = r.u16();
      const std::uint16_t channels = r.u16();
      const std::uint32_t rate = r.u32();
      r.u32();
      r.u16();
      const std::uint16_t bits = r.u16();
      std::vector<std::uint8_t> skip(size - 16 + (size & 1));
      if (!skip.empty()) r.bytes(skip.data(), skip.size());
      if (format != 1 || bits != 16) fail(Errc::UnsupportedWav, "only PCM16 is supported");
      if (channels != 1) fail(Errc::UnsupportedWav, "only mono audio is supported");
      require(rate > 0, Errc::UnsupportedWav, "sample rate must be positive");
      clip.sample_rate = static_cast<int>(rate);
      have_fmt = true;
    } else if (id == tag("data")) {
      if (!have_fmt) fail(Errc::UnsupportedWav, "data chunk before fmt chunk");
      if (size % 2 != 0) fail(Errc::UnsupportedWav, "odd data chunk size");
      r.need(size);
      clip.samples.resize(size / 2);
      for (auto& s : clip.samples) s = static_cast<float>(static_cast<std::int16_t>(r.u16())) / 32768.0f;
      return clip;
    } else {
      std::vector<std::uint8_t> skip(size + (size & 1));
      if (!skip.empty()) r.bytes(skip.data(), skip.size());
    }
  }
}

AudioClip load_wav(const std::filesystem::path& path) { return decode_wav(io::read_file(path)); }

std::vector<std::uint8_t> encode_wav(const AudioClip& clip) {
  clip.validate();
  const auto data_bytes = static_cast<std::uint32_t>(clip.samples.size() * 2);
  io::ByteWriter w;
  w.bytes("RIFF", 4);
  w.u32(36 + data_bytes);
  w.bytes("WAVE", 4);
  w.bytes("fmt ", 4);
  w.u32(16);
  w.u16(1);
  w.u16(1);
  w.u32(static_cast<std::uint32_t>(clip.sample_rate));
  w.u32(static_cast<std::uint32_t>(clip.sample_rate) * 2);
  w.u16(2);
  w.u16(16);
  w.bytes("data", 4);
  w.u32(data_bytes);
  for (float s : clip.samples) w.u16(static_cast<std::uint16_t>(to_pcm16(s)));
  return std::move(w.buffer());
}

void write_wav(const std::filesystem::path& path, const AudioClip& clip) { io::write_file(path, encode_wav(clip)); }

void quantize_pcm16(AudioClip& clip) {
  for (auto& s : clip.samples) s = static_cast<float>(to_pcm16(s)) / 32768.0f;
}

AudioClip resample_audio(const AudioClip& clip, int target_rate) {
  require(target_rate > 0, Errc::BadRange, "target rate must be positive");
  if (target_rate == clip.sample_rate) return clip;
  const std::size_t n = clip.samples.size();
  const auto out_n = static_cast<std::size_t>(std::llround(static_cast<double>(n) * target_rate / clip.sample_rate));
  AudioClip out;
  out.sample_rate = target_rate;
  out.samples.resize(out_n);
  if (n == 0) return out;
  const double step = static_cast<double>(clip.sample_rate) / target_rate;
  for (std::size_t i = 0; i < out_n; ++i) {
    const double pos = std::min(i * step, static_cast<double>(n - 1));
    const auto lo = static_cast<std::size_t>(pos);
    const std::size_t hi = std::min(lo + 1, n - 1);
    const double frac = pos - static_cast<double>(lo);
    out.samples[i] = static_cast<float>(clip.samples[lo] + (clip.samples[hi] - clip.samples[lo]) * frac);
  }
  return out;
}

int samples_for_frames(int frames, double fps, int sample_rate) {
  return static_cast<int>(std::lround(frames / fps * sample_rate));
}

AudioSpan clip_audio_span(const AudioClip& audio, const motion::ClipWindow& window, double fps) {
  require(fps > 0.0, Errc::BadRange, "fps must be positive");
  require(window.start_frame >= 0 && window.length >= 0, Errc::BadRange, "clip window must be non-negative");
  const long start = std::lround(window.start_frame / fps * audio.sample_rate);
  const int count = samples_for_frames(window.length, fps, audio.sample_rate);
  AudioSpan span;
  span.clip.sample_rate = audio.sample_rate;
  span.clip.samples.assign(static_cast<std::size_t>(count), 0.0f);
  const long available = static_cast<long>(audio.samples.size()) - start;
  const long copy = std::clamp<long>(available, 0, count);
  if (copy > 0) {
    std::copy_n(audio.samples.begin() + start, copy, span.clip.samples.begin());
  }
  span.padded = copy < count;
  return span;
}

}  // namespace lively::audio
