#include "helpers.hpp"
#include "lively/audio.hpp"
#include "lively/binary_io.hpp"

#include <cmath>
#include <numbers>

using namespace lively;
using namespace lively::audio;

namespace {

// Hand-rolled RIFF writer, independent of the library encoder.
std::vector<std::uint8_t> make_wav(int rate, int channels, int bits, int format, const std::vector<std::int16_t>& pcm) {
  io::ByteWriter w;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(pcm.size() * 2);
  w.bytes("RIFF", 4);
  w.u32(36 + data_bytes);
  w.bytes("WAVE", 4);
  w.bytes("fmt ", 4);
  w.u32(16);
  w.u16(static_cast<std::uint16_t>(format));
  w.u16(static_cast<std::uint16_t>(channels));
  w.u32(static_cast<std::uint32_t>(rate));
  w.u32(static_cast<std::uint32_t>(rate * channels * bits / 8));
  w.u16(static_cast<std::uint16_t>(channels * bits / 8));
  w.u16(static_cast<std::uint16_t>(bits));
  w.bytes("data", 4);
  w.u32(data_bytes);
  for (auto s : pcm) w.u16(static_cast<std::uint16_t>(s));
  return std::move(w.buffer());
}

}  // namespace

TEST_CASE("load_wav reads a synthesized sine") {
  TempDir dir("audio_sine");
  const double amp = 0.5;
  std::vector<std::int16_t> pcm(16000);
  for (int i = 0; i < 16000; ++i)
    pcm[i] = static_cast<std::int16_t>(std::lround(amp * 32767.0 * std::sin(2.0 * std::numbers::pi * 440.0 * i / 16000.0)));
  io::write_file(dir.path / "sine.wav", make_wav(16000, 1, 16, 1, pcm));

  const AudioClip clip = load_wav(dir.path / "sine.wav");
  CHECK(clip.sample_rate == 16000);
  REQUIRE(clip.samples.size() == 16000);
  float peak = 0.0f;
  for (float s : clip.samples) peak = std::max(peak, std::abs(s));
  CHECK(peak == doctest::Approx(amp).epsilon(1e-3));
  for (int i = 0; i < 16000; ++i) CHECK(clip.samples[i] == doctest::Approx(pcm[i] / 32768.0).epsilon(1e-9));
}

TEST_CASE("load_wav zeros and format errors") {
  const AudioClip zeros = decode_wav(make_wav(16000, 1, 16, 1, std::vector<std::int16_t>(100, 0)));
  REQUIRE(zeros.samples.size() == 100);
  for (float s : zeros.samples) CHECK(s == 0.0f);

  CHECK_ERRC(decode_wav(make_wav(16000, 2, 16, 1, std::vector<std::int16_t>(100, 0))), Errc::UnsupportedWav);
  CHECK_ERRC(decode_wav(make_wav(16000, 1, 16, 3, std::vector<std::int16_t>(100, 0))), Errc::UnsupportedWav);
  std::vector<std::uint8_t> junk(64, 0);
  CHECK_ERRC(decode_wav(junk), Errc::UnsupportedWav);
}

TEST_CASE("encode/decode round trip after quantization") {
  AudioClip clip;
  clip.sample_rate = 22050;
  for (int i = 0; i < 500; ++i) clip.samples.push_back(static_cast<float>(std::sin(0.01 * i * i)));
  quantize_pcm16(clip);
  CHECK(decode_wav(encode_wav(clip)) == clip);
}

TEST_CASE("resample_audio") {
  AudioClip clip;
  clip.sample_rate = 32000;
  clip.samples.assign(32000, 0.0f);
  for (int i = 0; i < 32000; ++i) clip.samples[i] = static_cast<float>(std::sin(i * 0.001));
  CHECK(resample_audio(clip, 32000) == clip);

  const auto half = resample_audio(clip, 16000);
  CHECK(half.sample_rate == 16000);
  CHECK(half.samples.size() == 16000);
  CHECK(std::abs(half.duration() - clip.duration()) <= 1.0 / 16000);

  AudioClip dc{44100, std::vector<float>(4410, 0.3f)};
  for (float s : resample_audio(dc, 16000).samples) CHECK(s == doctest::Approx(0.3f).epsilon(1e-6));
  CHECK_ERRC(resample_audio(dc, 0), Errc::BadRange);
}

TEST_CASE("clip_audio_span lengths and padding") {
  AudioClip audio{16000, std::vector<float>(48000, 0.25f)};
  CHECK(samples_for_frames(34, 15.0, 16000) == static_cast<int>(std::lround(34.0 / 15.0 * 16000.0)));

  const auto span = clip_audio_span(audio, {0, 34, ""});
  CHECK(span.clip.samples.size() == 36267);
  CHECK_FALSE(span.padded);

  const auto empty = clip_audio_span(audio, {5, 0, ""});
  CHECK(empty.clip.samples.empty());
  CHECK_FALSE(empty.padded);

  const auto tail = clip_audio_span(audio, {30, 34, ""});
  CHECK(tail.padded);
  REQUIRE(tail.clip.samples.size() == 36267);
  CHECK(tail.clip.samples.front() == 0.25f);
  CHECK(tail.clip.samples.back() == 0.0f);
}

TEST_CASE("consecutive spans concatenate to the source") {
  AudioClip audio{16000, {}};
  for (int i = 0; i < 16000 * 10; ++i) audio.samples.push_back(static_cast<float>(i % 977) / 977.0f);
  long cursor = 0;
  for (int start = 0; start + 34 <= 150; start += 34) {
    const auto span = clip_audio_span(audio, {start, 34, ""});
    const long offset = std::lround(start / 15.0 * 16000.0);
    // Each boundary may shift by one sample from rounding.
    CHECK(std::abs(offset - cursor) <= 1);
    for (std::size_t i = 0; i < span.clip.samples.size(); ++i)
      REQUIRE(span.clip.samples[i] == audio.samples[static_cast<std::size_t>(offset) + i]);
    cursor = offset + static_cast<long>(span.clip.samples.size());
  }
}
