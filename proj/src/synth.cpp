#include "lively/synth.hpp"

#include "json_fields.hpp"
#include "lively/error.hpp"
#include "lively/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numbers>

namespace lively::synth {

namespace {

constexpr int kJoints = 10;
constexpr int kDims = 3;
constexpr int kChannels = kJoints * kDims;
constexpr int kKnots = 5;
constexpr double kPulseDecay = 0.03;
constexpr double kPulseLength = 0.15;
constexpr double kCarrierHz = 220.0;

constexpr std::uint64_t kMotifTag = 0x6d6f746966ULL;
constexpr std::uint64_t kSpeakerTag = 0x7370656b72ULL;
constexpr std::uint64_t kSplitTag = 0x73706c6974ULL;
constexpr std::uint64_t kTextTag = 0x74657874ULL;

constexpr double pi = std::numbers::pi;

using Vec = Eigen::Matrix<double, 1, kChannels>;

Rng stream(std::uint64_t seed, std::uint64_t tag, std::uint64_t index) { return Rng(seed ^ Rng::mix(tag)).fork(index); }

Vec canonical_posture() {
  const double dirs[kJoints][kDims] = {
      {0, 1, 0},        {0, 1, 0},       {0, 1, 0},         {0, 1, 0.1},      {-1, 0, 0},
      {-0.2, -1, 0.1},  {0, -0.6, 0.8},  {1, 0, 0},         {0.2, -1, 0.1},   {0, -0.6, 0.8},
  };
  Vec v;
  for (int j = 0; j < kJoints; ++j)
    for (int d = 0; d < kDims; ++d) v(j * kDims + d) = dirs[j][d];
  return v;
}

// Each joint's triple projected back onto the unit sphere.
Vec unit_joints(const Vec& raw, const Vec& fallback) {
  Vec out = raw;
  for (int j = 0; j < kJoints; ++j) {
    auto seg = out.segment<kDims>(j * kDims);
    const double n = seg.norm();
    if (n < 1e-6)
      seg = fallback.segment<kDims>(j * kDims).normalized();
    else
      seg /= n;
  }
  return out;
}

struct Speaker {
  Vec offset = Vec::Zero();
  Vec stroke = Vec::Zero();
};

Speaker make_speaker(const SynthConfig& c, int id) {
  Rng rng = stream(c.seed, kSpeakerTag, static_cast<std::uint64_t>(id));
  Speaker s;
  for (int ch = kDims; ch < kChannels; ++ch) s.offset(ch) = c.speaker_offset * rng.normal();
  // Strokes move the head and both arms.
  for (int ch = 3 * kDims; ch < kChannels; ++ch) s.stroke(ch) = rng.normal();
  const double rms = std::sqrt(s.stroke.squaredNorm() / (kChannels - 3 * kDims));
  s.stroke /= rms;
  return s;
}

// Closed Catmull-Rom spline through kKnots random control points per arm channel.
struct Motif {
  Eigen::Matrix<double, kKnots, kChannels> knots = Eigen::Matrix<double, kKnots, kChannels>::Zero();
  double span = 1.0;

  Vec at(double time) const {
    double u = std::fmod(time / span, 1.0);
    if (u < 0) u += 1.0;
    const double x = u * kKnots;
    const int i1 = static_cast<int>(std::floor(x)) % kKnots;
    const double f = x - std::floor(x);
    const int i0 = (i1 + kKnots - 1) % kKnots, i2 = (i1 + 1) % kKnots, i3 = (i1 + 2) % kKnots;
    const double f2 = f * f, f3 = f2 * f;
    return 0.5 * ((2.0 * knots.row(i1)) + (-knots.row(i0) + knots.row(i2)) * f +
                  (2.0 * knots.row(i0) - 5.0 * knots.row(i1) + 4.0 * knots.row(i2) - knots.row(i3)) * f2 +
                  (-knots.row(i0) + 3.0 * knots.row(i1) - 3.0 * knots.row(i2) + knots.row(i3)) * f3);
  }
};

Motif make_motif(const SynthConfig& c, int id) {
  Rng rng = stream(c.seed, kMotifTag, static_cast<std::uint64_t>(id));
  Motif m;
  m.span = c.clip_len / c.fps;
  for (int k = 0; k < kKnots; ++k)
    for (int ch = 4 * kDims; ch < kChannels; ++ch) m.knots(k, ch) = c.motif_amplitude * rng.normal();
  return m;
}

// Beat grid: phase drawn so no in-clip beat sits within edge_margin of either end.
std::vector<double> draw_beats(const SynthConfig& c, double period, double duration, Rng& rng) {
  double phase = 0.0;
  auto clear_of_edges = [&](double ph) {
    if (ph < c.edge_margin) return false;
    for (double b = ph; b <= duration; b += period)
      if (b > duration - c.edge_margin) return false;
    return true;
  };
  for (int attempt = 0; attempt < 1000; ++attempt) {
    phase = rng.uniform(0.0, period);
    if (clear_of_edges(phase)) break;
  }
  std::vector<double> grid;
  for (double b = phase - period; b <= duration + period; b += period) grid.push_back(b);
  return grid;
}

std::string filler_token(int k) { return "w" + std::to_string(k); }

}  // namespace

std::string motif_token(int m) { return "motif" + std::to_string(m); }

void SynthConfig::validate() const {
  require(n_speakers >= 1, Errc::BadConfig, "n_speakers must be >= 1");
  require(n_samples >= 0, Errc::BadConfig, "n_samples must be >= 0");
  require(clip_len >= 4, Errc::BadConfig, "clip_len must be >= 4");
  require(fps > 0 && sample_rate > 0, Errc::BadConfig, "fps and sample_rate must be positive");
  require(period_min >= 0.3 && period_max <= 1.2 && period_min <= period_max, Errc::BadConfig,
          "beat periods must lie in [0.3, 1.2] s");
  require(edge_margin >= 0 && 2 * edge_margin < clip_len / fps, Errc::BadConfig, "edge_margin too large");
  require(n_motifs >= 2, Errc::BadConfig, "need at least two motifs");
  require(n_fillers >= 1 && min_fillers >= 0 && max_fillers >= min_fillers, Errc::BadConfig, "bad filler counts");
  require(p_two_motifs >= 0 && p_two_motifs <= 1 && p_amplitude >= 0 && p_amplitude <= 1, Errc::BadConfig,
          "probabilities must lie in [0, 1]");
  require(amplitude_gain > 0 && filler_weight >= 0, Errc::BadConfig, "gains must be non-negative");
  require(!amplitude_token.empty() && text::tokenize(amplitude_token).size() == 1, Errc::BadConfig,
          "amplitude_token must be a single token");
  require(amplitude_token.rfind("w", 0) != 0 && amplitude_token.rfind("motif", 0) != 0, Errc::BadConfig,
          "amplitude_token collides with the filler or motif vocabulary");
  require(audio_noise >= 0 && carrier_amplitude >= 0 && pulse_amplitude >= 0, Errc::BadConfig,
          "audio levels must be non-negative");
  require(val_fraction >= 0 && val_fraction < 1, Errc::BadConfig, "val_fraction must lie in [0, 1)");
}

nlohmann::json SynthConfig::to_json() const {
  return {
      {"n_speakers", n_speakers},         {"n_samples", n_samples},
      {"clip_len", clip_len},             {"fps", fps},
      {"sample_rate", sample_rate},       {"period_min", period_min},
      {"period_max", period_max},         {"edge_margin", edge_margin},
      {"n_motifs", n_motifs},             {"n_fillers", n_fillers},
      {"min_fillers", min_fillers},       {"max_fillers", max_fillers},
      {"p_two_motifs", p_two_motifs},     {"p_amplitude", p_amplitude},
      {"amplitude_gain", amplitude_gain}, {"amplitude_token", amplitude_token},
      {"filler_weight", filler_weight},   {"stroke_amplitude", stroke_amplitude},
      {"motif_amplitude", motif_amplitude}, {"speaker_offset", speaker_offset},
      {"carrier_amplitude", carrier_amplitude}, {"pulse_amplitude", pulse_amplitude},
      {"audio_noise", audio_noise},       {"val_fraction", val_fraction},
      {"seed", seed},
  };
}

SynthConfig SynthConfig::from_json(const nlohmann::json& j) {
  SynthConfig c;
  detail::FieldReader r(j, "data");
  r.get("n_speakers", c.n_speakers);
  r.get("n_samples", c.n_samples);
  r.get("clip_len", c.clip_len);
  r.get("fps", c.fps);
  r.get("sample_rate", c.sample_rate);
  r.get("period_min", c.period_min);
  r.get("period_max", c.period_max);
  r.get("edge_margin", c.edge_margin);
  r.get("n_motifs", c.n_motifs);
  r.get("n_fillers", c.n_fillers);
  r.get("min_fillers", c.min_fillers);
  r.get("max_fillers", c.max_fillers);
  r.get("p_two_motifs", c.p_two_motifs);
  r.get("p_amplitude", c.p_amplitude);
  r.get("amplitude_gain", c.amplitude_gain);
  r.get("amplitude_token", c.amplitude_token);
  r.get("filler_weight", c.filler_weight);
  r.get("stroke_amplitude", c.stroke_amplitude);
  r.get("motif_amplitude", c.motif_amplitude);
  r.get("speaker_offset", c.speaker_offset);
  r.get("carrier_amplitude", c.carrier_amplitude);
  r.get("pulse_amplitude", c.pulse_amplitude);
  r.get("audio_noise", c.audio_noise);
  r.get("val_fraction", c.val_fraction);
  r.get("seed", c.seed);
  r.finish();
  c.validate();
  return c;
}

SpeechSample make_sample(const SynthConfig& c, std::uint64_t index, int frames) {
  c.validate();
  require(frames >= 2, Errc::BadRange, "sample needs at least two frames");
  Rng rng = Rng(c.seed).fork(index);
  const double duration = frames / c.fps;

  SpeechSample s;
  char id[32];
  std::snprintf(id, sizeof id, "s%05llu", static_cast<unsigned long long>(index));
  s.id = id;
  s.speaker = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_speakers)));
  const double period = rng.uniform(c.period_min, c.period_max);
  const std::vector<double> grid = draw_beats(c, period, duration, rng);
  std::vector<double> extremes(grid.size());
  for (std::size_t k = 0; k < grid.size(); ++k)
    extremes[k] = ((k % 2 == 0) ? 1.0 : -1.0) * c.stroke_amplitude * rng.uniform(0.7, 1.0);
  for (double b : grid)
    if (b >= 0.0 && b <= duration) s.beats.push_back(b);

  // Script.
  s.motifs.push_back(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_motifs))));
  if (rng.uniform() < c.p_two_motifs) {
    int second = static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_motifs - 1)));
    if (second >= s.motifs[0]) ++second;
    s.motifs.push_back(second);
  }
  s.amplified = rng.uniform() < c.p_amplitude;
  std::vector<std::string> tokens;
  const int n_fill = c.min_fillers + static_cast<int>(rng.below(static_cast<std::uint64_t>(c.max_fillers - c.min_fillers + 1)));
  for (int k = 0; k < n_fill; ++k) tokens.push_back(filler_token(static_cast<int>(rng.below(static_cast<std::uint64_t>(c.n_fillers)))));
  for (int m : s.motifs) tokens.push_back(motif_token(m));
  if (s.amplified) tokens.push_back(c.amplitude_token);
  for (std::size_t i = tokens.size(); i > 1; --i) std::swap(tokens[i - 1], tokens[rng.below(i)]);
  for (std::size_t i = 0; i < tokens.size(); ++i) s.script += (i ? " " : "") + tokens[i];
  const Eigen::VectorXd emb = make_text_provider(c).embed(s.script);
  s.text_embedding.assign(emb.data(), emb.data() + emb.size());

  // Gestures.
  const Vec base = canonical_posture();
  const Speaker spk = make_speaker(c, s.speaker);
  std::vector<Motif> motifs;
  for (int m : s.motifs) motifs.push_back(make_motif(c, m));
  const double gain = (s.amplified ? c.amplitude_gain : 1.0) / static_cast<double>(motifs.size());

  motion::FrameMatrix data(frames, kChannels);
  std::size_t k = 0;
  for (int f = 0; f < frames; ++f) {
    const double t = f / c.fps;
    while (k + 2 < grid.size() && grid[k + 1] <= t) ++k;
    const double u = (t - grid[k]) / period;
    const double ease = 0.5 * (1.0 - std::cos(pi * u));
    const double stroke = extremes[k] + (extremes[k + 1] - extremes[k]) * ease;
    // Warped motif clock: its derivative vanishes at every beat as well.
    const double w = grid[k] + period * (u - std::sin(2.0 * pi * u) / (2.0 * pi));
    Vec raw = base + spk.offset + stroke * spk.stroke;
    for (const auto& m : motifs) raw += gain * m.at(w);
    data.row(f) = unit_joints(raw, base).cast<float>();
  }
  s.poses = motion::PoseSequence(c.fps, motion::JointLayout::upper_body(), std::move(data));

  // Audio: carrier, decaying noise bursts at the beats, background noise.
  const int n = audio::samples_for_frames(frames, c.fps, c.sample_rate);
  std::vector<double> wave(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) wave[i] = c.carrier_amplitude * std::sin(2.0 * pi * kCarrierHz * i / c.sample_rate);
  for (double b : grid) {
    const double amp = c.pulse_amplitude * rng.uniform(0.8, 1.0);
    const int first = std::max(0, static_cast<int>(std::ceil(b * c.sample_rate)));
    const int last = std::min(n, static_cast<int>(std::ceil((b + kPulseLength) * c.sample_rate)));
    for (int i = first; i < last; ++i) {
      const double dt = i / static_cast<double>(c.sample_rate) - b;
      wave[i] += amp * std::exp(-dt / kPulseDecay) * rng.normal();
    }
  }
  s.audio.sample_rate = c.sample_rate;
  s.audio.samples.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double v = wave[i] + c.audio_noise * rng.normal();
    s.audio.samples[i] = static_cast<float>(std::clamp(v, -1.0, 1.0));
  }
  audio::quantize_pcm16(s.audio);
  return s;
}

Corpus make_corpus(const SynthConfig& config) {
  config.validate();
  Corpus corpus;
  corpus.config = config;
  const int n = config.n_samples;
  std::vector<int> order(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) order[i] = i;
  Rng rng = stream(config.seed, kSplitTag, 0);
  for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
  const int n_val = static_cast<int>(std::lround(n * config.val_fraction));
  std::vector<bool> is_val(static_cast<std::size_t>(n), false);
  for (int i = 0; i < n_val; ++i) is_val[order[i]] = true;
  for (int i = 0; i < n; ++i) {
    SpeechSample s = make_sample(config, static_cast<std::uint64_t>(i), config.clip_len);
    (is_val[i] ? corpus.val : corpus.train).push_back(std::move(s));
  }
  return corpus;
}

text::CodebookProvider make_text_provider(const SynthConfig& config) {
  text::CodebookProvider provider(config.seed ^ Rng::mix(kTextTag));
  provider.set_prefix_weight("w", config.filler_weight);
  return provider;
}

MotifCodebook make_motif_codebook(const SynthConfig& config) {
  config.validate();
  const Vec base = canonical_posture();
  MotifCodebook book;
  for (int m = 0; m < config.n_motifs; ++m) {
    const Motif motif = make_motif(config, m);
    Mat<double> t(config.clip_len, kChannels);
    for (int f = 0; f < config.clip_len; ++f) t.row(f) = unit_joints(base + motif.at(f / config.fps), base);
    book.templates.push_back(std::move(t));
  }
  return book;
}

int motif_recover(const Mat<double>& clip, const MotifCodebook& codebook) {
  require(!codebook.templates.empty(), Errc::EmptyBatch, "empty motif codebook");
  const Mat<double> centred = clip.rowwise() - clip.colwise().mean();
  int best = -1;
  double best_d = 0.0;
  for (std::size_t m = 0; m < codebook.templates.size(); ++m) {
    const Mat<double>& t = codebook.templates[m];
    require(t.rows() == clip.rows() && t.cols() == clip.cols(), Errc::ShapeMismatch, "clip and template shapes differ");
    const double d = (centred - (t.rowwise() - t.colwise().mean())).squaredNorm() / static_cast<double>(t.size());
    if (best < 0 || d < best_d) {
      best = static_cast<int>(m);
      best_d = d;
    }
  }
  return best;
}

Mat<double> pose_matrix(const motion::PoseSequence& seq) { return seq.data.cast<double>(); }

motion::PoseSequence pose_sequence(const Mat<double>& m, double fps) {
  return motion::PoseSequence(fps, motion::JointLayout::upper_body(), m.cast<float>());
}

}  // namespace lively::synth
