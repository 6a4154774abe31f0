#include "lively/beats.hpp"
#include "lively/config.hpp"
#include "lively/corpus_io.hpp"
#include "lively/error.hpp"
#include "lively/metrics.hpp"
#include "lively/nn/checkpoint.hpp"
#include "lively/render.hpp"

#include <CLI11.hpp>
#include <Eigen/Core>

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>

namespace fs = std::filesystem;
using namespace lively;

namespace {

// Exit code 2: the invocation itself is wrong (paths, flags, config).
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::optional<fs::path> config;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;

  RunConfig load() const {
    RunConfig c = load_run_config(config, overrides);
    if (seed) c.seed = seed;
    return c;
  }
};

void add_common(CLI::App* cmd, Common& common) {
  cmd->add_option("--config", common.config, "run config JSON")->check(CLI::ExistingFile);
  cmd->add_option("--set", common.overrides, "dotted override, e.g. rag.latent_dim=128");
  cmd->add_option("--seed", common.seed, "run seed (overrides the config)");
}

fs::path resolve_set(const fs::path& dir) {
  if (fs::exists(dir / "manifest.json")) return dir;
  if (fs::exists(dir / "train" / "manifest.json")) return dir / "train";
  throw UsageError("no corpus manifest under " + dir.string());
}

nn::TensorMap load_ckpt(const fs::path& path) {
  if (!fs::exists(path)) throw UsageError("missing checkpoint " + path.string());
  return nn::load_checkpoint(path);
}

int ckpt_kind(const nn::TensorMap& t) { return static_cast<int>(nn::get_scalar(t, "meta.kind", 0.0)); }

class Csv {
 public:
  Csv(const fs::path& path, const std::string& header, bool append) {
    const bool fresh = !append || !fs::exists(path);
    out_.open(path, fresh ? std::ios::trunc : std::ios::app);
    if (!out_) fail(Errc::Io, "cannot write " + path.string());
    if (fresh) out_ << header << '\n';
  }
  template <class... Ts>
  void row(int epoch, Ts... values) {
    out_ << epoch;
    ((out_ << ',' << fmt(values)), ...);
    out_ << '\n';
    out_.flush();
  }

 private:
  static std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.9g", v);
    return buf;
  }
  std::ofstream out_;
};

fs::path history_path(const fs::path& ckpt) { return fs::path(ckpt.string() + ".loss.csv"); }

// A resumed run continues the history of the checkpoint it started from.
Csv open_history(const fs::path& out, const std::optional<fs::path>& resume, const std::string& header) {
  if (resume) {
    const fs::path from = history_path(*resume), to = history_path(out);
    std::error_code ec;
    if (fs::exists(from) && !fs::equivalent(from, to, ec)) fs::copy_file(from, to, fs::copy_options::overwrite_existing);
  }
  return Csv(history_path(out), header, resume.has_value());
}

// ---------------------------------------------------------------- synth-data

int cmd_synth(const Common& common, const fs::path& out) {
  RunConfig cfg = common.load();
  if (common.seed) cfg.data.seed = *common.seed;
  const synth::Corpus corpus = synth::make_corpus(cfg.data);
  synth::write_splits(out, corpus);

  metrics::BeatScore bc, shuffled;
  std::vector<std::vector<double>> audio_beats, motion_beats;
  for (const auto& s : corpus.train) {
    audio_beats.push_back(metrics::detect_audio_beats(s.audio));
    motion_beats.push_back(metrics::detect_motion_beats(s.poses));
  }
  const std::size_t n = audio_beats.size();
  for (std::size_t i = 0; i < n; ++i) {
    if (audio_beats[i].empty()) continue;
    bc.add(audio_beats[i], motion_beats[i]);
    shuffled.add(audio_beats[i], motion_beats[(i + n / 2 + 1) % n]);
  }
  std::printf("train %zu  val %zu\n", corpus.train.size(), corpus.val.size());
  if (bc.audio_beats > 0) std::printf("corpus BC %.4f  (shuffled pairing %.4f)\n", bc.value(), shuffled.value());
  if (corpus.train.size() >= 2) {
    nn::Mat<double> flat(static_cast<Eigen::Index>(corpus.train.size()), corpus.train[0].poses.data.size());
    for (std::size_t i = 0; i < corpus.train.size(); ++i)
      flat.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const Eigen::RowVectorXf>(corpus.train[i].poses.data.data(), corpus.train[i].poses.data.size())
              .cast<double>();
    std::printf("pose-space diversity %.4f\n", metrics::diversity_from_features(flat, 500, cfg.data.seed));
  }
  return 0;
}

// ---------------------------------------------------------------- training

struct TrainArgs {
  fs::path data;
  fs::path out;
  std::optional<fs::path> resume;
};

int cmd_train_rag(const Common& common, const TrainArgs& a) {
  const RunConfig cfg = common.load();
  const std::uint64_t seed = cfg.require_seed();
  const auto set = synth::read_corpus(resolve_set(a.data));
  std::vector<rag::RagClip> clips;
  for (const auto& s : set.samples) clips.push_back({synth::pose_matrix(s.poses), s.audio.samples, s.speaker});

  rag::RagTrainer trainer{rag::RagModel<float>(cfg.rag, seed), PoseNorm{}, nn::Optimizer<float>(cfg.train_rag.optimizer), 0};
  if (a.resume) {
    const auto t = load_ckpt(*a.resume);
    if (ckpt_kind(t) != 1) throw UsageError(a.resume->string() + " is not a rag checkpoint");
    trainer = rag::RagTrainer::load(t);
  }
  rag::RagTrainOptions opts = cfg.train_rag;
  opts.seed = seed;
  Csv csv = open_history(a.out, a.resume, "epoch,rec,vel,kl,total");
  rag::train_rag(trainer, clips, opts, cfg.diffusion.make_schedule(), [&](const rag::EpochRecord& r) {
    csv.row(r.epoch, r.loss.rec, r.loss.vel, r.loss.kl, r.loss.total);
    std::printf("epoch %d  loss %.5f  rec %.5f  vel %.5f  kl %.5f\n", r.epoch, r.loss.total, r.loss.rec, r.loss.vel,
                r.loss.kl);
    std::fflush(stdout);
  });
  nn::TensorMap out;
  trainer.save(out);
  nn::save_checkpoint(a.out, out);
  return 0;
}

int cmd_train_sag(const Common& common, const TrainArgs& a) {
  const RunConfig cfg = common.load();
  const std::uint64_t seed = cfg.require_seed();
  const auto set = synth::read_corpus(resolve_set(a.data));
  std::vector<sag::SagClip> clips;
  for (const auto& s : set.samples) {
    Eigen::VectorXd z = Eigen::Map<const Eigen::VectorXf>(s.text_embedding.data(), s.text_embedding.size()).cast<double>();
    clips.push_back({synth::pose_matrix(s.poses), std::move(z)});
  }
  sag::SagTrainer trainer{sag::SagModel<float>(cfg.sag, seed), PoseNorm{}, nn::Optimizer<float>(cfg.train_sag.optimizer), 0};
  if (a.resume) {
    const auto t = load_ckpt(*a.resume);
    if (ckpt_kind(t) != 2) throw UsageError(a.resume->string() + " is not a sag checkpoint");
    trainer = sag::SagTrainer::load(t);
  }
  sag::SagTrainOptions opts = cfg.train_sag;
  opts.seed = seed;
  Csv csv = open_history(a.out, a.resume, "epoch,rec,cos,total");
  sag::train_sag(trainer, clips, opts, [&](const sag::SagEpochRecord& r) {
    csv.row(r.epoch, r.loss.rec, r.loss.cos, r.loss.total);
    std::printf("epoch %d  loss %.5f  rec %.5f  cos %.5f\n", r.epoch, r.loss.total, r.loss.rec, r.loss.cos);
    std::fflush(stdout);
  });
  nn::TensorMap out;
  trainer.save(out);
  nn::save_checkpoint(a.out, out);
  return 0;
}

int cmd_train_ae(const Common& common, const TrainArgs& a) {
  const RunConfig cfg = common.load();
  const std::uint64_t seed = cfg.require_seed();
  const auto set = synth::read_corpus(resolve_set(a.data));
  std::vector<nn::Mat<double>> clips;
  for (const auto& s : set.samples) clips.push_back(synth::pose_matrix(s.poses));
  metrics::FeatureExtractor fx{metrics::FeatureAutoencoder<float>(cfg.metrics.ae, seed), PoseNorm{},
                               nn::Optimizer<float>(cfg.train_ae.optimizer), 0, 0.0};
  if (a.resume) {
    const auto t = load_ckpt(*a.resume);
    if (ckpt_kind(t) != 3) throw UsageError(a.resume->string() + " is not an autoencoder checkpoint");
    fx = metrics::FeatureExtractor::load(t);
  }
  metrics::AeTrainOptions opts = cfg.train_ae;
  opts.seed = seed;
  Csv csv = open_history(a.out, a.resume, "epoch,mse");
  metrics::train_feature_autoencoder(fx, clips, opts, [&](int epoch, double loss) {
    csv.row(epoch, loss);
    std::printf("epoch %d  mse %.5f\n", epoch, loss);
    std::fflush(stdout);
  });
  nn::TensorMap out;
  fx.save(out);
  nn::save_checkpoint(a.out, out);
  return 0;
}

// ---------------------------------------------------------------- gen

struct GenArgs {
  std::string mode = "full";
  std::vector<fs::path> ckpts;
  std::optional<fs::path> audio;
  std::optional<std::string> script;
  std::optional<std::string> prompt;
  std::optional<fs::path> embeddings;
  std::optional<fs::path> data;
  int speaker = 0;
  std::optional<double> w;
  std::optional<int> ddim;
  std::optional<int> K;
  fs::path out;
};

struct Models {
  std::optional<rag::RagTrainer> rag;
  std::optional<sag::SagTrainer> sag;
};

Models load_models(const GenArgs& a) {
  Models m;
  for (const auto& p : a.ckpts) {
    const auto t = load_ckpt(p);
    switch (ckpt_kind(t)) {
      case 1: m.rag = rag::RagTrainer::load(t); break;
      case 2: m.sag = sag::SagTrainer::load(t); break;
      default: throw UsageError(p.string() + " is neither a rag nor a sag checkpoint");
    }
  }
  if ((a.mode == "rag" || a.mode == "full") && !m.rag) throw UsageError("mode " + a.mode + " needs a rag checkpoint");
  if ((a.mode == "sag" || a.mode == "full") && !m.sag) throw UsageError("mode " + a.mode + " needs a sag checkpoint");
  return m;
}

// Phrases separated by '|' each become one clip.
std::vector<std::string> phrases(const std::string& script) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto bar = script.find('|', start);
    out.push_back(script.substr(start, bar == std::string::npos ? std::string::npos : bar - start));
    if (bar == std::string::npos) break;
    start = bar + 1;
  }
  return out;
}

struct GenContext {
  const RunConfig& cfg;
  const Models& models;
  const text::EmbeddingProvider& provider;
  rag::GenerateOptions options;
  int K;
  diffusion::NoiseSchedule schedule;
};

nn::Mat<double> generate_one(const GenContext& g, const std::string& mode, const std::vector<float>* audio, int speaker,
                             const std::string* script, const std::optional<std::string>& prompt, Rng& rng) {
  auto sag_motion = [&]() {
    std::vector<nn::Mat<double>> clips;
    for (const auto& phrase : phrases(*script)) {
      const auto& s = *g.models.sag;
      clips.push_back(prompt ? sag::prompt_edit(s.model, s.norm, phrase, *prompt, g.provider)
                             : sag::generate_from_text(s.model, s.norm, phrase, g.provider));
    }
    return rag::stitch_rows(clips, 4);
  };
  if (mode == "sag") return sag_motion();
  const auto& r = *g.models.rag;
  if (mode == "rag") return rag::generate_long(r.model, r.norm, *audio, speaker, g.options, g.schedule, rng);
  return rag::empower_long(r.model, r.norm, sag_motion(), *audio, speaker, g.K, g.options, g.schedule, rng);
}

int cmd_gen(const Common& common, const GenArgs& a) {
  RunConfig cfg = common.load();
  const std::uint64_t seed = cfg.require_seed();
  if (a.mode != "rag" && a.mode != "sag" && a.mode != "full") throw UsageError("--mode must be rag, sag or full");
  if (a.w) cfg.diffusion.w = *a.w;
  if (a.ddim) cfg.diffusion.ddim_steps = *a.ddim;
  if (a.K) cfg.diffusion.K = *a.K;
  cfg.validate();
  const Models models = load_models(a);

  std::unique_ptr<text::EmbeddingProvider> provider;
  if (a.embeddings) {
    if (!fs::exists(*a.embeddings)) throw UsageError("missing embeddings " + a.embeddings->string());
    provider = std::make_unique<text::EmbeddingTable>(text::read_embeddings(*a.embeddings));
  } else {
    provider = std::make_unique<text::CodebookProvider>(synth::make_text_provider(cfg.data));
  }
  const GenContext g{cfg, models, *provider, cfg.diffusion.generate_options(), cfg.diffusion.K, cfg.diffusion.make_schedule()};
  const double fps = cfg.data.fps;

  if (a.data) {
    const auto set = synth::read_corpus(resolve_set(*a.data));
    fs::create_directories(a.out);
    for (std::size_t i = 0; i < set.samples.size(); ++i) {
      const auto& s = set.samples[i];
      Rng rng = Rng(seed).fork(i);
      const auto m = generate_one(g, a.mode, &s.audio.samples, s.speaker, &s.script, a.prompt, rng);
      motion::write_pose(a.out / (s.id + ".lspk"), synth::pose_sequence(m, fps));
    }
    std::printf("wrote %zu clips to %s\n", set.samples.size(), a.out.string().c_str());
    return 0;
  }

  std::vector<float> audio;
  if (a.mode != "sag") {
    if (!a.audio) throw UsageError("--audio is required for mode " + a.mode);
    if (!fs::exists(*a.audio)) throw UsageError("missing audio " + a.audio->string());
    audio = audio::resample_audio(audio::load_wav(*a.audio), cfg.rag.sample_rate).samples;
  }
  if (a.mode != "rag" && !a.script) throw UsageError("--script is required for mode " + a.mode);
  Rng rng(seed);
  const auto m = generate_one(g, a.mode, &audio, a.speaker, a.script ? &*a.script : nullptr, a.prompt, rng);
  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  motion::write_pose(a.out, synth::pose_sequence(m, fps));
  std::printf("wrote %lld frames to %s\n", static_cast<long long>(m.rows()), a.out.string().c_str());
  return 0;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  fs::path real;
  fs::path gen;
  fs::path ae;
  fs::path out;
};

std::vector<nn::Mat<double>> windows(const motion::PoseSequence& seq, int frames) {
  std::vector<nn::Mat<double>> out;
  if (seq.frames() < frames) return out;
  for (const auto& w : motion::split_clips(seq.frames(), frames, frames - 4))
    out.push_back(synth::pose_matrix(motion::slice(seq, w)));
  return out;
}

int cmd_eval(const Common& common, const EvalArgs& a) {
  const RunConfig cfg = common.load();
  if (!fs::exists(a.ae)) throw UsageError("missing autoencoder checkpoint " + a.ae.string());
  if (!fs::is_directory(a.gen)) throw UsageError("missing gen directory " + a.gen.string());
  const auto ae = nn::load_checkpoint(a.ae);
  if (ckpt_kind(ae) != 3) throw UsageError(a.ae.string() + " is not an autoencoder checkpoint");
  const metrics::FeatureExtractor fx = metrics::FeatureExtractor::load(ae);
  const auto real = synth::read_corpus(resolve_set(a.real));
  const int F = fx.model.config().frames;

  std::map<std::string, motion::PoseSequence> gen;
  if (fs::exists(a.gen / "manifest.json") || fs::exists(a.gen / "train" / "manifest.json")) {
    for (auto& s : synth::read_corpus(resolve_set(a.gen)).samples) gen.emplace(s.id, std::move(s.poses));
  } else {
    std::vector<fs::path> files;
    for (const auto& e : fs::directory_iterator(a.gen))
      if (e.path().extension() == ".lspk") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    for (const auto& f : files) gen.emplace(f.stem().string(), motion::read_pose(f));
  }

  metrics::MetricReport report;
  report.seed = cfg.seed.value_or(0);
  report.sigma_bc = cfg.metrics.sigma_bc;
  report.n_pairs = cfg.metrics.n_pairs;

  std::vector<nn::Mat<double>> real_clips, gen_clips;
  for (const auto& s : real.samples)
    for (auto& w : windows(s.poses, F)) real_clips.push_back(std::move(w));
  for (const auto& [id, seq] : gen)
    for (auto& w : windows(seq, F)) gen_clips.push_back(std::move(w));
  report.n_clips = gen_clips.size();

  if (!real_clips.empty() && !gen_clips.empty()) {
    const auto r = metrics::fgd(real_clips, gen_clips, fx);
    report.fgd = r.value;
    if (r.degenerate) report.warnings.push_back("fewer clips than feature dimensions; FGD is rank-deficient");
  } else {
    report.warnings.push_back("no clips to compare; FGD not computed");
  }
  if (gen_clips.size() >= 2)
    report.diversity = metrics::diversity(gen_clips, fx, cfg.metrics.n_pairs, report.seed);
  else
    report.warnings.push_back("fewer than two generated clips; diversity not computed");

  metrics::BeatScore bc;
  std::size_t matched = 0;
  for (const auto& s : real.samples) {
    auto it = gen.find(s.id);
    if (it == gen.end()) continue;
    ++matched;
    const auto beats = metrics::detect_audio_beats(s.audio);
    if (beats.empty()) continue;
    bc.add(beats, metrics::detect_motion_beats(it->second), cfg.metrics.sigma_bc);
  }
  report.n_audio_beats = bc.audio_beats;
  if (bc.audio_beats > 0)
    report.bc = bc.value();
  else
    report.warnings.push_back(matched ? "no audio beats in matched samples; BC not computed"
                                      : "no generated file matches a real sample id; BC not computed");

  if (a.out.has_parent_path()) fs::create_directories(a.out.parent_path());
  std::ofstream out(a.out, std::ios::binary);
  out << report.to_json().dump(2) << '\n';
  if (!out) fail(Errc::Io, "cannot write " + a.out.string());
  std::printf("FGD %.6f  BC %.4f  Diversity %.4f  (%zu clips)\n", report.fgd, report.bc, report.diversity,
              report.n_clips);
  return 0;
}

// ---------------------------------------------------------------- render

int cmd_render(const fs::path& pose, const fs::path& out, const render::RenderOptions& opts) {
  if (!fs::exists(pose)) throw UsageError("missing pose file " + pose.string());
  const int n = render::render_sequence(motion::read_pose(pose), out, opts);
  std::printf("rendered %d frames to %s\n", n, out.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Two-stage co-speech gesture generation: train, generate, evaluate, render."};
  app.require_subcommand(1);
  int threads = 1;
  app.add_option("--threads", threads, "cap on worker threads")->check(CLI::PositiveNumber);

  Common common;
  fs::path synth_out;
  auto* synth_cmd = app.add_subcommand("synth-data", "write a synthetic corpus (train/ and val/)");
  add_common(synth_cmd, common);
  synth_cmd->add_option("--out", synth_out, "output directory")->required();

  TrainArgs train;
  auto add_train = [&](const char* name, const char* help) {
    auto* cmd = app.add_subcommand(name, help);
    add_common(cmd, common);
    cmd->add_option("--data", train.data, "corpus directory")->required();
    cmd->add_option("--out", train.out, "checkpoint path; history goes to <out>.loss.csv")->required();
    cmd->add_option("--resume", train.resume, "continue from this checkpoint");
    return cmd;
  };
  auto* rag_cmd = add_train("train-rag", "train the audio-conditioned diffusion model");
  auto* sag_cmd = add_train("train-sag", "train the script-conditioned autoencoder");
  auto* ae_cmd = add_train("train-ae", "train the feature autoencoder used by FGD and Diversity");

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen", "generate motion");
  add_common(gen_cmd, common);
  gen_cmd->add_option("--mode", gen.mode, "rag | sag | full")->check(CLI::IsMember({"rag", "sag", "full"}));
  gen_cmd->add_option("--ckpt", gen.ckpts, "rag and/or sag checkpoints")->required();
  gen_cmd->add_option("--audio", gen.audio, "input WAV");
  gen_cmd->add_option("--script", gen.script, "script; '|' separates per-clip phrases");
  gen_cmd->add_option("--prompt", gen.prompt, "extra prompt appended to every phrase");
  gen_cmd->add_option("--embeddings", gen.embeddings, "LSEM table instead of the synthetic codebook");
  gen_cmd->add_option("--data", gen.data, "generate for every sample of a corpus; --out is then a directory");
  gen_cmd->add_option("--speaker", gen.speaker, "speaker id");
  gen_cmd->add_option("--w", gen.w, "guidance weight");
  gen_cmd->add_option("--ddim", gen.ddim, "DDIM steps");
  gen_cmd->add_option("--K", gen.K, "empowerment steps (mode full)");
  gen_cmd->add_option("--out", gen.out, "output .lspk (or directory with --data)")->required();

  EvalArgs ev;
  auto* eval_cmd = app.add_subcommand("eval", "FGD, BC and Diversity of generated motion");
  add_common(eval_cmd, common);
  eval_cmd->add_option("--real", ev.real, "reference corpus directory")->required();
  eval_cmd->add_option("--gen", ev.gen, "directory of generated .lspk files or a corpus")->required();
  eval_cmd->add_option("--ae", ev.ae, "feature autoencoder checkpoint")->required();
  eval_cmd->add_option("--out", ev.out, "report.json path")->required();

  fs::path render_pose, render_out;
  render::RenderOptions render_opts;
  auto* render_cmd = app.add_subcommand("render", "skeleton PPM frames and keyframes.json");
  render_cmd->add_option("--pose", render_pose, "input .lspk")->required();
  render_cmd->add_option("--out", render_out, "output directory")->required();
  render_cmd->add_option("--width", render_opts.width, "image width");
  render_cmd->add_option("--height", render_opts.height, "image height");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }
  Eigen::setNbThreads(threads);

  try {
    if (synth_cmd->parsed()) return cmd_synth(common, synth_out);
    if (rag_cmd->parsed()) return cmd_train_rag(common, train);
    if (sag_cmd->parsed()) return cmd_train_sag(common, train);
    if (ae_cmd->parsed()) return cmd_train_ae(common, train);
    if (gen_cmd->parsed()) return cmd_gen(common, gen);
    if (eval_cmd->parsed()) return cmd_eval(common, ev);
    if (render_cmd->parsed()) return cmd_render(render_pose, render_out, render_opts);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error [" << errc_name(e.code()) << "]: " << e.what() << '\n';
    return e.code() == Errc::BadConfig ? 2 : 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 2;
}
