#include "helpers.hpp"
#include "lively/nn/gradcheck.hpp"
#include "lively/rag.hpp"
#include "lively/synth.hpp"

#include <cmath>

using namespace lively;
using namespace lively::rag;

namespace {

RagConfig tiny_config() {
  RagConfig c;
  c.frames = 6;
  c.pose_dims = 3;
  c.latent_dim = 8;
  c.n_blocks = 2;
  c.audio_channels = {3, 4};
  c.audio_strides = {4, 4};
  c.audio_kernel = 5;
  c.sample_rate = 160;
  c.n_speakers = 2;
  c.speaker_dim = 3;
  c.style_dim = 2;
  return c;
}

std::vector<RagExample> tiny_batch(const RagConfig& c, Rng& rng) {
  std::vector<RagExample> batch;
  for (int b = 0; b < 3; ++b) {
    RagExample e;
    e.x0 = diffusion::gaussian(c.frames, c.pose_dims, rng);
    for (int i = 0; i < c.audio_samples(); ++i) e.audio.push_back(static_cast<float>(rng.uniform(-1, 1)));
    e.speaker = b % c.n_speakers;
    batch.push_back(std::move(e));
  }
  return batch;
}

std::vector<RagClip> synthetic_clips(int n, std::uint64_t seed) {
  synth::SynthConfig sc;
  sc.n_samples = n;
  sc.seed = seed;
  std::vector<RagClip> clips;
  for (int i = 0; i < n; ++i) {
    const auto s = synth::make_sample(sc, i, sc.clip_len);
    clips.push_back({synth::pose_matrix(s.poses), s.audio.samples, s.speaker});
  }
  return clips;
}

RagConfig small_corpus_config() {
  RagConfig c;
  c.latent_dim = 64;
  c.n_blocks = 2;
  c.audio_channels = {8, 16, 32, 32};
  c.speaker_dim = 8;
  c.style_dim = 8;
  return c;
}

}  // namespace

TEST_CASE("huber continuity and gradient") {
  CHECK(huber(0.1, 0.1) == doctest::Approx(0.05).epsilon(1e-15));
  CHECK(0.5 * 0.1 * 0.1 / 0.1 == doctest::Approx(0.1 - 0.1 / 2).epsilon(1e-15));
  CHECK(huber(0.0, 0.1) == 0.0);
  CHECK(huber(-2.0, 0.1) == doctest::Approx(1.95));
  for (double d : {-0.3, -0.05, 0.02, 0.4}) {
    const double h = 1e-6;
    CHECK(huber_grad(d, 0.1) == doctest::Approx((huber(d + h, 0.1) - huber(d - h, 0.1)) / (2 * h)).epsilon(1e-6));
  }
}

TEST_CASE("config validation and derived sizes") {
  RagConfig c;
  CHECK(c.audio_samples() == 36267);
  CHECK(c.seq_len() == 35);
  c.audio_strides = {8, 8};
  CHECK_ERRC(c.validate(), Errc::BadConfig);
  RagConfig odd;
  odd.latent_dim = 7;
  CHECK_ERRC(odd.validate(), Errc::BadConfig);
}

TEST_CASE("audio encoder shape and zero-input determinism") {
  const RagConfig c = tiny_config();
  const RagModel<double> m(c, 1);
  const std::vector<float> zeros(static_cast<std::size_t>(c.audio_samples()), 0.0f);
  const auto a = m.encode_audio(zeros);
  CHECK(a.rows() == c.frames);
  CHECK(a.cols() == c.audio_dim());
  CHECK(m.encode_audio(zeros) == a);
  CHECK(a.allFinite());
}

TEST_CASE("timestep embedding") {
  const RagModel<double> m(tiny_config(), 2);
  CHECK(m.timestep_embedding(5).cols() == 8);
  CHECK((m.timestep_embedding(5) - m.timestep_embedding(6)).norm() > 0.0);
}

TEST_CASE("style sampling") {
  RagModel<double> m(tiny_config(), 3);
  const auto e1 = m.style_sample(1, StyleMode::Eval);
  const auto e2 = m.style_sample(1, StyleMode::Eval);
  CHECK(e1.s == e2.s);
  CHECK(e1.s == e1.mu);
  const Mat<double> z0 = Mat<double>::Zero(1, 2);
  CHECK(m.style_sample(1, StyleMode::Train, &z0).s == e1.mu);
  const Mat<double> z1 = Mat<double>::Ones(1, 2);
  const auto t = m.style_sample(1, StyleMode::Train, &z1);
  const Mat<double> expect = e1.mu.array() + (0.5 * e1.logvar.array()).exp();
  CHECK((t.s - expect).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("KL closed forms") {
  const RagConfig c = tiny_config();
  RagModel<double> m(c, 4);
  for (const char* n : {"style.mu.w", "style.mu.b", "style.lv.w", "style.lv.b"}) m.params().weight(n).fill(0.0);
  Rng rng(5);
  const auto batch = tiny_batch(c, rng);
  const auto sched = diffusion::make_linear_schedule();
  const RagDraws draws = draw_rag_draws(batch.size(), c, sched, rng);
  CHECK(std::abs(m.loss(batch, draws, sched, false).kl) < 1e-12);
  m.params().weight("style.mu.b").fill(1.0);
  CHECK(m.loss(batch, draws, sched, false).kl == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("oracle output gives zero reconstruction and velocity loss") {
  RagConfig c = tiny_config();
    RagModel<double> m(c, 6);
  Mat<double> row(1, c.pose_dims);
  row << 0.3, -0.2, 0.9;
  m.params().weight("out.w").fill(0.0);
  for (int k = 0; k < c.pose_dims; ++k) m.params().weight("out.b")[static_cast<std::size_t>(k)] = row(0, k);
  Rng rng(7);
  auto batch = tiny_batch(c, rng);
  for (auto& e : batch) e.x0 = row.replicate(c.frames, 1);
  const auto sched = diffusion::make_linear_schedule();
  const auto parts = m.loss(batch, draw_rag_draws(batch.size(), c, sched, rng), sched, false);
  CHECK(parts.rec == 0.0);
  CHECK(parts.vel == 0.0);
}

TEST_CASE("unit-scale input skip scales x_t by sqrt(abar)") {
  RagConfig c = tiny_config();
  c.skip_sigma = 1.0;
  RagModel<double> m(c, 6);
  m.params().weight("out.w").fill(0.0);
  m.params().weight("out.b").fill(0.0);
  Rng rng(3);
  const Mat<double> x = diffusion::gaussian(c.frames, c.pose_dims, rng);
  const Mat<double> feat = m.encode_audio(std::vector<float>(static_cast<std::size_t>(c.audio_samples()), 0.1f));
  const Mat<double> style = m.style_sample(0, StyleMode::Eval).s;
  const auto sched = diffusion::make_linear_schedule();
  for (int t : {1, 250, 1000}) {
    const Mat<double> pred = m.denoise(x, t, feat, style, true, sched);
    CHECK((pred - std::sqrt(sched.alpha_bar(t)) * x).cwiseAbs().maxCoeff() < 1e-12);
  }
  m.params().weight("out.b").fill(1.0);
  const Mat<double> near = m.denoise(x, 1, feat, style, true, sched);
  CHECK((near - x).cwiseAbs().maxCoeff() < 0.02);
}

TEST_CASE("seeded rows are exact in the loss") {
  // Constant-output oracle; the clean prefix differs from it, so only the seeded rows could cost anything.
  RagConfig c = tiny_config();
    RagModel<double> m(c, 6);
  Mat<double> row(1, c.pose_dims);
  row << 0.3, -0.2, 0.9;
  m.params().weight("out.w").fill(0.0);
  for (int k = 0; k < c.pose_dims; ++k) m.params().weight("out.b")[static_cast<std::size_t>(k)] = row(0, k);
  Rng rng(4);
  auto batch = tiny_batch(c, rng);
  for (auto& e : batch) {
    e.x0 = row.replicate(c.frames, 1);
    e.x0.topRows(kSeedFrames).array() += 2.0;
  }
  const auto sched = diffusion::make_linear_schedule();
  RagDraws draws = draw_rag_draws(batch.size(), c, sched, rng);
  draws.seeded = {true, true, true};
  const auto seeded = m.loss(batch, draws, sched, true);
  CHECK(seeded.rec == 0.0);
  CHECK(seeded.vel == 0.0);
  CHECK(m.params().g("out.b").cwiseAbs().maxCoeff() == 0.0);
  draws.seeded = {false, true, true};
  CHECK(m.loss(batch, draws, sched, false).rec > 0.0);
}

TEST_CASE("rag_loss gradient on a tiny model") {
  for (double skip : {0.0, 0.5}) {
    RagConfig c = tiny_config();
    c.skip_sigma = skip;
    RagModel<double> m(c, 8);
    Rng rng(9);
    const auto batch = tiny_batch(c, rng);
    const auto sched = diffusion::make_linear_schedule();
    RagDraws draws = draw_rag_draws(batch.size(), c, sched, rng);
    draws.drop = {false, true, false};
    draws.seeded = {true, false, true};
    draws.t = {3, 400, 950};
    auto loss = [&](bool grad) { return m.loss(batch, draws, sched, grad).total; };
    const auto r = nn::grad_check(m.params(), loss);
    INFO("skip " << skip << " worst " << r.worst_param << "[" << r.worst_index << "]");
    CHECK(r.max_rel_error < 1e-4);
  }
}

TEST_CASE("train_rag rejects empty data") {
  RagTrainer tr{RagModel<float>(tiny_config(), 1), PoseNorm{}, nn::Optimizer<float>(), 0};
  CHECK_ERRC(train_rag(tr, {}, {}, diffusion::make_linear_schedule()), Errc::EmptyBatch);
}

TEST_CASE("train_rag determinism and resume") {
  const RagConfig c = small_corpus_config();
  const auto data = synthetic_clips(24, 3);
  const auto sched = diffusion::make_linear_schedule();
  RagTrainOptions opts;
  opts.epochs = 2;
  opts.batch_size = 8;
  opts.seed = 11;

  // A run interrupted after epoch 1 and resumed from its snapshot ends on the same bytes.
  nn::TensorMap snapshot;
  auto run = [&]() {
    RagTrainer tr{RagModel<float>(c, 5), PoseNorm{}, nn::Optimizer<float>(opts.optimizer), 0};
    train_rag(tr, data, opts, sched, [&](const auto& rec) {
      if (rec.epoch == 1) tr.save(snapshot);
    });
    nn::TensorMap out;
    tr.save(out);
    return nn::encode_checkpoint(out);
  };
  const auto a = run();
  CHECK(a == run());
  RagTrainer resumed = RagTrainer::load(nn::decode_checkpoint(nn::encode_checkpoint(snapshot)));
  CHECK(resumed.epoch == 1);
  train_rag(resumed, data, opts, sched);
  nn::TensorMap out;
  resumed.save(out);
  CHECK(nn::encode_checkpoint(out) == a);
}

TEST_CASE("train_rag reduces the loss on the synthetic corpus") {
  RagConfig c = small_corpus_config();
  c.latent_dim = 256;
  c.n_blocks = 4;
  c.audio_channels = {16, 32, 64, 128};
  const auto data = synthetic_clips(640, 4);
  const auto sched = diffusion::make_linear_schedule();
  RagTrainOptions opts;
  opts.epochs = 40;
  opts.batch_size = 8;
  opts.seed = 2;
  RagTrainer tr{RagModel<float>(c, 6), PoseNorm{}, nn::Optimizer<float>(opts.optimizer), 0};

  // Initial loss: the untrained model over the whole set under the same normalization.
  std::vector<Mat<double>> poses;
  for (const auto& d : data) poses.push_back(d.poses);
  const PoseNorm norm = PoseNorm::fit(poses);
  std::vector<RagExample> examples;
  for (const auto& d : data) examples.push_back({norm.apply(d.poses), d.audio, d.speaker});
  Rng rng(99);
  const RagDraws draws = draw_rag_draws(examples.size(), c, sched, rng);
  const double initial = tr.model.loss(examples, draws, sched, false).total;

  const auto history = train_rag(tr, data, opts, sched);
  REQUIRE(history.size() == 40);
  const double final_loss = tr.model.loss(examples, draws, sched, false).total;
  MESSAGE("initial " << initial << " final " << final_loss);
  CHECK(final_loss < 0.3 * initial);
}

TEST_CASE("generation contracts") {
  const RagConfig c = small_corpus_config();
  const auto data = synthetic_clips(2, 5);
  RagModel<float> m(c, 7);
  std::vector<Mat<double>> poses{data[0].poses, data[1].poses};
  const PoseNorm norm = PoseNorm::fit(poses);
  const auto sched = diffusion::make_linear_schedule();
  GenerateOptions go{1.0, 10, 0.0};

  Rng r1(1), r2(1);
  const Mat<double> a = generate_clip(m, norm, data[0].audio, 0, go, sched, r1);
  CHECK(a.rows() == 34);
  CHECK(a.cols() == 30);
  CHECK(a == generate_clip(m, norm, data[0].audio, 0, go, sched, r2));

  const Mat<double> seed = data[1].poses.topRows(4);
  Rng r3(3);
  const Mat<double> seeded = generate_clip(m, norm, data[0].audio, 0, go, sched, r3, &seed);
  CHECK((seeded.topRows(4) - seed).cwiseAbs().maxCoeff() <= 1e-5);

  // One clip's worth of audio: generate_long reduces to generate_clip.
  Rng r4(4), r5(4);
  CHECK(generate_long(m, norm, data[0].audio, 0, go, sched, r4) == generate_clip(m, norm, data[0].audio, 0, go, sched, r5));

  for (int n : {1, 2, 3}) {
    std::vector<float> audio(static_cast<std::size_t>(std::lround((34 + 30 * (n - 1)) / 15.0 * 16000)), 0.0f);
    Rng r(6);
    CHECK(generate_long(m, norm, audio, 0, go, sched, r).rows() == 34 + 30 * (n - 1));
    CHECK(clip_count(34 + 30 * (n - 1)) == n);
  }

  Rng r6(6);
  CHECK(empower_long(m, norm, a, data[0].audio, 0, 0, go, sched, r6) == a);
  CHECK_ERRC(empower_long(m, norm, a, data[0].audio, 0, 11, go, sched, r6), Errc::KOutOfRange);
}

TEST_CASE("checkpoint round trip of a trainer") {
  RagTrainer tr{RagModel<float>(tiny_config(), 9), PoseNorm::identity(3), nn::Optimizer<float>(), 0};
  nn::TensorMap out;
  tr.save(out);
  const RagTrainer back = RagTrainer::load(out);
  CHECK(back.model.params().weights() == tr.model.params().weights());
  CHECK(back.model.config().latent_dim == 8);
  CHECK(back.model.config().audio_channels == tiny_config().audio_channels);
}
