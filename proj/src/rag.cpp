#include "lively/rag.hpp"

#include "lively/audio.hpp"
#include "lively/error.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

namespace lively::rag {

using nn::ConstMatRef;

void RagConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, Errc::BadConfig, "rag config: " + msg); };
  check(frames >= 2, "frames must be at least 2");
  check(pose_dims >= 1, "pose_dims must be positive");
  check(latent_dim >= 2 && latent_dim % 2 == 0, "latent_dim must be even and positive");
  check(n_blocks >= 1, "n_blocks must be positive");
  check(!audio_channels.empty() && audio_channels.size() == audio_strides.size(),
        "audio_channels and audio_strides must have the same non-zero length");
  for (std::size_t i = 0; i < audio_channels.size(); ++i) {
    check(audio_channels[i] >= 1 && audio_strides[i] >= 1, "audio channels and strides must be positive");
  }
  check(audio_kernel >= 1, "audio_kernel must be positive");
  check(sample_rate > 0 && fps > 0.0, "sample_rate and fps must be positive");
  check(n_speakers >= 1 && speaker_dim >= 1 && style_dim >= 1, "speaker and style sizes must be positive");
  check(p_uncond >= 0.0 && p_uncond < 1.0, "p_uncond must lie in [0, 1)");
  check(p_seed >= 0.0 && p_seed <= 1.0, "p_seed must lie in [0, 1]");
  check(frames > kSeedFrames, "frames must exceed the seed overlap");
  check(leaky_slope >= 0.0 && leaky_slope < 1.0, "leaky_slope must lie in [0, 1)");
  check(huber_delta > 0.0, "huber_delta must be positive");
  check(skip_sigma >= 0.0, "skip_sigma must be non-negative");
  conv_output_length();
}

int RagConfig::audio_samples() const { return audio::samples_for_frames(frames, fps, sample_rate); }

int RagConfig::conv_output_length() const {
  int len = audio_samples();
  for (int stride : audio_strides) {
    len = nn::Conv1dSpec{audio_kernel, stride, audio_kernel / 2}.output_length(len);
  }
  return len;
}

double huber(double d, double delta) {
  const double a = std::abs(d);
  return a < delta ? 0.5 * d * d / delta : a - 0.5 * delta;
}

double huber_grad(double d, double delta) {
  if (std::abs(d) < delta) return d / delta;
  return d > 0 ? 1.0 : -1.0;
}

namespace {

template <typename T>
void linear_params(nn::ParamTree<T>& p, const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  nn::init_uniform(p.add(name + ".w", {static_cast<std::size_t>(in), static_cast<std::size_t>(out)}), bound, rng);
  nn::init_uniform(p.add(name + ".b", {static_cast<std::size_t>(out)}), bound, rng);
}

template <typename T>
void norm_params(nn::ParamTree<T>& p, const std::string& name, int width) {
  p.add(name + ".g", {static_cast<std::size_t>(width)}).fill(T(1));
  p.add(name + ".b", {static_cast<std::size_t>(width)});
}

// Maps conv output positions onto motion frames: frame j sits at sample j*sr/fps,
// i.e. at fractional position j*sr/(fps*hop) of the strided sequence.
template <typename T>
Mat<T> frame_interpolation(const RagConfig& c) {
  const int positions = c.conv_output_length();
  const double hop =
      std::accumulate(c.audio_strides.begin(), c.audio_strides.end(), 1.0, std::multiplies<>());
  Mat<T> m = Mat<T>::Zero(c.frames, positions);
  for (int j = 0; j < c.frames; ++j) {
    const double u = std::clamp(j * c.sample_rate / (c.fps * hop), 0.0, static_cast<double>(positions - 1));
    const int lo = static_cast<int>(std::floor(u));
    const int hi = std::min(lo + 1, positions - 1);
    const double frac = u - lo;
    m(j, lo) += static_cast<T>(1.0 - frac);
    m(j, hi) += static_cast<T>(frac);
  }
  return m;
}

}  // namespace

template <typename T>
struct RagModel<T>::Impl {
  using M = Mat<T>;

  struct AudioCache {
    std::vector<nn::Conv1dCache<T>> conv;
    std::vector<M> pre;
  };

  struct BlockCache {
    nn::LayerNormCache<T> ln1, ln2;
    M a, u, c, s;
  };

  struct DenoiseCache {
    M in_cat, style, e, a1, a1s, temb, gathered;
    std::vector<T> c_out;
    std::vector<BlockCache> blocks;
    std::vector<bool> cond;
  };

  static nn::Conv1dSpec conv_spec(const RagConfig& c, std::size_t i) {
    return {c.audio_kernel, c.audio_strides[i], c.audio_kernel / 2};
  }

  static auto kernel(const nn::ParamTree<T>& p, const RagConfig& c, std::size_t i) {
    const int cin = i == 0 ? 1 : c.audio_channels[i - 1];
    return nn::reshaped(p.weight("audio.conv" + std::to_string(i) + ".w"), c.audio_channels[i],
                        static_cast<Eigen::Index>(cin) * c.audio_kernel);
  }

  static M audio_forward(const RagModel& m, std::span<const float> samples, AudioCache* cache) {
    const RagConfig& c = m.config_;
    const int n = c.audio_samples();
    if (static_cast<int>(samples.size()) > n) {
      fail(Errc::BadAudioLength,
           "clip audio has " + std::to_string(samples.size()) + " samples, expected at most " + std::to_string(n));
    }
    M h = M::Zero(1, n);
    for (std::size_t i = 0; i < samples.size(); ++i) h(0, static_cast<Eigen::Index>(i)) = static_cast<T>(samples[i]);
    if (cache) {
      cache->conv.resize(c.audio_channels.size());
      cache->pre.resize(c.audio_channels.size());
    }
    for (std::size_t i = 0; i < c.audio_channels.size(); ++i) {
      const std::string name = "audio.conv" + std::to_string(i);
      M pre = nn::conv1d<T>(h, kernel(m.params_, c, i), m.params_.w(name + ".b"), conv_spec(c, i),
                            cache ? &cache->conv[i] : nullptr);
      h = nn::leaky_relu<T>(pre, static_cast<T>(c.leaky_slope));
      if (cache) cache->pre[i] = std::move(pre);
    }
    M out(c.frames, h.rows());
    out.noalias() = frame_interpolation<T>(c) * h.transpose();
    return out;
  }

  static void audio_backward(RagModel& m, const AudioCache& cache, const M& dfeat) {
    const RagConfig& c = m.config_;
    M dh = (frame_interpolation<T>(c).transpose() * dfeat).transpose();
    for (std::size_t i = c.audio_channels.size(); i-- > 0;) {
      const std::string name = "audio.conv" + std::to_string(i);
      M dpre = nn::leaky_relu_backward<T>(cache.pre[i], dh, static_cast<T>(c.leaky_slope));
      const int cin = i == 0 ? 1 : c.audio_channels[i - 1];
      auto dk = nn::reshaped(m.params_.grad(name + ".w"), c.audio_channels[i],
                             static_cast<Eigen::Index>(cin) * c.audio_kernel);
      M dx = nn::conv1d_backward<T>(cache.conv[i], kernel(m.params_, c, i), dpre, conv_spec(c, i), dk,
                                    m.params_.g(name + ".b"));
      if (i > 0) dh = std::move(dx);
    }
  }

  static M timestep_rows(const RagConfig& c, const std::vector<int>& t) {
    M e(static_cast<Eigen::Index>(t.size()), c.latent_dim);
    for (std::size_t b = 0; b < t.size(); ++b) e.row(static_cast<Eigen::Index>(b)) = nn::sinusoidal_embedding<T>(t[b], c.latent_dim);
    return e;
  }

  // x_t [B*F x P]; audio[b] == nullptr selects the null token; style [B x style_dim].
  static M denoise_batch(const RagModel& m, const M& x_t, const std::vector<const M*>& audio, const M& style,
                         const std::vector<int>& t, const diffusion::NoiseSchedule& schedule, DenoiseCache* cache) {
    const RagConfig& c = m.config_;
    const auto& p = m.params_;
    const Eigen::Index B = static_cast<Eigen::Index>(t.size());
    const Eigen::Index F = c.frames, S = c.seq_len(), P = c.pose_dims, A = c.audio_dim(), L = c.latent_dim;
    if (x_t.rows() != B * F || x_t.cols() != P) fail(Errc::ShapeMismatch, "denoise: x_t shape does not match config");
    if (style.rows() != B || style.cols() != c.style_dim) fail(Errc::ShapeMismatch, "denoise: style shape");

    M in_cat(B * F, P + A);
    in_cat.leftCols(P) = x_t;
    for (Eigen::Index b = 0; b < B; ++b) {
      const M* feat = audio[static_cast<std::size_t>(b)];
      if (feat) {
        if (feat->rows() != F || feat->cols() != A) fail(Errc::ShapeMismatch, "denoise: audio feature shape");
        in_cat.block(b * F, P, F, A) = *feat;
      } else {
        in_cat.block(b * F, P, F, A).rowwise() = p.w("null_audio").row(0);
      }
    }
    M z = nn::linear<T>(in_cat, p.w("in.w"), p.w("in.b"));
    M style_tok = nn::linear<T>(style, p.w("style.proj.w"), p.w("style.proj.b"));

    M e = timestep_rows(c, t);
    M a1 = nn::linear<T>(e, p.w("temb.l1.w"), p.w("temb.l1.b"));
    M a1s = nn::silu<T>(a1);
    M temb = nn::linear<T>(a1s, p.w("temb.l2.w"), p.w("temb.l2.b"));

    M h(B * S, L);
    for (Eigen::Index b = 0; b < B; ++b) {
      h.row(b * S) = style_tok.row(b);
      h.middleRows(b * S + 1, F) = z.middleRows(b * F, F);
      if (!c.per_block_temb) h.middleRows(b * S, S).rowwise() += temb.row(b);
    }

    if (cache) {
      cache->blocks.assign(static_cast<std::size_t>(c.n_blocks), BlockCache{});
    }
    for (int k = 0; k < c.n_blocks; ++k) {
      const std::string bn = "block" + std::to_string(k);
      BlockCache local;
      BlockCache& bc = cache ? cache->blocks[static_cast<std::size_t>(k)] : local;
      bc.a = nn::layer_norm<T>(h, p.w(bn + ".ln1.g"), p.w(bn + ".ln1.b"), &bc.ln1);
      const auto wt = p.w(bn + ".tfc.w");
      const auto bt = p.w(bn + ".tfc.b");
      bc.u.resize(B * S, L);
      for (Eigen::Index b = 0; b < B; ++b) {
        auto ub = bc.u.middleRows(b * S, S);
        ub.noalias() = wt * bc.a.middleRows(b * S, S);
        ub.colwise() += bt.row(0).transpose();
      }
      M v = nn::silu<T>(bc.u);
      bc.c = nn::layer_norm<T>(v, p.w(bn + ".ln2.g"), p.w(bn + ".ln2.b"), &bc.ln2);
      bc.s = nn::linear<T>(bc.c, p.w(bn + ".sfc.w"), p.w(bn + ".sfc.b"));
      M r = nn::silu<T>(bc.s);
      if (c.per_block_temb) {
        M tb = nn::linear<T>(temb, p.w(bn + ".temb.w"), p.w(bn + ".temb.b"));
        for (Eigen::Index b = 0; b < B; ++b) r.middleRows(b * S, S).rowwise() += tb.row(b);
      }
      h += r;
    }

    M gathered(B * F, L);
    for (Eigen::Index b = 0; b < B; ++b) gathered.middleRows(b * F, F) = h.middleRows(b * S + 1, F);
    M out = nn::linear<T>(gathered, p.w("out.w"), p.w("out.b"));
    std::vector<T> c_out(static_cast<std::size_t>(B), T(1));
    if (c.skip_sigma > 0.0) {
      const double s2 = c.skip_sigma * c.skip_sigma;
      for (Eigen::Index b = 0; b < B; ++b) {
        const double abar = schedule.alpha_bar(t[static_cast<std::size_t>(b)]);
        const double var = abar * s2 + 1.0 - abar;
        c_out[static_cast<std::size_t>(b)] = static_cast<T>(std::sqrt((1.0 - abar) / var));
        out.middleRows(b * F, F) *= c_out[static_cast<std::size_t>(b)];
        out.middleRows(b * F, F) += static_cast<T>(std::sqrt(abar) * s2 / var) * x_t.middleRows(b * F, F);
      }
    }
    if (cache) {
      cache->c_out = std::move(c_out);
      cache->in_cat = std::move(in_cat);
      cache->style = style;
      cache->e = std::move(e);
      cache->a1 = std::move(a1);
      cache->a1s = std::move(a1s);
      cache->temb = std::move(temb);
      cache->gathered = std::move(gathered);
      cache->cond.resize(static_cast<std::size_t>(B));
      for (Eigen::Index b = 0; b < B; ++b) cache->cond[static_cast<std::size_t>(b)] = audio[static_cast<std::size_t>(b)] != nullptr;
    }
    return out;
  }

  // Returns d(style) [B x style_dim]; fills daudio[b] for conditioned items.
  static M denoise_backward(RagModel& m, const DenoiseCache& cache, const M& dout, std::vector<M>& daudio) {
    const RagConfig& c = m.config_;
    auto& p = m.params_;
    const Eigen::Index B = cache.style.rows();
    const Eigen::Index F = c.frames, S = c.seq_len(), P = c.pose_dims, A = c.audio_dim(), L = c.latent_dim;

    M dnet = dout;
    for (Eigen::Index b = 0; b < B; ++b) dnet.middleRows(b * F, F) *= cache.c_out[static_cast<std::size_t>(b)];
    M dgathered = nn::linear_backward<T>(cache.gathered, p.w("out.w"), dnet, p.g("out.w"), p.g("out.b"));
    M dh = M::Zero(B * S, L);
    for (Eigen::Index b = 0; b < B; ++b) dh.middleRows(b * S + 1, F) = dgathered.middleRows(b * F, F);
    M dtemb = M::Zero(B, L);

    for (int k = c.n_blocks - 1; k >= 0; --k) {
      const std::string bn = "block" + std::to_string(k);
      const BlockCache& bc = cache.blocks[static_cast<std::size_t>(k)];
      if (c.per_block_temb) {
        M dtb(B, L);
        for (Eigen::Index b = 0; b < B; ++b) dtb.row(b) = dh.middleRows(b * S, S).colwise().sum();
        dtemb += nn::linear_backward<T>(cache.temb, p.w(bn + ".temb.w"), dtb, p.g(bn + ".temb.w"),
                                        p.g(bn + ".temb.b"));
      }
      M ds = nn::silu_backward<T>(bc.s, dh);
      M dc = nn::linear_backward<T>(bc.c, p.w(bn + ".sfc.w"), ds, p.g(bn + ".sfc.w"), p.g(bn + ".sfc.b"));
      M dv = nn::layer_norm_backward<T>(bc.ln2, p.w(bn + ".ln2.g"), dc, p.g(bn + ".ln2.g"), p.g(bn + ".ln2.b"));
      M du = nn::silu_backward<T>(bc.u, dv);
      const auto wt = p.w(bn + ".tfc.w");
      auto dwt = p.g(bn + ".tfc.w");
      auto dbt = p.g(bn + ".tfc.b");
      M da(B * S, L);
      for (Eigen::Index b = 0; b < B; ++b) {
        const auto dub = du.middleRows(b * S, S);
        dwt.noalias() += dub * bc.a.middleRows(b * S, S).transpose();
        dbt.row(0) += dub.rowwise().sum().transpose();
        da.middleRows(b * S, S).noalias() = wt.transpose() * dub;
      }
      dh += nn::layer_norm_backward<T>(bc.ln1, p.w(bn + ".ln1.g"), da, p.g(bn + ".ln1.g"), p.g(bn + ".ln1.b"));
    }

    M dstyle_tok(B, L);
    M dz(B * F, L);
    for (Eigen::Index b = 0; b < B; ++b) {
      if (!c.per_block_temb) dtemb.row(b) += dh.middleRows(b * S, S).colwise().sum();
      dstyle_tok.row(b) = dh.row(b * S);
      dz.middleRows(b * F, F) = dh.middleRows(b * S + 1, F);
    }
    M dstyle = nn::linear_backward<T>(cache.style, p.w("style.proj.w"), dstyle_tok, p.g("style.proj.w"),
                                      p.g("style.proj.b"));
    M da1s = nn::linear_backward<T>(cache.a1s, p.w("temb.l2.w"), dtemb, p.g("temb.l2.w"), p.g("temb.l2.b"));
    M da1 = nn::silu_backward<T>(cache.a1, da1s);
    nn::linear_backward<T>(cache.e, p.w("temb.l1.w"), da1, p.g("temb.l1.w"), p.g("temb.l1.b"));
    M din = nn::linear_backward<T>(cache.in_cat, p.w("in.w"), dz, p.g("in.w"), p.g("in.b"));

    daudio.assign(static_cast<std::size_t>(B), M());
    auto dnull = p.g("null_audio");
    for (Eigen::Index b = 0; b < B; ++b) {
      const auto block = din.block(b * F, P, F, A);
      if (cache.cond[static_cast<std::size_t>(b)]) {
        daudio[static_cast<std::size_t>(b)] = block;
      } else {
        dnull.row(0) += block.colwise().sum();
      }
    }
    return dstyle;
  }

  static void style_heads(const RagModel& m, int speaker, M& embed, M& mu, M& logvar) {
    const auto& p = m.params_;
    embed = nn::embedding_lookup<T>(p.w("style.table"), speaker);
    mu = nn::linear<T>(embed, p.w("style.mu.w"), p.w("style.mu.b"));
    logvar = nn::linear<T>(embed, p.w("style.lv.w"), p.w("style.lv.b"));
  }
};

template <typename T>
RagModel<T>::RagModel(RagConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const RagConfig& c = config_;
  Rng rng(seed);
  auto& p = params_;
  for (std::size_t i = 0; i < c.audio_channels.size(); ++i) {
    const int cin = i == 0 ? 1 : c.audio_channels[i - 1];
    const std::string name = "audio.conv" + std::to_string(i);
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * c.audio_kernel));
    nn::init_uniform(p.add(name + ".w", {static_cast<std::size_t>(c.audio_channels[i]), static_cast<std::size_t>(cin),
                                         static_cast<std::size_t>(c.audio_kernel)}),
                     bound, rng);
    nn::init_uniform(p.add(name + ".b", {static_cast<std::size_t>(c.audio_channels[i])}), bound, rng);
  }
  p.add("null_audio", {static_cast<std::size_t>(c.audio_dim())});
  linear_params(p, "in", c.pose_dims + c.audio_dim(), c.latent_dim, rng);

  auto& table = p.add("style.table", {static_cast<std::size_t>(c.n_speakers), static_cast<std::size_t>(c.speaker_dim)});
  for (auto& v : table.values()) v = static_cast<T>(rng.normal());
  linear_params(p, "style.mu", c.speaker_dim, c.style_dim, rng);
  linear_params(p, "style.lv", c.speaker_dim, c.style_dim, rng);
  linear_params(p, "style.proj", c.style_dim, c.latent_dim, rng);

  linear_params(p, "temb.l1", c.latent_dim, c.latent_dim, rng);
  linear_params(p, "temb.l2", c.latent_dim, c.latent_dim, rng);
  for (int k = 0; k < c.n_blocks; ++k) {
    const std::string bn = "block" + std::to_string(k);
    norm_params(p, bn + ".ln1", c.latent_dim);
    linear_params(p, bn + ".tfc", c.seq_len(), c.seq_len(), rng);
    norm_params(p, bn + ".ln2", c.latent_dim);
    linear_params(p, bn + ".sfc", c.latent_dim, c.latent_dim, rng);
    if (c.per_block_temb) linear_params(p, bn + ".temb", c.latent_dim, c.latent_dim, rng);
  }
  linear_params(p, "out", c.latent_dim, c.pose_dims, rng);
}


template <typename T>
Mat<T> RagModel<T>::encode_audio(std::span<const float> samples) const {
  return Impl::audio_forward(*this, samples, nullptr);
}

template <typename T>
Mat<T> RagModel<T>::timestep_embedding(int t) const {
  const Mat<T> e = nn::sinusoidal_embedding<T>(t, config_.latent_dim);
  const Mat<T> a = nn::silu<T>(nn::linear<T>(e, params_.w("temb.l1.w"), params_.w("temb.l1.b")));
  return nn::linear<T>(a, params_.w("temb.l2.w"), params_.w("temb.l2.b"));
}

template <typename T>
StyleSample<T> RagModel<T>::style_sample(int speaker, StyleMode mode, const Mat<T>* z) const {
  StyleSample<T> out;
  Mat<T> embed;
  Impl::style_heads(*this, speaker, embed, out.mu, out.logvar);
  out.s = out.mu;
  if (mode == StyleMode::Train && z) {
    require(z->rows() == 1 && z->cols() == config_.style_dim, Errc::ShapeMismatch, "style noise shape");
    out.s.array() += (out.logvar.array() * T(0.5)).exp() * z->array();
  }
  return out;
}

template <typename T>
Mat<T> RagModel<T>::denoise(const Mat<T>& x_t, int t, const Mat<T>& audio_feat, const Mat<T>& style,
                            bool cond_enabled, const diffusion::NoiseSchedule& schedule) const {
  std::vector<const Mat<T>*> audio{cond_enabled ? &audio_feat : nullptr};
  return Impl::denoise_batch(*this, x_t, audio, style, {t}, schedule, nullptr);
}

template <typename T>
LossParts RagModel<T>::loss(const std::vector<RagExample>& batch, const RagDraws& draws,
                            const diffusion::NoiseSchedule& schedule, bool backward) {
  std::vector<const RagExample*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  return loss(ptrs, draws, schedule, backward);
}

template <typename T>
LossParts RagModel<T>::loss(const std::vector<const RagExample*>& batch, const RagDraws& draws,
                            const diffusion::NoiseSchedule& schedule, bool backward) {
  using M = Mat<T>;
  const RagConfig& c = config_;
  if (batch.empty()) fail(Errc::EmptyBatch, "rag_loss needs at least one example");
  const std::size_t B = batch.size();
  require(draws.t.size() == B && draws.eps.size() == B && draws.drop.size() == B && draws.z.size() == B &&
              draws.seeded.size() == B,
          Errc::ShapeMismatch, "draws do not match the batch");
  const Eigen::Index F = c.frames, P = c.pose_dims, D = c.style_dim;

  M x_t(static_cast<Eigen::Index>(B) * F, P);
  M style(static_cast<Eigen::Index>(B), D);
  std::vector<M> embeds(B), mus(B), logvars(B), feats(B);
  std::vector<typename Impl::AudioCache> audio_caches(B);
  std::vector<const M*> audio(B, nullptr);
  for (std::size_t b = 0; b < B; ++b) {
    const RagExample& ex = *batch[b];
    if (ex.x0.rows() != F || ex.x0.cols() != P) fail(Errc::ShapeMismatch, "rag_loss: pose clip shape");
    x_t.middleRows(static_cast<Eigen::Index>(b) * F, F) =
        diffusion::q_sample(ex.x0, draws.t[b], draws.eps[b], schedule).template cast<T>();
    if (draws.seeded[b]) x_t.middleRows(static_cast<Eigen::Index>(b) * F, kSeedFrames) = ex.x0.topRows(kSeedFrames).template cast<T>();
    Impl::style_heads(*this, ex.speaker, embeds[b], mus[b], logvars[b]);
    const M z = draws.z[b].template cast<T>();
    style.row(static_cast<Eigen::Index>(b)) =
        mus[b].array() + (logvars[b].array() * T(0.5)).exp() * z.array();
    if (!draws.drop[b]) {
      feats[b] = Impl::audio_forward(*this, ex.audio, backward ? &audio_caches[b] : nullptr);
      audio[b] = &feats[b];
    }
  }

  typename Impl::DenoiseCache cache;
  M pred = Impl::denoise_batch(*this, x_t, audio, style, draws.t, schedule, backward ? &cache : nullptr);
  // Pinned rows are replaced by the seed at sampling time, so they count as exact here too.
  for (std::size_t b = 0; b < B; ++b)
    if (draws.seeded[b])
      pred.middleRows(static_cast<Eigen::Index>(b) * F, kSeedFrames) =
          batch[b]->x0.topRows(kSeedFrames).template cast<T>();

  const double n_rec = static_cast<double>(B) * F * P;
  const double n_vel = static_cast<double>(B) * (F - 1) * P;
  const double n_kl = static_cast<double>(B) * D;
  const double delta = c.huber_delta;
  LossParts parts;
  M dpred = M::Zero(pred.rows(), pred.cols());
  for (std::size_t b = 0; b < B; ++b) {
    const Mat<double>& x0 = batch[b]->x0;
    const Eigen::Index r0 = static_cast<Eigen::Index>(b) * F;
    for (Eigen::Index f = 0; f < F; ++f) {
      for (Eigen::Index j = 0; j < P; ++j) {
        const double d = static_cast<double>(pred(r0 + f, j)) - x0(f, j);
        parts.rec += huber(d, delta);
        dpred(r0 + f, j) += static_cast<T>(huber_grad(d, delta) / n_rec);
        if (f + 1 < F) {
          const double dv = (static_cast<double>(pred(r0 + f + 1, j)) - static_cast<double>(pred(r0 + f, j))) -
                            (x0(f + 1, j) - x0(f, j));
          parts.vel += huber(dv, delta);
          const double g = c.vel_weight * huber_grad(dv, delta) / n_vel;
          dpred(r0 + f + 1, j) += static_cast<T>(g);
          dpred(r0 + f, j) -= static_cast<T>(g);
        }
      }
    }
    for (Eigen::Index k = 0; k < D; ++k) {
      const double mu = mus[b](0, k), lv = logvars[b](0, k);
      parts.kl += 1.0 + lv - mu * mu - std::exp(lv);
    }
  }
  for (std::size_t b = 0; b < B; ++b)
    if (draws.seeded[b]) dpred.middleRows(static_cast<Eigen::Index>(b) * F, kSeedFrames).setZero();
  parts.rec /= n_rec;
  parts.vel /= n_vel;
  parts.kl *= -0.5 / n_kl;
  parts.total = parts.rec + c.kl_weight * parts.kl + c.vel_weight * parts.vel;
  if (!backward) return parts;

  params_.zero_grad();
  std::vector<M> daudio;
  const M dstyle = Impl::denoise_backward(*this, cache, dpred, daudio);
  auto dtable = params_.g("style.table");
  for (std::size_t b = 0; b < B; ++b) {
    const Eigen::Index bi = static_cast<Eigen::Index>(b);
    M dmu = dstyle.row(bi);
    M dlv(1, D);
    for (Eigen::Index k = 0; k < D; ++k) {
      const double lv = logvars[b](0, k);
      const double z = draws.z[b](0, k);
      dlv(0, k) = static_cast<T>(static_cast<double>(dstyle(bi, k)) * 0.5 * std::exp(0.5 * lv) * z -
                                 c.kl_weight * 0.5 * (1.0 - std::exp(lv)) / n_kl);
      dmu(0, k) += static_cast<T>(c.kl_weight * static_cast<double>(mus[b](0, k)) / n_kl);
    }
    M de = nn::linear_backward<T>(embeds[b], params_.w("style.mu.w"), dmu, params_.g("style.mu.w"),
                                  params_.g("style.mu.b"));
    de += nn::linear_backward<T>(embeds[b], params_.w("style.lv.w"), dlv, params_.g("style.lv.w"),
                                 params_.g("style.lv.b"));
    nn::embedding_backward<T>(dtable, batch[b]->speaker, de);
    if (!draws.drop[b]) Impl::audio_backward(*this, audio_caches[b], daudio[b]);
  }
  return parts;
}

RagDraws draw_rag_draws(std::size_t batch_size, const RagConfig& config, const diffusion::NoiseSchedule& schedule,
                        Rng& rng) {
  RagDraws d;
  for (std::size_t b = 0; b < batch_size; ++b) {
    d.t.push_back(1 + static_cast<int>(rng.below(static_cast<std::uint64_t>(schedule.steps()))));
    d.eps.push_back(diffusion::gaussian(config.frames, config.pose_dims, rng));
    d.drop.push_back(rng.uniform() < config.p_uncond);
    d.z.push_back(diffusion::gaussian(1, config.style_dim, rng));
    d.seeded.push_back(rng.uniform() < config.p_seed);
  }
  return d;
}

void config_to_checkpoint(const RagConfig& c, nn::TensorMap& out) {
  nn::put_scalar(out, "rag.frames", c.frames);
  nn::put_scalar(out, "rag.pose_dims", c.pose_dims);
  nn::put_scalar(out, "rag.latent_dim", c.latent_dim);
  nn::put_scalar(out, "rag.n_blocks", c.n_blocks);
  nn::put_scalar(out, "rag.audio_kernel", c.audio_kernel);
  nn::put_scalar(out, "rag.sample_rate", c.sample_rate);
  nn::put_scalar(out, "rag.fps", c.fps);
  nn::put_scalar(out, "rag.n_speakers", c.n_speakers);
  nn::put_scalar(out, "rag.speaker_dim", c.speaker_dim);
  nn::put_scalar(out, "rag.style_dim", c.style_dim);
  nn::put_scalar(out, "rag.p_uncond", c.p_uncond);
  nn::put_scalar(out, "rag.p_seed", c.p_seed);
  nn::put_scalar(out, "rag.leaky_slope", c.leaky_slope);
  nn::put_scalar(out, "rag.per_block_temb", c.per_block_temb ? 1.0 : 0.0);
  nn::put_scalar(out, "rag.skip_sigma", c.skip_sigma);
  nn::put_scalar(out, "rag.huber_delta", c.huber_delta);
  nn::put_scalar(out, "rag.kl_weight", c.kl_weight);
  nn::put_scalar(out, "rag.vel_weight", c.vel_weight);
  const auto n = c.audio_channels.size();
  nn::Tensor<float> ch({n}), st({n});
  for (std::size_t i = 0; i < n; ++i) {
    ch[i] = static_cast<float>(c.audio_channels[i]);
    st[i] = static_cast<float>(c.audio_strides[i]);
  }
  out["rag.audio_channels"] = std::move(ch);
  out["rag.audio_strides"] = std::move(st);
}

RagConfig config_from_checkpoint(const nn::TensorMap& in) {
  RagConfig c;
  auto i = [&](const char* name) { return static_cast<int>(std::lround(nn::get_scalar(in, name))); };
  // Reals go through f32 in the file; rounding to 7 significant digits recovers the configured value.
  auto r = [&](const char* name) {
    const double v = nn::get_scalar(in, name);
    if (v == 0.0) return v;
    const double scale = std::pow(10.0, 6 - static_cast<int>(std::floor(std::log10(std::abs(v)))));
    return std::round(v * scale) / scale;
  };
  c.frames = i("rag.frames");
  c.pose_dims = i("rag.pose_dims");
  c.latent_dim = i("rag.latent_dim");
  c.n_blocks = i("rag.n_blocks");
  c.audio_kernel = i("rag.audio_kernel");
  c.sample_rate = i("rag.sample_rate");
  c.fps = r("rag.fps");
  c.n_speakers = i("rag.n_speakers");
  c.speaker_dim = i("rag.speaker_dim");
  c.style_dim = i("rag.style_dim");
  c.p_uncond = r("rag.p_uncond");
  c.p_seed = r("rag.p_seed");
  c.leaky_slope = r("rag.leaky_slope");
  c.per_block_temb = i("rag.per_block_temb") != 0;
  c.skip_sigma = r("rag.skip_sigma");
  c.huber_delta = r("rag.huber_delta");
  c.kl_weight = r("rag.kl_weight");
  c.vel_weight = r("rag.vel_weight");
  auto ints = [&](const char* name) {
    auto it = in.find(name);
    if (it == in.end()) fail(Errc::BadIndex, std::string("checkpoint lacks ") + name);
    std::vector<int> v;
    for (float x : it->second.values()) v.push_back(static_cast<int>(std::lround(x)));
    return v;
  };
  c.audio_channels = ints("rag.audio_channels");
  c.audio_strides = ints("rag.audio_strides");
  c.validate();
  return c;
}

void RagTrainer::save(nn::TensorMap& out) const {
  nn::put_scalar(out, "meta.kind", 1.0);
  nn::put_scalar(out, "meta.epoch", epoch);
  config_to_checkpoint(model.config(), out);
  nn::export_params(model.params(), "rag.p.", out);
  norm.save("norm.", out);
  optimizer.export_state("optim.", out);
}

RagTrainer RagTrainer::load(const nn::TensorMap& in) {
  if (static_cast<int>(nn::get_scalar(in, "meta.kind", 0.0)) != 1) fail(Errc::BadConfig, "not a rag checkpoint");
  RagTrainer t{RagModel<float>(config_from_checkpoint(in), 0), PoseNorm{}, nn::Optimizer<float>{}, 0};
  nn::import_params(t.model.params(), "rag.p.", in);
  t.norm = PoseNorm::load("norm.", in);
  t.optimizer.import_state("optim.", in);
  t.epoch = static_cast<int>(nn::get_scalar(in, "meta.epoch", 0.0));
  return t;
}

std::vector<EpochRecord> train_rag(RagTrainer& trainer, const std::vector<RagClip>& data,
                                   const RagTrainOptions& options, const diffusion::NoiseSchedule& schedule,
                                   const std::function<void(const EpochRecord&)>& on_epoch) {
  if (data.empty()) fail(Errc::EmptyBatch, "training set is empty");
  require(options.batch_size >= 1, Errc::BadConfig, "batch_size must be positive");
  const RagConfig& c = trainer.model.config();
  if (trainer.epoch == 0) {
    std::vector<Mat<double>> clips;
    for (const auto& d : data) clips.push_back(d.poses);
    trainer.norm = PoseNorm::fit(clips);
  }
  std::vector<RagExample> examples;
  examples.reserve(data.size());
  for (const auto& d : data) {
    require(d.speaker >= 0 && d.speaker < c.n_speakers, Errc::BadIndex, "speaker id outside the configured range");
    examples.push_back({trainer.norm.apply(d.poses), d.audio, d.speaker});
  }

  const auto keep_steps = trainer.optimizer.steps();
  nn::TensorMap state;
  trainer.optimizer.export_state("", state);
  trainer.optimizer = nn::Optimizer<float>(options.optimizer);
  if (keep_steps > 0) trainer.optimizer.import_state("", state);

  const std::size_t n = examples.size();
  const std::size_t bs = static_cast<std::size_t>(options.batch_size);
  const std::size_t batches_per_epoch = (n + bs - 1) / bs;
  const double total_batches = static_cast<double>(batches_per_epoch) * options.epochs;
  std::vector<EpochRecord> history;
  for (int epoch = trainer.epoch; epoch < options.epochs; ++epoch) {
    Rng rng = Rng(options.seed).fork(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    EpochRecord rec{epoch + 1, {}};
    double weight = 0.0;
    for (std::size_t bi = 0; bi < batches_per_epoch; ++bi) {
      std::vector<const RagExample*> batch;
      for (std::size_t k = bi * bs; k < std::min(n, (bi + 1) * bs); ++k) batch.push_back(&examples[order[k]]);
      const RagDraws draws = draw_rag_draws(batch.size(), c, schedule, rng);
      const LossParts parts = trainer.model.loss(batch, draws, schedule, true);
      nn::clip_grad_norm(trainer.model.params(), options.grad_clip);
      const double progress = (static_cast<double>(epoch) * batches_per_epoch + bi) / total_batches;
      trainer.optimizer.set_lr(nn::cosine_lr(options.optimizer.lr, options.final_lr_fraction, progress));
      trainer.optimizer.step(trainer.model.params());
      const double w = static_cast<double>(batch.size());
      rec.loss.total += w * parts.total;
      rec.loss.rec += w * parts.rec;
      rec.loss.vel += w * parts.vel;
      rec.loss.kl += w * parts.kl;
      weight += w;
    }
    rec.loss.total /= weight;
    rec.loss.rec /= weight;
    rec.loss.vel /= weight;
    rec.loss.kl /= weight;
    trainer.epoch = epoch + 1;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

diffusion::Denoiser make_denoiser(const RagModel<float>& model, std::span<const float> audio, int speaker,
                                  const diffusion::NoiseSchedule& schedule) {
  auto feat = std::make_shared<const Mat<float>>(model.encode_audio(audio));
  auto style = std::make_shared<const Mat<float>>(model.style_sample(speaker, StyleMode::Eval).s);
  return [&model, &schedule, feat, style](const Mat<double>& x_t, int t, bool cond) {
    const Mat<float> x = x_t.cast<float>();
    return model.denoise(x, t, *feat, *style, cond, schedule).cast<double>().eval();
  };
}

Mat<double> generate_clip(const RagModel<float>& model, const PoseNorm& norm, std::span<const float> audio,
                          int speaker, const GenerateOptions& options, const diffusion::NoiseSchedule& schedule,
                          Rng& rng, const Mat<double>* seed_frames) {
  const RagConfig& c = model.config();
  const auto den = make_denoiser(model, audio, speaker, schedule);
  const auto plan = diffusion::make_uniform_plan(schedule.steps(), options.ddim_steps, options.eta);
  diffusion::SampleOptions so;
  so.w = options.w;
  if (seed_frames) so.seed_frames = norm.apply(*seed_frames);
  Mat<double> out = norm.invert(diffusion::ddim_sample(den, c.frames, c.pose_dims, plan, schedule, rng, so));
  if (seed_frames) out.topRows(seed_frames->rows()) = *seed_frames;
  return out;
}

int clip_count(int total_frames, int frames, int overlap) {
  if (total_frames <= frames) return 1;
  const int stride = frames - overlap;
  return (total_frames - frames + stride - 1) / stride + 1;
}

Mat<double> stitch_rows(const std::vector<Mat<double>>& clips, int overlap) {
  require(!clips.empty(), Errc::EmptyBatch, "nothing to stitch");
  Eigen::Index rows = clips.front().rows();
  for (std::size_t i = 1; i < clips.size(); ++i) {
    require(clips[i].cols() == clips.front().cols(), Errc::LayoutMismatch, "clips differ in channel count");
    require(clips[i].rows() >= overlap, Errc::ClipTooShort, "clip shorter than the seed overlap");
    rows += clips[i].rows() - overlap;
  }
  Mat<double> out(rows, clips.front().cols());
  Eigen::Index r = 0;
  for (std::size_t i = 0; i < clips.size(); ++i) {
    const Eigen::Index skip = i == 0 ? 0 : overlap;
    const Eigen::Index n = clips[i].rows() - skip;
    out.middleRows(r, n) = clips[i].bottomRows(n);
    r += n;
  }
  return out;
}

namespace {

constexpr int kOverlap = kSeedFrames;

std::vector<float> clip_audio(const audio::AudioClip& full, int start_frame, const RagConfig& c) {
  return audio::clip_audio_span(full, motion::ClipWindow{start_frame, c.frames, {}}, c.fps).clip.samples;
}

}  // namespace

Mat<double> generate_long(const RagModel<float>& model, const PoseNorm& norm, std::span<const float> samples,
                          int speaker, const GenerateOptions& options, const diffusion::NoiseSchedule& schedule,
                          Rng& rng) {
  const RagConfig& c = model.config();
  const audio::AudioClip full{c.sample_rate, std::vector<float>(samples.begin(), samples.end())};
  const int total = std::max(1, static_cast<int>(std::lround(full.duration() * c.fps)));
  const int n = clip_count(total, c.frames, kOverlap);
  std::vector<Mat<double>> clips;
  for (int i = 0; i < n; ++i) {
    const auto a = clip_audio(full, i * (c.frames - kOverlap), c);
    Mat<double> seed;
    if (i > 0) seed = clips.back().bottomRows(kOverlap);
    clips.push_back(generate_clip(model, norm, a, speaker, options, schedule, rng, i > 0 ? &seed : nullptr));
  }
  return stitch_rows(clips, kOverlap);
}

Mat<double> empower_long(const RagModel<float>& model, const PoseNorm& norm, const Mat<double>& motion,
                         std::span<const float> samples, int speaker, int K, const GenerateOptions& options,
                         const diffusion::NoiseSchedule& schedule, Rng& rng) {
  const RagConfig& c = model.config();
  if (K < 0 || K > options.ddim_steps) fail(Errc::KOutOfRange, "K outside [0, ddim steps]");
  require(motion.rows() >= 1 && motion.cols() == c.pose_dims, Errc::ShapeMismatch, "motion does not match the model");
  if (K == 0) return motion;
  const audio::AudioClip full{c.sample_rate, std::vector<float>(samples.begin(), samples.end())};
  const int total = static_cast<int>(motion.rows());
  const int n = clip_count(total, c.frames, kOverlap);
  std::vector<Mat<double>> clips;
  for (int i = 0; i < n; ++i) {
    const int start = i * (c.frames - kOverlap);
    Mat<double> x_in(c.frames, c.pose_dims);
    for (int f = 0; f < c.frames; ++f) x_in.row(f) = motion.row(std::min(start + f, total - 1));
    const auto den = make_denoiser(model, clip_audio(full, start, c), speaker, schedule);
    diffusion::SampleOptions so;
    so.w = options.w;
    if (i > 0) so.seed_frames = norm.apply(clips.back().bottomRows(kOverlap));
    Mat<double> out =
        norm.invert(diffusion::sdedit_empower(den, norm.apply(x_in), K, options.ddim_steps, schedule, rng, so,
                                              options.eta));
    if (i > 0) out.topRows(kOverlap) = clips.back().bottomRows(kOverlap);
    clips.push_back(std::move(out));
  }
  Mat<double> stitched = stitch_rows(clips, kOverlap);
  return stitched.topRows(std::min<Eigen::Index>(stitched.rows(), total));
}

template class RagModel<float>;
template class RagModel<double>;

}  // namespace lively::rag
