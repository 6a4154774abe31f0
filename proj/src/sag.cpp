#include "lively/sag.hpp"

#include "lively/error.hpp"

#include <cmath>
#include <numeric>

namespace lively::sag {

void SagConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, Errc::BadConfig, "sag config: " + msg); };
  check(frames >= 1 && pose_dims >= 1, "frames and pose_dims must be positive");
  check(d_model >= 2 && d_model % 2 == 0, "d_model must be even and positive");
  check(heads >= 1 && d_model % heads == 0, "d_model must be divisible by heads");
  check(ff_dim >= 1 && enc_layers >= 1 && dec_layers >= 1, "ff_dim and layer counts must be positive");
  check(latent_dim >= 1, "latent_dim must be positive");
  check(lambda_cos >= 0.0, "lambda_cos must be non-negative");
}

double cosine_loss(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  require(a.size() == b.size(), Errc::ShapeMismatch, "cosine of vectors with different sizes");
  const double na = a.norm(), nb = b.norm();
  if (na < 1e-10 || nb < 1e-10) fail(Errc::ZeroVector, "cosine of a zero vector");
  return 1.0 - a.dot(b) / (na * nb);
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

}  // namespace

template <typename T>
struct SagModel<T>::Impl {
  using M = Mat<T>;
  using Params = nn::ParamTree<T>;

  static M lin(const Params& p, const std::string& name, const M& x) {
    return nn::linear<T>(x, p.w(name + ".w"), p.w(name + ".b"));
  }
  static M lin_back(Params& p, const std::string& name, const M& x, const M& dy) {
    return nn::linear_backward<T>(x, p.w(name + ".w"), dy, p.g(name + ".w"), p.g(name + ".b"));
  }

  struct SelfAttn {
    M x, qkv, ctx;
    std::vector<nn::AttentionCache<T>> att;
  };

  static M self_attn(const Params& p, const std::string& name, const M& x, Eigen::Index B, Eigen::Index n, int heads,
                     SelfAttn* cache) {
    const Eigen::Index d = x.cols();
    M qkv = lin(p, name + ".qkv", x);
    M ctx(x.rows(), d);
    std::vector<nn::AttentionCache<T>> att(cache ? static_cast<std::size_t>(B) : 0);
    for (Eigen::Index b = 0; b < B; ++b) {
      const M q = qkv.block(b * n, 0, n, d);
      const M k = qkv.block(b * n, d, n, d);
      const M v = qkv.block(b * n, 2 * d, n, d);
      ctx.middleRows(b * n, n) =
          nn::multihead_attention<T>(q, k, v, heads, nullptr, cache ? &att[static_cast<std::size_t>(b)] : nullptr);
    }
    M out = lin(p, name + ".o", ctx);
    if (cache) *cache = {x, std::move(qkv), std::move(ctx), std::move(att)};
    return out;
  }

  static M self_attn_back(Params& p, const std::string& name, const SelfAttn& c, const M& dout, Eigen::Index B,
                          Eigen::Index n, int heads) {
    const Eigen::Index d = c.x.cols();
    M dctx = lin_back(p, name + ".o", c.ctx, dout);
    M dqkv(c.qkv.rows(), 3 * d);
    for (Eigen::Index b = 0; b < B; ++b) {
      const M q = c.qkv.block(b * n, 0, n, d);
      const M k = c.qkv.block(b * n, d, n, d);
      const M v = c.qkv.block(b * n, 2 * d, n, d);
      const M dc = dctx.middleRows(b * n, n);
      auto g = nn::multihead_attention_backward<T>(q, k, v, heads, c.att[static_cast<std::size_t>(b)], dc);
      dqkv.block(b * n, 0, n, d) = g.dq;
      dqkv.block(b * n, d, n, d) = g.dk;
      dqkv.block(b * n, 2 * d, n, d) = g.dv;
    }
    return lin_back(p, name + ".qkv", c.x, dqkv);
  }

  struct CrossAttn {
    M x, mem, q, kv, ctx;
    std::vector<nn::AttentionCache<T>> att;
  };

  // Queries from x [B*n x d], keys/values from mem [B*m x d].
  static M cross_attn(const Params& p, const std::string& name, const M& x, const M& mem, Eigen::Index B,
                      Eigen::Index n, Eigen::Index m, int heads, CrossAttn* cache) {
    const Eigen::Index d = x.cols();
    M q = lin(p, name + ".q", x);
    M kv = lin(p, name + ".kv", mem);
    M ctx(x.rows(), d);
    std::vector<nn::AttentionCache<T>> att(cache ? static_cast<std::size_t>(B) : 0);
    for (Eigen::Index b = 0; b < B; ++b) {
      const M qb = q.middleRows(b * n, n);
      const M k = kv.block(b * m, 0, m, d);
      const M v = kv.block(b * m, d, m, d);
      ctx.middleRows(b * n, n) =
          nn::multihead_attention<T>(qb, k, v, heads, nullptr, cache ? &att[static_cast<std::size_t>(b)] : nullptr);
    }
    M out = lin(p, name + ".o", ctx);
    if (cache) *cache = {x, mem, std::move(q), std::move(kv), std::move(ctx), std::move(att)};
    return out;
  }

  static void cross_attn_back(Params& p, const std::string& name, const CrossAttn& c, const M& dout, Eigen::Index B,
                              Eigen::Index n, Eigen::Index m, int heads, M& dx, M& dmem) {
    const Eigen::Index d = c.x.cols();
    M dctx = lin_back(p, name + ".o", c.ctx, dout);
    M dq(c.q.rows(), d);
    M dkv(c.kv.rows(), 2 * d);
    for (Eigen::Index b = 0; b < B; ++b) {
      const M qb = c.q.middleRows(b * n, n);
      const M k = c.kv.block(b * m, 0, m, d);
      const M v = c.kv.block(b * m, d, m, d);
      const M dc = dctx.middleRows(b * n, n);
      auto g = nn::multihead_attention_backward<T>(qb, k, v, heads, c.att[static_cast<std::size_t>(b)], dc);
      dq.middleRows(b * n, n) = g.dq;
      dkv.block(b * m, 0, m, d) = g.dk;
      dkv.block(b * m, d, m, d) = g.dv;
    }
    dx = lin_back(p, name + ".q", c.x, dq);
    dmem = lin_back(p, name + ".kv", c.mem, dkv);
  }

  struct FeedForward {
    M x, h;
  };

  static M feed_forward(const Params& p, const std::string& name, const M& x, FeedForward* cache) {
    M h = lin(p, name + ".ff1", x);
    M out = lin(p, name + ".ff2", nn::silu<T>(h));
    if (cache) *cache = {x, std::move(h)};
    return out;
  }

  static M feed_forward_back(Params& p, const std::string& name, const FeedForward& c, const M& dout) {
    M dact = lin_back(p, name + ".ff2", nn::silu<T>(c.h), dout);
    return lin_back(p, name + ".ff1", c.x, nn::silu_backward<T>(c.h, dact));
  }

  static M norm(const Params& p, const std::string& name, const M& x, nn::LayerNormCache<T>* cache) {
    return nn::layer_norm<T>(x, p.w(name + ".g"), p.w(name + ".b"), cache);
  }
  static M norm_back(Params& p, const std::string& name, const nn::LayerNormCache<T>& c, const M& dy) {
    return nn::layer_norm_backward<T>(c, p.w(name + ".g"), dy, p.g(name + ".g"), p.g(name + ".b"));
  }

  struct EncLayer {
    SelfAttn sa;
    FeedForward ff;
    nn::LayerNormCache<T> ln1, ln2;
  };
  struct DecLayer {
    SelfAttn sa;
    CrossAttn ca;
    FeedForward ff;
    nn::LayerNormCache<T> ln1, ln2, ln3;
  };

  struct Cache {
    M x, pooled, z, zn, mem, dec_out;
    Eigen::Matrix<T, Eigen::Dynamic, 1> z_norm;
    std::vector<EncLayer> enc;
    std::vector<DecLayer> dec;
  };

  static M positional(const SagConfig& c) {
    M pe(c.frames, c.d_model);
    for (int f = 0; f < c.frames; ++f) pe.row(f) = nn::sinusoidal_embedding<T>(f, c.d_model);
    return pe;
  }

  // x [B*frames x pose_dims] -> z [B x latent_dim]
  static M encode_batch(const SagModel& model, const M& x, Eigen::Index B, Cache* cache) {
    const SagConfig& c = model.config_;
    const auto& p = model.params_;
    const Eigen::Index F = c.frames;
    if (x.rows() != B * F || x.cols() != c.pose_dims) fail(Errc::ShapeMismatch, "sag encode: input shape");
    M h = lin(p, "in", x);
    const M pe = positional(c);
    for (Eigen::Index b = 0; b < B; ++b) h.middleRows(b * F, F) += pe;
    if (cache) cache->enc.assign(static_cast<std::size_t>(c.enc_layers), EncLayer{});
    for (int l = 0; l < c.enc_layers; ++l) {
      const std::string name = "enc" + std::to_string(l);
      EncLayer local;
      EncLayer& lc = cache ? cache->enc[static_cast<std::size_t>(l)] : local;
      M a = h + self_attn(p, name + ".sa", h, B, F, c.heads, &lc.sa);
      h = norm(p, name + ".ln1", a, &lc.ln1);
      M f = h + feed_forward(p, name, h, &lc.ff);
      h = norm(p, name + ".ln2", f, &lc.ln2);
    }
    M pooled(B, c.d_model);
    for (Eigen::Index b = 0; b < B; ++b) pooled.row(b) = h.middleRows(b * F, F).colwise().mean();
    M z = lin(p, "latent", pooled);
    if (cache) {
      cache->x = x;
      cache->pooled = std::move(pooled);
      cache->z = z;
    }
    return z;
  }

  static M decode_batch(const SagModel& model, const M& z, Cache* cache) {
    const SagConfig& c = model.config_;
    const auto& p = model.params_;
    const Eigen::Index B = z.rows();
    const Eigen::Index F = c.frames;
    if (z.cols() != c.latent_dim) fail(Errc::ShapeMismatch, "sag decode: latent width");
    Eigen::Matrix<T, Eigen::Dynamic, 1> zn_norm(B);
    M zn(B, z.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
      zn_norm[b] = z.row(b).norm();
      if (!(static_cast<double>(zn_norm[b]) >= 1e-10)) fail(Errc::ZeroVector, "sag decode: zero latent");
      zn.row(b) = z.row(b) / zn_norm[b];
    }
    M mem = lin(p, "memory", zn);
    M h(B * F, c.d_model);
    const auto queries = p.w("queries");
    for (Eigen::Index b = 0; b < B; ++b) h.middleRows(b * F, F) = queries;
    if (cache) cache->dec.assign(static_cast<std::size_t>(c.dec_layers), DecLayer{});
    for (int l = 0; l < c.dec_layers; ++l) {
      const std::string name = "dec" + std::to_string(l);
      DecLayer local;
      DecLayer& lc = cache ? cache->dec[static_cast<std::size_t>(l)] : local;
      M a = h + self_attn(p, name + ".sa", h, B, F, c.heads, &lc.sa);
      h = norm(p, name + ".ln1", a, &lc.ln1);
      M x2 = h + cross_attn(p, name + ".ca", h, mem, B, F, 1, c.heads, &lc.ca);
      h = norm(p, name + ".ln2", x2, &lc.ln2);
      M f = h + feed_forward(p, name, h, &lc.ff);
      h = norm(p, name + ".ln3", f, &lc.ln3);
    }
    M out = lin(p, "out", h);
    if (cache) {
      cache->zn = std::move(zn);
      cache->z_norm = std::move(zn_norm);
      cache->mem = std::move(mem);
      cache->dec_out = std::move(h);
    }
    return out;
  }

  // Returns d(z) [B x latent].
  static M decode_back(SagModel& model, const Cache& cache, const M& dout) {
    const SagConfig& c = model.config_;
    auto& p = model.params_;
    const Eigen::Index B = cache.zn.rows();
    const Eigen::Index F = c.frames;
    M dh = lin_back(p, "out", cache.dec_out, dout);
    M dmem = M::Zero(B, c.d_model);
    for (int l = c.dec_layers - 1; l >= 0; --l) {
      const std::string name = "dec" + std::to_string(l);
      const DecLayer& lc = cache.dec[static_cast<std::size_t>(l)];
      M df = norm_back(p, name + ".ln3", lc.ln3, dh);
      dh = df + feed_forward_back(p, name, lc.ff, df);
      M dx2 = norm_back(p, name + ".ln2", lc.ln2, dh);
      M dq, dm;
      cross_attn_back(p, name + ".ca", lc.ca, dx2, B, F, 1, c.heads, dq, dm);
      dmem += dm;
      dh = dx2 + dq;
      M da = norm_back(p, name + ".ln1", lc.ln1, dh);
      dh = da + self_attn_back(p, name + ".sa", lc.sa, da, B, F, c.heads);
    }
    auto dq = p.g("queries");
    for (Eigen::Index b = 0; b < B; ++b) dq += dh.middleRows(b * F, F);
    M dzn = lin_back(p, "memory", cache.zn, dmem);
    M dz(B, dzn.cols());
    for (Eigen::Index b = 0; b < B; ++b) {
      const T proj = cache.zn.row(b).dot(dzn.row(b));
      dz.row(b) = (dzn.row(b) - proj * cache.zn.row(b)) / cache.z_norm[b];
    }
    return dz;
  }

  static void encode_back(SagModel& model, const Cache& cache, const M& dz) {
    const SagConfig& c = model.config_;
    auto& p = model.params_;
    const Eigen::Index B = dz.rows();
    const Eigen::Index F = c.frames;
    M dpooled = lin_back(p, "latent", cache.pooled, dz);
    M dh(B * F, c.d_model);
    for (Eigen::Index b = 0; b < B; ++b) dh.middleRows(b * F, F).rowwise() = dpooled.row(b) / static_cast<T>(F);
    for (int l = c.enc_layers - 1; l >= 0; --l) {
      const std::string name = "enc" + std::to_string(l);
      const EncLayer& lc = cache.enc[static_cast<std::size_t>(l)];
      M df = norm_back(p, name + ".ln2", lc.ln2, dh);
      dh = df + feed_forward_back(p, name, lc.ff, df);
      M da = norm_back(p, name + ".ln1", lc.ln1, dh);
      dh = da + self_attn_back(p, name + ".sa", lc.sa, da, B, F, c.heads);
    }
    lin_back(p, "in", cache.x, dh);
  }
};

template <typename T>
SagModel<T>::SagModel(SagConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  const SagConfig& c = config_;
  Rng rng(seed);
  auto& p = params_;
  linear_params(p, "in", c.pose_dims, c.d_model, rng);
  for (int l = 0; l < c.enc_layers; ++l) {
    const std::string name = "enc" + std::to_string(l);
    linear_params(p, name + ".sa.qkv", c.d_model, 3 * c.d_model, rng);
    linear_params(p, name + ".sa.o", c.d_model, c.d_model, rng);
    norm_params(p, name + ".ln1", c.d_model);
    linear_params(p, name + ".ff1", c.d_model, c.ff_dim, rng);
    linear_params(p, name + ".ff2", c.ff_dim, c.d_model, rng);
    norm_params(p, name + ".ln2", c.d_model);
  }
  linear_params(p, "latent", c.d_model, c.latent_dim, rng);
  linear_params(p, "memory", c.latent_dim, c.d_model, rng);
  auto& q = p.add("queries", {static_cast<std::size_t>(c.frames), static_cast<std::size_t>(c.d_model)});
  for (auto& v : q.values()) v = static_cast<T>(rng.normal());
  for (int l = 0; l < c.dec_layers; ++l) {
    const std::string name = "dec" + std::to_string(l);
    linear_params(p, name + ".sa.qkv", c.d_model, 3 * c.d_model, rng);
    linear_params(p, name + ".sa.o", c.d_model, c.d_model, rng);
    norm_params(p, name + ".ln1", c.d_model);
    linear_params(p, name + ".ca.q", c.d_model, c.d_model, rng);
    linear_params(p, name + ".ca.kv", c.d_model, 2 * c.d_model, rng);
    linear_params(p, name + ".ca.o", c.d_model, c.d_model, rng);
    norm_params(p, name + ".ln2", c.d_model);
    linear_params(p, name + ".ff1", c.d_model, c.ff_dim, rng);
    linear_params(p, name + ".ff2", c.ff_dim, c.d_model, rng);
    norm_params(p, name + ".ln3", c.d_model);
  }
  linear_params(p, "out", c.d_model, c.pose_dims, rng);
}

template <typename T>
Mat<T> SagModel<T>::encode(const Mat<T>& x) const {
  return Impl::encode_batch(*this, x, 1, nullptr);
}

template <typename T>
Mat<T> SagModel<T>::decode(const Mat<T>& z) const {
  if (z.rows() != 1) fail(Errc::ShapeMismatch, "sag decode expects one latent row");
  return Impl::decode_batch(*this, z, nullptr);
}

template <typename T>
SagLossParts SagModel<T>::loss(const std::vector<SagExample>& batch, bool backward) {
  std::vector<const SagExample*> ptrs;
  for (const auto& e : batch) ptrs.push_back(&e);
  return loss(ptrs, backward);
}

template <typename T>
SagLossParts SagModel<T>::loss(const std::vector<const SagExample*>& batch, bool backward) {
  using M = Mat<T>;
  if (batch.empty()) fail(Errc::EmptyBatch, "sag_loss needs at least one example");
  const SagConfig& c = config_;
  const Eigen::Index B = static_cast<Eigen::Index>(batch.size());
  const Eigen::Index F = c.frames, P = c.pose_dims;
  M x(B * F, P);
  for (Eigen::Index b = 0; b < B; ++b) {
    const auto& ex = *batch[static_cast<std::size_t>(b)];
    if (ex.x.rows() != F || ex.x.cols() != P) fail(Errc::ShapeMismatch, "sag_loss: pose clip shape");
    if (ex.z_text.rows() != 1 || ex.z_text.cols() != c.latent_dim) fail(Errc::ShapeMismatch, "sag_loss: text shape");
    x.middleRows(b * F, F) = ex.x.cast<T>();
  }
  typename Impl::Cache cache;
  const M z = Impl::encode_batch(*this, x, B, backward ? &cache : nullptr);
  const M xhat = Impl::decode_batch(*this, z, backward ? &cache : nullptr);

  SagLossParts parts;
  const double n = static_cast<double>(B) * F * P;
  M dxhat(xhat.rows(), xhat.cols());
  for (Eigen::Index i = 0; i < xhat.size(); ++i) {
    const double d = static_cast<double>(xhat.data()[i]) - static_cast<double>(x.data()[i]);
    parts.rec += d * d;
    dxhat.data()[i] = static_cast<T>(2.0 * d / n);
  }
  parts.rec /= n;
  M dz_cos(B, c.latent_dim);
  for (Eigen::Index b = 0; b < B; ++b) {
    const Eigen::VectorXd a = batch[static_cast<std::size_t>(b)]->z_text.row(0).transpose();
    const Eigen::VectorXd zb = z.row(b).transpose().template cast<double>();
    parts.cos += cosine_loss(a, zb);
    const double na = a.norm(), nz = zb.norm();
    const double cosv = a.dot(zb) / (na * nz);
    const Eigen::VectorXd g = -(a / (na * nz) - cosv * zb / (nz * nz)) * (c.lambda_cos / static_cast<double>(B));
    dz_cos.row(b) = g.transpose().cast<T>();
  }
  parts.cos /= static_cast<double>(B);
  parts.total = parts.rec + c.lambda_cos * parts.cos;
  if (!backward) return parts;

  params_.zero_grad();
  M dz = Impl::decode_back(*this, cache, dxhat);
  dz += dz_cos;
  Impl::encode_back(*this, cache, dz);
  return parts;
}

template class SagModel<float>;
template class SagModel<double>;

void SagTrainer::save(nn::TensorMap& out) const {
  const SagConfig& c = model.config();
  nn::put_scalar(out, "meta.kind", 2.0);
  nn::put_scalar(out, "meta.epoch", epoch);
  nn::put_scalar(out, "sag.frames", c.frames);
  nn::put_scalar(out, "sag.pose_dims", c.pose_dims);
  nn::put_scalar(out, "sag.d_model", c.d_model);
  nn::put_scalar(out, "sag.ff_dim", c.ff_dim);
  nn::put_scalar(out, "sag.enc_layers", c.enc_layers);
  nn::put_scalar(out, "sag.dec_layers", c.dec_layers);
  nn::put_scalar(out, "sag.heads", c.heads);
  nn::put_scalar(out, "sag.latent_dim", c.latent_dim);
  nn::put_scalar(out, "sag.lambda_cos", c.lambda_cos);
  nn::export_params(model.params(), "sag.p.", out);
  norm.save("norm.", out);
  optimizer.export_state("optim.", out);
}

SagTrainer SagTrainer::load(const nn::TensorMap& in) {
  if (static_cast<int>(nn::get_scalar(in, "meta.kind", 0.0)) != 2) fail(Errc::BadConfig, "not a sag checkpoint");
  auto i = [&](const char* name) { return static_cast<int>(std::lround(nn::get_scalar(in, name))); };
  SagConfig c;
  c.frames = i("sag.frames");
  c.pose_dims = i("sag.pose_dims");
  c.d_model = i("sag.d_model");
  c.ff_dim = i("sag.ff_dim");
  c.enc_layers = i("sag.enc_layers");
  c.dec_layers = i("sag.dec_layers");
  c.heads = i("sag.heads");
  c.latent_dim = i("sag.latent_dim");
  c.lambda_cos = std::round(nn::get_scalar(in, "sag.lambda_cos") * 1e6) / 1e6;
  SagTrainer t{SagModel<float>(c, 0), PoseNorm{}, nn::Optimizer<float>{}, 0};
  nn::import_params(t.model.params(), "sag.p.", in);
  t.norm = PoseNorm::load("norm.", in);
  t.optimizer.import_state("optim.", in);
  t.epoch = i("meta.epoch");
  return t;
}

std::vector<SagEpochRecord> train_sag(SagTrainer& trainer, const std::vector<SagClip>& data,
                                      const SagTrainOptions& options,
                                      const std::function<void(const SagEpochRecord&)>& on_epoch) {
  if (data.empty()) fail(Errc::EmptyBatch, "training set is empty");
  require(options.batch_size >= 1, Errc::BadConfig, "batch_size must be positive");
  if (trainer.epoch == 0) {
    std::vector<Mat<double>> clips;
    for (const auto& d : data) clips.push_back(d.poses);
    trainer.norm = PoseNorm::fit(clips);
  }
  std::vector<SagExample> examples;
  examples.reserve(data.size());
  for (const auto& d : data) examples.push_back({trainer.norm.apply(d.poses), d.text.transpose()});

  const auto keep_steps = trainer.optimizer.steps();
  nn::TensorMap state;
  trainer.optimizer.export_state("", state);
  trainer.optimizer = nn::Optimizer<float>(options.optimizer);
  if (keep_steps > 0) trainer.optimizer.import_state("", state);

  const std::size_t n = examples.size();
  const std::size_t bs = static_cast<std::size_t>(options.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  const double total_batches = static_cast<double>(batches) * options.epochs;
  std::vector<SagEpochRecord> history;
  for (int epoch = trainer.epoch; epoch < options.epochs; ++epoch) {
    Rng rng = Rng(options.seed).fork(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    SagEpochRecord rec{epoch + 1, {}};
    double weight = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::vector<const SagExample*> batch;
      for (std::size_t k = bi * bs; k < std::min(n, (bi + 1) * bs); ++k) batch.push_back(&examples[order[k]]);
      const SagLossParts parts = trainer.model.loss(batch, true);
      nn::clip_grad_norm(trainer.model.params(), options.grad_clip);
      const double progress = (static_cast<double>(epoch) * batches + bi) / total_batches;
      trainer.optimizer.set_lr(nn::cosine_lr(options.optimizer.lr, options.final_lr_fraction, progress));
      trainer.optimizer.step(trainer.model.params());
      const double w = static_cast<double>(batch.size());
      rec.loss.total += w * parts.total;
      rec.loss.rec += w * parts.rec;
      rec.loss.cos += w * parts.cos;
      weight += w;
    }
    rec.loss.total /= weight;
    rec.loss.rec /= weight;
    rec.loss.cos /= weight;
    trainer.epoch = epoch + 1;
    history.push_back(rec);
    if (on_epoch) on_epoch(rec);
  }
  return history;
}

Mat<double> generate_from_text(const SagModel<float>& model, const PoseNorm& norm, std::string_view script,
                               const text::EmbeddingProvider& provider) {
  const Eigen::VectorXd e = provider.embed(script);
  require(e.size() == model.config().latent_dim, Errc::ShapeMismatch, "embedding width does not match the model");
  const Mat<float> z = e.transpose().cast<float>();
  return norm.invert(model.decode(z).cast<double>());
}

Mat<double> prompt_edit(const SagModel<float>& model, const PoseNorm& norm, std::string_view script,
                        std::string_view extra_prompt, const text::EmbeddingProvider& provider) {
  if (text::tokenize(extra_prompt).empty()) return generate_from_text(model, norm, script, provider);
  std::string combined(script);
  combined += ' ';
  combined += extra_prompt;
  return generate_from_text(model, norm, combined, provider);
}

}  // namespace lively::sag
