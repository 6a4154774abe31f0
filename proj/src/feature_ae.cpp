#include "lively/feature_ae.hpp"

#include "lively/error.hpp"

#include <cmath>
#include <numeric>

namespace lively::metrics {

void FeatureAeConfig::validate() const {
  auto check = [](bool ok, const std::string& msg) { require(ok, Errc::BadConfig, "feature autoencoder: " + msg); };
  check(frames >= 1 && pose_dims >= 1, "frames and pose_dims must be positive");
  check(hidden >= 1 && latent >= 1 && decoder_hidden >= 1, "layer widths must be positive");
  check(pool_bins >= 1, "pool_bins must be positive");
  const int l2 = nn::Conv1dSpec{5, 2, 2}.output_length(nn::Conv1dSpec{5, 2, 2}.output_length(frames));
  check(l2 >= pool_bins, "clip too short for the pooling bins");
}

namespace {

template <typename T>
void linear_params(nn::ParamTree<T>& p, const std::string& name, int in, int out, Rng& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  nn::init_uniform(p.add(name + ".w", {static_cast<std::size_t>(in), static_cast<std::size_t>(out)}), bound, rng);
  nn::init_uniform(p.add(name + ".b", {static_cast<std::size_t>(out)}), bound, rng);
}

constexpr nn::Conv1dSpec kConv{5, 2, 2};

}  // namespace

template <typename T>
struct FeatureAutoencoder<T>::Impl {
  using M = Mat<T>;

  struct Cache {
    nn::Conv1dCache<T> c1, c2;
    M pre1, pre2, h2, flat, z, d1;
  };

  static M pool_matrix(int length, int bins) {
    M m = M::Zero(length, bins);
    for (int b = 0; b < bins; ++b) {
      const int lo = b * length / bins;
      const int hi = ((b + 1) * length + bins - 1) / bins;
      for (int i = lo; i < hi; ++i) m(i, b) = T(1) / static_cast<T>(hi - lo);
    }
    return m;
  }

  static auto kernel(const nn::ParamTree<T>& p, const std::string& name, int cout, int cin) {
    return nn::reshaped(p.weight(name), cout, static_cast<Eigen::Index>(cin) * kConv.kernel);
  }

  static M encode(const FeatureAutoencoder& ae, const M& x, Cache* cache) {
    const auto& c = ae.config_;
    const auto& p = ae.params_;
    if (x.rows() != c.frames || x.cols() != c.pose_dims) fail(Errc::ShapeMismatch, "feature encoder input shape");
    const T slope = static_cast<T>(c.leaky_slope);
    M xt = x.transpose();
    Cache local;
    Cache& k = cache ? *cache : local;
    k.pre1 = nn::conv1d<T>(xt, kernel(p, "conv1.w", c.hidden, c.pose_dims), p.w("conv1.b"), kConv, &k.c1);
    M h1 = nn::leaky_relu<T>(k.pre1, slope);
    k.pre2 = nn::conv1d<T>(h1, kernel(p, "conv2.w", c.hidden, c.hidden), p.w("conv2.b"), kConv, &k.c2);
    k.h2 = nn::leaky_relu<T>(k.pre2, slope);
    M pooled = k.h2 * pool_matrix(static_cast<int>(k.h2.cols()), c.pool_bins);
    k.flat = Eigen::Map<const M>(pooled.data(), 1, pooled.size());
    k.z = nn::linear<T>(k.flat, p.w("head.w"), p.w("head.b"));
    return k.z;
  }

  static M decode(const FeatureAutoencoder& ae, const M& z, Cache* cache) {
    const auto& c = ae.config_;
    const auto& p = ae.params_;
    if (z.rows() != 1 || z.cols() != c.latent) fail(Errc::ShapeMismatch, "feature decoder input shape");
    M d1 = nn::linear<T>(z, p.w("dec1.w"), p.w("dec1.b"));
    M out = nn::linear<T>(nn::leaky_relu<T>(d1, static_cast<T>(c.leaky_slope)), p.w("dec2.w"), p.w("dec2.b"));
    if (cache) cache->d1 = std::move(d1);
    return Eigen::Map<const M>(out.data(), c.frames, c.pose_dims);
  }

  static void backward(FeatureAutoencoder& ae, const Cache& k, const M& dout) {
    const auto& c = ae.config_;
    auto& p = ae.params_;
    const T slope = static_cast<T>(c.leaky_slope);
    const M dflat_out = Eigen::Map<const M>(dout.data(), 1, dout.size());
    const M a1 = nn::leaky_relu<T>(k.d1, slope);
    M da1 = nn::linear_backward<T>(a1, p.w("dec2.w"), dflat_out, p.g("dec2.w"), p.g("dec2.b"));
    M dd1 = nn::leaky_relu_backward<T>(k.d1, da1, slope);
    M dz = nn::linear_backward<T>(k.z, p.w("dec1.w"), dd1, p.g("dec1.w"), p.g("dec1.b"));
    M dflat = nn::linear_backward<T>(k.flat, p.w("head.w"), dz, p.g("head.w"), p.g("head.b"));
    const M dpooled = Eigen::Map<const M>(dflat.data(), c.hidden, c.pool_bins);
    M dh2 = dpooled * pool_matrix(static_cast<int>(k.h2.cols()), c.pool_bins).transpose();
    M dpre2 = nn::leaky_relu_backward<T>(k.pre2, dh2, slope);
    auto dk2 = nn::reshaped(p.grad("conv2.w"), c.hidden, static_cast<Eigen::Index>(c.hidden) * kConv.kernel);
    M dh1 = nn::conv1d_backward<T>(k.c2, kernel(p, "conv2.w", c.hidden, c.hidden), dpre2, kConv, dk2, p.g("conv2.b"));
    M dpre1 = nn::leaky_relu_backward<T>(k.pre1, dh1, slope);
    auto dk1 = nn::reshaped(p.grad("conv1.w"), c.hidden, static_cast<Eigen::Index>(c.pose_dims) * kConv.kernel);
    nn::conv1d_backward<T>(k.c1, kernel(p, "conv1.w", c.hidden, c.pose_dims), dpre1, kConv, dk1, p.g("conv1.b"));
  }
};

template <typename T>
FeatureAutoencoder<T>::FeatureAutoencoder(FeatureAeConfig config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const auto& c = config_;
  Rng rng(seed);
  auto conv = [&](const std::string& name, int cout, int cin) {
    const double bound = 1.0 / std::sqrt(static_cast<double>(cin * kConv.kernel));
    nn::init_uniform(params_.add(name + ".w", {static_cast<std::size_t>(cout), static_cast<std::size_t>(cin),
                                               static_cast<std::size_t>(kConv.kernel)}),
                     bound, rng);
    nn::init_uniform(params_.add(name + ".b", {static_cast<std::size_t>(cout)}), bound, rng);
  };
  conv("conv1", c.hidden, c.pose_dims);
  conv("conv2", c.hidden, c.hidden);
  linear_params(params_, "head", c.hidden * c.pool_bins, c.latent, rng);
  linear_params(params_, "dec1", c.latent, c.decoder_hidden, rng);
  linear_params(params_, "dec2", c.decoder_hidden, c.frames * c.pose_dims, rng);
}

template <typename T>
Mat<T> FeatureAutoencoder<T>::encode(const Mat<T>& x) const {
  return Impl::encode(*this, x, nullptr);
}

template <typename T>
Mat<T> FeatureAutoencoder<T>::decode(const Mat<T>& z) const {
  return Impl::decode(*this, z, nullptr);
}

template <typename T>
double FeatureAutoencoder<T>::loss(const std::vector<const Mat<double>*>& batch, bool backward) {
  if (batch.empty()) fail(Errc::EmptyBatch, "autoencoder loss needs at least one clip");
  const double n = static_cast<double>(batch.size()) * config_.frames * config_.pose_dims;
  if (backward) params_.zero_grad();
  double total = 0.0;
  for (const Mat<double>* clip : batch) {
    typename Impl::Cache cache;
    const Mat<T> x = clip->cast<T>();
    const Mat<T> z = Impl::encode(*this, x, &cache);
    const Mat<T> y = Impl::decode(*this, z, &cache);
    Mat<T> dy(y.rows(), y.cols());
    for (Eigen::Index i = 0; i < y.size(); ++i) {
      const double d = static_cast<double>(y.data()[i]) - clip->data()[i];
      total += d * d;
      dy.data()[i] = static_cast<T>(2.0 * d / n);
    }
    if (backward) Impl::backward(*this, cache, dy);
  }
  return total / n;
}

template class FeatureAutoencoder<float>;
template class FeatureAutoencoder<double>;

Mat<double> FeatureExtractor::embed(const std::vector<Mat<double>>& clips) const {
  Mat<double> out(static_cast<Eigen::Index>(clips.size()), model.config().latent);
  for (std::size_t i = 0; i < clips.size(); ++i) {
    out.row(static_cast<Eigen::Index>(i)) = model.encode(norm.apply(clips[i]).cast<float>()).cast<double>();
  }
  return out;
}

Mat<double> FeatureExtractor::reconstruct(const Mat<double>& clip) const {
  const Mat<float> z = model.encode(norm.apply(clip).cast<float>());
  return norm.invert(model.decode(z).cast<double>());
}

void FeatureExtractor::save(nn::TensorMap& out) const {
  const auto& c = model.config();
  nn::put_scalar(out, "meta.kind", 3.0);
  nn::put_scalar(out, "meta.epoch", epoch);
  nn::put_scalar(out, "ae.frames", c.frames);
  nn::put_scalar(out, "ae.pose_dims", c.pose_dims);
  nn::put_scalar(out, "ae.hidden", c.hidden);
  nn::put_scalar(out, "ae.latent", c.latent);
  nn::put_scalar(out, "ae.pool_bins", c.pool_bins);
  nn::put_scalar(out, "ae.decoder_hidden", c.decoder_hidden);
  nn::put_scalar(out, "ae.leaky_slope", c.leaky_slope);
  nn::put_scalar(out, "ae.final_mse", final_mse);
  nn::export_params(model.params(), "ae.p.", out);
  norm.save("norm.", out);
  optimizer.export_state("optim.", out);
}

FeatureExtractor FeatureExtractor::load(const nn::TensorMap& in) {
  if (static_cast<int>(nn::get_scalar(in, "meta.kind", 0.0)) != 3) {
    fail(Errc::BadConfig, "not a feature autoencoder checkpoint");
  }
  auto i = [&](const char* name) { return static_cast<int>(std::lround(nn::get_scalar(in, name))); };
  FeatureAeConfig c;
  c.frames = i("ae.frames");
  c.pose_dims = i("ae.pose_dims");
  c.hidden = i("ae.hidden");
  c.latent = i("ae.latent");
  c.pool_bins = i("ae.pool_bins");
  c.decoder_hidden = i("ae.decoder_hidden");
  c.leaky_slope = std::round(nn::get_scalar(in, "ae.leaky_slope") * 1e6) / 1e6;
  FeatureExtractor fx{FeatureAutoencoder<float>(c, 0), PoseNorm{}, nn::Optimizer<float>{}, 0, 0.0};
  nn::import_params(fx.model.params(), "ae.p.", in);
  fx.norm = PoseNorm::load("norm.", in);
  fx.optimizer.import_state("optim.", in);
  fx.epoch = i("meta.epoch");
  fx.final_mse = nn::get_scalar(in, "ae.final_mse", 0.0);
  return fx;
}

std::vector<double> train_feature_autoencoder(FeatureExtractor& fx, const std::vector<Mat<double>>& clips,
                                              const AeTrainOptions& options,
                                              const std::function<void(int, double)>& on_epoch) {
  if (clips.empty()) fail(Errc::EmptyBatch, "autoencoder training set is empty");
  require(options.batch_size >= 1, Errc::BadConfig, "batch_size must be positive");
  if (fx.epoch == 0) fx.norm = PoseNorm::fit(clips);
  std::vector<Mat<double>> data;
  data.reserve(clips.size());
  for (const auto& c : clips) data.push_back(fx.norm.apply(c));

  const auto keep_steps = fx.optimizer.steps();
  nn::TensorMap state;
  fx.optimizer.export_state("", state);
  fx.optimizer = nn::Optimizer<float>(options.optimizer);
  if (keep_steps > 0) fx.optimizer.import_state("", state);

  const std::size_t n = data.size();
  const std::size_t bs = static_cast<std::size_t>(options.batch_size);
  const std::size_t batches = (n + bs - 1) / bs;
  const double total_batches = static_cast<double>(batches) * options.epochs;
  std::vector<double> history;
  for (int epoch = fx.epoch; epoch < options.epochs; ++epoch) {
    Rng rng = Rng(options.seed).fork(static_cast<std::uint64_t>(epoch));
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    for (std::size_t i = n; i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);
    double sum = 0.0;
    for (std::size_t bi = 0; bi < batches; ++bi) {
      std::vector<const Mat<double>*> batch;
      for (std::size_t k = bi * bs; k < std::min(n, (bi + 1) * bs); ++k) batch.push_back(&data[order[k]]);
      sum += fx.model.loss(batch, true) * static_cast<double>(batch.size());
      nn::clip_grad_norm(fx.model.params(), options.grad_clip);
      const double progress = (static_cast<double>(epoch) * batches + bi) / total_batches;
      fx.optimizer.set_lr(nn::cosine_lr(options.optimizer.lr, options.final_lr_fraction, progress));
      fx.optimizer.step(fx.model.params());
    }
    fx.epoch = epoch + 1;
    history.push_back(sum / static_cast<double>(n));
    if (on_epoch) on_epoch(fx.epoch, history.back());
  }
  std::vector<const Mat<double>*> all;
  for (const auto& d : data) all.push_back(&d);
  fx.final_mse = fx.model.loss(all, false);
  return history;
}

}  // namespace lively::metrics
