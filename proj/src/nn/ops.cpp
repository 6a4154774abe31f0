#include "lively/nn/ops.hpp"

#include <cmath>
#include <limits>

namespace lively::nn {

namespace {

void check_shape(bool ok, const char* what) {
  if (!ok) fail(Errc::ShapeMismatch, what);
}

}  // namespace

template <typename T>
Mat<T> linear(const ConstMatRef<T>& x, const ConstMatRef<T>& w, const ConstMatRef<T>& b) {
  check_shape(x.cols() == w.rows(), "linear: input width does not match weight rows");
  check_shape(b.rows() == 1 && b.cols() == w.cols(), "linear: bias width does not match weight columns");
  Mat<T> y(x.rows(), w.cols());
  y.noalias() = x * w;
  y.rowwise() += b.row(0);
  return y;
}

template <typename T>
Mat<T> linear_backward(const ConstMatRef<T>& x, const ConstMatRef<T>& w, const ConstMatRef<T>& dy, MatRef<T> dw,
                       MatRef<T> db) {
  check_shape(dy.cols() == w.cols() && dy.rows() == x.rows(), "linear_backward: gradient shape");
  dw.noalias() += x.transpose() * dy;
  db.row(0) += dy.colwise().sum();
  Mat<T> dx(x.rows(), x.cols());
  dx.noalias() = dy * w.transpose();
  return dx;
}

int Conv1dSpec::output_length(int input_length) const {
  const int span = input_length + 2 * padding - kernel;
  if (span < 0 || stride < 1) fail(Errc::ShapeMismatch, "conv1d: input shorter than kernel");
  return span / stride + 1;
}

template <typename T>
Mat<T> conv1d(const ConstMatRef<T>& x, const ConstMatRef<T>& kernel, const ConstMatRef<T>& bias, const Conv1dSpec& spec,
              Conv1dCache<T>* cache) {
  const int cin = static_cast<int>(x.rows());
  const int len = static_cast<int>(x.cols());
  const int k = spec.kernel;
  check_shape(kernel.cols() == static_cast<Eigen::Index>(cin) * k, "conv1d: kernel does not match input channels");
  check_shape(bias.rows() == 1 && bias.cols() == kernel.rows(), "conv1d: bias does not match output channels");
  const int out_len = spec.output_length(len);

  Mat<T> cols = Mat<T>::Zero(static_cast<Eigen::Index>(cin) * k, out_len);
  for (int c = 0; c < cin; ++c) {
    for (int j = 0; j < k; ++j) {
      T* dst = cols.row(c * k + j).data();
      const T* src = x.row(c).data();
      for (int o = 0; o < out_len; ++o) {
        const int pos = o * spec.stride - spec.padding + j;
        if (pos >= 0 && pos < len) dst[o] = src[pos];
      }
    }
  }
  Mat<T> y(kernel.rows(), out_len);
  y.noalias() = kernel * cols;
  y.colwise() += bias.row(0).transpose();
  if (cache) {
    cache->columns = std::move(cols);
    cache->input_length = len;
  }
  return y;
}

template <typename T>
Mat<T> conv1d_backward(const Conv1dCache<T>& cache, const ConstMatRef<T>& kernel, const ConstMatRef<T>& dy,
                       const Conv1dSpec& spec, MatRef<T> dkernel, MatRef<T> dbias) {
  const int k = spec.kernel;
  const int cin = static_cast<int>(kernel.cols()) / k;
  const int out_len = static_cast<int>(dy.cols());
  check_shape(dy.rows() == kernel.rows() && out_len == cache.columns.cols(), "conv1d_backward: gradient shape");
  dkernel.noalias() += dy * cache.columns.transpose();
  dbias.row(0) += dy.rowwise().sum().transpose();
  Mat<T> dcols(kernel.cols(), out_len);
  dcols.noalias() = kernel.transpose() * dy;
  Mat<T> dx = Mat<T>::Zero(cin, cache.input_length);
  for (int c = 0; c < cin; ++c) {
    T* dst = dx.row(c).data();
    for (int j = 0; j < k; ++j) {
      const T* src = dcols.row(c * k + j).data();
      for (int o = 0; o < out_len; ++o) {
        const int pos = o * spec.stride - spec.padding + j;
        if (pos >= 0 && pos < cache.input_length) dst[pos] += src[o];
      }
    }
  }
  return dx;
}

template <typename T>
Mat<T> layer_norm(const ConstMatRef<T>& x, const ConstMatRef<T>& gamma, const ConstMatRef<T>& beta,
                  LayerNormCache<T>* cache) {
  const Eigen::Index n = x.cols();
  check_shape(gamma.cols() == n && beta.cols() == n, "layer_norm: affine width mismatch");
  Mat<T> xhat(x.rows(), n);
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std(x.rows());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T mean = x.row(r).mean();
    const T var = (x.row(r).array() - mean).square().mean();
    inv_std[r] = T(1) / std::sqrt(var + T(kLayerNormEps));
    xhat.row(r) = (x.row(r).array() - mean) * inv_std[r];
  }
  Mat<T> y = (xhat.array().rowwise() * gamma.row(0).array()).rowwise() + beta.row(0).array();
  if (cache) {
    cache->normalized = std::move(xhat);
    cache->inv_std = std::move(inv_std);
  }
  return y;
}

template <typename T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& cache, const ConstMatRef<T>& gamma, const ConstMatRef<T>& dy,
                           MatRef<T> dgamma, MatRef<T> dbeta) {
  const Mat<T>& xhat = cache.normalized;
  dgamma.row(0) += (dy.array() * xhat.array()).colwise().sum().matrix();
  dbeta.row(0) += dy.colwise().sum();
  Mat<T> dxhat = dy.array().rowwise() * gamma.row(0).array();
  Mat<T> dx(dy.rows(), dy.cols());
  for (Eigen::Index r = 0; r < dy.rows(); ++r) {
    const T mean_d = dxhat.row(r).mean();
    const T mean_dx = (dxhat.row(r).array() * xhat.row(r).array()).mean();
    dx.row(r) = cache.inv_std[r] * (dxhat.row(r).array() - mean_d - xhat.row(r).array() * mean_dx);
  }
  return dx;
}

template <typename T>
Mat<T> silu(const ConstMatRef<T>& x) {
  return x.unaryExpr([](T v) { return v / (T(1) + std::exp(-v)); });
}

template <typename T>
Mat<T> silu_backward(const ConstMatRef<T>& x, const ConstMatRef<T>& dy) {
  Mat<T> d = x.unaryExpr([](T v) {
    const T s = T(1) / (T(1) + std::exp(-v));
    return s * (T(1) + v * (T(1) - s));
  });
  return d.cwiseProduct(dy);
}

template <typename T>
Mat<T> leaky_relu(const ConstMatRef<T>& x, T slope) {
  return x.unaryExpr([slope](T v) { return v > T(0) ? v : slope * v; });
}

template <typename T>
Mat<T> leaky_relu_backward(const ConstMatRef<T>& x, const ConstMatRef<T>& dy, T slope) {
  return x.binaryExpr(dy, [slope](T v, T g) { return v > T(0) ? g : slope * g; });
}

template <typename T>
Mat<T> softmax_rows(const ConstMatRef<T>& x) {
  Mat<T> y(x.rows(), x.cols());
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    const T m = x.row(r).maxCoeff();
    if (!std::isfinite(m)) {
      y.row(r).setZero();
      continue;
    }
    y.row(r) = (x.row(r).array() - m).exp();
    y.row(r) /= y.row(r).sum();
  }
  return y;
}

template <typename T>
Mat<T> softmax_rows_backward(const ConstMatRef<T>& y, const ConstMatRef<T>& dy) {
  Mat<T> dx(y.rows(), y.cols());
  for (Eigen::Index r = 0; r < y.rows(); ++r) {
    const T dot = y.row(r).dot(dy.row(r));
    dx.row(r) = y.row(r).array() * (dy.row(r).array() - dot);
  }
  return dx;
}

template <typename T>
Mat<T> multihead_attention(const ConstMatRef<T>& q, const ConstMatRef<T>& k, const ConstMatRef<T>& v, int heads,
                           const Mask* mask, AttentionCache<T>* cache) {
  const Eigen::Index d = q.cols();
  check_shape(heads >= 1 && d % heads == 0, "attention: model width not divisible by heads");
  check_shape(k.cols() == d && v.cols() == d && k.rows() == v.rows(), "attention: key/value shape");
  if (mask) check_shape(mask->rows() == q.rows() && mask->cols() == k.rows(), "attention: mask shape");
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  Mat<T> ctx(q.rows(), d);
  if (cache) cache->probs.assign(static_cast<std::size_t>(heads), Mat<T>());
  for (int h = 0; h < heads; ++h) {
    Mat<T> scores(q.rows(), k.rows());
    scores.noalias() = q.middleCols(h * dh, dh) * k.middleCols(h * dh, dh).transpose();
    scores *= scale;
    if (mask) {
      scores = mask->select(Mat<T>::Constant(scores.rows(), scores.cols(), -std::numeric_limits<T>::infinity()),
                            scores);
    }
    Mat<T> probs = softmax_rows<T>(scores);
    ctx.middleCols(h * dh, dh).noalias() = probs * v.middleCols(h * dh, dh);
    if (cache) cache->probs[static_cast<std::size_t>(h)] = std::move(probs);
  }
  return ctx;
}

template <typename T>
AttentionGrads<T> multihead_attention_backward(const ConstMatRef<T>& q, const ConstMatRef<T>& k,
                                               const ConstMatRef<T>& v, int heads, const AttentionCache<T>& cache,
                                               const ConstMatRef<T>& dctx) {
  const Eigen::Index d = q.cols();
  const Eigen::Index dh = d / heads;
  const T scale = T(1) / std::sqrt(static_cast<T>(dh));
  AttentionGrads<T> g{Mat<T>::Zero(q.rows(), d), Mat<T>::Zero(k.rows(), d), Mat<T>::Zero(v.rows(), d)};
  for (int h = 0; h < heads; ++h) {
    const Mat<T>& probs = cache.probs[static_cast<std::size_t>(h)];
    const auto dctx_h = dctx.middleCols(h * dh, dh);
    g.dv.middleCols(h * dh, dh).noalias() = probs.transpose() * dctx_h;
    Mat<T> dprobs(probs.rows(), probs.cols());
    dprobs.noalias() = dctx_h * v.middleCols(h * dh, dh).transpose();
    Mat<T> dscores = softmax_rows_backward<T>(probs, dprobs) * scale;
    g.dq.middleCols(h * dh, dh).noalias() = dscores * k.middleCols(h * dh, dh);
    g.dk.middleCols(h * dh, dh).noalias() = dscores.transpose() * q.middleCols(h * dh, dh);
  }
  return g;
}

template <typename T>
Mat<T> embedding_lookup(const ConstMatRef<T>& table, int id) {
  if (id < 0 || id >= table.rows()) {
    fail(Errc::BadIndex, "embedding id " + std::to_string(id) + " outside table of " + std::to_string(table.rows()));
  }
  return table.row(id);
}

template <typename T>
void embedding_backward(MatRef<T> dtable, int id, const ConstMatRef<T>& dy) {
  if (id < 0 || id >= dtable.rows()) fail(Errc::BadIndex, "embedding id out of range");
  dtable.row(id) += dy.row(0);
}

template <typename T>
Mat<T> sinusoidal_embedding(double position, int dim) {
  const int half = dim / 2;
  Mat<T> e = Mat<T>::Zero(1, dim);
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / half);
    e(0, i) = static_cast<T>(std::sin(position * freq));
    e(0, half + i) = static_cast<T>(std::cos(position * freq));
  }
  return e;
}

template <typename T>
void init_uniform(Tensor<T>& t, double bound, Rng& rng) {
  for (auto& v : t.values()) v = static_cast<T>(rng.uniform(-bound, bound));
}

#define LIVELY_INSTANTIATE_OPS(T)                                                                                    \
  template Mat<T> linear<T>(const ConstMatRef<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&);                  \
  template Mat<T> linear_backward<T>(const ConstMatRef<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&, MatRef<T>, \
                                     MatRef<T>);                                                                     \
  template Mat<T> conv1d<T>(const ConstMatRef<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&, const Conv1dSpec&,  \
                            Conv1dCache<T>*);                                                                        \
  template Mat<T> conv1d_backward<T>(const Conv1dCache<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&,            \
                                     const Conv1dSpec&, MatRef<T>, MatRef<T>);                                       \
  template Mat<T> layer_norm<T>(const ConstMatRef<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&,                 \
                                LayerNormCache<T>*);                                                                 \
  template Mat<T> layer_norm_backward<T>(const LayerNormCache<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&,     \
                                         MatRef<T>, MatRef<T>);                                                      \
  template Mat<T> silu<T>(const ConstMatRef<T>&);                                                                    \
  template Mat<T> silu_backward<T>(const ConstMatRef<T>&, const ConstMatRef<T>&);                                    \
  template Mat<T> leaky_relu<T>(const ConstMatRef<T>&, T);                                                           \
  template Mat<T> leaky_relu_backward<T>(const ConstMatRef<T>&, const ConstMatRef<T>&, T);                           \
  template Mat<T> softmax_rows<T>(const ConstMatRef<T>&);                                                            \
  template Mat<T> softmax_rows_backward<T>(const ConstMatRef<T>&, const ConstMatRef<T>&);                            \
  template Mat<T> multihead_attention<T>(const ConstMatRef<T>&, const ConstMatRef<T>&, const ConstMatRef<T>&, int,   \
                                         const Mask*, AttentionCache<T>*);                                           \
  template AttentionGrads<T> multihead_attention_backward<T>(const ConstMatRef<T>&, const ConstMatRef<T>&,           \
                                                             const ConstMatRef<T>&, int, const AttentionCache<T>&,   \
                                                             const ConstMatRef<T>&);                                 \
  template Mat<T> embedding_lookup<T>(const ConstMatRef<T>&, int);                                                   \
  template void embedding_backward<T>(MatRef<T>, int, const ConstMatRef<T>&);                                        \
  template Mat<T> sinusoidal_embedding<T>(double, int);                                                              \
  template void init_uniform<T>(Tensor<T>&, double, Rng&);

LIVELY_INSTANTIATE_OPS(float)
LIVELY_INSTANTIATE_OPS(double)

}  // namespace lively::nn
