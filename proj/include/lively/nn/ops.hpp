#pragma once

#include "lively/nn/tensor.hpp"
#include "lively/rng.hpp"

#include <vector>

namespace lively::nn {

using Mask = Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

// Every forward op has a matching *_backward that accumulates parameter
// gradients into the given refs and returns the input gradient.

// y = x W + b; x [n x in], W [in x out], b [1 x out].
template <typename T>
Mat<T> linear(const ConstMatRef<T>& x, const ConstMatRef<T>& w, const ConstMatRef<T>& b);
template <typename T>
Mat<T> linear_backward(const ConstMatRef<T>& x, const ConstMatRef<T>& w, const ConstMatRef<T>& dy, MatRef<T> dw,
                       MatRef<T> db);

struct Conv1dSpec {
  int kernel = 1;
  int stride = 1;
  int padding = 0;

  int output_length(int input_length) const;
};

template <typename T>
struct Conv1dCache {
  Mat<T> columns;  // [C_in*k x L_out]
  int input_length = 0;
};

// x [C_in x L], kernel [C_out x C_in*k], bias [1 x C_out] -> [C_out x L_out].
template <typename T>
Mat<T> conv1d(const ConstMatRef<T>& x, const ConstMatRef<T>& kernel, const ConstMatRef<T>& bias, const Conv1dSpec& spec,
              Conv1dCache<T>* cache = nullptr);
template <typename T>
Mat<T> conv1d_backward(const Conv1dCache<T>& cache, const ConstMatRef<T>& kernel, const ConstMatRef<T>& dy,
                       const Conv1dSpec& spec, MatRef<T> dkernel, MatRef<T> dbias);

template <typename T>
struct LayerNormCache {
  Mat<T> normalized;
  Eigen::Matrix<T, Eigen::Dynamic, 1> inv_std;
};

inline constexpr double kLayerNormEps = 1e-5;

// Normalizes each row (population variance), then y = gamma * xhat + beta.
template <typename T>
Mat<T> layer_norm(const ConstMatRef<T>& x, const ConstMatRef<T>& gamma, const ConstMatRef<T>& beta,
                  LayerNormCache<T>* cache = nullptr);
template <typename T>
Mat<T> layer_norm_backward(const LayerNormCache<T>& cache, const ConstMatRef<T>& gamma, const ConstMatRef<T>& dy,
                           MatRef<T> dgamma, MatRef<T> dbeta);

template <typename T>
Mat<T> silu(const ConstMatRef<T>& x);
template <typename T>
Mat<T> silu_backward(const ConstMatRef<T>& x, const ConstMatRef<T>& dy);

template <typename T>
Mat<T> leaky_relu(const ConstMatRef<T>& x, T slope = T(0.2));
template <typename T>
Mat<T> leaky_relu_backward(const ConstMatRef<T>& x, const ConstMatRef<T>& dy, T slope = T(0.2));

template <typename T>
Mat<T> softmax_rows(const ConstMatRef<T>& x);
template <typename T>
Mat<T> softmax_rows_backward(const ConstMatRef<T>& y, const ConstMatRef<T>& dy);

template <typename T>
struct AttentionCache {
  std::vector<Mat<T>> probs;  // one [Lq x Lk] matrix per head
};

// Scaled dot-product attention over already-projected q [Lq x d], k, v [Lk x d].
// Masked entries (true) are excluded from the softmax.
template <typename T>
Mat<T> multihead_attention(const ConstMatRef<T>& q, const ConstMatRef<T>& k, const ConstMatRef<T>& v, int heads,
                           const Mask* mask = nullptr, AttentionCache<T>* cache = nullptr);

template <typename T>
struct AttentionGrads {
  Mat<T> dq, dk, dv;
};

template <typename T>
AttentionGrads<T> multihead_attention_backward(const ConstMatRef<T>& q, const ConstMatRef<T>& k,
                                               const ConstMatRef<T>& v, int heads, const AttentionCache<T>& cache,
                                               const ConstMatRef<T>& dctx);

// Row `id` of table [V x d]; throws BadIndex when out of range.
template <typename T>
Mat<T> embedding_lookup(const ConstMatRef<T>& table, int id);
template <typename T>
void embedding_backward(MatRef<T> dtable, int id, const ConstMatRef<T>& dy);

// [sin(t f_0) .. sin(t f_{h-1}), cos(t f_0) .. cos(t f_{h-1})] with f_k = 10000^(-k/h), h = dim/2.
template <typename T>
Mat<T> sinusoidal_embedding(double position, int dim);

// Fills with U(-bound, bound).
template <typename T>
void init_uniform(Tensor<T>& t, double bound, Rng& rng);

// View of a tensor's storage as rows x cols.
template <typename T>
Eigen::Map<Mat<T>> reshaped(Tensor<T>& t, Eigen::Index rows, Eigen::Index cols) {
  require(static_cast<std::size_t>(rows * cols) == t.size(), Errc::ShapeMismatch, "reshape size mismatch");
  return {t.data(), rows, cols};
}
template <typename T>
Eigen::Map<const Mat<T>> reshaped(const Tensor<T>& t, Eigen::Index rows, Eigen::Index cols) {
  require(static_cast<std::size_t>(rows * cols) == t.size(), Errc::ShapeMismatch, "reshape size mismatch");
  return {t.data(), rows, cols};
}

}  // namespace lively::nn
