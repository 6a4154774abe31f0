#include "helpers.hpp"
#include "lively/nn/checkpoint.hpp"
#include "lively/nn/gradcheck.hpp"
#include "lively/nn/ops.hpp"
#include "lively/nn/optim.hpp"

#include <cmath>

using namespace lively;
using namespace lively::nn;

namespace {

using M = Mat<double>;

void randomize(Tensor<double>& t, Rng& rng, double scale = 1.0) {
  for (auto& v : t.values()) v = scale * rng.normal();
}

M random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  M m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

// Projects the output on a fixed random direction so dL/dy = R.
double project(const M& y, const M& r) { return (y.array() * r.array()).sum(); }

constexpr double kLayerTol = 1e-6;

}  // namespace

TEST_CASE("linear values") {
  M x(1, 2);
  x << 1, 2;
  M w = M::Identity(2, 2);
  M b(1, 2);
  b << 3, 4;
  const M y = linear<double>(x, w, b);
  CHECK(y(0, 0) == 4.0);
  CHECK(y(0, 1) == 6.0);
  CHECK(linear<double>(x, w, M::Zero(1, 2)) == x);
}

TEST_CASE("linear gradient") {
  Rng rng(1);
  ParamTree<double> p;
  randomize(p.add("x", {5, 4}), rng);
  randomize(p.add("w", {4, 3}), rng);
  randomize(p.add("b", {1, 3}), rng);
  const M r = random_matrix(5, 3, rng);
  auto loss = [&](bool grad) {
    const M y = linear<double>(p.w("x"), p.w("w"), p.w("b"));
    if (grad) {
      p.zero_grad();
      p.g("x") += linear_backward<double>(p.w("x"), p.w("w"), r, p.g("w"), p.g("b"));
    }
    return project(y, r);
  };
  CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
}

TEST_CASE("grad_check flags a corrupted gradient") {
  Rng rng(2);
  ParamTree<double> p;
  randomize(p.add("x", {3, 4}), rng);
  randomize(p.add("w", {4, 2}), rng);
  randomize(p.add("b", {1, 2}), rng);
  const M r = random_matrix(3, 2, rng);
  auto loss = [&](bool grad) {
    const M y = linear<double>(p.w("x"), p.w("w"), p.w("b"));
    if (grad) {
      p.zero_grad();
      p.g("x") += linear_backward<double>(p.w("x"), p.w("w"), r, p.g("w"), p.g("b"));
      p.g("w")(0, 0) *= 1.5;
    }
    return project(y, r);
  };
  CHECK(grad_check(p, loss).max_rel_error > 1e-2);
}

TEST_CASE("conv1d values") {
  M x(1, 3);
  x << 1, 2, 3;
  M k(1, 2);
  k << 1, 1;
  const M y = conv1d<double>(x, k, M::Zero(1, 1), {2, 1, 0});
  REQUIRE(y.cols() == 2);
  CHECK(y(0, 0) == 3.0);
  CHECK(y(0, 1) == 5.0);

  Rng rng(3);
  const M xi = random_matrix(4, 9, rng);
  CHECK(conv1d<double>(xi, M::Identity(4, 4), M::Zero(1, 4), {1, 1, 0}) == xi);

  const Conv1dSpec spec{15, 8, 7};
  CHECK(spec.output_length(36267) == (36267 + 14 - 15) / 8 + 1);
}

TEST_CASE("conv1d gradient") {
  for (const Conv1dSpec spec : {Conv1dSpec{3, 1, 1}, Conv1dSpec{5, 2, 2}, Conv1dSpec{4, 3, 0}}) {
    Rng rng(4);
    ParamTree<double> p;
    randomize(p.add("x", {3, 17}), rng);
    randomize(p.add("k", {2, 3 * static_cast<std::size_t>(spec.kernel)}), rng);
    randomize(p.add("b", {1, 2}), rng);
    const M r = random_matrix(2, spec.output_length(17), rng);
    auto loss = [&](bool grad) {
      Conv1dCache<double> cache;
      const M y = conv1d<double>(p.w("x"), p.w("k"), p.w("b"), spec, &cache);
      if (grad) {
        p.zero_grad();
        p.g("x") += conv1d_backward<double>(cache, p.w("k"), r, spec, p.g("k"), p.g("b"));
      }
      return project(y, r);
    };
    CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
  }
}

TEST_CASE("layer_norm values") {
  M x(1, 2);
  x << 1, 3;
  const M y = layer_norm<double>(x, M::Ones(1, 2), M::Zero(1, 2));
  CHECK(y(0, 0) == doctest::Approx(-1.0).epsilon(1e-5));
  CHECK(y(0, 1) == doctest::Approx(1.0).epsilon(1e-5));

  M beta(1, 3);
  beta << 0.5, -1, 2;
  const M c = layer_norm<double>(M::Constant(2, 3, 7.0), M::Ones(1, 3), beta);
  for (int i = 0; i < 2; ++i) CHECK((c.row(i) - beta).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("layer_norm gradient") {
  Rng rng(5);
  ParamTree<double> p;
  randomize(p.add("x", {4, 6}), rng);
  randomize(p.add("gamma", {1, 6}), rng);
  randomize(p.add("beta", {1, 6}), rng);
  const M r = random_matrix(4, 6, rng);
  auto loss = [&](bool grad) {
    LayerNormCache<double> cache;
    const M y = layer_norm<double>(p.w("x"), p.w("gamma"), p.w("beta"), &cache);
    if (grad) {
      p.zero_grad();
      p.g("x") += layer_norm_backward<double>(cache, p.w("gamma"), r, p.g("gamma"), p.g("beta"));
    }
    return project(y, r);
  };
  CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
}

TEST_CASE("activations") {
  CHECK(silu<double>(M::Zero(1, 1))(0, 0) == 0.0);
  M neg(1, 1);
  neg << -1;
  CHECK(leaky_relu<double>(neg, 0.2)(0, 0) == doctest::Approx(-0.2));
  const M s = softmax_rows<double>(M::Constant(2, 5, 3.3));
  CHECK((s.array() - 0.2).abs().maxCoeff() < 1e-15);

  Rng rng(6);
  ParamTree<double> p;
  randomize(p.add("x", {3, 5}), rng);
  const M r = random_matrix(3, 5, rng);
  SUBCASE("silu") {
    auto loss = [&](bool grad) {
      if (grad) {
        p.zero_grad();
        p.g("x") += silu_backward<double>(p.w("x"), r);
      }
      return project(silu<double>(p.w("x")), r);
    };
    CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
  }
  SUBCASE("leaky_relu") {
    auto loss = [&](bool grad) {
      if (grad) {
        p.zero_grad();
        p.g("x") += leaky_relu_backward<double>(p.w("x"), r, 0.2);
      }
      return project(leaky_relu<double>(p.w("x"), 0.2), r);
    };
    CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
  }
  SUBCASE("softmax") {
    auto loss = [&](bool grad) {
      const M y = softmax_rows<double>(p.w("x"));
      if (grad) {
        p.zero_grad();
        p.g("x") += softmax_rows_backward<double>(y, r);
      }
      return project(y, r);
    };
    CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
  }
}

TEST_CASE("attention values") {
  Rng rng(7);
  const M v = random_matrix(1, 8, rng);
  const M out = multihead_attention<double>(random_matrix(3, 8, rng), random_matrix(1, 8, rng), v, 2);
  for (int i = 0; i < 3; ++i) CHECK((out.row(i) - v).cwiseAbs().maxCoeff() < 1e-12);

  const M key = random_matrix(1, 8, rng);
  M keys(2, 8);
  keys << key, key;
  const M vals = random_matrix(2, 8, rng);
  const M mean = multihead_attention<double>(random_matrix(2, 8, rng), keys, vals, 4);
  for (int i = 0; i < 2; ++i) CHECK((mean.row(i) - 0.5 * (vals.row(0) + vals.row(1))).cwiseAbs().maxCoeff() < 1e-12);

  Mask mask = Mask::Constant(1, 2, false);
  mask(0, 1) = true;
  const M masked = multihead_attention<double>(random_matrix(1, 8, rng), random_matrix(2, 8, rng), vals, 2, &mask);
  CHECK((masked.row(0) - vals.row(0)).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("attention gradient") {
  Rng rng(8);
  ParamTree<double> p;
  randomize(p.add("q", {4, 6}), rng);
  randomize(p.add("k", {5, 6}), rng);
  randomize(p.add("v", {5, 6}), rng);
  const M r = random_matrix(4, 6, rng);
  Mask mask = Mask::Constant(4, 5, false);
  mask(1, 3) = mask(2, 0) = true;
  auto loss = [&](bool grad) {
    AttentionCache<double> cache;
    const M y = multihead_attention<double>(p.w("q"), p.w("k"), p.w("v"), 3, &mask, &cache);
    if (grad) {
      p.zero_grad();
      auto g = multihead_attention_backward<double>(p.w("q"), p.w("k"), p.w("v"), 3, cache, r);
      p.g("q") += g.dq;
      p.g("k") += g.dk;
      p.g("v") += g.dv;
    }
    return project(y, r);
  };
  CHECK(grad_check(p, loss).max_rel_error < kLayerTol);
}

TEST_CASE("embedding lookup") {
  Rng rng(9);
  const M table = random_matrix(4, 3, rng);
  CHECK(embedding_lookup<double>(table, 0) == table.row(0));
  CHECK_ERRC(embedding_lookup<double>(table, 4), Errc::BadIndex);
  CHECK_ERRC(embedding_lookup<double>(table, -1), Errc::BadIndex);

  M grad = M::Zero(4, 3);
  const M dy = random_matrix(1, 3, rng);
  embedding_backward<double>(grad, 2, dy);
  CHECK(grad.row(2) == dy);
  CHECK(grad.row(0).isZero());
  CHECK(grad.row(1).isZero());
  CHECK(grad.row(3).isZero());
}

TEST_CASE("sinusoidal embedding") {
  const M e0 = sinusoidal_embedding<double>(0.0, 64);
  for (int i = 0; i < 32; ++i) {
    CHECK(e0(0, i) == 0.0);
    CHECK(e0(0, 32 + i) == 1.0);
  }
  std::vector<M> all;
  for (int t = 0; t <= 1000; ++t) all.push_back(sinusoidal_embedding<double>(t, 64));
  double closest = 1e9;
  for (std::size_t a = 0; a < all.size(); ++a)
    for (std::size_t b = a + 1; b < all.size(); ++b) closest = std::min(closest, (all[a] - all[b]).norm());
  CHECK(closest > 1e-3);
}

TEST_CASE("optimizer single steps") {
  SUBCASE("zero gradient leaves params") {
    ParamTree<double> p;
    p.add("w", {3}).fill(0.7);
    Optimizer<double> opt({OptimizerKind::AdamW, 0.1, 0.9, 0.999, 1e-8, 0.0});
    opt.step(p);
    for (double v : p.weight("w").values()) CHECK(v == 0.7);
  }
  SUBCASE("adam unit gradient") {
    ParamTree<double> p;
    p.add("w", {2}).fill(1.0);
    p.grad("w").fill(1.0);
    const double eps = 1e-8;
    Optimizer<double> opt({OptimizerKind::Adam, 0.1, 0.9, 0.999, eps, 0.0});
    opt.step(p);
    for (double v : p.weight("w").values()) CHECK(v - 1.0 == doctest::Approx(-0.1 / (1.0 + eps)).epsilon(1e-12));
    CHECK(opt.steps() == 1);
  }
  SUBCASE("adamw decoupled decay") {
    ParamTree<double> p;
    p.add("w", {2}).fill(2.0);
    Optimizer<double> opt({OptimizerKind::AdamW, 0.1, 0.9, 0.999, 1e-8, 0.01});
    opt.step(p);
    for (double v : p.weight("w").values()) CHECK(v == doctest::Approx(2.0 * (1.0 - 0.001)).epsilon(1e-12));
  }
}

TEST_CASE("optimizer state export/import resumes identically") {
  auto make = [] {
    ParamTree<double> p;
    p.add("a", {2, 2}).fill(0.5);
    return p;
  };
  auto set_grad = [](ParamTree<double>& p, int step) {
    for (std::size_t i = 0; i < 4; ++i) p.grad("a")[i] = std::sin(1.0 + step + 0.3 * static_cast<double>(i));
  };
  ParamTree<double> straight = make(), resumed = make();
  Optimizer<double> o1({OptimizerKind::AdamW, 0.01});
  for (int s = 0; s < 6; ++s) {
    set_grad(straight, s);
    o1.step(straight);
  }
  Optimizer<double> o2({OptimizerKind::AdamW, 0.01});
  for (int s = 0; s < 3; ++s) {
    set_grad(resumed, s);
    o2.step(resumed);
  }
  TensorMap state;
  o2.export_state("opt.", state);
  Optimizer<double> o3({OptimizerKind::AdamW, 0.01});
  o3.import_state("opt.", state);
  for (int s = 3; s < 6; ++s) {
    set_grad(resumed, s);
    o3.step(resumed);
  }
  for (std::size_t i = 0; i < 4; ++i)
    CHECK(resumed.weight("a")[i] == doctest::Approx(straight.weight("a")[i]).epsilon(1e-6));
}

TEST_CASE("clip_grad_norm and cosine_lr") {
  ParamTree<double> p;
  p.add("a", {2});
  p.add("b", {1});
  p.grad("a")[0] = 3.0;
  p.grad("b")[0] = 4.0;
  CHECK(clip_grad_norm(p, 1.0) == doctest::Approx(5.0));
  CHECK(p.grad("a")[0] == doctest::Approx(0.6));
  CHECK(p.grad("b")[0] == doctest::Approx(0.8));

  CHECK(cosine_lr(1.0, 0.1, 0.0) == doctest::Approx(1.0));
  CHECK(cosine_lr(1.0, 0.1, 1.0) == doctest::Approx(0.1));
  CHECK(cosine_lr(1.0, 0.1, 0.5) == doctest::Approx(0.55));
}

TEST_CASE("checkpoint round trip") {
  TensorMap m;
  m["w"] = Tensor<float>({2, 3}, {1, 2, 3, 4, 5, 6});
  m["scalar"] = Tensor<float>({}, {2.5f});
  put_scalar(m, "meta.epoch", 7);
  const auto bytes = encode_checkpoint(m);
  const TensorMap back = decode_checkpoint(bytes);
  CHECK(back == m);
  CHECK(get_scalar(back, "meta.epoch") == 7.0);
  CHECK(get_scalar(back, "meta.missing", -1.0) == -1.0);
  CHECK(encode_checkpoint(back) == bytes);

  auto bad = bytes;
  bad[1] = 'X';
  CHECK_ERRC(decode_checkpoint(bad), Errc::BadMagic);
  auto cut = bytes;
  cut.resize(cut.size() - 1);
  CHECK_ERRC(decode_checkpoint(cut), Errc::TruncatedFile);

  ParamTree<double> p;
  p.add("w", {3, 2});
  CHECK_ERRC(import_params(p, "", m), Errc::ShapeMismatch);
  ParamTree<double> q;
  q.add("nope", {1});
  CHECK_ERRC(import_params(q, "", m), Errc::BadIndex);
}
