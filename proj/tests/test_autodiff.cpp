#include <cmath>
#include <functional>
#include <vector>

#include "doctest.h"
#include "moco/autodiff.hpp"
#include "moco/rng.hpp"

using namespace moco;
using ad::Graph;
using ad::Param;
using ad::ParamStore;
using ad::Var;

namespace {

void fill_random(Tensor<double>& t, Rng& rng, double lo = -1.0, double hi = 1.0) {
  for (auto& x : t.v) x = rng.uniform(lo, hi);
}

// central-difference check of every parameter entry against one backward pass
void fd_check(ParamStore<double>& store, const std::function<Var(Graph<double>&)>& build,
              double tol = 1e-5, double h = 1e-6) {
  Graph<double> g;
  Var loss = build(g);
  store.zero_grads();
  g.backward(loss);

  std::vector<Tensor<double>> analytic;
  for (auto& p : store.all()) analytic.push_back(p.grad);

  size_t pi = 0;
  for (auto& p : store.all()) {
    for (int64_t i = 0; i < p.value.numel(); ++i) {
      const size_t k = static_cast<size_t>(i);
      const double orig = p.value.v[k];
      p.value.v[k] = orig + h;
      Graph<double> gp;
      const double lp = gp.val(build(gp)).v[0];
      p.value.v[k] = orig - h;
      Graph<double> gm;
      const double lm = gm.val(build(gm)).v[0];
      p.value.v[k] = orig;
      const double numeric = (lp - lm) / (2.0 * h);
      const double got = analytic[pi].v[k];
      const double scale = std::max({1.0, std::abs(numeric), std::abs(got)});
      CHECK(std::abs(numeric - got) / scale < tol);
    }
    ++pi;
  }
}

// naive direct convolution, HWC x [kh,kw,ci,co]
Tensor<double> conv_oracle(const Tensor<double>& x, const Tensor<double>& w,
                           const Tensor<double>& b, int stride, int pad) {
  const int h = x.dim(0), wd = x.dim(1), ci = x.dim(2);
  const int kh = w.dim(0), kw = w.dim(1), co = w.dim(3);
  const int oh = (h + 2 * pad - kh) / stride + 1;
  const int ow = (wd + 2 * pad - kw) / stride + 1;
  Tensor<double> out({oh, ow, co});
  for (int r = 0; r < oh; ++r)
    for (int c = 0; c < ow; ++c)
      for (int o = 0; o < co; ++o) {
        double acc = b.v[static_cast<size_t>(o)];
        for (int i = 0; i < kh; ++i)
          for (int j = 0; j < kw; ++j) {
            const int ir = r * stride - pad + i, ic = c * stride - pad + j;
            if (ir < 0 || ir >= h || ic < 0 || ic >= wd) continue;
            for (int ch = 0; ch < ci; ++ch)
              acc += x.at3(ir, ic, ch) *
                     w.v[((static_cast<size_t>(i) * kw + j) * ci + ch) * co + o];
          }
        out.at3(r, c, o) = acc;
      }
  return out;
}

}  // namespace

TEST_CASE("conv2d forward matches the direct loop oracle") {
  Rng rng(3);
  for (auto [stride, k, pad] : std::vector<std::array<int, 3>>{{1, 3, 1}, {2, 4, 1}, {1, 1, 0}}) {
    ParamStore<double> store;
    auto& w = store.add("w", {k, k, 3, 4});
    auto& b = store.add("b", {4});
    Tensor<double> x({6, 6, 3});
    fill_random(x, rng);
    fill_random(w.value, rng);
    fill_random(b.value, rng);

    Graph<double> g;
    Var out = g.conv2d(g.constant(x), g.leaf(w), g.leaf(b), stride, pad);
    Tensor<double> want = conv_oracle(x, w.value, b.value, stride, pad);
    REQUIRE(g.val(out).shape == want.shape);
    for (int64_t i = 0; i < want.numel(); ++i)
      CHECK(g.val(out).v[static_cast<size_t>(i)] ==
            doctest::Approx(want.v[static_cast<size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  Rng rng(5);
  ParamStore<double> store;
  auto& w = store.add("w", {3, 3, 2, 3});
  auto& b = store.add("b", {3});
  auto& xin = store.add("x", {5, 5, 2});
  fill_random(w.value, rng, -0.5, 0.5);
  fill_random(b.value, rng, -0.5, 0.5);
  fill_random(xin.value, rng);
  Tensor<double> target({5, 5, 3});
  fill_random(target, rng);

  fd_check(store, [&](Graph<double>& g) {
    Var out = g.conv2d(g.leaf(xin), g.leaf(w), g.leaf(b), 1, 1);
    return g.sqdiff_sum(g.relu(out), g.constant(target));
  });
}

TEST_CASE("strided conv2d gradients match finite differences") {
  Rng rng(6);
  ParamStore<double> store;
  auto& w = store.add("w", {4, 4, 1, 2});
  auto& b = store.add("b", {2});
  auto& xin = store.add("x", {6, 6, 1});
  fill_random(w.value, rng, -0.5, 0.5);
  fill_random(b.value, rng, -0.5, 0.5);
  fill_random(xin.value, rng);
  Tensor<double> target({3, 3, 2});
  fill_random(target, rng);

  fd_check(store, [&](Graph<double>& g) {
    Var out = g.conv2d(g.leaf(xin), g.leaf(w), g.leaf(b), 2, 1);
    return g.sqdiff_sum(out, g.constant(target));
  });
}

TEST_CASE("conv_transpose2d doubles the spatial size and matches finite differences") {
  Rng rng(7);
  ParamStore<double> store;
  auto& w = store.add("w", {2, 4, 4, 3});  // [ci, kh, kw, co]
  auto& b = store.add("b", {3});
  auto& xin = store.add("x", {3, 3, 2});
  fill_random(w.value, rng, -0.5, 0.5);
  fill_random(b.value, rng, -0.5, 0.5);
  fill_random(xin.value, rng);

  {
    Graph<double> g;
    Var out = g.conv_transpose2d(g.leaf(xin), g.leaf(w), g.leaf(b), 2, 1);
    CHECK(g.val(out).shape == std::vector<int>{6, 6, 3});
  }
  Tensor<double> target({6, 6, 3});
  fill_random(target, rng);
  fd_check(store, [&](Graph<double>& g) {
    Var out = g.conv_transpose2d(g.leaf(xin), g.leaf(w), g.leaf(b), 2, 1);
    return g.sqdiff_sum(out, g.constant(target));
  });
}

TEST_CASE("masked conv keeps masked weights out of value and gradient") {
  Rng rng(8);
  ParamStore<double> store;
  auto& w = store.add("w", {3, 3, 2, 2});
  auto& b = store.add("b", {2});
  auto& xin = store.add("x", {4, 4, 2});
  fill_random(w.value, rng, -0.5, 0.5);
  fill_random(b.value, rng, -0.5, 0.5);
  fill_random(xin.value, rng);

  Tensor<double> mask({3, 3, 2, 2});
  // half the taps active
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j)
      if (i < 1 || (i == 1 && j < 2))
        for (int a = 0; a < 2; ++a)
          for (int o = 0; o < 2; ++o) mask.v[((static_cast<size_t>(i) * 3 + j) * 2 + a) * 2 + o] = 1.0;

  Tensor<double> target({4, 4, 2});
  fill_random(target, rng);
  fd_check(store, [&](Graph<double>& g) {
    Var out = g.conv2d_masked(g.leaf(xin), g.leaf(w), g.leaf(b), mask);
    return g.sqdiff_sum(out, g.constant(target));
  });

  // masked weight entries receive exactly zero gradient
  Graph<double> g;
  Var out = g.conv2d_masked(g.leaf(xin), g.leaf(w), g.leaf(b), mask);
  store.zero_grads();
  g.backward(g.sqdiff_sum(out, g.constant(target)));
  for (int64_t i = 0; i < mask.numel(); ++i)
    if (mask.v[static_cast<size_t>(i)] == 0.0) CHECK(w.grad.v[static_cast<size_t>(i)] == 0.0);
}

TEST_CASE("matmul, broadcast, elementwise, embedding, shaping ops differentiate") {
  Rng rng(9);
  ParamStore<double> store;
  auto& a = store.add("a", {3, 4});
  auto& b = store.add("b", {4, 5});
  auto& bias = store.add("bias", {5});
  auto& table = store.add("table", {6, 5});
  auto& u = store.add("u", {2, 2, 2});
  auto& v = store.add("v", {2, 2, 3});
  for (auto* p : {&a, &b, &bias, &table, &u, &v}) fill_random(p->value, rng, -0.7, 0.7);
  Tensor<double> target({2, 2, 3});
  fill_random(target, rng);

  std::vector<int> idx = {2, 0, 5, 1};
  fd_check(store, [&](Graph<double>& g) {
    Var m = g.broadcast_add_vec(g.matmul(g.leaf(a), g.leaf(b)), g.leaf(bias));  // [3,5]
    Var gath = g.gather_rows(g.leaf(table), idx, 2, 2);                         // [2,2,5]
    Var r = g.row(g.leaf(table), 3);                                            // [5]
    Var gr = g.broadcast_add_vec(gath, r);
    Var cat = g.concat_c(g.mul(g.leaf(u), g.sigmoid(g.leaf(u))), g.leaf(v));  // [2,2,5]
    Var s = g.slice_c(cat, 0, 5);
    Var flat = g.reshape(g.sub(s, gr), {4, 5});
    Var mixed = g.matmul(flat, g.reshape(m, {5, 3}));  // [4,3]
    return g.sqdiff_sum(g.reshape(mixed, {2, 2, 3}), g.constant(target));
  });
}

TEST_CASE("mean_abs_diff value and gradient away from ties") {
  ParamStore<double> store;
  auto& x = store.add("x", {2, 3});
  x.value.v = {0.9, -0.2, 0.4, 1.5, -1.0, 0.3};
  Tensor<double> ref({2, 3});
  ref.v = {0.1, 0.3, -0.2, 0.5, 0.5, 0.1};

  Graph<double> g;
  Var loss = g.mean_abs_diff(g.leaf(x), g.constant(ref));
  CHECK(g.val(loss).v[0] == doctest::Approx((0.8 + 0.5 + 0.6 + 1.0 + 1.5 + 0.2) / 6.0));
  fd_check(store, [&](Graph<double>& gg) {
    return gg.mean_abs_diff(gg.leaf(x), gg.constant(ref));
  });
}

TEST_CASE("softmax cross entropy value and gradient") {
  ParamStore<double> store;
  auto& logits = store.add("l", {3, 4});
  Rng rng(10);
  fill_random(logits.value, rng, -2.0, 2.0);
  std::vector<int> targets = {1, 3, 0};

  Graph<double> g;
  Var loss = g.softmax_xent_sum(g.leaf(logits), targets);
  // direct evaluation
  double want = 0.0;
  for (int i = 0; i < 3; ++i) {
    double m = -1e300;
    for (int j = 0; j < 4; ++j) m = std::max(m, logits.value.at2(i, j));
    double z = 0.0;
    for (int j = 0; j < 4; ++j) z += std::exp(logits.value.at2(i, j) - m);
    want += m + std::log(z) - logits.value.at2(i, targets[static_cast<size_t>(i)]);
  }
  CHECK(g.val(loss).v[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(g.val(loss).v[0] >= 0.0);

  fd_check(store, [&](Graph<double>& gg) {
    return gg.softmax_xent_sum(gg.leaf(logits), targets);
  });
}

TEST_CASE("causal attention gradients match finite differences") {
  Rng rng(11);
  ParamStore<double> store;
  auto& q = store.add("q", {5, 3});
  auto& k = store.add("k", {5, 3});
  auto& v = store.add("v", {5, 3});
  for (auto* p : {&q, &k, &v}) fill_random(p->value, rng, -0.8, 0.8);
  Tensor<double> target({5, 3});
  fill_random(target, rng);

  fd_check(store, [&](Graph<double>& g) {
    Var out = g.causal_attention(g.leaf(q), g.leaf(k), g.leaf(v));
    return g.sqdiff_sum(out, g.constant(target));
  });
}

TEST_CASE("straight_through passes the downstream gradient to z") {
  Rng rng(12);
  ParamStore<double> store;
  auto& z = store.add("z", {2, 2, 2});
  fill_random(z.value, rng);
  Tensor<double> zq({2, 2, 2});
  fill_random(zq, rng);

  // L = sum(out^2) with out = zq forward; dL/dz must equal 2*zq
  Graph<double> g;
  Var out = g.straight_through(g.leaf(z), zq);
  for (int64_t i = 0; i < zq.numel(); ++i)
    CHECK(g.val(out).v[static_cast<size_t>(i)] == zq.v[static_cast<size_t>(i)]);
  store.zero_grads();
  g.backward(g.sqdiff_sum(out, g.constant(Tensor<double>({2, 2, 2}))));
  for (int64_t i = 0; i < zq.numel(); ++i)
    CHECK(z.grad.v[static_cast<size_t>(i)] ==
          doctest::Approx(2.0 * zq.v[static_cast<size_t>(i)]).epsilon(1e-12));

  // pass-through rule via pin replay: d/dz of L(z + (zq0 - z0)) by central
  // differences, relative error <= 1e-4
  ad::PinTape<double> pin;
  {
    Graph<double> gr;
    Var o = gr.straight_through(gr.leaf(z), zq, &pin);
    gr.backward(gr.sqdiff_sum(o, gr.constant(Tensor<double>({2, 2, 2}))));
  }
  const double h = 1e-5;
  for (int64_t i = 0; i < z.value.numel(); ++i) {
    const size_t kk = static_cast<size_t>(i);
    const double orig = z.value.v[kk];
    double lp, lm;
    {
      z.value.v[kk] = orig + h;
      pin.replay = true;
      pin.rewind();
      Graph<double> gg;
      Var o = gg.straight_through(gg.leaf(z), zq, &pin);
      lp = gg.val(gg.sqdiff_sum(o, gg.constant(Tensor<double>({2, 2, 2})))).v[0];
    }
    {
      z.value.v[kk] = orig - h;
      pin.rewind();
      Graph<double> gg;
      Var o = gg.straight_through(gg.leaf(z), zq, &pin);
      lm = gg.val(gg.sqdiff_sum(o, gg.constant(Tensor<double>({2, 2, 2})))).v[0];
    }
    z.value.v[kk] = orig;
    pin.replay = false;
    const double numeric = (lp - lm) / (2.0 * h);
    CHECK(std::abs(numeric - 2.0 * zq.v[kk]) / std::max(1.0, std::abs(numeric)) < 1e-4);
  }

  // z == zq degenerates to differentiating L(z) directly
  Tensor<double> same = z.value;
  Graph<double> g2;
  Var out2 = g2.straight_through(g2.leaf(z), same);
  store.zero_grads();
  g2.backward(g2.sqdiff_sum(out2, g2.constant(Tensor<double>({2, 2, 2}))));
  for (int64_t i = 0; i < same.numel(); ++i)
    CHECK(z.grad.v[static_cast<size_t>(i)] ==
          doctest::Approx(2.0 * same.v[static_cast<size_t>(i)]).epsilon(1e-12));
}

TEST_CASE("detach blocks gradients") {
  ParamStore<double> store;
  auto& z = store.add("z", {3});
  z.value.v = {1.0, 2.0, 3.0};
  Graph<double> g;
  Var loss = g.sqdiff_sum(g.detach(g.leaf(z)), g.constant(Tensor<double>({3})));
  store.zero_grads();
  g.backward(loss);
  for (double gr : z.grad.v) CHECK(gr == 0.0);
}
