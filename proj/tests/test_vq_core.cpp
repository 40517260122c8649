#include <cmath>
#include <vector>

#include "doctest.h"
#include "moco/rng.hpp"
#include "moco/vq.hpp"
#include "oracles.hpp"

using namespace moco;

namespace {

vq::Codebook<float> make_cb(const std::vector<std::vector<float>>& rows,
                            vq::Level lvl = vq::Level::Bottom) {
  vq::Codebook<float> cb(static_cast<int>(rows.size()), static_cast<int>(rows[0].size()), lvl);
  for (size_t i = 0; i < rows.size(); ++i)
    for (size_t j = 0; j < rows[i].size(); ++j)
      cb.vectors.at2(static_cast<int>(i), static_cast<int>(j)) = rows[i][j];
  return cb;
}

Tensor<float> random_features(int h, int w, int d, Rng& rng) {
  Tensor<float> z({h, w, d});
  for (auto& x : z.v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return z;
}

vq::Codebook<float> random_cb(int k, int d, Rng& rng) {
  vq::Codebook<float> cb(k, d, vq::Level::Bottom);
  for (auto& x : cb.vectors.v) x = static_cast<float>(rng.uniform(-1.0, 1.0));
  return cb;
}

}  // namespace

TEST_CASE("nearest_code worked examples") {
  auto cb = make_cb({{0, 0}, {1, 1}});
  std::vector<float> v = {0.9f, 0.8f};
  auto [idx, d] = vq::nearest_code(v.data(), 2, cb);
  CHECK(idx == 1);
  CHECK(d == doctest::Approx(0.05).epsilon(1e-6));

  std::vector<float> tie = {0.5f, 0.5f};
  auto [ti, td] = vq::nearest_code(tie.data(), 2, cb);
  CHECK(ti == 0);  // lowest index wins the tie
  CHECK(td == doctest::Approx(0.5).epsilon(1e-6));

  auto cb4 = make_cb({{1, 0}, {2, 0}, {3, 0}, {4, 5}});
  std::vector<float> exact = {4.0f, 5.0f};
  auto [ei, ed] = vq::nearest_code(exact.data(), 2, cb4);
  CHECK(ei == 3);
  CHECK(ed == 0.0f);

  std::vector<float> wrong_dim = {1.0f};
  CHECK_THROWS_AS(vq::nearest_code(wrong_dim.data(), 1, cb), std::invalid_argument);
}

TEST_CASE("quantize_grid matches the exhaustive scan on random instances") {
  Rng rng(42);
  for (int trial = 0; trial < 50; ++trial) {
    const int h = rng.randint(1, 8), w = rng.randint(1, 8);
    const int k = rng.randint(2, 64), d = rng.randint(1, 8);
    auto z = random_features(h, w, d, rng);
    auto cb = random_cb(k, d, rng);
    auto [grid, zq] = vq::quantize_grid(z, cb);
    for (int i = 0; i < h * w; ++i) {
      auto want = oracle::nearest_row_scan(z.data() + static_cast<size_t>(i) * d,
                                           cb.vectors.data(), k, d);
      CHECK(grid.indices[static_cast<size_t>(i)] == want.first);
      for (int j = 0; j < d; ++j)
        CHECK(zq.v[static_cast<size_t>(i) * d + j] == cb.vectors.at2(want.first, j));
      // distance optimality against every row
      for (int r = 0; r < k; ++r) {
        float s = 0.0f;
        for (int j = 0; j < d; ++j) {
          float diff = z.v[static_cast<size_t>(i) * d + j] - cb.vectors.at2(r, j);
          s += diff * diff;
        }
        CHECK(want.second <= s + 1e-12f);
      }
    }
  }
}

TEST_CASE("quantize_grid recovers construction indices and is idempotent") {
  Rng rng(7);
  auto cb = random_cb(8, 3, rng);
  Tensor<float> z({2, 4, 3});
  std::vector<int> want = {3, 1, 4, 1, 5, 0, 2, 6};
  for (int i = 0; i < 8; ++i)
    for (int j = 0; j < 3; ++j)
      z.v[static_cast<size_t>(i) * 3 + j] = cb.vectors.at2(want[static_cast<size_t>(i)], j);

  auto [grid, zq] = vq::quantize_grid(z, cb);
  CHECK(grid.indices == want);
  CHECK(zq.v == z.v);

  auto [grid2, zq2] = vq::quantize_grid(zq, cb);
  CHECK(grid2.indices == grid.indices);
  CHECK(zq2.v == zq.v);
}

TEST_CASE("lookup") {
  auto cb = make_cb({{1, 2}, {3, 4}});
  vq::CodeGrid g;
  g.h = 2;
  g.w = 2;
  g.K = 2;
  g.indices = {0, 1, 1, 0};
  Tensor<float> out = vq::lookup(g, cb);
  CHECK(out.v == std::vector<float>{1, 2, 3, 4, 3, 4, 1, 2});

  vq::CodeGrid constant;
  constant.h = 1;
  constant.w = 3;
  constant.K = 2;
  constant.indices = {1, 1, 1};
  Tensor<float> c = vq::lookup(constant, cb);
  CHECK(c.v == std::vector<float>{3, 4, 3, 4, 3, 4});

  vq::CodeGrid bad = g;
  bad.indices[0] = 7;
  CHECK_THROWS_AS(vq::lookup(bad, cb), std::invalid_argument);

  Rng rng(1);
  auto z = random_features(3, 3, 2, rng);
  auto cbr = random_cb(6, 2, rng);
  auto [grid, zq] = vq::quantize_grid(z, cbr);
  CHECK(vq::lookup(grid, cbr).v == zq.v);
}

TEST_CASE("vq_losses arithmetic") {
  CHECK(vq::kDefaultBeta == 0.25);

  Tensor<float> z({2, 2, 3});
  Tensor<float> zq({2, 2, 3});
  auto [cb0, cm0] = vq::vq_losses(z, zq, 0.25f);
  CHECK(cb0 == 0.0f);
  CHECK(cm0 == 0.0f);

  // constant 0.5 residual: per-position squared distance 0.25*D
  const int d = 3;
  for (auto& x : z.v) x = 0.7f;
  for (auto& x : zq.v) x = 0.2f;
  auto [cb1, cm1] = vq::vq_losses(z, zq, 0.25f);
  CHECK(cb1 == doctest::Approx(0.25 * d).epsilon(1e-6));
  CHECK(cm1 == doctest::Approx(0.0625 * d).epsilon(1e-6));
  // value-level symmetry
  CHECK(cb1 == doctest::Approx(cm1 / 0.25).epsilon(1e-9));

  Tensor<float> other({2, 2, 2});
  CHECK_THROWS_AS(vq::vq_losses(z, other, 0.25f), std::invalid_argument);
  CHECK_THROWS_AS(vq::vq_losses(z, zq, -1.0f), std::invalid_argument);
}

TEST_CASE("code grid json round trip") {
  vq::CodeGrid g;
  g.h = 2;
  g.w = 3;
  g.K = 9;
  g.level = vq::Level::Top;
  g.indices = {0, 8, 3, 4, 5, 6};
  std::string text = vq::grid_to_json(g);
  vq::CodeGrid back = vq::grid_from_json(text);
  CHECK(back.h == 2);
  CHECK(back.w == 3);
  CHECK(back.K == 9);
  CHECK(back.level == vq::Level::Top);
  CHECK(back.indices == g.indices);

  vq::CodeGrid bad = g;
  bad.indices[0] = 9;
  CHECK_THROWS_AS(vq::grid_to_json(bad), std::invalid_argument);
}
