#include <cmath>
#include <vector>

#include "doctest.h"
#include "moco/phantom.hpp"
#include "moco/train.hpp"

using namespace moco;

namespace {

nets::VQModelConfig toy_model() {
  nets::VQModelConfig c;
  c.hidden_channels = 16;
  c.codebook_k = 16;
  c.codebook_d = 4;
  c.bottom_stride = 2;
  c.top_stride = 4;
  return c;
}

prior::PriorConfig toy_prior(vq::Level lvl, int k) {
  prior::PriorConfig c;
  c.level = lvl;
  c.k = k;
  c.channels = 8;
  c.n_blocks = 1;
  c.gated_res_per_block = 1;
  c.attention = false;
  c.has_context = lvl == vq::Level::Bottom;
  return c;
}

train::TrainConfig toy_train(int epochs, int max_steps = 0) {
  train::TrainConfig t;
  t.lr_stage1 = 1e-3;
  t.lr_stage2 = 1e-3;
  t.epochs = epochs;
  t.batch_size = 4;
  t.crop = 16;
  t.seed = 7;
  t.max_steps = max_steps;
  return t;
}

train::MemoryPairSource toy_source(int count) {
  Rng prng(31);
  ImageVolume vol = make_phantom(32, 4, prng);
  std::vector<TrainingPair> pairs;
  for (int i = 0; i < count; ++i) {
    Rng rng(100 + static_cast<uint64_t>(i));
    pairs.push_back(make_training_pair(vol, 16, rng, 2));
  }
  return train::MemoryPairSource(std::move(pairs));
}

}  // namespace

TEST_CASE("adam_update hand-evaluated scalar step") {
  Tensor<double> p({1}), g({1}), m({1}), v({1});
  p.v[0] = 1.0;
  g.v[0] = 1.0;
  train::adam_update(p, g, m, v, 0, 0.1, 0.9, 0.999, 1e-8);
  CHECK(m.v[0] == doctest::Approx(0.1).epsilon(1e-15));
  CHECK(v.v[0] == doctest::Approx(0.001).epsilon(1e-15));
  // mhat = vhat = 1 -> p' = 1 - 0.1/(1 + 1e-8)
  CHECK(p.v[0] == doctest::Approx(1.0 - 0.1 / (1.0 + 1e-8)).epsilon(1e-15));
}

TEST_CASE("adam_update matches an independent scalar reference on random cases") {
  Rng rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    double pv = rng.uniform(-2, 2), gv = rng.uniform(-2, 2);
    double mv = rng.uniform(-1, 1), vv = rng.uniform(0, 1);
    const int64_t t = rng.randint(0, 50);
    const double lr = rng.uniform(1e-5, 1e-1);

    Tensor<double> p({1}), g({1}), m({1}), v({1});
    p.v[0] = pv;
    g.v[0] = gv;
    m.v[0] = mv;
    v.v[0] = vv;
    train::adam_update(p, g, m, v, t, lr, 0.9, 0.999, 1e-8);

    // independent formula evaluation
    const double m2 = 0.9 * mv + 0.1 * gv;
    const double v2 = 0.999 * vv + 0.001 * gv * gv;
    const double mh = m2 / (1.0 - std::pow(0.9, static_cast<double>(t + 1)));
    const double vh = v2 / (1.0 - std::pow(0.999, static_cast<double>(t + 1)));
    const double want = pv - lr * mh / (std::sqrt(vh) + 1e-8);
    CHECK(std::abs(p.v[0] - want) < 1e-12);
  }
}

TEST_CASE("adam zero gradient leaves the parameter unchanged") {
  Tensor<float> p({3}), g({3}), m({3}), v({3});
  p.v = {1.0f, -2.0f, 0.5f};
  train::adam_update(p, g, m, v, 0, 0.1, 0.9, 0.999, 1e-8);
  CHECK(p.v == std::vector<float>{1.0f, -2.0f, 0.5f});
}

TEST_CASE("adam rejects non-finite gradients") {
  Tensor<float> p({1}), g({1}), m({1}), v({1});
  g.v[0] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(train::adam_update(p, g, m, v, 0, 0.1, 0.9, 0.999, 1e-8), std::runtime_error);
}

TEST_CASE("train config validation and paper defaults") {
  train::TrainConfig t;
  CHECK(t.lr_stage1 == 1e-4);
  CHECK(t.lr_stage2 == 3e-4);
  CHECK(t.adam_beta1 == 0.9);
  CHECK(t.adam_beta2 == 0.999);
  CHECK(t.epochs == 100);
  CHECK(t.beta_commit == 0.25);
  CHECK(t.crop == 128);
  t.lr_stage1 = -1.0;
  CHECK_THROWS_AS(t.validate(), std::invalid_argument);
}

TEST_CASE("loss_stage1 arithmetic") {
  Tensor<float> x({2, 2, 1}), ref({2, 2, 1});
  CHECK(train::loss_stage1_value(x, ref, 0.0f, 0.0f) == 0.0f);

  for (auto& v : x.v) v = 0.3f;
  for (auto& v : ref.v) v = 0.2f;
  CHECK(train::loss_stage1_value(x, ref, 0.2f, 0.05f) == doctest::Approx(0.35).epsilon(1e-6));

  // permutation invariance: mean of elementwise terms
  Tensor<float> xa({4}), ra({4}), xb({4}), rb({4});
  xa.v = {0.1f, 0.9f, 0.4f, 0.6f};
  ra.v = {0.2f, 0.1f, 0.5f, 0.9f};
  xb.v = {0.6f, 0.4f, 0.9f, 0.1f};
  rb.v = {0.9f, 0.5f, 0.1f, 0.2f};
  CHECK(train::loss_stage1_value(xa, ra, 0.0f, 0.0f) ==
        doctest::Approx(train::loss_stage1_value(xb, rb, 0.0f, 0.0f)).epsilon(1e-7));

  Tensor<float> bad({3});
  CHECK_THROWS_AS(train::loss_stage1_value(x, bad, 0.0f, 0.0f), std::invalid_argument);
}

TEST_CASE("zero-epoch training is a bitwise no-op") {
  auto source = toy_source(4);
  nets::VQModel<float> model(toy_model());
  Rng rng(1);
  model.init_params(rng);
  const uint64_t before = train::param_store_hash(model.params());
  train::TrainLog log = train::train_stage1(toy_train(0), source, model);
  CHECK(log.steps.empty());
  CHECK(train::param_store_hash(model.params()) == before);

  prior::PriorNet<float> top(toy_prior(vq::Level::Top, 16));
  prior::PriorNet<float> bottom(toy_prior(vq::Level::Bottom, 16));
  Rng rng2(2);
  top.init_params(rng2);
  bottom.init_params(rng2);
  const uint64_t th = train::param_store_hash(top.params());
  const uint64_t bh = train::param_store_hash(bottom.params());
  train::TrainLog log2 = train::train_stage2(toy_train(0), source, model, top, bottom);
  CHECK(log2.steps.empty());
  CHECK(train::param_store_hash(top.params()) == th);
  CHECK(train::param_store_hash(bottom.params()) == bh);
}

TEST_CASE("stage-1 training is seed deterministic and logs decomposed losses") {
  auto source = toy_source(8);
  auto run = [&](uint64_t seed) {
    nets::VQModel<float> model(toy_model());
    Rng rng(seed);
    model.init_params(rng);
    train::TrainConfig t = toy_train(1, 6);
    train::TrainLog log = train::train_stage1(t, source, model);
    return std::make_pair(train::param_store_hash(model.params()), log);
  };
  auto [h1, log1] = run(3);
  auto [h2, log2] = run(3);
  CHECK(h1 == h2);
  REQUIRE(log1.steps.size() == log2.steps.size());
  CHECK(log1.to_jsonl() == log2.to_jsonl());
  for (const auto& s : log1.steps) {
    const double total = s.losses.at("total");
    const double sum = s.losses.at("recon") + s.losses.at("codebook") + s.losses.at("commitment");
    CHECK(std::abs(total - sum) < 1e-6);
  }
  auto [h3, log3] = run(4);
  (void)log3;
  CHECK(h3 != h1);  // different init changes the outcome
}

TEST_CASE("stage-2 training never touches the frozen autoencoder") {
  auto source = toy_source(6);
  nets::VQModel<float> model(toy_model());
  Rng rng(9);
  model.init_params(rng);
  train::train_stage1(toy_train(1, 4), source, model);
  const uint64_t frozen = train::param_store_hash(model.params());

  prior::PriorNet<float> top(toy_prior(vq::Level::Top, 16));
  prior::PriorNet<float> bottom(toy_prior(vq::Level::Bottom, 16));
  Rng rng2(10);
  top.init_params(rng2);
  bottom.init_params(rng2);
  const uint64_t top_before = train::param_store_hash(top.params());

  train::TrainLog log = train::train_stage2(toy_train(1, 6), source, model, top, bottom);
  CHECK(train::param_store_hash(model.params()) == frozen);
  CHECK(train::param_store_hash(top.params()) != top_before);
  REQUIRE(!log.steps.empty());
  for (const auto& s : log.steps) {
    CHECK(std::isfinite(s.losses.at("nll_top")));
    CHECK(std::isfinite(s.losses.at("nll_bottom")));
  }
}

TEST_CASE("stage-1 loss decreases on a short toy run") {
  auto source = toy_source(12);
  nets::VQModel<float> model(toy_model());
  Rng rng(11);
  model.init_params(rng);
  train::TrainConfig t = toy_train(20, 60);
  train::TrainLog log = train::train_stage1(t, source, model);
  REQUIRE(log.steps.size() >= 20);
  double first = 0.0, last = 0.0;
  for (int i = 0; i < 5; ++i) first += log.steps[static_cast<size_t>(i)].losses.at("total");
  for (size_t i = log.steps.size() - 5; i < log.steps.size(); ++i)
    last += log.steps[i].losses.at("total");
  CHECK(last < first);
}

TEST_CASE("jsonl log serialization is stable and excludes timing") {
  train::TrainLog log;
  train::StepRecord r;
  r.step = 0;
  r.epoch = 0;
  r.losses["total"] = 0.5;
  r.losses["recon"] = 0.25;
  r.wall_ms = 123.456;  // must not appear in the persisted form
  log.steps.push_back(r);
  const std::string text = log.to_jsonl();
  CHECK(text == "{\"step\":0,\"epoch\":0,\"recon\":0.25,\"total\":0.5}\n");
}
