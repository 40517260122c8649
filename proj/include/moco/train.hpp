#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <map>
#include <memory>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "moco/autodiff.hpp"
#include "moco/motion_sim.hpp"
#include "moco/nets.hpp"
#include "moco/prior.hpp"

namespace moco::train {

struct TrainConfig {
  double lr_stage1 = 1e-4;
  double lr_stage2 = 3e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;
  int epochs = 100;
  int batch_size = 32;
  double beta_commit = 0.25;
  int crop = 128;
  uint64_t seed = 0;
  double grad_clip = 0.0;  // 0 disables
  int max_steps = 0;       // 0 = no cap
  int checkpoint_every = 0;

  void validate() const {
    if (lr_stage1 <= 0.0 || lr_stage2 <= 0.0)
      throw std::invalid_argument("train config: learning rates must be positive");
    if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0)
      throw std::invalid_argument("train config: betas must lie in [0, 1)");
    if (epochs < 0 || batch_size < 1 || crop < 8)
      throw std::invalid_argument("train config: bad epochs/batch/crop");
    if (beta_commit < 0.0) throw std::invalid_argument("train config: negative beta");
  }
};

struct StepRecord {
  int step = 0;
  int epoch = 0;
  std::map<std::string, double> losses;
  double wall_ms = 0.0;  // in-memory only; the persisted log stays byte-stable
};

struct TrainLog {
  std::vector<StepRecord> steps;

  std::string to_jsonl() const {
    std::ostringstream os;
    for (const auto& s : steps) {
      os << "{\"step\":" << s.step << ",\"epoch\":" << s.epoch;
      for (const auto& [k, v] : s.losses) {
        os << ",\"" << k << "\":";
        char buf[40];
        std::snprintf(buf, sizeof(buf), "%.17g", v);
        os << buf;
      }
      os << "}\n";
    }
    return os.str();
  }
};

// m' = b1 m + (1-b1) g ; v' = b2 v + (1-b2) g^2 ;
// param -= lr * (m'/(1-b1^{t+1})) / (sqrt(v'/(1-b2^{t+1})) + eps)
template <typename T>
void adam_update(Tensor<T>& param, const Tensor<T>& grad, Tensor<T>& m, Tensor<T>& v, int64_t t,
                 double lr, double beta1, double beta2, double eps) {
  if (!param.same_shape(grad)) throw std::invalid_argument("adam: shape mismatch");
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t + 1));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t + 1));
  for (int64_t i = 0; i < param.numel(); ++i) {
    const size_t k = static_cast<size_t>(i);
    const double g = static_cast<double>(grad.v[k]);
    if (!std::isfinite(g)) throw std::runtime_error("adam: non-finite gradient");
    const double mi = beta1 * static_cast<double>(m.v[k]) + (1.0 - beta1) * g;
    const double vi = beta2 * static_cast<double>(v.v[k]) + (1.0 - beta2) * g * g;
    m.v[k] = static_cast<T>(mi);
    v.v[k] = static_cast<T>(vi);
    const double mh = mi / bc1;
    const double vh = vi / bc2;
    param.v[k] = static_cast<T>(static_cast<double>(param.v[k]) - lr * mh / (std::sqrt(vh) + eps));
  }
}

template <typename T>
class Adam {
 public:
  Adam(ad::ParamStore<T>& store, double lr, double beta1, double beta2, double eps,
       double grad_clip = 0.0)
      : store_(&store), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps), clip_(grad_clip) {
    for (auto& p : store.all()) {
      m_.emplace_back(p.value.shape);
      v_.emplace_back(p.value.shape);
    }
  }

  int64_t step_count() const { return t_; }

  void step() {
    if (clip_ > 0.0) clip_grads();
    size_t i = 0;
    for (auto& p : store_->all()) {
      adam_update(p.value, p.grad, m_[i], v_[i], t_, lr_, b1_, b2_, eps_);
      ++i;
    }
    ++t_;
  }

 private:
  ad::ParamStore<T>* store_;
  double lr_, b1_, b2_, eps_, clip_;
  int64_t t_ = 0;
  std::vector<Tensor<T>> m_, v_;

  void clip_grads() {
    double sq = 0.0;
    for (auto& p : store_->all())
      for (T g : p.grad.v) sq += static_cast<double>(g) * static_cast<double>(g);
    const double norm = std::sqrt(sq);
    if (norm <= clip_) return;
    const T s = static_cast<T>(clip_ / norm);
    for (auto& p : store_->all())
      for (auto& g : p.grad.v) g *= s;
  }
};

// total stage-1 objective at value level; commitment already carries beta
template <typename T>
T loss_stage1_value(const Tensor<T>& x, const Tensor<T>& x_ref, T codebook_loss,
                    T commitment_loss) {
  if (!x.same_shape(x_ref)) throw std::invalid_argument("loss_stage1: shape mismatch");
  Tensor<T> diff = x;
  kern::axpy(static_cast<int>(x.numel()), T(-1), x_ref.data(), diff.data());
  T l1 = kern::asum(static_cast<int>(x.numel()), diff.data()) / static_cast<T>(x.numel());
  return l1 + codebook_loss + commitment_loss;
}

// deterministic per-index pair provider
class PairSource {
 public:
  virtual ~PairSource() = default;
  virtual int size() const = 0;
  virtual TrainingPair get(int index) const = 0;
};

// pairs synthesized on the fly; sample i uses seed base_seed + i
class SimulatedPairSource : public PairSource {
 public:
  SimulatedPairSource(ImageVolume vol, int crop, int n_states, uint64_t base_seed, int count)
      : vol_(std::move(vol)), crop_(crop), n_states_(n_states), seed_(base_seed), count_(count) {}
  int size() const override { return count_; }
  TrainingPair get(int index) const override {
    Rng rng(seed_ + static_cast<uint64_t>(index));
    return make_training_pair(vol_, crop_, rng, n_states_);
  }

 private:
  ImageVolume vol_;
  int crop_, n_states_;
  uint64_t seed_;
  int count_;
};

class MemoryPairSource : public PairSource {
 public:
  explicit MemoryPairSource(std::vector<TrainingPair> pairs) : pairs_(std::move(pairs)) {}
  int size() const override { return static_cast<int>(pairs_.size()); }
  TrainingPair get(int index) const override { return pairs_.at(static_cast<size_t>(index)); }

 private:
  std::vector<TrainingPair> pairs_;
};

namespace detail {

inline std::vector<int> epoch_order(int n, Rng& rng) {
  std::vector<int> order(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) order[static_cast<size_t>(i)] = i;
  for (int i = n - 1; i > 0; --i) {
    int j = rng.randint(0, i);
    std::swap(order[static_cast<size_t>(i)], order[static_cast<size_t>(j)]);
  }
  return order;
}

inline double now_ms() {
  return std::chrono::duration<double, std::milli>(
             std::chrono::steady_clock::now().time_since_epoch())
      .count();
}

}  // namespace detail

// Stage 1: fit the autoencoder and codebooks. Batches accumulate gradients
// sample by sample; the logged losses are batch means.
template <typename T>
TrainLog train_stage1(const TrainConfig& cfg, const PairSource& data, nets::VQModel<T>& model) {
  cfg.validate();
  TrainLog log;
  if (data.size() == 0) return log;
  Adam<T> opt(model.params(), cfg.lr_stage1, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
              cfg.grad_clip);
  Rng order_rng(cfg.seed ^ 0x517cc1b727220a95ull);
  int step = 0;
  const T beta = static_cast<T>(cfg.beta_commit);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = detail::epoch_order(data.size(), order_rng);
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
      const double t0 = detail::now_ms();
      const size_t bend = std::min(order.size(), pos + static_cast<size_t>(cfg.batch_size));
      const int bn = static_cast<int>(bend - pos);
      model.params().zero_grads();
      double recon_sum = 0.0, cb_sum = 0.0, commit_sum = 0.0;

      for (size_t bi = pos; bi < bend; ++bi) {
        TrainingPair pair = data.get(order[bi]);
        ad::Graph<T> g;
        Tensor<T> corrupted = nets::VQModel<T>::slice_to_tensor(pair.corrupted);
        Tensor<T> clean = nets::VQModel<T>::slice_to_tensor(pair.clean);
        auto fwd = model.forward_autoencode(g, corrupted, pair.label.value, beta);
        ad::Var l1 = g.mean_abs_diff(fwd.recon, g.constant(clean));
        ad::Var total = g.add(g.add(l1, fwd.codebook_loss), fwd.commitment_loss);
        ad::Var scaled = g.scale(total, T(1) / static_cast<T>(bn));
        g.backward(scaled);
        recon_sum += static_cast<double>(g.val(l1).v[0]);
        cb_sum += static_cast<double>(g.val(fwd.codebook_loss).v[0]);
        commit_sum += static_cast<double>(g.val(fwd.commitment_loss).v[0]);
      }

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.losses["recon"] = recon_sum / bn;
      rec.losses["codebook"] = cb_sum / bn;
      rec.losses["commitment"] = commit_sum / bn;
      rec.losses["total"] = rec.losses["recon"] + rec.losses["codebook"] + rec.losses["commitment"];
      if (!std::isfinite(rec.losses["total"])) {
        log.steps.push_back(rec);
        throw std::runtime_error("train_stage1: non-finite loss at step " + std::to_string(step));
      }
      opt.step();
      rec.wall_ms = detail::now_ms() - t0;
      log.steps.push_back(rec);
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return log;
    }
  }
  return log;
}

// Stage 2: freeze the autoencoder, fit per-level priors on its index grids
// by maximum likelihood. Logged values are per-position means.
template <typename T>
TrainLog train_stage2(const TrainConfig& cfg, const PairSource& data,
                      nets::VQModel<T>& frozen_model, prior::PriorNet<T>& prior_top,
                      prior::PriorNet<T>& prior_bottom) {
  cfg.validate();
  TrainLog log;
  if (data.size() == 0) return log;
  Adam<T> opt_top(prior_top.params(), cfg.lr_stage2, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps,
                  cfg.grad_clip);
  Adam<T> opt_bottom(prior_bottom.params(), cfg.lr_stage2, cfg.adam_beta1, cfg.adam_beta2,
                     cfg.adam_eps, cfg.grad_clip);
  Rng order_rng(cfg.seed ^ 0x2545f4914f6cdd1dull);
  int step = 0;
  const T beta = static_cast<T>(cfg.beta_commit);

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> order = detail::epoch_order(data.size(), order_rng);
    for (size_t pos = 0; pos < order.size(); pos += static_cast<size_t>(cfg.batch_size)) {
      const double t0 = detail::now_ms();
      const size_t bend = std::min(order.size(), pos + static_cast<size_t>(cfg.batch_size));
      const int bn = static_cast<int>(bend - pos);
      prior_top.params().zero_grads();
      prior_bottom.params().zero_grads();
      double top_sum = 0.0, bottom_sum = 0.0;

      for (size_t bi = pos; bi < bend; ++bi) {
        TrainingPair pair = data.get(order[bi]);
        // frozen encode; no backward ever touches the VQ parameters here
        ad::Graph<T> genc;
        Tensor<T> corrupted = nets::VQModel<T>::slice_to_tensor(pair.corrupted);
        auto fwd = frozen_model.forward_autoencode(genc, corrupted, pair.label.value, beta);

        {
          ad::Graph<T> g;
          ad::Var nll = prior_top.nll_loss(g, fwd.g_top, pair.label.value);
          const T npos = static_cast<T>(fwd.g_top.h * fwd.g_top.w);
          ad::Var mean_nll = g.scale(nll, T(1) / npos);
          g.backward(g.scale(mean_nll, T(1) / static_cast<T>(bn)));
          top_sum += static_cast<double>(g.val(mean_nll).v[0]);
        }
        {
          ad::Graph<T> g;
          ad::Var nll = prior_bottom.nll_loss(g, fwd.g_bottom, pair.label.value, &fwd.g_top);
          const T npos = static_cast<T>(fwd.g_bottom.h * fwd.g_bottom.w);
          ad::Var mean_nll = g.scale(nll, T(1) / npos);
          g.backward(g.scale(mean_nll, T(1) / static_cast<T>(bn)));
          bottom_sum += static_cast<double>(g.val(mean_nll).v[0]);
        }
      }

      StepRecord rec;
      rec.step = step;
      rec.epoch = epoch;
      rec.losses["nll_top"] = top_sum / bn;
      rec.losses["nll_bottom"] = bottom_sum / bn;
      if (!std::isfinite(rec.losses["nll_top"]) || !std::isfinite(rec.losses["nll_bottom"])) {
        log.steps.push_back(rec);
        throw std::runtime_error("train_stage2: non-finite loss at step " + std::to_string(step));
      }
      opt_top.step();
      opt_bottom.step();
      rec.wall_ms = detail::now_ms() - t0;
      log.steps.push_back(rec);
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) return log;
    }
  }
  return log;
}

// FNV-1a over the raw parameter bytes; used by the stage-separation checks
template <typename T>
uint64_t param_store_hash(const ad::ParamStore<T>& store) {
  uint64_t h = 1469598103934665603ull;
  for (const auto& p : store.all()) {
    const unsigned char* bytes = reinterpret_cast<const unsigned char*>(p.value.v.data());
    for (size_t i = 0; i < p.value.v.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  }
  return h;
}

}  // namespace moco::train
