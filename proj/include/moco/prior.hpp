#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "moco/autodiff.hpp"
#include "moco/motion_sim.hpp"
#include "moco/rng.hpp"
#include "moco/vq.hpp"

namespace moco::prior {

struct PriorConfig {
  vq::Level level = vq::Level::Top;
  int k = 512;        // index vocabulary, matches the paired codebook
  int channels = 128;
  int n_blocks = 4;
  int gated_res_per_block = 2;
  bool attention = true;
  bool has_context = false;  // bottom prior conditions on the upsampled top grid
  int num_labels = 11;

  void validate() const {
    if (n_blocks < 1) throw std::invalid_argument("prior config: n_blocks must be >= 1");
    if (gated_res_per_block < 0) throw std::invalid_argument("prior config: negative res count");
    if (k < 2 || channels < 2 || channels % 2 != 0)
      throw std::invalid_argument("prior config: bad k/channels");
    if (num_labels != kNumLabels) throw std::invalid_argument("prior config: num_labels must be 11");
  }
};

enum class RearrangeMode { Regenerate, ResamplePrefix };

// temperature softmax over one logit row; t == 0 is argmax with lowest-index
// tie-break
int sample_index(const float* logits, int k, double temperature, Rng* rng);
int sample_index(const double* logits, int k, double temperature, Rng* rng);

// Raster-causal conditional model over index grids. Input indices pass
// through a center-excluding masked conv, so logits at position i depend
// only on indices at raster positions < i, the class label, and (for the
// bottom level) the fully visible top-grid context.
template <typename T>
class PriorNet {
 public:
  explicit PriorNet(const PriorConfig& cfg) : cfg_(cfg) { build(); }

  const PriorConfig& config() const { return cfg_; }
  ad::ParamStore<T>& params() { return store_; }
  const ad::ParamStore<T>& params() const { return store_; }
  void init_params(Rng& rng);

  ad::Var logits(ad::Graph<T>& g, const vq::CodeGrid& grid, int y,
                 const vq::CodeGrid* ctx = nullptr) const;

  Tensor<T> prior_logits(const vq::CodeGrid& grid, int y, const vq::CodeGrid* ctx = nullptr) const {
    ad::Graph<T> g;
    return g.val(logits(g, grid, y, ctx));
  }

  ad::Var nll_loss(ad::Graph<T>& g, const vq::CodeGrid& grid, int y,
                   const vq::CodeGrid* ctx = nullptr) const {
    ad::Var l = logits(g, grid, y, ctx);
    ad::Var flat = g.reshape(l, {grid.h * grid.w, cfg_.k});
    return g.softmax_xent_sum(flat, grid.indices);
  }

  T prior_nll(const vq::CodeGrid& grid, int y, const vq::CodeGrid* ctx = nullptr) const {
    ad::Graph<T> g;
    return g.val(nll_loss(g, grid, y, ctx)).v[0];
  }

  vq::CodeGrid sample(int h, int w, int y, double temperature, Rng& rng,
                      const vq::CodeGrid* ctx = nullptr) const;

  vq::CodeGrid rearrange(const vq::CodeGrid& g_enc, int y, double temperature, Rng& rng,
                         RearrangeMode mode, const vq::CodeGrid* ctx = nullptr) const;

 private:
  PriorConfig cfg_;
  ad::ParamStore<T> store_;

  ad::Param<T>*embed_in_ = nullptr, *cls_table_ = nullptr, *ctx_embed_ = nullptr;
  ad::Param<T>*mask_a_w_ = nullptr, *mask_a_b_ = nullptr;
  struct GatedRes {
    ad::Param<T>*w = nullptr, *b = nullptr;
  };
  struct Attn {
    ad::Param<T>*qw = nullptr, *kw = nullptr, *vw = nullptr, *ow = nullptr, *ob = nullptr;
  };
  struct Block {
    std::vector<GatedRes> res;
    Attn attn;
    bool has_attn = false;
  };
  std::vector<Block> blocks_;
  ad::Param<T>*head_w_ = nullptr, *head_b_ = nullptr;
  Tensor<T> mask_a_, mask_b_;

  void build();
  void check_grid(const vq::CodeGrid& grid) const {
    if (grid.K != cfg_.k) throw std::invalid_argument("prior: grid K mismatch");
    if (grid.level != cfg_.level) throw std::invalid_argument("prior: grid level mismatch");
    grid.validate();
  }
  static Tensor<T> make_mask(int k, int ci, int co, bool include_center);
  static std::vector<int> upsample_nearest(const vq::CodeGrid& ctx, int h, int w);
};

// ---- implementation ---------------------------------------------------------

template <typename T>
Tensor<T> PriorNet<T>::make_mask(int k, int ci, int co, bool include_center) {
  Tensor<T> m({k, k, ci, co});
  const int kc = k / 2;
  for (int i = 0; i < k; ++i)
    for (int j = 0; j < k; ++j) {
      bool on = i < kc || (i == kc && (j < kc || (j == kc && include_center)));
      if (!on) continue;
      for (int a = 0; a < ci; ++a)
        for (int b = 0; b < co; ++b) m.v[((static_cast<size_t>(i) * k + j) * ci + a) * co + b] = T(1);
    }
  return m;
}

template <typename T>
void PriorNet<T>::build() {
  cfg_.validate();
  const int C = cfg_.channels, K = cfg_.k, Ca = C / 2;

  embed_in_ = &store_.add("embed.in", {K, C});
  mask_a_w_ = &store_.add("in.a.w", {3, 3, C, C});
  mask_a_b_ = &store_.add("in.a.b", {C});
  cls_table_ = &store_.add("cls.table", {cfg_.num_labels, C});
  if (cfg_.has_context) ctx_embed_ = &store_.add("ctx.embed", {K, C});

  for (int i = 0; i < cfg_.n_blocks; ++i) {
    Block blk;
    for (int j = 0; j < cfg_.gated_res_per_block; ++j) {
      GatedRes r;
      std::string base = "b" + std::to_string(i) + ".r" + std::to_string(j);
      r.w = &store_.add(base + ".w", {3, 3, C, 2 * C});
      r.b = &store_.add(base + ".b", {2 * C});
      blk.res.push_back(r);
    }
    if (cfg_.attention) {
      std::string base = "b" + std::to_string(i) + ".attn";
      blk.attn.qw = &store_.add(base + ".q.w", {C, Ca});
      blk.attn.kw = &store_.add(base + ".k.w", {C, Ca});
      blk.attn.vw = &store_.add(base + ".v.w", {C, Ca});
      blk.attn.ow = &store_.add(base + ".o.w", {Ca, C});
      blk.attn.ob = &store_.add(base + ".o.b", {C});
      blk.has_attn = true;
    }
    blocks_.push_back(std::move(blk));
  }
  head_w_ = &store_.add("head.w", {C, K});
  head_b_ = &store_.add("head.b", {K});

  mask_a_ = make_mask(3, C, C, false);
  mask_b_ = make_mask(3, C, 2 * C, true);
}

template <typename T>
void PriorNet<T>::init_params(Rng& rng) {
  for (auto& p : store_.all()) {
    if (p.name.size() >= 2 && p.name.substr(p.name.size() - 2) == ".b") {
      p.value.fill(T(0));
    } else {
      int64_t fan_in = p.value.numel() / p.value.shape.back();
      const T lim = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
      for (auto& x : p.value.v) x = static_cast<T>(rng.uniform(-lim, lim));
    }
  }
}

template <typename T>
std::vector<int> PriorNet<T>::upsample_nearest(const vq::CodeGrid& ctx, int h, int w) {
  if (h % ctx.h != 0 || w % ctx.w != 0)
    throw std::invalid_argument("prior: context grid does not divide the target shape");
  const int fh = h / ctx.h, fw = w / ctx.w;
  std::vector<int> out(static_cast<size_t>(h) * w);
  for (int r = 0; r < h; ++r)
    for (int c = 0; c < w; ++c) out[static_cast<size_t>(r) * w + c] = ctx.at(r / fh, c / fw);
  return out;
}

template <typename T>
ad::Var PriorNet<T>::logits(ad::Graph<T>& g, const vq::CodeGrid& grid, int y,
                            const vq::CodeGrid* ctx) const {
  check_grid(grid);
  if (y < 0 || y >= cfg_.num_labels) throw std::invalid_argument("prior: label out of range");
  if (cfg_.has_context && !ctx) throw std::invalid_argument("prior: missing context grid");
  if (!cfg_.has_context && ctx) throw std::invalid_argument("prior: unexpected context grid");
  const int h = grid.h, w = grid.w, C = cfg_.channels;

  ad::Var x = g.gather_rows(g.leaf(*embed_in_), grid.indices, h, w);
  x = g.conv2d_masked(x, g.leaf(*mask_a_w_), g.leaf(*mask_a_b_), mask_a_);
  x = g.broadcast_add_vec(x, g.row(g.leaf(*cls_table_), y));
  if (cfg_.has_context)
    x = g.add(x, g.gather_rows(g.leaf(*ctx_embed_), upsample_nearest(*ctx, h, w), h, w));

  for (const auto& blk : blocks_) {
    for (const auto& r : blk.res) {
      ad::Var a = g.conv2d_masked(g.relu(x), g.leaf(*r.w), g.leaf(*r.b), mask_b_);
      ad::Var t = g.slice_c(a, 0, C);
      ad::Var gate = g.sigmoid(g.slice_c(a, C, 2 * C));
      x = g.add(x, g.mul(t, gate));
    }
    if (blk.has_attn) {
      ad::Var flat = g.reshape(x, {h * w, C});
      ad::Var q = g.matmul(flat, g.leaf(*blk.attn.qw));
      ad::Var kk = g.matmul(flat, g.leaf(*blk.attn.kw));
      ad::Var v = g.matmul(flat, g.leaf(*blk.attn.vw));
      ad::Var att = g.causal_attention(q, kk, v);
      ad::Var o = g.broadcast_add_vec(g.matmul(att, g.leaf(*blk.attn.ow)), g.leaf(*blk.attn.ob));
      x = g.add(x, g.reshape(o, {h, w, C}));
    }
  }

  ad::Var flat = g.reshape(g.relu(x), {h * w, C});
  ad::Var out = g.broadcast_add_vec(g.matmul(flat, g.leaf(*head_w_)), g.leaf(*head_b_));
  return g.reshape(out, {h, w, cfg_.k});
}

template <typename T>
vq::CodeGrid PriorNet<T>::sample(int h, int w, int y, double temperature, Rng& rng,
                                 const vq::CodeGrid* ctx) const {
  if (temperature < 0.0) throw std::invalid_argument("prior: negative temperature");
  vq::CodeGrid grid;
  grid.h = h;
  grid.w = w;
  grid.K = cfg_.k;
  grid.level = cfg_.level;
  grid.indices.assign(static_cast<size_t>(h) * w, 0);

  // positions after the current one hold placeholders; causality makes them
  // irrelevant to the logits being sampled
  for (int i = 0; i < h * w; ++i) {
    Tensor<T> l = prior_logits(grid, y, ctx);
    grid.indices[static_cast<size_t>(i)] =
        sample_index(l.data() + static_cast<size_t>(i) * cfg_.k, cfg_.k, temperature, &rng);
  }
  return grid;
}

template <typename T>
vq::CodeGrid PriorNet<T>::rearrange(const vq::CodeGrid& g_enc, int y, double temperature, Rng& rng,
                                    RearrangeMode mode, const vq::CodeGrid* ctx) const {
  check_grid(g_enc);
  if (temperature < 0.0) throw std::invalid_argument("prior: negative temperature");
  if (mode == RearrangeMode::Regenerate) return sample(g_enc.h, g_enc.w, y, temperature, rng, ctx);

  // resample-prefix: each position draws from its conditional given the
  // encoder prefix
  Tensor<T> l = prior_logits(g_enc, y, ctx);
  vq::CodeGrid out = g_enc;
  for (int i = 0; i < g_enc.h * g_enc.w; ++i)
    out.indices[static_cast<size_t>(i)] =
        sample_index(l.data() + static_cast<size_t>(i) * cfg_.k, cfg_.k, temperature, &rng);
  return out;
}

}  // namespace moco::prior
