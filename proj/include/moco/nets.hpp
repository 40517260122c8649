#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "moco/autodiff.hpp"
#include "moco/motion_sim.hpp"
#include "moco/rng.hpp"
#include "moco/vq.hpp"

namespace moco::nets {

struct VQModelConfig {
  int in_channels = 1;
  int hidden_channels = 128;
  int res_blocks_per_stage = 2;
  int codebook_k = 512;
  int codebook_d = 64;
  int bottom_stride = 4;
  int top_stride = 8;
  int num_labels = 11;
  bool encoder_label_injection = true;

  void validate() const;
  int down_steps_e1() const;  // log2(bottom_stride)
  int down_steps_e2() const;  // log2(top_stride / bottom_stride)
};

inline bool is_pow2_int(int n) { return n > 0 && (n & (n - 1)) == 0; }

inline void VQModelConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("config: in_channels must be >= 1");
  if (hidden_channels < 8 || hidden_channels % 4 != 0)
    throw std::invalid_argument("config: hidden_channels must be a multiple of 4, >= 8");
  if (res_blocks_per_stage < 0) throw std::invalid_argument("config: negative res blocks");
  if (codebook_k < 2 || codebook_d < 1) throw std::invalid_argument("config: bad codebook size");
  if (!is_pow2_int(bottom_stride) || !is_pow2_int(top_stride))
    throw std::invalid_argument("config: strides must be powers of two");
  if (bottom_stride < 2 || top_stride <= bottom_stride)
    throw std::invalid_argument("config: requires top_stride > bottom_stride >= 2");
  if (num_labels != kNumLabels) throw std::invalid_argument("config: num_labels must be 11");
}

inline int VQModelConfig::down_steps_e1() const {
  int n = 0, s = bottom_stride;
  while (s > 1) {
    s >>= 1;
    ++n;
  }
  return n;
}

inline int VQModelConfig::down_steps_e2() const {
  int n = 0, s = top_stride / bottom_stride;
  while (s > 1) {
    s >>= 1;
    ++n;
  }
  return n;
}

namespace layers {

template <typename T>
struct Conv {
  ad::Param<T>* w = nullptr;
  ad::Param<T>* b = nullptr;
  int stride = 1, pad = 0;
  ad::Var operator()(ad::Graph<T>& g, ad::Var x) const {
    return g.conv2d(x, g.leaf(*w), g.leaf(*b), stride, pad);
  }
};

template <typename T>
struct ConvT {
  ad::Param<T>* w = nullptr;
  ad::Param<T>* b = nullptr;
  int stride = 2, pad = 1;
  ad::Var operator()(ad::Graph<T>& g, ad::Var x) const {
    return g.conv_transpose2d(x, g.leaf(*w), g.leaf(*b), stride, pad);
  }
};

// [relu -> 3x3 -> relu -> 1x1] with additive skip
template <typename T>
struct ResBlock {
  Conv<T> c1, c2;
  ad::Var operator()(ad::Graph<T>& g, ad::Var x) const {
    ad::Var y = c2(g, g.relu(c1(g, g.relu(x))));
    return g.add(x, y);
  }
};

// vector in, vector out: x * W + b
template <typename T>
struct VecAffine {
  ad::Param<T>* w = nullptr;  // [din, dout]
  ad::Param<T>* b = nullptr;  // [dout]
  ad::Var operator()(ad::Graph<T>& g, ad::Var x) const {
    ad::Var xm = g.reshape(x, {1, g.val(x).dim(0)});
    ad::Var y = g.matmul(xm, g.leaf(*w));
    y = g.broadcast_add_vec(y, g.leaf(*b));
    return g.reshape(y, {g.val(y).dim(1)});
  }
};

}  // namespace layers

template <typename T>
struct VQForward {
  ad::Var recon;
  ad::Var codebook_loss;    // scalar, summed over levels
  ad::Var commitment_loss;  // scalar, beta applied, summed over levels
  vq::CodeGrid g_top, g_bottom;
};

// Two-level conditional VQ autoencoder: E1 -> bottom codes, E2 -> top codes,
// D1 decodes top to bottom resolution, D2 merges with the bottom codes and
// the label embedding and upsamples back to the image.
template <typename T>
class VQModel {
 public:
  explicit VQModel(const VQModelConfig& cfg) : cfg_(cfg) { build(); }

  const VQModelConfig& config() const { return cfg_; }
  ad::ParamStore<T>& params() { return store_; }
  const ad::ParamStore<T>& params() const { return store_; }

  void init_params(Rng& rng);

  vq::Codebook<T> codebook(vq::Level lvl) const {
    vq::Codebook<T> cb(cfg_.codebook_k, cfg_.codebook_d, lvl);
    cb.vectors = (lvl == vq::Level::Bottom ? cb_bottom_ : cb_top_)->value;
    return cb;
  }
  ad::Param<T>& codebook_param(vq::Level lvl) {
    return lvl == vq::Level::Bottom ? *cb_bottom_ : *cb_top_;
  }

  ad::Var embed_label(ad::Graph<T>& g, int y) const;

  // returns (z_bottom, z_top)
  std::pair<ad::Var, ad::Var> encode_hierarchy(ad::Graph<T>& g, ad::Var x, int y) const;

  ad::Var decode_hierarchy(ad::Graph<T>& g, ad::Var eq_top, ad::Var eq_bottom, int y) const;

  VQForward<T> forward_autoencode(ad::Graph<T>& g, const Tensor<T>& img, int y, T beta,
                                  ad::PinTape<T>* pin = nullptr);

  static Tensor<T> slice_to_tensor(const ImageSlice& s);
  static ImageSlice tensor_to_slice(const Tensor<T>& t, double sp_row = 1.0, double sp_col = 1.0);

 private:
  VQModelConfig cfg_;
  ad::ParamStore<T> store_;

  std::vector<layers::Conv<T>> e1_downs_, e2_downs_;
  std::vector<layers::ResBlock<T>> e1_res_, e2_res_, d1_res_, d2_res_;
  layers::Conv<T> e1_to_code_, e2_to_code_, d1_in_, d2_in_, d2_out_;
  std::vector<layers::ConvT<T>> d1_ups_, d2_ups_;
  ad::Param<T>*label_w_ = nullptr, *label_b_ = nullptr;
  layers::VecAffine<T> inj_enc_, inj_d1_, inj_d2_;
  ad::Param<T>*cb_bottom_ = nullptr, *cb_top_ = nullptr;

  void build();
  layers::Conv<T> add_conv(const std::string& name, int k, int ci, int co, int stride, int pad);
  layers::ConvT<T> add_convt(const std::string& name, int ci, int co);
  layers::ResBlock<T> add_res(const std::string& name, int width, int res_ch);
  layers::VecAffine<T> add_vec_affine(const std::string& name, int din, int dout);
  void check_label(int y) const {
    if (y < 0 || y >= cfg_.num_labels) throw std::invalid_argument("label out of range 0..10");
  }
};

int64_t count_parameters(const VQModelConfig& cfg);

// ---- implementation ---------------------------------------------------------

template <typename T>
layers::Conv<T> VQModel<T>::add_conv(const std::string& name, int k, int ci, int co, int stride,
                                     int pad) {
  layers::Conv<T> conv;
  conv.w = &store_.add(name + ".w", {k, k, ci, co});
  conv.b = &store_.add(name + ".b", {co});
  conv.stride = stride;
  conv.pad = pad;
  return conv;
}

template <typename T>
layers::ConvT<T> VQModel<T>::add_convt(const std::string& name, int ci, int co) {
  layers::ConvT<T> conv;
  conv.w = &store_.add(name + ".w", {ci, 4, 4, co});
  conv.b = &store_.add(name + ".b", {co});
  conv.stride = 2;
  conv.pad = 1;
  return conv;
}

template <typename T>
layers::ResBlock<T> VQModel<T>::add_res(const std::string& name, int width, int res_ch) {
  layers::ResBlock<T> blk;
  blk.c1 = add_conv(name + ".c1", 3, width, res_ch, 1, 1);
  blk.c2 = add_conv(name + ".c2", 1, res_ch, width, 1, 0);
  return blk;
}

template <typename T>
layers::VecAffine<T> VQModel<T>::add_vec_affine(const std::string& name, int din, int dout) {
  layers::VecAffine<T> a;
  a.w = &store_.add(name + ".w", {din, dout});
  a.b = &store_.add(name + ".b", {dout});
  return a;
}

template <typename T>
void VQModel<T>::build() {
  cfg_.validate();
  const int H = cfg_.hidden_channels;
  const int Hh = H / 2;
  const int Hq = std::max(H / 4, 4);
  const int rc = std::max(H / 4, 4);
  const int D = cfg_.codebook_d;
  const int n1 = cfg_.down_steps_e1();
  const int n2 = cfg_.down_steps_e2();
  const int R = cfg_.res_blocks_per_stage;

  // E1: image -> bottom-resolution trunk
  for (int i = 0; i < n1; ++i) {
    int ci = i == 0 ? cfg_.in_channels : (i == 1 ? Hh : H);
    int co = (n1 == 1 || i >= 1) ? H : Hh;
    e1_downs_.push_back(add_conv("e1.down" + std::to_string(i), 4, ci, co, 2, 1));
  }
  for (int j = 0; j < R; ++j) e1_res_.push_back(add_res("e1.res" + std::to_string(j), H, rc));
  e1_to_code_ = add_conv("e1.to_code", 1, H, D, 1, 0);

  // E2: bottom trunk -> top codes
  for (int i = 0; i < n2; ++i)
    e2_downs_.push_back(add_conv("e2.down" + std::to_string(i), 4, H, H, 2, 1));
  for (int j = 0; j < R; ++j) e2_res_.push_back(add_res("e2.res" + std::to_string(j), H, rc));
  e2_to_code_ = add_conv("e2.to_code", 1, H, D, 1, 0);

  // D1: top codes -> bottom resolution context
  d1_in_ = add_conv("d1.in", 3, D, H, 1, 1);
  for (int j = 0; j < R; ++j) d1_res_.push_back(add_res("d1.res" + std::to_string(j), H, rc));
  for (int i = 0; i < n2; ++i) {
    int ci = H, co = (i == n2 - 1) ? Hh : H;
    d1_ups_.push_back(add_convt("d1.up" + std::to_string(i), ci, co));
  }

  // D2: merged bottom features -> image
  d2_in_ = add_conv("d2.in", 3, Hh + D, Hh, 1, 1);
  for (int j = 0; j < R; ++j) d2_res_.push_back(add_res("d2.res" + std::to_string(j), Hh, rc));
  for (int i = 0; i < n1; ++i) {
    int ci = Hh, co = (i == n1 - 1) ? Hq : Hh;
    d2_ups_.push_back(add_convt("d2.up" + std::to_string(i), ci, co));
  }
  d2_out_ = add_conv("d2.out", 3, Hq, cfg_.in_channels, 1, 1);

  // label pathway
  label_w_ = &store_.add("label.w", {cfg_.num_labels, D});
  label_b_ = &store_.add("label.b", {D});
  if (cfg_.encoder_label_injection) {
    int enc_width = n1 == 1 ? H : Hh;
    inj_enc_ = add_vec_affine("inj.enc", D, enc_width);
  }
  inj_d1_ = add_vec_affine("inj.d1", D, Hh);
  inj_d2_ = add_vec_affine("inj.d2", D, D);

  cb_bottom_ = &store_.add("codebook.bottom", {cfg_.codebook_k, D});
  cb_top_ = &store_.add("codebook.top", {cfg_.codebook_k, D});
}

template <typename T>
void VQModel<T>::init_params(Rng& rng) {
  for (auto& p : store_.all()) {
    if (p.name.rfind("codebook.", 0) == 0) {
      const T lim = T(1) / static_cast<T>(cfg_.codebook_k);
      for (auto& x : p.value.v) x = static_cast<T>(rng.uniform(-lim, lim));
    } else if (p.name.size() >= 2 && p.name.substr(p.name.size() - 2) == ".b") {
      p.value.fill(T(0));
    } else {
      // fan-in scaled uniform
      int64_t fan_in = p.value.numel() / p.value.shape.back();
      const T lim = static_cast<T>(std::sqrt(6.0 / static_cast<double>(fan_in)));
      for (auto& x : p.value.v) x = static_cast<T>(rng.uniform(-lim, lim));
    }
  }
}

template <typename T>
ad::Var VQModel<T>::embed_label(ad::Graph<T>& g, int y) const {
  check_label(y);
  ad::Var h = g.row(g.leaf(*label_w_), y);
  return g.add(h, g.leaf(*label_b_));
}

template <typename T>
std::pair<ad::Var, ad::Var> VQModel<T>::encode_hierarchy(ad::Graph<T>& g, ad::Var x, int y) const {
  check_label(y);
  const Tensor<T>& vx = g.val(x);
  if (vx.dim(0) % cfg_.top_stride != 0 || vx.dim(1) % cfg_.top_stride != 0)
    throw std::runtime_error("encode: input sides must be divisible by top_stride");

  ad::Var t = x;
  for (size_t i = 0; i < e1_downs_.size(); ++i) {
    t = e1_downs_[i](g, t);
    if (i == 0 && cfg_.encoder_label_injection) {
      ad::Var hy = embed_label(g, y);
      t = g.broadcast_add_vec(t, inj_enc_(g, hy));
    }
    t = g.relu(t);
  }
  for (const auto& blk : e1_res_) t = blk(g, t);
  ad::Var z_bottom = e1_to_code_(g, t);

  ad::Var u = t;
  for (const auto& down : e2_downs_) u = g.relu(down(g, u));
  for (const auto& blk : e2_res_) u = blk(g, u);
  ad::Var z_top = e2_to_code_(g, u);
  return {z_bottom, z_top};
}

template <typename T>
ad::Var VQModel<T>::decode_hierarchy(ad::Graph<T>& g, ad::Var eq_top, ad::Var eq_bottom,
                                     int y) const {
  check_label(y);
  ad::Var hy = embed_label(g, y);

  ad::Var u = d1_in_(g, eq_top);
  for (const auto& blk : d1_res_) u = blk(g, u);
  for (const auto& up : d1_ups_) u = up(g, g.relu(u));

  ad::Var branch_a = g.broadcast_add_vec(u, inj_d1_(g, hy));
  ad::Var branch_b = g.broadcast_add_vec(eq_bottom, inj_d2_(g, hy));
  ad::Var v = g.concat_c(branch_a, branch_b);

  ad::Var t = d2_in_(g, v);
  for (const auto& blk : d2_res_) t = blk(g, t);
  for (const auto& up : d2_ups_) t = up(g, g.relu(t));
  return d2_out_(g, g.relu(t));
}

template <typename T>
VQForward<T> VQModel<T>::forward_autoencode(ad::Graph<T>& g, const Tensor<T>& img, int y, T beta,
                                            ad::PinTape<T>* pin) {
  auto [z_b, z_t] = encode_hierarchy(g, g.constant(img), y);

  VQForward<T> out;
  ad::Var st_t, st_b, cb_loss, commit;
  for (vq::Level lvl : {vq::Level::Top, vq::Level::Bottom}) {
    ad::Var z = lvl == vq::Level::Top ? z_t : z_b;
    const Tensor<T>& zval = g.val(z);
    const int positions = zval.dim(0) * zval.dim(1);

    vq::CodeGrid grid;
    Tensor<T> zq;
    if (pin && pin->replay) {
      grid.indices = pin->pop_grid();
      grid.h = zval.dim(0);
      grid.w = zval.dim(1);
      grid.K = cfg_.codebook_k;
      grid.level = lvl;
      zq = pin->pop_tensor();
    } else {
      auto qz = vq::quantize_grid(zval, codebook(lvl));
      grid = std::move(qz.first);
      zq = std::move(qz.second);
      if (pin) {
        pin->push_grid(grid.indices);
        pin->push_tensor(zq);
      }
    }

    // codebook term sees live embeddings at frozen assignments; the encoder
    // side is stopped
    ad::Var zq_live = g.gather_rows(g.leaf(codebook_param(lvl)), grid.indices, grid.h, grid.w);
    ad::Var cb_term = g.scale(g.sqdiff_sum(g.detach(z, pin), zq_live), T(1) / static_cast<T>(positions));
    // commitment pulls the encoder toward the frozen embedding values
    ad::Var commit_term =
        g.scale(g.sqdiff_sum(z, g.constant(zq)), beta / static_cast<T>(positions));

    ad::Var st = g.straight_through(z, zq, pin);
    if (lvl == vq::Level::Top) {
      st_t = st;
      cb_loss = cb_term;
      commit = commit_term;
      out.g_top = grid;
    } else {
      st_b = st;
      cb_loss = g.add(cb_loss, cb_term);
      commit = g.add(commit, commit_term);
      out.g_bottom = grid;
    }
  }

  out.recon = decode_hierarchy(g, st_t, st_b, y);
  out.codebook_loss = cb_loss;
  out.commitment_loss = commit;
  return out;
}

template <typename T>
Tensor<T> VQModel<T>::slice_to_tensor(const ImageSlice& s) {
  Tensor<T> t({s.h, s.w, 1});
  for (size_t i = 0; i < s.v.size(); ++i) t.v[i] = static_cast<T>(s.v[i]);
  return t;
}

template <typename T>
ImageSlice VQModel<T>::tensor_to_slice(const Tensor<T>& t, double sp_row, double sp_col) {
  if (t.shape.size() != 3 || t.dim(2) != 1)
    throw std::invalid_argument("tensor_to_slice: expected HxWx1");
  ImageSlice s(t.dim(0), t.dim(1), sp_row, sp_col);
  for (size_t i = 0; i < s.v.size(); ++i) s.v[i] = static_cast<float>(t.v[i]);
  return s;
}

inline int64_t count_parameters(const VQModelConfig& cfg) {
  VQModel<float> m(cfg);
  return m.params().total_count();
}

}  // namespace moco::nets
