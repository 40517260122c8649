#pragma once

#include <cmath>
#include <deque>
#include <functional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "moco/kernels.hpp"
#include "moco/tensor.hpp"

// Define-by-run reverse-mode autodiff over dense tensors. Feature maps are
// HxWxC. The graph is rebuilt per step; backward walks nodes in reverse
// creation order. Instantiated for float (training) and double (oracles).

namespace moco::ad {

template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;

  Param() = default;
  Param(std::string n, std::vector<int> shape) : name(std::move(n)), value(shape), grad(shape) {}

  void zero_grad() { grad.fill(T(0)); }
};

// Ordered parameter registry; deque keeps addresses stable.
template <typename T>
class ParamStore {
 public:
  Param<T>& add(const std::string& name, std::vector<int> shape) {
    for (const auto& p : params_)
      if (p.name == name) throw std::invalid_argument("duplicate parameter name: " + name);
    params_.emplace_back(name, std::move(shape));
    return params_.back();
  }
  Param<T>* find(const std::string& name) {
    for (auto& p : params_)
      if (p.name == name) return &p;
    return nullptr;
  }
  std::deque<Param<T>>& all() { return params_; }
  const std::deque<Param<T>>& all() const { return params_; }
  int64_t total_count() const {
    int64_t n = 0;
    for (const auto& p : params_) n += p.value.numel();
    return n;
  }
  void zero_grads() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::deque<Param<T>> params_;
};

// Captures every stop-gradient boundary of a forward pass so an oracle can
// replay the pass with those values frozen; see tests for the use.
template <typename T>
struct PinTape {
  bool replay = false;
  std::vector<Tensor<T>> tensors;
  std::vector<std::vector<int>> grids;
  size_t tcur = 0, gcur = 0;

  void push_tensor(const Tensor<T>& t) { tensors.push_back(t); }
  const Tensor<T>& pop_tensor() { return tensors.at(tcur++); }
  void push_grid(const std::vector<int>& g) { grids.push_back(g); }
  const std::vector<int>& pop_grid() { return grids.at(gcur++); }
  void rewind() { tcur = gcur = 0; }
};

struct Var {
  int i = -1;
};

namespace detail {

// shared geometry for conv/conv-transpose lowering
template <typename T>
void im2col(const Tensor<T>& x, int kh, int kw, int stride, int pad, Tensor<T>& col, int oh,
            int ow) {
  const int h = x.dim(0), w = x.dim(1), ci = x.dim(2);
  T* out = col.data();
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      for (int i = 0; i < kh; ++i) {
        const int ir = r * stride - pad + i;
        for (int j = 0; j < kw; ++j) {
          const int ic = c * stride - pad + j;
          if (ir >= 0 && ir < h && ic >= 0 && ic < w) {
            const T* src = x.data() + (static_cast<size_t>(ir) * w + ic) * ci;
            for (int ch = 0; ch < ci; ++ch) out[ch] = src[ch];
          } else {
            for (int ch = 0; ch < ci; ++ch) out[ch] = T(0);
          }
          out += ci;
        }
      }
    }
  }
}

template <typename T>
void col2im_add(const Tensor<T>& col, int kh, int kw, int stride, int pad, Tensor<T>& x, int oh,
                int ow) {
  const int h = x.dim(0), w = x.dim(1), ci = x.dim(2);
  const T* in = col.data();
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) {
      for (int i = 0; i < kh; ++i) {
        const int ir = r * stride - pad + i;
        for (int j = 0; j < kw; ++j) {
          const int ic = c * stride - pad + j;
          if (ir >= 0 && ir < h && ic >= 0 && ic < w) {
            T* dst = x.data() + (static_cast<size_t>(ir) * w + ic) * ci;
            for (int ch = 0; ch < ci; ++ch) dst[ch] += in[ch];
          }
          in += ci;
        }
      }
    }
  }
}

template <typename T>
Tensor<T> transpose2d(const Tensor<T>& a) {
  const int m = a.dim(0), n = a.dim(1);
  Tensor<T> out({n, m});
  for (int i = 0; i < m; ++i)
    for (int j = 0; j < n; ++j) out.at2(j, i) = a.at2(i, j);
  return out;
}

}  // namespace detail

template <typename T>
class Graph {
 public:
  struct Node {
    Tensor<T> val;
    Tensor<T> grad;
    std::function<void(Graph&)> back;  // may be empty
  };

  const Tensor<T>& val(Var v) const { return nodes_.at(static_cast<size_t>(v.i)).val; }
  const Tensor<T>& grad(Var v) const { return nodes_.at(static_cast<size_t>(v.i)).grad; }

  Var constant(Tensor<T> t) { return push(std::move(t), {}); }

  Var leaf(Param<T>& p) {
    Param<T>* pp = &p;
    Var out = push(Tensor<T>(p.value), {});
    node(out).back = [out, pp](Graph& g) {
      Tensor<T>& gd = g.node(out).grad;
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), pp->grad.data());
    };
    return out;
  }

  Var add(Var a, Var b) {
    check_same(a, b, "add");
    Tensor<T> out = val(a);
    kern::axpy(static_cast<int>(out.numel()), T(1), val(b).data(), out.data());
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), g.node(a).grad.data());
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), g.node(b).grad.data());
    };
    return o;
  }

  Var sub(Var a, Var b) {
    check_same(a, b, "sub");
    Tensor<T> out = val(a);
    kern::axpy(static_cast<int>(out.numel()), T(-1), val(b).data(), out.data());
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), g.node(a).grad.data());
      kern::axpy(static_cast<int>(gd.numel()), T(-1), gd.data(), g.node(b).grad.data());
    };
    return o;
  }

  Var mul(Var a, Var b) {
    check_same(a, b, "mul");
    Tensor<T> out = val(a);
    const Tensor<T>& vb = val(b);
    for (int64_t i = 0; i < out.numel(); ++i) out.v[static_cast<size_t>(i)] *= vb.v[static_cast<size_t>(i)];
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      const Tensor<T>& va = g.val(a);
      const Tensor<T>& vb2 = g.val(b);
      Tensor<T>& ga = g.node(a).grad;
      Tensor<T>& gb = g.node(b).grad;
      for (int64_t i = 0; i < gd.numel(); ++i) {
        size_t k = static_cast<size_t>(i);
        ga.v[k] += gd.v[k] * vb2.v[k];
        gb.v[k] += gd.v[k] * va.v[k];
      }
    };
    return o;
  }

  Var scale(Var a, T s) {
    Tensor<T> out = val(a);
    for (auto& x : out.v) x *= s;
    Var o = push(std::move(out), {});
    node(o).back = [o, a, s](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(static_cast<int>(gd.numel()), s, gd.data(), g.node(a).grad.data());
    };
    return o;
  }

  Var relu(Var a) {
    Tensor<T> out = val(a);
    for (auto& x : out.v)
      if (x < T(0)) x = T(0);
    Var o = push(std::move(out), {});
    node(o).back = [o, a](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      const Tensor<T>& va = g.val(a);
      Tensor<T>& ga = g.node(a).grad;
      for (int64_t i = 0; i < gd.numel(); ++i) {
        size_t k = static_cast<size_t>(i);
        if (va.v[k] > T(0)) ga.v[k] += gd.v[k];
      }
    };
    return o;
  }

  Var sigmoid(Var a) {
    Tensor<T> out = val(a);
    for (auto& x : out.v) x = T(1) / (T(1) + std::exp(-x));
    Var o = push(std::move(out), {});
    node(o).back = [o, a](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      const Tensor<T>& y = g.val(o);
      Tensor<T>& ga = g.node(a).grad;
      for (int64_t i = 0; i < gd.numel(); ++i) {
        size_t k = static_cast<size_t>(i);
        ga.v[k] += gd.v[k] * y.v[k] * (T(1) - y.v[k]);
      }
    };
    return o;
  }

  // x: HxWxCi, w: [kh,kw,ci,co], b: [co]
  Var conv2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const int h = vx.dim(0), wd = vx.dim(1), ci = vx.dim(2);
    const int kh = vw.dim(0), kw = vw.dim(1), co = vw.dim(3);
    if (vw.dim(2) != ci) throw std::invalid_argument("conv2d: channel mismatch");
    const int oh = (h + 2 * pad - kh) / stride + 1;
    const int ow = (wd + 2 * pad - kw) / stride + 1;
    const int p = oh * ow, kk = kh * kw * ci;

    Tensor<T> col({p, kk});
    detail::im2col(vx, kh, kw, stride, pad, col, oh, ow);
    Tensor<T> out({oh, ow, co});
    kern::gemm(p, co, kk, col.data(), vw.data(), out.data(), false);
    const Tensor<T>& vb = val(b);
    for (int i = 0; i < p; ++i)
      for (int c = 0; c < co; ++c) out.v[static_cast<size_t>(i) * co + c] += vb.v[static_cast<size_t>(c)];

    Var o = push(std::move(out), {});
    node(o).back = [o, x, w, b, stride, pad, kh, kw, oh, ow](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;  // [oh,ow,co]
      const Tensor<T>& vx2 = g.val(x);
      const Tensor<T>& vw2 = g.val(w);
      const int ci2 = vx2.dim(2), co2 = vw2.dim(3);
      const int p2 = oh * ow, kk2 = kh * kw * ci2;

      Tensor<T> col2({p2, kk2});
      detail::im2col(vx2, kh, kw, stride, pad, col2, oh, ow);

      // dW += col^T * dY
      Tensor<T> colT = detail::transpose2d(col2);
      kern::gemm(kk2, co2, p2, colT.data(), gd.data(), g.node(w).grad.data(), true);

      // db += per-channel sums
      Tensor<T>& gb = g.node(b).grad;
      for (int i = 0; i < p2; ++i)
        for (int c = 0; c < co2; ++c) gb.v[static_cast<size_t>(c)] += gd.v[static_cast<size_t>(i) * co2 + c];

      // dX via dcol = dY * W^T
      Tensor<T> wT = detail::transpose2d(Tensor<T>({kk2, co2}, vw2.v));
      Tensor<T> dcol({p2, kk2});
      kern::gemm(p2, kk2, co2, gd.data(), wT.data(), dcol.data(), false);
      detail::col2im_add(dcol, kh, kw, stride, pad, g.node(x).grad, oh, ow);
    };
    return o;
  }

  // x: HxWxCi, w: [ci,kh,kw,co], b: [co]; output (h-1)*s - 2p + kh
  Var conv_transpose2d(Var x, Var w, Var b, int stride, int pad) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vw = val(w);
    const int h = vx.dim(0), wd = vx.dim(1), ci = vx.dim(2);
    if (vw.dim(0) != ci) throw std::invalid_argument("conv_transpose2d: channel mismatch");
    const int kh = vw.dim(1), kw = vw.dim(2), co = vw.dim(3);
    const int oh = (h - 1) * stride - 2 * pad + kh;
    const int ow = (wd - 1) * stride - 2 * pad + kw;
    const int p = h * wd, kk = kh * kw * co;

    Tensor<T> col({p, kk});
    kern::gemm(p, kk, ci, vx.data(), vw.data(), col.data(), false);
    Tensor<T> out({oh, ow, co});
    // scatter: input position (r,c) writes to (r*s - p + i, c*s - p + j)
    detail::col2im_add(col, kh, kw, stride, pad, out, h, wd);
    const Tensor<T>& vb = val(b);
    for (int i = 0; i < oh * ow; ++i)
      for (int c = 0; c < co; ++c) out.v[static_cast<size_t>(i) * co + c] += vb.v[static_cast<size_t>(c)];

    Var o = push(std::move(out), {});
    node(o).back = [o, x, w, b, stride, pad, kh, kw](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;  // [oh,ow,co]
      const Tensor<T>& vx2 = g.val(x);
      const Tensor<T>& vw2 = g.val(w);
      const int h2 = vx2.dim(0), w2 = vx2.dim(1), ci2 = vx2.dim(2);
      const int co2 = vw2.dim(3);
      const int p2 = h2 * w2, kk2 = kh * kw * co2;

      // dcol = im2col of dOut with the same geometry
      Tensor<T> dcol({p2, kk2});
      detail::im2col(gd, kh, kw, stride, pad, dcol, h2, w2);

      // dX = dcol * Wr^T
      Tensor<T> wT = detail::transpose2d(Tensor<T>({ci2, kk2}, vw2.v));
      kern::gemm(p2, ci2, kk2, dcol.data(), wT.data(), g.node(x).grad.data(), true);

      // dWr += X^T * dcol
      Tensor<T> xT = detail::transpose2d(Tensor<T>({p2, ci2}, vx2.v));
      kern::gemm(ci2, kk2, p2, xT.data(), dcol.data(), g.node(w).grad.data(), true);

      const int oh2 = gd.dim(0), ow2 = gd.dim(1);
      Tensor<T>& gb = g.node(b).grad;
      for (int i = 0; i < oh2 * ow2; ++i)
        for (int c = 0; c < co2; ++c) gb.v[static_cast<size_t>(c)] += gd.v[static_cast<size_t>(i) * co2 + c];
    };
    return o;
  }

  // conv2d with a fixed 0/1 weight mask (causal convolutions); stride 1,
  // same padding
  Var conv2d_masked(Var x, Var w, Var b, const Tensor<T>& mask) {
    if (!mask.same_shape(val(w))) throw std::invalid_argument("conv2d_masked: mask shape mismatch");
    const int kh = val(w).dim(0);
    Tensor<T> wm = val(w);  // copy; push below may reallocate the node store
    for (int64_t i = 0; i < wm.numel(); ++i) wm.v[static_cast<size_t>(i)] *= mask.v[static_cast<size_t>(i)];
    Var wmv = push(std::move(wm), {});
    Tensor<T> mcopy = mask;
    node(wmv).back = [wmv, w, mcopy](Graph& g) {
      const Tensor<T>& gd = g.node(wmv).grad;
      Tensor<T>& gw = g.node(w).grad;
      for (int64_t i = 0; i < gd.numel(); ++i)
        gw.v[static_cast<size_t>(i)] += gd.v[static_cast<size_t>(i)] * mcopy.v[static_cast<size_t>(i)];
    };
    return conv2d(x, wmv, b, 1, kh / 2);
  }

  // a: [M,K] x b: [K,N]
  Var matmul(Var a, Var b) {
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
    if (vb.dim(0) != k) throw std::invalid_argument("matmul: inner dimension mismatch");
    Tensor<T> out({m, n});
    kern::gemm(m, n, k, va.data(), vb.data(), out.data(), false);
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b, m, n, k](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      Tensor<T> bT = detail::transpose2d(g.val(b));
      kern::gemm(m, k, n, gd.data(), bT.data(), g.node(a).grad.data(), true);
      Tensor<T> aT = detail::transpose2d(g.val(a));
      kern::gemm(k, n, m, aT.data(), gd.data(), g.node(b).grad.data(), true);
    };
    return o;
  }

  // table: [K,D] param node, pick one row -> [D]
  Var row(Var table, int idx) {
    const Tensor<T>& vt = val(table);
    const int d = vt.dim(1);
    if (idx < 0 || idx >= vt.dim(0)) throw std::invalid_argument("row: index out of range");
    Tensor<T> out({d});
    std::copy_n(vt.data() + static_cast<size_t>(idx) * d, d, out.data());
    Var o = push(std::move(out), {});
    node(o).back = [o, table, idx, d](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(d, T(1), gd.data(), g.node(table).grad.data() + static_cast<size_t>(idx) * d);
    };
    return o;
  }

  // table: [K,D], idx: H*W entries -> [H,W,D]
  Var gather_rows(Var table, const std::vector<int>& idx, int h, int w) {
    const Tensor<T>& vt = val(table);
    const int k = vt.dim(0), d = vt.dim(1);
    if (static_cast<int>(idx.size()) != h * w)
      throw std::invalid_argument("gather_rows: index count mismatch");
    Tensor<T> out({h, w, d});
    for (size_t i = 0; i < idx.size(); ++i) {
      if (idx[i] < 0 || idx[i] >= k) throw std::invalid_argument("gather_rows: index out of range");
      std::copy_n(vt.data() + static_cast<size_t>(idx[i]) * d, d, out.data() + i * d);
    }
    Var o = push(std::move(out), {});
    std::vector<int> idx_copy = idx;
    node(o).back = [o, table, idx_copy, d](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      Tensor<T>& gt = g.node(table).grad;
      for (size_t i = 0; i < idx_copy.size(); ++i)
        kern::axpy(d, T(1), gd.data() + i * d, gt.data() + static_cast<size_t>(idx_copy[i]) * d);
    };
    return o;
  }

  // x: [...,C] + vec [C] broadcast over leading dims
  Var broadcast_add_vec(Var x, Var vec) {
    const Tensor<T>& vx = val(x);
    const Tensor<T>& vv = val(vec);
    const int c = vv.dim(0);
    if (vx.shape.back() != c) throw std::invalid_argument("broadcast_add_vec: channel mismatch");
    const int64_t p = vx.numel() / c;
    Tensor<T> out = vx;
    for (int64_t i = 0; i < p; ++i)
      kern::axpy(c, T(1), vv.data(), out.data() + static_cast<size_t>(i) * c);
    Var o = push(std::move(out), {});
    node(o).back = [o, x, vec, c, p](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), g.node(x).grad.data());
      Tensor<T>& gv = g.node(vec).grad;
      for (int64_t i = 0; i < p; ++i)
        kern::axpy(c, T(1), gd.data() + static_cast<size_t>(i) * c, gv.data());
    };
    return o;
  }

  Var concat_c(Var a, Var b) {
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    if (va.dim(0) != vb.dim(0) || va.dim(1) != vb.dim(1))
      throw std::invalid_argument("concat_c: spatial shape mismatch");
    const int h = va.dim(0), w = va.dim(1), ca = va.dim(2), cb = vb.dim(2);
    Tensor<T> out({h, w, ca + cb});
    for (int i = 0; i < h * w; ++i) {
      std::copy_n(va.data() + static_cast<size_t>(i) * ca, ca,
                  out.data() + static_cast<size_t>(i) * (ca + cb));
      std::copy_n(vb.data() + static_cast<size_t>(i) * cb, cb,
                  out.data() + static_cast<size_t>(i) * (ca + cb) + ca);
    }
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b, h, w, ca, cb](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      Tensor<T>& ga = g.node(a).grad;
      Tensor<T>& gb = g.node(b).grad;
      for (int i = 0; i < h * w; ++i) {
        kern::axpy(ca, T(1), gd.data() + static_cast<size_t>(i) * (ca + cb),
                   ga.data() + static_cast<size_t>(i) * ca);
        kern::axpy(cb, T(1), gd.data() + static_cast<size_t>(i) * (ca + cb) + ca,
                   gb.data() + static_cast<size_t>(i) * cb);
      }
    };
    return o;
  }

  Var slice_c(Var x, int c0, int c1) {
    const Tensor<T>& vx = val(x);
    const int h = vx.dim(0), w = vx.dim(1), c = vx.dim(2);
    if (c0 < 0 || c1 > c || c0 >= c1) throw std::invalid_argument("slice_c: bad channel range");
    Tensor<T> out({h, w, c1 - c0});
    for (int i = 0; i < h * w; ++i)
      std::copy_n(vx.data() + static_cast<size_t>(i) * c + c0, c1 - c0,
                  out.data() + static_cast<size_t>(i) * (c1 - c0));
    Var o = push(std::move(out), {});
    node(o).back = [o, x, c0, c1, h, w, c](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      Tensor<T>& gx = g.node(x).grad;
      for (int i = 0; i < h * w; ++i)
        kern::axpy(c1 - c0, T(1), gd.data() + static_cast<size_t>(i) * (c1 - c0),
                   gx.data() + static_cast<size_t>(i) * c + c0);
    };
    return o;
  }

  Var reshape(Var x, std::vector<int> shape) {
    Tensor<T> out(std::move(shape), val(x).v);
    Var o = push(std::move(out), {});
    node(o).back = [o, x](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), g.node(x).grad.data());
    };
    return o;
  }

  // Stop-gradient. With a recording pin the value is captured; in replay the
  // captured value is served so perturbed re-evaluations keep sg[] frozen.
  Var detach(Var x, PinTape<T>* pin = nullptr) {
    if (pin && pin->replay) return push(Tensor<T>(pin->pop_tensor()), {});
    if (pin) pin->push_tensor(val(x));
    return push(Tensor<T>(val(x)), {});
  }

  // Forward value is q; gradient passes through to z unchanged. In pin
  // replay the forward becomes z + (q0 - z0) with q0, z0 captured, which is
  // exactly the function the pass-through gradient differentiates.
  Var straight_through(Var z, const Tensor<T>& q, PinTape<T>* pin = nullptr) {
    if (!val(z).same_shape(q)) throw std::invalid_argument("straight_through: shape mismatch");
    if (pin && pin->replay) {
      const Tensor<T>& z0 = pin->pop_tensor();
      Tensor<T> out = val(z);
      for (int64_t i = 0; i < out.numel(); ++i) {
        size_t k = static_cast<size_t>(i);
        out.v[k] += q.v[k] - z0.v[k];
      }
      Var o = push(std::move(out), {});
      attach_identity_back(o, z);
      return o;
    }
    if (pin) pin->push_tensor(val(z));
    Var o = push(Tensor<T>(q), {});
    attach_identity_back(o, z);
    return o;
  }

  // sum of squared differences -> scalar
  Var sqdiff_sum(Var a, Var b) {
    check_same(a, b, "sqdiff_sum");
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    Tensor<T> out({1});
    out.v[0] = kern::sqdist(static_cast<int>(va.numel()), va.data(), vb.data());
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b](Graph& g) {
      const T gd = g.node(o).grad.v[0];
      const Tensor<T>& va2 = g.val(a);
      const Tensor<T>& vb2 = g.val(b);
      Tensor<T>& ga = g.node(a).grad;
      Tensor<T>& gb = g.node(b).grad;
      for (int64_t i = 0; i < va2.numel(); ++i) {
        size_t k = static_cast<size_t>(i);
        T d = T(2) * gd * (va2.v[k] - vb2.v[k]);
        ga.v[k] += d;
        gb.v[k] -= d;
      }
    };
    return o;
  }

  // mean absolute difference -> scalar (subgradient 0 at ties)
  Var mean_abs_diff(Var a, Var b) {
    check_same(a, b, "mean_abs_diff");
    const Tensor<T>& va = val(a);
    const Tensor<T>& vb = val(b);
    const int64_t n = va.numel();
    Tensor<T> diff = va;
    kern::axpy(static_cast<int>(n), T(-1), vb.data(), diff.data());
    Tensor<T> out({1});
    out.v[0] = kern::asum(static_cast<int>(n), diff.data()) / static_cast<T>(n);
    Var o = push(std::move(out), {});
    node(o).back = [o, a, b, n](Graph& g) {
      const T gd = g.node(o).grad.v[0] / static_cast<T>(n);
      const Tensor<T>& va2 = g.val(a);
      const Tensor<T>& vb2 = g.val(b);
      Tensor<T>& ga = g.node(a).grad;
      Tensor<T>& gb = g.node(b).grad;
      for (int64_t i = 0; i < n; ++i) {
        size_t k = static_cast<size_t>(i);
        T d = va2.v[k] - vb2.v[k];
        T s = d > T(0) ? gd : (d < T(0) ? -gd : T(0));
        ga.v[k] += s;
        gb.v[k] -= s;
      }
    };
    return o;
  }

  // logits: [N,K] with integer targets -> scalar sum of -log softmax[target]
  Var softmax_xent_sum(Var logits, const std::vector<int>& targets) {
    const Tensor<T>& vl = val(logits);
    const int n = vl.dim(0), k = vl.dim(1);
    if (static_cast<int>(targets.size()) != n)
      throw std::invalid_argument("softmax_xent_sum: target count mismatch");
    Tensor<T> probs({n, k});
    T loss = T(0);
    for (int i = 0; i < n; ++i) {
      const T* l = vl.data() + static_cast<size_t>(i) * k;
      T m = l[0];
      for (int j = 1; j < k; ++j) m = std::max(m, l[j]);
      T z = T(0);
      for (int j = 0; j < k; ++j) z += std::exp(l[j] - m);
      const T lse = m + std::log(z);
      for (int j = 0; j < k; ++j) probs.v[static_cast<size_t>(i) * k + j] = std::exp(l[j] - lse);
      const int t = targets[static_cast<size_t>(i)];
      if (t < 0 || t >= k) throw std::invalid_argument("softmax_xent_sum: target out of range");
      loss += lse - l[t];
    }
    Tensor<T> out({1});
    out.v[0] = loss;
    Var o = push(std::move(out), {});
    std::vector<int> tcopy = targets;
    node(o).back = [o, logits, probs, tcopy, n, k](Graph& g) {
      const T gd = g.node(o).grad.v[0];
      Tensor<T>& gl = g.node(logits).grad;
      for (int i = 0; i < n; ++i) {
        for (int j = 0; j < k; ++j)
          gl.v[static_cast<size_t>(i) * k + j] += gd * probs.v[static_cast<size_t>(i) * k + j];
        gl.v[static_cast<size_t>(i) * k + tcopy[static_cast<size_t>(i)]] -= gd;
      }
    };
    return o;
  }

  // single-head causal self-attention over raster-flattened positions;
  // q,k,v: [N,C]; position i attends to j <= i
  Var causal_attention(Var q, Var k, Var v) {
    const Tensor<T>& vq = val(q);
    const Tensor<T>& vk = val(k);
    const Tensor<T>& vv = val(v);
    const int n = vq.dim(0), c = vq.dim(1);
    if (!vq.same_shape(vk) || !vq.same_shape(vv))
      throw std::invalid_argument("causal_attention: q/k/v shape mismatch");
    const T scl = T(1) / std::sqrt(static_cast<T>(c));

    Tensor<T> probs({n, n});  // lower-triangular rows
    Tensor<T> out({n, c});
    std::vector<T> scores(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) {
      T m = -std::numeric_limits<T>::infinity();
      for (int j = 0; j <= i; ++j) {
        T s = kern::dot(c, vq.data() + static_cast<size_t>(i) * c, vk.data() + static_cast<size_t>(j) * c) * scl;
        scores[static_cast<size_t>(j)] = s;
        m = std::max(m, s);
      }
      T z = T(0);
      for (int j = 0; j <= i; ++j) z += std::exp(scores[static_cast<size_t>(j)] - m);
      for (int j = 0; j <= i; ++j) {
        T p = std::exp(scores[static_cast<size_t>(j)] - m) / z;
        probs.at2(i, j) = p;
        kern::axpy(c, p, vv.data() + static_cast<size_t>(j) * c, out.data() + static_cast<size_t>(i) * c);
      }
    }

    Var o = push(std::move(out), {});
    node(o).back = [o, q, k, v, probs, n, c, scl](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      const Tensor<T>& vq2 = g.val(q);
      const Tensor<T>& vk2 = g.val(k);
      const Tensor<T>& vv2 = g.val(v);
      Tensor<T>& gq = g.node(q).grad;
      Tensor<T>& gk = g.node(k).grad;
      Tensor<T>& gv = g.node(v).grad;
      std::vector<T> dp(static_cast<size_t>(n)), ds(static_cast<size_t>(n));
      for (int i = 0; i < n; ++i) {
        const T* go = gd.data() + static_cast<size_t>(i) * c;
        T inner = T(0);
        for (int j = 0; j <= i; ++j) {
          dp[static_cast<size_t>(j)] = kern::dot(c, go, vv2.data() + static_cast<size_t>(j) * c);
          inner += probs.at2(i, j) * dp[static_cast<size_t>(j)];
        }
        for (int j = 0; j <= i; ++j) {
          ds[static_cast<size_t>(j)] = probs.at2(i, j) * (dp[static_cast<size_t>(j)] - inner);
          // dV
          kern::axpy(c, probs.at2(i, j), go, gv.data() + static_cast<size_t>(j) * c);
          // dQ, dK
          kern::axpy(c, ds[static_cast<size_t>(j)] * scl, vk2.data() + static_cast<size_t>(j) * c,
                     gq.data() + static_cast<size_t>(i) * c);
          kern::axpy(c, ds[static_cast<size_t>(j)] * scl, vq2.data() + static_cast<size_t>(i) * c,
                     gk.data() + static_cast<size_t>(j) * c);
        }
      }
    };
    return o;
  }

  void backward(Var root) {
    Node& r = node(root);
    if (r.val.numel() != 1) throw std::invalid_argument("backward: root must be scalar");
    for (auto& nd : nodes_) {
      nd.grad = Tensor<T>(nd.val.shape);
    }
    r.grad.v[0] = T(1);
    for (size_t i = nodes_.size(); i-- > 0;) {
      if (nodes_[i].back) nodes_[i].back(*this);
    }
  }

  size_t size() const { return nodes_.size(); }

 private:
  std::vector<Node> nodes_;

  Node& node(Var v) { return nodes_.at(static_cast<size_t>(v.i)); }

  Var push(Tensor<T> val, std::function<void(Graph&)> back) {
    nodes_.push_back(Node{std::move(val), Tensor<T>(), std::move(back)});
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  void attach_identity_back(Var o, Var src) {
    node(o).back = [o, src](Graph& g) {
      const Tensor<T>& gd = g.node(o).grad;
      kern::axpy(static_cast<int>(gd.numel()), T(1), gd.data(), g.node(src).grad.data());
    };
  }

  void check_same(Var a, Var b, const char* op) {
    if (!val(a).same_shape(val(b)))
      throw std::invalid_argument(std::string(op) + ": shape mismatch " + shape_str(val(a).shape) +
                                  " vs " + shape_str(val(b).shape));
  }
};

}  // namespace moco::ad
