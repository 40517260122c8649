#pragma once

#include <string>
#include <utility>
#include <vector>

#include "moco/kernels.hpp"
#include "moco/tensor.hpp"

namespace moco::vq {

enum class Level { Bottom, Top };

std::string level_name(Level l);
Level level_from_name(const std::string& s);

// K learned embedding vectors of dimension D
template <typename T>
struct Codebook {
  Tensor<T> vectors;  // [K, D]
  Level level = Level::Bottom;

  Codebook() = default;
  Codebook(int k, int d, Level lvl) : vectors({k, d}), level(lvl) {
    if (k < 2 || d < 1) throw std::invalid_argument("codebook: requires K >= 2, D >= 1");
  }
  int K() const { return vectors.dim(0); }
  int D() const { return vectors.dim(1); }
};

// grid of integer indices into a codebook
struct CodeGrid {
  std::vector<int> indices;  // row-major h*w
  int h = 0, w = 0;
  int K = 0;
  Level level = Level::Bottom;

  int at(int r, int c) const { return indices[static_cast<size_t>(r) * w + c]; }
  int& at(int r, int c) { return indices[static_cast<size_t>(r) * w + c]; }
  void validate() const;
};

std::string grid_to_json(const CodeGrid& g);
CodeGrid grid_from_json(const std::string& text);

// argmin_i ||v - e_i||^2; ties resolve to the lowest index
template <typename T>
std::pair<int, T> nearest_code(const T* v, int dim, const Codebook<T>& cb) {
  if (dim != cb.D()) throw std::invalid_argument("nearest_code: dimension mismatch");
  return kern::nearest_row(v, cb.vectors.data(), cb.K(), cb.D());
}

// per-position nearest_code over an HxWxD feature map
template <typename T>
std::pair<CodeGrid, Tensor<T>> quantize_grid(const Tensor<T>& z, const Codebook<T>& cb) {
  if (z.shape.size() != 3 || z.dim(2) != cb.D())
    throw std::invalid_argument("quantize_grid: feature map must be HxWxD matching the codebook");
  const int h = z.dim(0), w = z.dim(1), d = cb.D();
  CodeGrid g;
  g.h = h;
  g.w = w;
  g.K = cb.K();
  g.level = cb.level;
  g.indices.resize(static_cast<size_t>(h) * w);
  Tensor<T> zq({h, w, d});
  for (int i = 0; i < h * w; ++i) {
    auto [idx, dist] = nearest_code(z.data() + static_cast<size_t>(i) * d, d, cb);
    (void)dist;
    g.indices[static_cast<size_t>(i)] = idx;
    std::copy_n(cb.vectors.data() + static_cast<size_t>(idx) * d, d,
                zq.data() + static_cast<size_t>(i) * d);
  }
  return {std::move(g), std::move(zq)};
}

// out[h,w] = cb.vectors[g[h,w]]
template <typename T>
Tensor<T> lookup(const CodeGrid& g, const Codebook<T>& cb) {
  if (g.K != cb.K()) throw std::invalid_argument("lookup: grid/codebook K mismatch");
  Tensor<T> out({g.h, g.w, cb.D()});
  for (size_t i = 0; i < g.indices.size(); ++i) {
    const int idx = g.indices[i];
    if (idx < 0 || idx >= cb.K()) throw std::invalid_argument("lookup: index out of range");
    std::copy_n(cb.vectors.data() + static_cast<size_t>(idx) * cb.D(), cb.D(),
                out.data() + i * cb.D());
  }
  return out;
}

// Loss values only; gradient routing (stop-gradients) happens where the
// graph is assembled. codebook = mean over positions of the squared
// distance, commitment = beta times the same mean.
template <typename T>
std::pair<T, T> vq_losses(const Tensor<T>& z, const Tensor<T>& zq, T beta) {
  if (!z.same_shape(zq)) throw std::invalid_argument("vq_losses: shape mismatch");
  if (beta < T(0)) throw std::invalid_argument("vq_losses: beta must be >= 0");
  const int positions = z.dim(0) * z.dim(1);
  T msd = kern::sqdist(static_cast<int>(z.numel()), z.data(), zq.data()) / static_cast<T>(positions);
  return {msd, beta * msd};
}

constexpr double kDefaultBeta = 0.25;

}  // namespace moco::vq
