#pragma once

#include <algorithm>
#include <cassert>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace moco {

// Dense row-major tensor. Images are HxW, feature maps HxWxC (channel-last),
// matrices MxN, codebooks KxD.
template <typename T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> v;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    v.assign(static_cast<size_t>(numel_of(shape)), T(0));
  }
  Tensor(std::vector<int> s, std::vector<T> data) : shape(std::move(s)), v(std::move(data)) {
    if (static_cast<int64_t>(v.size()) != numel_of(shape))
      throw std::invalid_argument("tensor: data size does not match shape");
  }

  static int64_t numel_of(const std::vector<int>& s) {
    int64_t n = 1;
    for (int d : s) {
      if (d < 0) throw std::invalid_argument("tensor: negative dimension");
      n *= d;
    }
    return n;
  }

  int64_t numel() const { return static_cast<int64_t>(v.size()); }
  bool same_shape(const Tensor& o) const { return shape == o.shape; }

  int dim(int i) const { return shape.at(static_cast<size_t>(i)); }

  T& at2(int i, int j) { return v[static_cast<size_t>(i) * dim(1) + j]; }
  const T& at2(int i, int j) const { return v[static_cast<size_t>(i) * dim(1) + j]; }

  T& at3(int i, int j, int k) {
    return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }
  const T& at3(int i, int j, int k) const {
    return v[(static_cast<size_t>(i) * dim(1) + j) * dim(2) + k];
  }

  T* data() { return v.data(); }
  const T* data() const { return v.data(); }

  void fill(T x) { std::fill(v.begin(), v.end(), x); }

  bool all_finite() const {
    for (T x : v)
      if (!std::isfinite(static_cast<double>(x))) return false;
    return true;
  }
};

inline std::string shape_str(const std::vector<int>& s) {
  std::string out = "[";
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out + "]";
}

}  // namespace moco
