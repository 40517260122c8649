#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "moco/autodiff.hpp"
#include "moco/tensor.hpp"

namespace moco::ckpt {

// Manifest + blob array container. <stem>.json carries the layout and a
// config snapshot; <stem>.blob is the concatenation of the arrays as
// little-endian float32 in manifest order. Saving is canonical, so
// load -> save round-trips byte-identically.
struct Checkpoint {
  int format_version = 1;
  std::string stage;  // "vq" | "prior" | "pair" | "image"
  uint64_t seed = 0;
  nlohmann::json config = nlohmann::json::object();
  std::vector<std::pair<std::string, Tensor<float>>> arrays;

  void add(const std::string& name, Tensor<float> t);
  const Tensor<float>* find(const std::string& name) const;
  const Tensor<float>& require(const std::string& name) const;
};

void save(const Checkpoint& c, const std::string& stem);
Checkpoint load(const std::string& stem);

// model parameters <-> checkpoint arrays (stored as f32)
template <typename T>
void pack_params(const ad::ParamStore<T>& store, Checkpoint& c, const std::string& prefix = "") {
  for (const auto& p : store.all()) {
    Tensor<float> t(p.value.shape);
    for (size_t i = 0; i < p.value.v.size(); ++i) t.v[i] = static_cast<float>(p.value.v[i]);
    c.add(prefix + p.name, std::move(t));
  }
}

template <typename T>
void unpack_params(const Checkpoint& c, ad::ParamStore<T>& store, const std::string& prefix = "") {
  for (auto& p : store.all()) {
    const Tensor<float>* t = c.find(prefix + p.name);
    if (!t) throw std::runtime_error("checkpoint: missing array '" + prefix + p.name + "'");
    if (t->shape != p.value.shape)
      throw std::runtime_error("checkpoint: shape mismatch for '" + prefix + p.name + "': file " +
                               shape_str(t->shape) + " vs model " + shape_str(p.value.shape));
    for (size_t i = 0; i < t->v.size(); ++i) p.value.v[i] = static_cast<T>(t->v[i]);
  }
}

}  // namespace moco::ckpt
