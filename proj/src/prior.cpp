#include "moco/prior.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace moco::prior {

namespace {

template <typename T>
int sample_index_impl(const T* logits, int k, double temperature, Rng* rng) {
  if (temperature == 0.0) {
    int best = 0;
    for (int j = 1; j < k; ++j)
      if (logits[j] > logits[best]) best = j;
    return best;
  }
  std::vector<double> p(static_cast<size_t>(k));
  double m = -std::numeric_limits<double>::infinity();
  for (int j = 0; j < k; ++j) {
    p[static_cast<size_t>(j)] = static_cast<double>(logits[j]) / temperature;
    m = std::max(m, p[static_cast<size_t>(j)]);
  }
  double z = 0.0;
  for (int j = 0; j < k; ++j) {
    p[static_cast<size_t>(j)] = std::exp(p[static_cast<size_t>(j)] - m);
    z += p[static_cast<size_t>(j)];
  }
  const double u = rng->uniform() * z;
  double acc = 0.0;
  for (int j = 0; j < k; ++j) {
    acc += p[static_cast<size_t>(j)];
    if (u < acc) return j;
  }
  return k - 1;
}

}  // namespace

int sample_index(const float* logits, int k, double temperature, Rng* rng) {
  return sample_index_impl(logits, k, temperature, rng);
}
int sample_index(const double* logits, int k, double temperature, Rng* rng) {
  return sample_index_impl(logits, k, temperature, rng);
}

}  // namespace moco::prior
