#include "moco/fft.hpp"

#include <cmath>
#include <stdexcept>

namespace moco::fft {

namespace {

constexpr double kTau = 6.283185307179586476925286766559;

bool is_pow2(size_t n) { return n != 0 && (n & (n - 1)) == 0; }

// Cooley-Tukey, n a power of two
void fft_pow2(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  for (size_t i = 1, j = 0; i < n; ++i) {
    size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (size_t len = 2; len <= n; len <<= 1) {
    double ang = kTau / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    cplx wl(std::cos(ang), std::sin(ang));
    for (size_t i = 0; i < n; i += len) {
      cplx w(1.0);
      for (size_t j = 0; j < len / 2; ++j) {
        cplx u = a[i + j];
        cplx t = a[i + j + len / 2] * w;
        a[i + j] = u + t;
        a[i + j + len / 2] = u - t;
        w *= wl;
      }
    }
  }
  if (inverse) {
    double inv = 1.0 / static_cast<double>(n);
    for (auto& x : a) x *= inv;
  }
}

// Bluestein chirp-z for arbitrary n, using a pow2 convolution
void fft_bluestein(std::vector<cplx>& a, bool inverse) {
  const size_t n = a.size();
  size_t m = 1;
  while (m < 2 * n - 1) m <<= 1;

  std::vector<cplx> chirp(n);
  for (size_t i = 0; i < n; ++i) {
    // i^2 mod 2n keeps the phase argument small
    uint64_t sq = (static_cast<uint64_t>(i) * i) % (2 * n);
    double ang = kTau * static_cast<double>(sq) / (2.0 * static_cast<double>(n));
    if (!inverse) ang = -ang;
    chirp[i] = cplx(std::cos(ang), std::sin(ang));
  }

  std::vector<cplx> x(m, cplx(0.0)), y(m, cplx(0.0));
  for (size_t i = 0; i < n; ++i) x[i] = a[i] * chirp[i];
  y[0] = std::conj(chirp[0]);
  for (size_t i = 1; i < n; ++i) y[i] = y[m - i] = std::conj(chirp[i]);

  fft_pow2(x, false);
  fft_pow2(y, false);
  for (size_t i = 0; i < m; ++i) x[i] *= y[i];
  fft_pow2(x, true);

  for (size_t i = 0; i < n; ++i) a[i] = x[i] * chirp[i];
  if (inverse) {
    double invn = 1.0 / static_cast<double>(n);
    for (auto& v : a) v *= invn;
  }
}

}  // namespace

void transform(std::vector<cplx>& a, bool inverse) {
  if (a.empty()) return;
  if (is_pow2(a.size()))
    fft_pow2(a, inverse);
  else
    fft_bluestein(a, inverse);
}

void transform_2d(std::vector<cplx>& a, int h, int w, bool inverse) {
  if (h <= 0 || w <= 0 || a.size() != static_cast<size_t>(h) * static_cast<size_t>(w))
    throw std::invalid_argument("fft: buffer does not match h*w");
  std::vector<cplx> row(static_cast<size_t>(w));
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) row[static_cast<size_t>(c)] = a[static_cast<size_t>(r) * w + c];
    transform(row, inverse);
    for (int c = 0; c < w; ++c) a[static_cast<size_t>(r) * w + c] = row[static_cast<size_t>(c)];
  }
  std::vector<cplx> col(static_cast<size_t>(h));
  for (int c = 0; c < w; ++c) {
    for (int r = 0; r < h; ++r) col[static_cast<size_t>(r)] = a[static_cast<size_t>(r) * w + c];
    transform(col, inverse);
    for (int r = 0; r < h; ++r) a[static_cast<size_t>(r) * w + c] = col[static_cast<size_t>(r)];
  }
}

std::vector<cplx> forward_2d(const std::vector<float>& real, int h, int w) {
  std::vector<cplx> out(real.size());
  for (size_t i = 0; i < real.size(); ++i) out[i] = cplx(static_cast<double>(real[i]), 0.0);
  transform_2d(out, h, w, false);
  return out;
}

std::vector<float> inverse_2d_real(std::vector<cplx> spec, int h, int w) {
  transform_2d(spec, h, w, true);
  std::vector<float> out(spec.size());
  for (size_t i = 0; i < spec.size(); ++i) out[i] = static_cast<float>(spec[i].real());
  return out;
}

}  // namespace moco::fft
