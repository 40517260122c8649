#include "moco/motion_sim.hpp"

#include <algorithm>
#include <cmath>
#include <iostream>
#include <numeric>
#include <stdexcept>

#include "moco/fft.hpp"

namespace moco {

void log_warn(const std::string& msg) { std::cerr << "[warn] " << msg << "\n"; }

ImageSlice ImageVolume::slice(int z) const {
  if (z < 0 || z >= nz) throw std::invalid_argument("volume: slice index out of range");
  ImageSlice s(ny, nx, sp_row, sp_col);
  std::copy_n(v.begin() + static_cast<size_t>(z) * ny * nx, static_cast<size_t>(ny) * nx,
              s.v.begin());
  return s;
}

void warn_spacing(const ImageVolume& vol) {
  auto outside = [](double s) { return s < 2.23 || s > 4.5; };
  if (outside(vol.sp_z) || outside(vol.sp_row) || outside(vol.sp_col))
    log_warn("volume spacing outside the plausible 2.23..4.5 mm range");
}

double AffineParams::amplitude() const {
  return std::max({std::abs(rotation_deg), std::abs(t_row_mm), std::abs(t_col_mm)});
}

SeverityLabel::SeverityLabel(int y) : value(y) {
  if (y < 0 || y > 10) throw std::invalid_argument("severity label must be in 0..10");
}

namespace {

constexpr double kDegToRad = 0.01745329251994329576923690768489;

void check_affine(const ImageSlice& img, const AffineParams& p) {
  if (img.sp_row <= 0.0 || img.sp_col <= 0.0)
    throw std::invalid_argument("affine: spacing must be positive");
  if (!std::isfinite(p.rotation_deg) || !std::isfinite(p.t_row_mm) || !std::isfinite(p.t_col_mm))
    throw std::invalid_argument("affine: non-finite parameters");
  if (std::abs(p.rotation_deg) > 45.0)
    throw std::invalid_argument("affine: |rotation| above the 45 degree sanity bound");
}

}  // namespace

ImageSlice affine_transform_2d(const ImageSlice& img, const AffineParams& p, Interp interp) {
  check_affine(img, p);
  const double tr = p.t_row_mm / img.sp_row;
  const double tc = p.t_col_mm / img.sp_col;
  if (p.rotation_deg == 0.0 && tr == 0.0 && tc == 0.0) return img;

  ImageSlice out(img.h, img.w, img.sp_row, img.sp_col);
  const double cr = (img.h - 1) * 0.5;
  const double cc = (img.w - 1) * 0.5;
  const double th = -p.rotation_deg * kDegToRad;  // inverse rotation
  const double ct = std::cos(th), st = std::sin(th);

  auto sample = [&](double sr, double sc) -> double {
    if (interp == Interp::Nearest) {
      long r = std::lround(sr), c = std::lround(sc);
      if (r < 0 || r >= img.h || c < 0 || c >= img.w) return 0.0;
      return img.at(static_cast<int>(r), static_cast<int>(c));
    }
    double fr = std::floor(sr), fc = std::floor(sc);
    int r0 = static_cast<int>(fr), c0 = static_cast<int>(fc);
    double ar = sr - fr, ac = sc - fc;
    auto px = [&](int r, int c) -> double {
      if (r < 0 || r >= img.h || c < 0 || c >= img.w) return 0.0;
      return img.at(r, c);
    };
    return (1.0 - ar) * ((1.0 - ac) * px(r0, c0) + ac * px(r0, c0 + 1)) +
           ar * ((1.0 - ac) * px(r0 + 1, c0) + ac * px(r0 + 1, c0 + 1));
  };

  for (int r = 0; r < out.h; ++r) {
    for (int c = 0; c < out.w; ++c) {
      double vr = r - tr - cr;
      double vc = c - tc - cc;
      double sr = ct * vr - st * vc + cr;
      double sc = st * vr + ct * vc + cc;
      out.at(r, c) = static_cast<float>(sample(sr, sc));
    }
  }
  return out;
}

SeverityLabel label_from_amplitude(double amplitude) {
  if (!(amplitude >= 0.0)) throw std::invalid_argument("amplitude must be non-negative");
  if (amplitude > 10.0) {
    log_warn("amplitude above 10, clamping to label 10");
    amplitude = 10.0;
  }
  return SeverityLabel(std::min(10, static_cast<int>(std::floor(amplitude + 0.5))));
}

MotionSpec sample_motion_spec(SeverityLabel y, int n_states, int rows, Rng& rng) {
  if (n_states < 1) throw std::invalid_argument("sample_motion_spec: n_states must be >= 1");
  if (n_states > rows)
    throw std::runtime_error("sample_motion_spec: n_states exceeds phase-encode rows");
  if (y.value >= 1 && n_states < 2)
    throw std::runtime_error("sample_motion_spec: y >= 1 needs at least one non-identity state");

  MotionSpec spec;
  spec.states.assign(static_cast<size_t>(n_states), AffineParams{});

  if (y.value >= 1) {
    const double a = rng.uniform(y.value - 0.5, std::min(y.value + 0.5, 10.0));
    for (int i = 1; i < n_states; ++i) {
      auto& s = spec.states[static_cast<size_t>(i)];
      s.rotation_deg = rng.uniform(-a, a);
      s.t_row_mm = rng.uniform(-a, a);
      s.t_col_mm = rng.uniform(-a, a);
    }
    // rescale so the extreme component equals a exactly; the label round
    // trip is then exact by construction
    double m = 0.0;
    for (const auto& s : spec.states) m = std::max(m, s.amplitude());
    if (m == 0.0) {
      spec.states[1].rotation_deg = a;
    } else {
      const double scale = a / m;
      double* extreme = nullptr;
      double extreme_abs = -1.0;
      for (auto& s : spec.states) {
        for (double* comp : {&s.rotation_deg, &s.t_row_mm, &s.t_col_mm}) {
          *comp *= scale;
          if (std::abs(*comp) > extreme_abs) {
            extreme_abs = std::abs(*comp);
            extreme = comp;
          }
        }
      }
      *extreme = *extreme < 0.0 ? -a : a;
    }
  }

  double amp = 0.0;
  for (const auto& s : spec.states) amp = std::max(amp, s.amplitude());
  spec.amplitude = amp;

  // random contiguous segmentation, each block >= 1 row
  std::vector<int> cuts(static_cast<size_t>(rows - 1));
  std::iota(cuts.begin(), cuts.end(), 1);
  for (int i = 0; i < n_states - 1; ++i) {
    int j = rng.randint(i, rows - 2);
    std::swap(cuts[static_cast<size_t>(i)], cuts[static_cast<size_t>(j)]);
  }
  spec.segment_bounds.assign(cuts.begin(), cuts.begin() + (n_states - 1));
  std::sort(spec.segment_bounds.begin(), spec.segment_bounds.end());
  spec.segment_bounds.push_back(rows);
  return spec;
}

ImageSlice corrupt_kspace(const ImageSlice& img, const MotionSpec& spec) {
  if (spec.states.empty()) throw std::invalid_argument("corrupt_kspace: empty spec");
  if (spec.segment_bounds.size() != spec.states.size())
    throw std::invalid_argument("corrupt_kspace: one segment bound per state required");
  int prev = 0;
  for (int b : spec.segment_bounds) {
    if (b <= prev) throw std::invalid_argument("corrupt_kspace: bounds must increase");
    prev = b;
  }
  if (spec.segment_bounds.back() != img.h)
    throw std::invalid_argument("corrupt_kspace: bounds do not cover the phase-encode rows");

  const size_t n = static_cast<size_t>(img.h) * img.w;
  std::vector<fft::cplx> composite(n);
  int row0 = 0;
  for (size_t i = 0; i < spec.states.size(); ++i) {
    const int row1 = spec.segment_bounds[i];
    ImageSlice moved = affine_transform_2d(img, spec.states[i], Interp::Bilinear);
    std::vector<fft::cplx> spec_i = fft::forward_2d(moved.v, img.h, img.w);
    std::copy(spec_i.begin() + static_cast<size_t>(row0) * img.w,
              spec_i.begin() + static_cast<size_t>(row1) * img.w,
              composite.begin() + static_cast<size_t>(row0) * img.w);
    row0 = row1;
  }

  std::vector<float> real = fft::inverse_2d_real(std::move(composite), img.h, img.w);
  ImageSlice out(img.h, img.w, img.sp_row, img.sp_col);
  for (size_t i = 0; i < n; ++i) out.v[i] = std::max(real[i], 0.0f);
  return out;
}

ImageSlice normalize_percentile(const ImageSlice& img) {
  std::vector<float> sorted = img.v;
  std::sort(sorted.begin(), sorted.end());
  auto quantile = [&](double p) -> double {
    double rank = p / 100.0 * (static_cast<double>(sorted.size()) - 1.0);
    size_t lo = static_cast<size_t>(std::floor(rank));
    size_t hi = std::min(lo + 1, sorted.size() - 1);
    double f = rank - static_cast<double>(lo);
    return (1.0 - f) * sorted[lo] + f * sorted[hi];
  };
  const double p1 = quantile(1.0), p99 = quantile(99.0);
  ImageSlice out(img.h, img.w, img.sp_row, img.sp_col);
  if (p99 - p1 < 1e-12) return out;
  const double inv = 1.0 / (p99 - p1);
  for (size_t i = 0; i < img.v.size(); ++i) {
    double x = (img.v[i] - p1) * inv;
    out.v[i] = static_cast<float>(std::clamp(x, 0.0, 1.0));
  }
  return out;
}

TrainingPair make_training_pair(const ImageVolume& vol, int crop, Rng& rng, int n_states) {
  if (crop < 1 || crop > vol.ny || crop > vol.nx)
    throw std::runtime_error("make_training_pair: crop exceeds in-plane dimensions");
  const int z = rng.randint(0, vol.nz - 1);
  ImageSlice norm = normalize_percentile(vol.slice(z));
  const int r0 = rng.randint(0, vol.ny - crop);
  const int c0 = rng.randint(0, vol.nx - crop);

  ImageSlice clean(crop, crop, vol.sp_row, vol.sp_col);
  for (int r = 0; r < crop; ++r)
    for (int c = 0; c < crop; ++c) clean.at(r, c) = norm.at(r0 + r, c0 + c);

  TrainingPair pair;
  pair.label = SeverityLabel(rng.randint(0, 10));
  pair.spec = sample_motion_spec(pair.label, n_states, crop, rng);
  pair.corrupted = corrupt_kspace(clean, pair.spec);
  pair.clean = std::move(clean);
  return pair;
}

}  // namespace moco
