#pragma once

#include <string>
#include <vector>

#include "moco/rng.hpp"

namespace moco {

void log_warn(const std::string& msg);

// 2D intensity image with voxel spacing in mm. Rows are the phase-encode
// axis for the k-space simulator.
struct ImageSlice {
  int h = 0, w = 0;
  std::vector<float> v;
  double sp_row = 1.0, sp_col = 1.0;

  ImageSlice() = default;
  ImageSlice(int h_, int w_, double spr = 1.0, double spc = 1.0)
      : h(h_), w(w_), v(static_cast<size_t>(h_) * w_, 0.0f), sp_row(spr), sp_col(spc) {}

  float& at(int r, int c) { return v[static_cast<size_t>(r) * w + c]; }
  float at(int r, int c) const { return v[static_cast<size_t>(r) * w + c]; }
};

// 3D volume; axis 0 indexes axial slices, each slice is (rows, cols).
struct ImageVolume {
  int nz = 0, ny = 0, nx = 0;
  std::vector<float> v;
  double sp_z = 1.0, sp_row = 1.0, sp_col = 1.0;

  ImageVolume() = default;
  ImageVolume(int nz_, int ny_, int nx_, double spz = 1.0, double spr = 1.0, double spc = 1.0)
      : nz(nz_), ny(ny_), nx(nx_),
        v(static_cast<size_t>(nz_) * ny_ * nx_, 0.0f),
        sp_z(spz), sp_row(spr), sp_col(spc) {}

  float& at(int z, int r, int c) { return v[(static_cast<size_t>(z) * ny + r) * nx + c]; }
  float at(int z, int r, int c) const { return v[(static_cast<size_t>(z) * ny + r) * nx + c]; }

  ImageSlice slice(int z) const;
};

// warns (never throws) when spacing falls outside the plausible MR range
void warn_spacing(const ImageVolume& vol);

struct AffineParams {
  double rotation_deg = 0.0;
  double t_row_mm = 0.0;
  double t_col_mm = 0.0;

  bool is_identity() const { return rotation_deg == 0.0 && t_row_mm == 0.0 && t_col_mm == 0.0; }
  double amplitude() const;
};

struct SeverityLabel {
  int value = 0;
  SeverityLabel() = default;
  explicit SeverityLabel(int y);
};

constexpr int kNumLabels = 11;  // y in {0..10}

// Time-ordered motion states plus the phase-encode segmentation they own.
// segment_bounds are end-exclusive row boundaries, one per state, strictly
// increasing, the last equal to the row count.
struct MotionSpec {
  std::vector<AffineParams> states;
  std::vector<int> segment_bounds;
  double amplitude = 0.0;
};

enum class Interp { Nearest, Bilinear };

// Rotation about the image center followed by a millimeter translation
// (converted to pixels via spacing); samples outside the input are zero.
ImageSlice affine_transform_2d(const ImageSlice& img, const AffineParams& p, Interp interp);

// Draws a spec whose amplitude maps back to y exactly. State 0 is identity;
// for y >= 1 the remaining states draw each component uniformly from [-a, a]
// with a ~ U[y-0.5, min(y+0.5, 10)], rescaled so the largest |component| is
// exactly a.
MotionSpec sample_motion_spec(SeverityLabel y, int n_states, int rows, Rng& rng);

SeverityLabel label_from_amplitude(double amplitude);

// Per-segment k-space composition of the affinely transformed images; the
// output is the real part of the inverse transform clamped to [0, inf).
ImageSlice corrupt_kspace(const ImageSlice& img, const MotionSpec& spec);

// per-slice percentile window (1st..99th) to [0, 1]
ImageSlice normalize_percentile(const ImageSlice& img);

struct TrainingPair {
  ImageSlice corrupted;
  ImageSlice clean;
  SeverityLabel label;
  MotionSpec spec;
};

TrainingPair make_training_pair(const ImageVolume& vol, int crop, Rng& rng, int n_states);

}  // namespace moco
