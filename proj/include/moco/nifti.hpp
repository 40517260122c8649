#pragma once

#include <string>

#include "moco/motion_sim.hpp"

namespace moco::nifti {

// Single-file little-endian NIfTI-1 (.nii, magic "n+1\0"). Voxel values are
// converted to float with scl_slope/scl_inter applied; the third dimension
// indexes axial slices.
ImageVolume read(const std::string& path);

// float32 writer, used for phantom export and tests
void write(const std::string& path, const ImageVolume& vol);

}  // namespace moco::nifti
