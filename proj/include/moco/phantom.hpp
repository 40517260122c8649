#pragma once

#include "moco/motion_sim.hpp"
#include "moco/rng.hpp"

namespace moco {

// Synthetic test volume: randomly placed and oriented filled ellipsoids with
// distinct intensities over a smooth background, all values in [0, 1].
// In-plane size is size x size; the slice count is size/8 (min 4).
ImageVolume make_phantom(int size, int n_shapes, Rng& rng);

}  // namespace moco
