#include "moco/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace moco {

ImageVolume make_phantom(int size, int n_shapes, Rng& rng) {
  if (size < 16) throw std::invalid_argument("phantom: size must be >= 16");
  if (n_shapes < 0) throw std::invalid_argument("phantom: negative shape count");

  const int nz = std::max(4, size / 8);
  ImageVolume vol(nz, size, size, 3.0, 2.23, 2.23);

  // smooth background: gentle ramp plus a broad radial bump
  const double gx = rng.uniform(-0.04, 0.04);
  const double gy = rng.uniform(-0.04, 0.04);
  const double bump = rng.uniform(0.04, 0.10);
  for (int z = 0; z < nz; ++z)
    for (int r = 0; r < size; ++r)
      for (int c = 0; c < size; ++c) {
        const double yr = (r - size / 2.0) / size;
        const double xc = (c - size / 2.0) / size;
        double v = 0.10 + gx * xc + gy * yr + bump * std::exp(-(xc * xc + yr * yr) * 6.0);
        vol.at(z, r, c) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }

  for (int i = 0; i < n_shapes; ++i) {
    // well separated intensity plateaus, painter's order
    const double level =
        n_shapes == 1 ? 0.6 : 0.30 + 0.62 * static_cast<double>(i) / (n_shapes - 1);
    const double cz = rng.uniform(0.25, 0.75) * nz;
    const double cr = rng.uniform(0.2, 0.8) * size;
    const double cc = rng.uniform(0.2, 0.8) * size;
    const double az = rng.uniform(0.30, 0.50) * nz;
    const double ar = rng.uniform(0.08, 0.22) * size;
    const double ac = rng.uniform(0.08, 0.22) * size;
    const double th = rng.uniform(0.0, 3.14159265358979323846);
    const double ct = std::cos(th), st = std::sin(th);

    for (int z = 0; z < nz; ++z)
      for (int r = 0; r < size; ++r)
        for (int c = 0; c < size; ++c) {
          const double dz = (z - cz) / az;
          const double dr = r - cr, dc = c - cc;
          const double u = (ct * dr + st * dc) / ar;
          const double w = (-st * dr + ct * dc) / ac;
          if (u * u + w * w + dz * dz <= 1.0) vol.at(z, r, c) = static_cast<float>(level);
        }
  }
  return vol;
}

}  // namespace moco
