#pragma once

#include <complex>
#include <vector>

namespace moco::fft {

using cplx = std::complex<double>;

// In-place forward/inverse DFT of arbitrary length (radix-2 when n is a
// power of two, Bluestein otherwise). Inverse includes the 1/n factor.
void transform(std::vector<cplx>& a, bool inverse);

// 2D transforms on a row-major h*w buffer.
void transform_2d(std::vector<cplx>& a, int h, int w, bool inverse);

std::vector<cplx> forward_2d(const std::vector<float>& real, int h, int w);
std::vector<float> inverse_2d_real(std::vector<cplx> spec, int h, int w);

}  // namespace moco::fft
