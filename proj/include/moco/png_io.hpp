#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace moco::png {

// minimal deterministic 8-bit grayscale PNG writer (zlib-backed)
void write_gray8(const std::string& path, int width, int height,
                 const std::vector<uint8_t>& pixels);

}  // namespace moco::png
