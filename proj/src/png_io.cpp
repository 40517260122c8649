#include "moco/png_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

namespace moco::png {

namespace {

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  out.push_back(static_cast<uint8_t>(v >> 24));
  out.push_back(static_cast<uint8_t>(v >> 16));
  out.push_back(static_cast<uint8_t>(v >> 8));
  out.push_back(static_cast<uint8_t>(v));
}

void put_chunk(std::vector<uint8_t>& out, const char type[4], const std::vector<uint8_t>& data) {
  put_u32(out, static_cast<uint32_t>(data.size()));
  size_t crc_start = out.size();
  out.insert(out.end(), type, type + 4);
  out.insert(out.end(), data.begin(), data.end());
  uint32_t crc = crc32(0L, Z_NULL, 0);
  crc = crc32(crc, out.data() + crc_start, static_cast<uInt>(out.size() - crc_start));
  put_u32(out, crc);
}

}  // namespace

void write_gray8(const std::string& path, int width, int height,
                 const std::vector<uint8_t>& pixels) {
  if (width < 1 || height < 1 ||
      pixels.size() != static_cast<size_t>(width) * static_cast<size_t>(height))
    throw std::invalid_argument("png: pixel buffer does not match dimensions");

  // filter byte 0 per scanline
  std::vector<uint8_t> raw(static_cast<size_t>(height) * (static_cast<size_t>(width) + 1));
  for (int r = 0; r < height; ++r) {
    raw[static_cast<size_t>(r) * (width + 1)] = 0;
    std::memcpy(raw.data() + static_cast<size_t>(r) * (width + 1) + 1,
                pixels.data() + static_cast<size_t>(r) * width, static_cast<size_t>(width));
  }

  uLongf comp_cap = compressBound(static_cast<uLong>(raw.size()));
  std::vector<uint8_t> comp(comp_cap);
  if (compress2(comp.data(), &comp_cap, raw.data(), static_cast<uLong>(raw.size()), 6) != Z_OK)
    throw std::runtime_error("png: deflate failure");
  comp.resize(comp_cap);

  std::vector<uint8_t> out = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  std::vector<uint8_t> ihdr;
  put_u32(ihdr, static_cast<uint32_t>(width));
  put_u32(ihdr, static_cast<uint32_t>(height));
  ihdr.push_back(8);  // bit depth
  ihdr.push_back(0);  // grayscale
  ihdr.push_back(0);
  ihdr.push_back(0);
  ihdr.push_back(0);
  put_chunk(out, "IHDR", ihdr);
  put_chunk(out, "IDAT", comp);
  put_chunk(out, "IEND", {});

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("png: cannot write " + path);
  f.write(reinterpret_cast<const char*>(out.data()), static_cast<std::streamsize>(out.size()));
  if (!f) throw std::runtime_error("png: write failure on " + path);
}

}  // namespace moco::png
