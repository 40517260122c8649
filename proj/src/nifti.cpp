#include "moco/nifti.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

namespace moco::nifti {

namespace {

#pragma pack(push, 1)
struct Nifti1Header {
  int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  int32_t extents;
  int16_t session_error;
  char regular;
  char dim_info;
  int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  int16_t intent_code;
  int16_t datatype;
  int16_t bitpix;
  int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  int16_t qform_code, sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4], srow_y[4], srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)

static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr int16_t kDtUint8 = 2;
constexpr int16_t kDtInt16 = 4;
constexpr int16_t kDtInt32 = 8;
constexpr int16_t kDtFloat32 = 16;
constexpr int16_t kDtFloat64 = 64;
constexpr int16_t kDtUint16 = 512;

template <typename S>
void convert(const std::vector<char>& raw, std::vector<float>& out) {
  const S* src = reinterpret_cast<const S*>(raw.data());
  for (size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(src[i]);
}

}  // namespace

ImageVolume read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("nifti: cannot open " + path);

  Nifti1Header hdr{};
  f.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
  if (!f) throw std::runtime_error("nifti: short header in " + path);
  if (hdr.sizeof_hdr != 348)
    throw std::runtime_error("nifti: bad sizeof_hdr (big-endian files are not supported)");
  if (std::memcmp(hdr.magic, "n+1", 4) != 0)
    throw std::runtime_error("nifti: magic is not 'n+1' in " + path);
  if (hdr.dim[0] < 3) throw std::runtime_error("nifti: need a 3D volume");
  for (int d = 4; d <= hdr.dim[0]; ++d)
    if (hdr.dim[d] > 1) log_warn("nifti: trailing dimensions ignored, reading first volume");

  const int nx = hdr.dim[1], ny = hdr.dim[2], nz = hdr.dim[3];
  if (nx < 1 || ny < 1 || nz < 1) throw std::runtime_error("nifti: degenerate dimensions");

  const size_t n = static_cast<size_t>(nx) * ny * nz;
  int bytes_per = 0;
  switch (hdr.datatype) {
    case kDtUint8: bytes_per = 1; break;
    case kDtInt16:
    case kDtUint16: bytes_per = 2; break;
    case kDtInt32:
    case kDtFloat32: bytes_per = 4; break;
    case kDtFloat64: bytes_per = 8; break;
    default:
      throw std::runtime_error("nifti: unsupported datatype " + std::to_string(hdr.datatype));
  }

  f.seekg(static_cast<std::streamoff>(hdr.vox_offset));
  std::vector<char> raw(n * static_cast<size_t>(bytes_per));
  f.read(raw.data(), static_cast<std::streamsize>(raw.size()));
  if (!f) throw std::runtime_error("nifti: short voxel data in " + path);

  ImageVolume vol(nz, ny, nx, hdr.pixdim[3], hdr.pixdim[2], hdr.pixdim[1]);
  switch (hdr.datatype) {
    case kDtUint8: convert<uint8_t>(raw, vol.v); break;
    case kDtInt16: convert<int16_t>(raw, vol.v); break;
    case kDtUint16: convert<uint16_t>(raw, vol.v); break;
    case kDtInt32: convert<int32_t>(raw, vol.v); break;
    case kDtFloat32: convert<float>(raw, vol.v); break;
    case kDtFloat64: convert<double>(raw, vol.v); break;
    default: break;
  }
  if (hdr.scl_slope != 0.0f && !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f))
    for (auto& x : vol.v) x = hdr.scl_slope * x + hdr.scl_inter;

  warn_spacing(vol);
  return vol;
}

void write(const std::string& path, const ImageVolume& vol) {
  Nifti1Header hdr{};
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  hdr.dim[0] = 3;
  hdr.dim[1] = static_cast<int16_t>(vol.nx);
  hdr.dim[2] = static_cast<int16_t>(vol.ny);
  hdr.dim[3] = static_cast<int16_t>(vol.nz);
  for (int d = 4; d < 8; ++d) hdr.dim[d] = 1;
  hdr.datatype = kDtFloat32;
  hdr.bitpix = 32;
  hdr.pixdim[0] = 1.0f;
  hdr.pixdim[1] = static_cast<float>(vol.sp_col);
  hdr.pixdim[2] = static_cast<float>(vol.sp_row);
  hdr.pixdim[3] = static_cast<float>(vol.sp_z);
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.xyzt_units = 2;  // millimeters
  std::memcpy(hdr.magic, "n+1", 4);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("nifti: cannot write " + path);
  f.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
  const char pad[4] = {0, 0, 0, 0};
  f.write(pad, 4);
  f.write(reinterpret_cast<const char*>(vol.v.data()),
          static_cast<std::streamsize>(vol.v.size() * sizeof(float)));
  if (!f) throw std::runtime_error("nifti: write failure on " + path);
}

}  // namespace moco::nifti
