#include "mpm/nifti.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

namespace mpm {

namespace {

// NIfTI-1 header, 348 bytes.
#pragma pack(push, 1)
struct Nifti1Header {
  std::int32_t sizeof_hdr;
  char data_type[10];
  char db_name[18];
  std::int32_t extents;
  std::int16_t session_error;
  char regular;
  char dim_info;
  std::int16_t dim[8];
  float intent_p1, intent_p2, intent_p3;
  std::int16_t intent_code;
  std::int16_t datatype;
  std::int16_t bitpix;
  std::int16_t slice_start;
  float pixdim[8];
  float vox_offset;
  float scl_slope;
  float scl_inter;
  std::int16_t slice_end;
  char slice_code;
  char xyzt_units;
  float cal_max, cal_min;
  float slice_duration;
  float toffset;
  std::int32_t glmax, glmin;
  char descrip[80];
  char aux_file[24];
  std::int16_t qform_code;
  std::int16_t sform_code;
  float quatern_b, quatern_c, quatern_d;
  float qoffset_x, qoffset_y, qoffset_z;
  float srow_x[4];
  float srow_y[4];
  float srow_z[4];
  char intent_name[16];
  char magic[4];
};
#pragma pack(pop)
static_assert(sizeof(Nifti1Header) == 348, "NIfTI-1 header must be 348 bytes");

constexpr std::int16_t kDtUint8 = 2;
constexpr std::int16_t kDtInt16 = 4;
constexpr std::int16_t kDtFloat32 = 16;
constexpr std::int16_t kDtFloat64 = 64;

// 348 byte-swapped, used to give big-endian files a precise rejection.
constexpr std::int32_t kSwappedSizeofHdr = 0x5C010000;

template <typename T>
void read_raw(std::ifstream& in, Eigen::ArrayXXd& out, std::ptrdiff_t voxels, int channels,
              const std::string& path) {
  std::vector<T> buffer(static_cast<std::size_t>(voxels) * channels);
  in.read(reinterpret_cast<char*>(buffer.data()),
          static_cast<std::streamsize>(buffer.size() * sizeof(T)));
  if (!in) throw DataError("nifti: truncated data section in '" + path + "'");
  out.resize(voxels, channels);
  for (int c = 0; c < channels; ++c)
    for (std::ptrdiff_t i = 0; i < voxels; ++i)
      out(i, c) = static_cast<double>(buffer[static_cast<std::size_t>(c) * voxels + i]);
}

} // namespace

NiftiVolume read_volume(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("nifti: cannot open '" + path + "'");
  Nifti1Header hdr{};
  in.read(reinterpret_cast<char*>(&hdr), sizeof(hdr));
  if (!in) throw DataError("nifti: file too short for a header: '" + path + "'");

  if (hdr.sizeof_hdr != 348) {
    if (hdr.sizeof_hdr == kSwappedSizeofHdr)
      throw DataError("nifti: unsupported: big-endian file '" + path + "'");
    throw DataError("nifti: malformed header (sizeof_hdr != 348) in '" + path + "'");
  }
  if (std::strncmp(hdr.magic, "ni1", 3) == 0)
    throw DataError("nifti: unsupported: two-file NIfTI ('" + path + "')");
  if (std::strncmp(hdr.magic, "n+1", 3) != 0)
    throw DataError("nifti: malformed header (bad magic) in '" + path + "'");

  const int ndim = hdr.dim[0];
  if (ndim < 1 || ndim > 4)
    throw DataError("nifti: unsupported dimensionality " + std::to_string(ndim) + " in '" + path +
                    "' (up to 4 supported, 4th = channels)");
  int dims[4] = {1, 1, 1, 1};
  for (int a = 0; a < ndim; ++a) {
    dims[a] = hdr.dim[a + 1];
    if (dims[a] < 1) throw DataError("nifti: malformed header (non-positive dim) in '" + path + "'");
  }

  NiftiVolume vol;
  vol.grid.dims = Eigen::Array3i(dims[0], dims[1], dims[2]);
  // Affine: spacing from the srow columns when an sform is set, else pixdim.
  if (hdr.sform_code > 0) {
    const float* rows[3] = {hdr.srow_x, hdr.srow_y, hdr.srow_z};
    for (int a = 0; a < 3; ++a) {
      const double s = std::sqrt(double(rows[0][a]) * rows[0][a] + double(rows[1][a]) * rows[1][a] +
                                 double(rows[2][a]) * rows[2][a]);
      vol.grid.spacing[a] = s > 0 ? s : 1.0;
    }
  } else {
    for (int a = 0; a < 3; ++a) vol.grid.spacing[a] = hdr.pixdim[a + 1] > 0 ? hdr.pixdim[a + 1] : 1.0;
  }

  const std::streamoff offset = static_cast<std::streamoff>(hdr.vox_offset);
  if (offset < static_cast<std::streamoff>(sizeof(hdr)))
    throw DataError("nifti: malformed header (vox_offset < 348) in '" + path + "'");
  in.seekg(offset, std::ios::beg);

  const std::ptrdiff_t voxels = vol.grid.voxels();
  switch (hdr.datatype) {
    case kDtUint8: read_raw<std::uint8_t>(in, vol.data, voxels, dims[3], path); break;
    case kDtInt16: read_raw<std::int16_t>(in, vol.data, voxels, dims[3], path); break;
    case kDtFloat32: read_raw<float>(in, vol.data, voxels, dims[3], path); break;
    case kDtFloat64: read_raw<double>(in, vol.data, voxels, dims[3], path); break;
    default:
      throw DataError("nifti: unsupported datatype " + std::to_string(hdr.datatype) + " in '" +
                      path + "' (uint8/int16/float32/float64 supported)");
  }
  if (hdr.scl_slope != 0.0f && !(hdr.scl_slope == 1.0f && hdr.scl_inter == 0.0f))
    vol.data = vol.data * static_cast<double>(hdr.scl_slope) + static_cast<double>(hdr.scl_inter);
  return vol;
}

void write_volume(const std::string& path, const Eigen::ArrayXXd& data, const Grid3& grid) {
  if (data.rows() != grid.voxels())
    throw DataError("nifti: data size does not match grid when writing '" + path + "'");
  Nifti1Header hdr{};
  hdr.sizeof_hdr = 348;
  hdr.regular = 'r';
  const int channels = static_cast<int>(data.cols());
  hdr.dim[0] = channels > 1 ? 4 : 3;
  hdr.dim[1] = static_cast<std::int16_t>(grid.dims[0]);
  hdr.dim[2] = static_cast<std::int16_t>(grid.dims[1]);
  hdr.dim[3] = static_cast<std::int16_t>(grid.dims[2]);
  hdr.dim[4] = static_cast<std::int16_t>(channels > 1 ? channels : 1);
  for (int a = 5; a < 8; ++a) hdr.dim[a] = 1;
  hdr.datatype = kDtFloat32;
  hdr.bitpix = 32;
  hdr.pixdim[0] = 1.0f;
  for (int a = 0; a < 3; ++a) hdr.pixdim[a + 1] = static_cast<float>(grid.spacing[a]);
  hdr.pixdim[4] = 1.0f;
  hdr.vox_offset = 352.0f;
  hdr.scl_slope = 1.0f;
  hdr.scl_inter = 0.0f;
  hdr.xyzt_units = 2;  // mm
  hdr.sform_code = 1;
  hdr.srow_x[0] = static_cast<float>(grid.spacing[0]);
  hdr.srow_y[1] = static_cast<float>(grid.spacing[1]);
  hdr.srow_z[2] = static_cast<float>(grid.spacing[2]);
  std::memcpy(hdr.magic, "n+1", 4);

  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("nifti: cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(&hdr), sizeof(hdr));
  const char pad[4] = {0, 0, 0, 0};  // no extensions
  out.write(pad, 4);
  std::vector<float> buffer(static_cast<std::size_t>(data.rows()) * channels);
  for (int c = 0; c < channels; ++c)
    for (std::ptrdiff_t i = 0; i < data.rows(); ++i)
      buffer[static_cast<std::size_t>(c) * data.rows() + i] = static_cast<float>(data(i, c));
  out.write(reinterpret_cast<const char*>(buffer.data()),
            static_cast<std::streamsize>(buffer.size() * sizeof(float)));
  if (!out) throw DataError("nifti: short write to '" + path + "'");
}

void write_volume(const std::string& path, const Eigen::ArrayXd& data, const Grid3& grid) {
  Eigen::ArrayXXd wide(data.size(), 1);
  wide.col(0) = data;
  write_volume(path, wide, grid);
}

} // namespace mpm
