/*
 * longiseg: longitudinal MS lesion segmentation toolkit
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *     http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */

#include "longiseg/volume_io.hpp"

#include <zlib.h>

#include <cstring>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace longiseg {

namespace {

constexpr int kNiftiHeaderSize = 348;
constexpr int kNiftiVoxOffset = 352;
constexpr short kDtUint8 = 2;
constexpr short kDtInt16 = 4;
constexpr short kDtInt32 = 8;
constexpr short kDtFloat32 = 16;
constexpr short kDtFloat64 = 64;

bool ends_with(const std::string& s, const std::string& suffix) {
  return s.size() >= suffix.size() &&
         s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// gzread/gzwrite transparently handle both plain and gzip streams when
// reading; writing picks compression from the path suffix.
class GzReader {
 public:
  explicit GzReader(const std::string& path) : file_(gzopen(path.c_str(), "rb")) {
    if (!file_) throw std::runtime_error("cannot open " + path);
    path_ = path;
  }
  ~GzReader() {
    if (file_) gzclose(file_);
  }
  void read(void* dst, size_t bytes) {
    const int got = gzread(file_, dst, static_cast<unsigned>(bytes));
    if (got < 0 || static_cast<size_t>(got) != bytes) {
      throw std::runtime_error("short read from " + path_);
    }
  }

 private:
  gzFile file_ = nullptr;
  std::string path_;
};

class GzWriter {
 public:
  explicit GzWriter(const std::string& path) {
    // "wT" writes without compression so plain .nii stays plain
    const char* mode = ends_with(path, ".gz") ? "wb6" : "wbT";
    file_ = gzopen(path.c_str(), mode);
    if (!file_) throw std::runtime_error("cannot open " + path + " for writing");
    path_ = path;
  }
  ~GzWriter() {
    if (file_) gzclose(file_);
  }
  void write(const void* src, size_t bytes) {
    if (gzwrite(file_, src, static_cast<unsigned>(bytes)) !=
        static_cast<int>(bytes)) {
      throw std::runtime_error("short write to " + path_);
    }
  }

 private:
  gzFile file_ = nullptr;
  std::string path_;
};

struct NiftiHeader {
  char bytes[kNiftiHeaderSize];

  template <typename T>
  void put(int offset, T value) {
    std::memcpy(bytes + offset, &value, sizeof(T));
  }
  template <typename T>
  T get(int offset) const {
    T value;
    std::memcpy(&value, bytes + offset, sizeof(T));
    return value;
  }
};

NiftiHeader make_header(const std::array<int, 3>& shape, short datatype,
                        short bitpix,
                        const std::optional<std::array<double, 3>>& spacing) {
  NiftiHeader h{};
  std::memset(h.bytes, 0, sizeof(h.bytes));
  h.put<std::int32_t>(0, kNiftiHeaderSize);
  // dim: [ndim, nx, ny, nz, 1, 1, 1, 1] with nx = W (fastest in memory)
  h.put<std::int16_t>(40, 3);
  h.put<std::int16_t>(42, static_cast<std::int16_t>(shape[2]));
  h.put<std::int16_t>(44, static_cast<std::int16_t>(shape[1]));
  h.put<std::int16_t>(46, static_cast<std::int16_t>(shape[0]));
  for (int i = 4; i <= 7; ++i) h.put<std::int16_t>(40 + 2 * i, 1);
  h.put<std::int16_t>(70, datatype);
  h.put<std::int16_t>(72, bitpix);
  h.put<float>(76, 1.0f);  // pixdim[0]
  const std::array<double, 3> sp = spacing.value_or(std::array<double, 3>{1, 1, 1});
  h.put<float>(80, static_cast<float>(sp[2]));
  h.put<float>(84, static_cast<float>(sp[1]));
  h.put<float>(88, static_cast<float>(sp[0]));
  h.put<float>(108, static_cast<float>(kNiftiVoxOffset));
  h.put<float>(112, 1.0f);  // scl_slope
  h.bytes[123] = 2;         // xyzt_units: mm
  std::memcpy(h.bytes + 344, "n+1\0", 4);
  return h;
}

void write_nifti_bytes(const std::string& path, const std::array<int, 3>& shape,
                       short datatype, short bitpix, const void* data,
                       size_t bytes,
                       const std::optional<std::array<double, 3>>& spacing) {
  const NiftiHeader h = make_header(shape, datatype, bitpix, spacing);
  GzWriter out(path);
  out.write(h.bytes, sizeof(h.bytes));
  const char ext[4] = {0, 0, 0, 0};
  out.write(ext, sizeof(ext));
  out.write(data, bytes);
}

struct NiftiData {
  std::array<int, 3> shape;  // (D, H, W)
  std::optional<std::array<double, 3>> spacing;
  std::vector<double> values;
};

NiftiData read_nifti(const std::string& path) {
  GzReader in(path);
  NiftiHeader h{};
  in.read(h.bytes, sizeof(h.bytes));
  if (h.get<std::int32_t>(0) != kNiftiHeaderSize) {
    throw std::runtime_error(path + ": not a little-endian NIfTI-1 file");
  }
  const char* magic = h.bytes + 344;
  if (std::strncmp(magic, "n+1", 3) != 0 && std::strncmp(magic, "ni1", 3) != 0) {
    throw std::runtime_error(path + ": missing NIfTI magic");
  }
  const int ndim = h.get<std::int16_t>(40);
  if (ndim < 3) throw std::runtime_error(path + ": expected a 3D volume");
  const int nx = h.get<std::int16_t>(42);
  const int ny = h.get<std::int16_t>(44);
  const int nz = h.get<std::int16_t>(46);
  for (int i = 4; i <= ndim; ++i) {
    if (h.get<std::int16_t>(40 + 2 * i) > 1) {
      throw std::runtime_error(path + ": higher-dimensional volumes unsupported");
    }
  }
  NiftiData out;
  out.shape = {nz, ny, nx};
  const float sx = h.get<float>(80), sy = h.get<float>(84), sz = h.get<float>(88);
  if (sx > 0 && sy > 0 && sz > 0 && (sx != 1 || sy != 1 || sz != 1)) {
    out.spacing = std::array<double, 3>{sz, sy, sx};
  }
  const short datatype = h.get<std::int16_t>(70);
  float vox_offset = h.get<float>(108);
  if (vox_offset < kNiftiHeaderSize) vox_offset = kNiftiVoxOffset;
  // skip the extension bytes between header end and data start
  std::vector<char> skip(static_cast<size_t>(vox_offset) - kNiftiHeaderSize);
  if (!skip.empty()) in.read(skip.data(), skip.size());

  const size_t n = static_cast<size_t>(nx) * ny * nz;
  out.values.resize(n);
  auto load = [&](auto tag) {
    using T = decltype(tag);
    std::vector<T> buf(n);
    in.read(buf.data(), n * sizeof(T));
    for (size_t i = 0; i < n; ++i) out.values[i] = static_cast<double>(buf[i]);
  };
  switch (datatype) {
    case kDtUint8: load(std::uint8_t{}); break;
    case kDtInt16: load(std::int16_t{}); break;
    case kDtInt32: load(std::int32_t{}); break;
    case kDtFloat32: load(float{}); break;
    case kDtFloat64: load(double{}); break;
    default:
      throw std::runtime_error(path + ": unsupported NIfTI datatype " +
                               std::to_string(datatype));
  }
  const float slope = h.get<float>(112), inter = h.get<float>(116);
  if (slope != 0.0f && (slope != 1.0f || inter != 0.0f)) {
    for (auto& v : out.values) v = v * slope + inter;
  }
  return out;
}

}  // namespace

void write_volume_nifti(const std::string& path, const VolumeF& v) {
  std::vector<float> buf(static_cast<size_t>(v.voxels()));
  for (Eigen::Index i = 0; i < v.voxels(); ++i) {
    buf[static_cast<size_t>(i)] = static_cast<float>(v.array()[i]);
  }
  write_nifti_bytes(path, v.shape(), kDtFloat32, 32, buf.data(),
                    buf.size() * sizeof(float), v.spacing);
}

void write_mask_nifti(const std::string& path, const MaskVolume& m) {
  if (!is_binary(m)) throw std::invalid_argument("write_mask_nifti: mask not binary");
  write_nifti_bytes(path, m.shape(), kDtUint8, 8, m.array().data(),
                    static_cast<size_t>(m.voxels()), m.spacing);
}

VolumeF read_volume_nifti(const std::string& path) {
  const NiftiData d = read_nifti(path);
  VolumeF v(d.shape[0], d.shape[1], d.shape[2]);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) v.array()[i] = d.values[i];
  v.spacing = d.spacing;
  if (!all_finite(v)) throw std::runtime_error(path + ": non-finite voxel values");
  return v;
}

MaskVolume read_mask_nifti(const std::string& path) {
  const NiftiData d = read_nifti(path);
  MaskVolume m(d.shape[0], d.shape[1], d.shape[2]);
  for (Eigen::Index i = 0; i < m.voxels(); ++i) {
    const double v = d.values[static_cast<size_t>(i)];
    if (v != 0.0 && v != 1.0) {
      throw std::runtime_error(path + ": mask volume contains values other than 0/1");
    }
    m.array()[i] = static_cast<std::uint8_t>(v);
  }
  m.spacing = d.spacing;
  return m;
}

// ---------------------------------------------------------------------------
// raw + JSON sidecar

void write_raw_array(const std::string& base, const RawArray& a) {
  size_t n = 1;
  for (int s : a.shape) n *= static_cast<size_t>(s);
  if (n != a.data.size()) {
    throw std::invalid_argument("write_raw_array: shape/data size mismatch");
  }
  std::ofstream raw(base + ".raw", std::ios::binary);
  if (!raw) throw std::runtime_error("cannot open " + base + ".raw for writing");
  raw.write(reinterpret_cast<const char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(float)));
  if (!raw) throw std::runtime_error("short write to " + base + ".raw");

  nlohmann::json j;
  j["shape"] = a.shape;
  j["dtype"] = "float32";
  j["is_mask"] = a.is_mask;
  if (a.spacing) {
    j["spacing"] = *a.spacing;
  } else {
    j["spacing"] = nullptr;
  }
  std::ofstream side(base + ".json");
  if (!side) throw std::runtime_error("cannot open " + base + ".json for writing");
  side << j.dump(2) << "\n";
}

RawArray read_raw_array(const std::string& base) {
  std::ifstream side(base + ".json");
  if (!side) throw std::runtime_error("cannot open " + base + ".json");
  nlohmann::json j;
  side >> j;
  RawArray a;
  a.shape = j.at("shape").get<std::vector<int>>();
  if (j.at("dtype").get<std::string>() != "float32") {
    throw std::runtime_error(base + ".json: unsupported dtype");
  }
  a.is_mask = j.at("is_mask").get<bool>();
  if (!j.at("spacing").is_null()) {
    a.spacing = j.at("spacing").get<std::array<double, 3>>();
  }
  size_t n = 1;
  for (int s : a.shape) {
    if (s < 1) throw std::runtime_error(base + ".json: invalid shape entry");
    n *= static_cast<size_t>(s);
  }
  a.data.resize(n);
  std::ifstream raw(base + ".raw", std::ios::binary);
  if (!raw) throw std::runtime_error("cannot open " + base + ".raw");
  raw.read(reinterpret_cast<char*>(a.data.data()),
           static_cast<std::streamsize>(n * sizeof(float)));
  if (raw.gcount() != static_cast<std::streamsize>(n * sizeof(float))) {
    throw std::runtime_error("short read from " + base + ".raw");
  }
  return a;
}

void write_volume_raw(const std::string& base, const VolumeF& v) {
  RawArray a;
  a.shape = {v.depth(), v.height(), v.width()};
  a.spacing = v.spacing;
  a.data.resize(static_cast<size_t>(v.voxels()));
  for (Eigen::Index i = 0; i < v.voxels(); ++i) {
    a.data[static_cast<size_t>(i)] = static_cast<float>(v.array()[i]);
  }
  write_raw_array(base, a);
}

VolumeF read_volume_raw(const std::string& base) {
  const RawArray a = read_raw_array(base);
  if (a.shape.size() != 3) throw std::runtime_error(base + ": expected a 3D array");
  VolumeF v(a.shape[0], a.shape[1], a.shape[2]);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) v.array()[i] = a.data[static_cast<size_t>(i)];
  v.spacing = a.spacing;
  return v;
}

void write_mask_raw(const std::string& base, const MaskVolume& m) {
  if (!is_binary(m)) throw std::invalid_argument("write_mask_raw: mask not binary");
  RawArray a;
  a.shape = {m.depth(), m.height(), m.width()};
  a.spacing = m.spacing;
  a.is_mask = true;
  a.data.resize(static_cast<size_t>(m.voxels()));
  for (Eigen::Index i = 0; i < m.voxels(); ++i) {
    a.data[static_cast<size_t>(i)] = static_cast<float>(m.array()[i]);
  }
  write_raw_array(base, a);
}

MaskVolume read_mask_raw(const std::string& base) {
  const RawArray a = read_raw_array(base);
  if (a.shape.size() != 3) throw std::runtime_error(base + ": expected a 3D array");
  MaskVolume m(a.shape[0], a.shape[1], a.shape[2]);
  for (Eigen::Index i = 0; i < m.voxels(); ++i) {
    const float v = a.data[static_cast<size_t>(i)];
    if (v != 0.0f && v != 1.0f) {
      throw std::runtime_error(base + ": mask contains values other than 0/1");
    }
    m.array()[i] = static_cast<std::uint8_t>(v);
  }
  m.spacing = a.spacing;
  return m;
}

void write_field3_raw(const std::string& base, const std::array<VolumeF, 3>& field) {
  const auto sh = field[0].shape();
  for (const auto& c : field) {
    if (c.shape() != sh) throw std::invalid_argument("write_field3_raw: component shapes differ");
  }
  RawArray a;
  a.shape = {3, sh[0], sh[1], sh[2]};
  a.spacing = field[0].spacing;
  const size_t per = static_cast<size_t>(field[0].voxels());
  a.data.resize(3 * per);
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < per; ++i) {
      a.data[c * per + i] = static_cast<float>(field[c].array()[static_cast<Eigen::Index>(i)]);
    }
  }
  write_raw_array(base, a);
}

std::array<VolumeF, 3> read_field3_raw(const std::string& base) {
  const RawArray a = read_raw_array(base);
  if (a.shape.size() != 4 || a.shape[0] != 3) {
    throw std::runtime_error(base + ": expected a (3, D, H, W) array");
  }
  std::array<VolumeF, 3> field{VolumeF(a.shape[1], a.shape[2], a.shape[3]),
                               VolumeF(a.shape[1], a.shape[2], a.shape[3]),
                               VolumeF(a.shape[1], a.shape[2], a.shape[3])};
  const size_t per = static_cast<size_t>(field[0].voxels());
  for (int c = 0; c < 3; ++c) {
    for (size_t i = 0; i < per; ++i) {
      field[c].array()[static_cast<Eigen::Index>(i)] = a.data[c * per + i];
    }
    field[c].spacing = a.spacing;
  }
  return field;
}

void write_field2_raw(const std::string& base, const TensorF& field) {
  if (field.channels() != 2) {
    throw std::invalid_argument("write_field2_raw: field must have 2 channels");
  }
  RawArray a;
  a.shape = {2, field.height(), field.width()};
  a.data.resize(static_cast<size_t>(field.size()));
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    a.data[static_cast<size_t>(i)] = static_cast<float>(field.array()[i]);
  }
  write_raw_array(base, a);
}

TensorF read_field2_raw(const std::string& base) {
  const RawArray a = read_raw_array(base);
  if (a.shape.size() != 3 || a.shape[0] != 2) {
    throw std::runtime_error(base + ": expected a (2, h, w) array");
  }
  TensorF field(2, a.shape[1], a.shape[2]);
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    field.array()[i] = a.data[static_cast<size_t>(i)];
  }
  return field;
}

}  // namespace longiseg
