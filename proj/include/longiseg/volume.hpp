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

/// Core 3D volume / 2D slice data model.
///
/// Axis convention, used everywhere in the project:
///   volumes are indexed (d, h, w) with w fastest in memory;
///   axial    = fixed d, slice extent (H, W)
///   coronal  = fixed h, slice extent (D, W)
///   sagittal = fixed w, slice extent (D, H)

#pragma once

#include <Eigen/Core>

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "longiseg/tensor.hpp"

namespace longiseg {

template <typename T>
class Volume3 {
 public:
  using Storage = Eigen::Array<T, Eigen::Dynamic, 1>;

  Volume3() = default;

  Volume3(int depth, int height, int width, T fill = T(0))
      : d_(depth), h_(height), w_(width) {
    if (depth < 1 || height < 1 || width < 1) {
      throw std::invalid_argument("Volume3: each axis length must be >= 1");
    }
    data_ = Storage::Constant(
        static_cast<Eigen::Index>(depth) * height * width, fill);
  }

  int depth() const { return d_; }
  int height() const { return h_; }
  int width() const { return w_; }
  std::array<int, 3> shape() const { return {d_, h_, w_}; }
  Eigen::Index voxels() const { return data_.size(); }
  bool empty() const { return data_.size() == 0; }

  T& operator()(int d, int h, int w) { return data_[offset(d, h, w)]; }
  T operator()(int d, int h, int w) const { return data_[offset(d, h, w)]; }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  bool same_shape(const Volume3& o) const {
    return d_ == o.d_ && h_ == o.h_ && w_ == o.w_;
  }

  /// Optional per-axis physical voxel size in mm, (d, h, w) order.
  std::optional<std::array<double, 3>> spacing;

 private:
  Eigen::Index offset(int d, int h, int w) const {
    return (static_cast<Eigen::Index>(d) * h_ + h) * w_ + w;
  }

  int d_ = 0, h_ = 0, w_ = 0;
  Storage data_;
};

using VolumeF = Volume3<double>;
using MaskVolume = Volume3<std::uint8_t>;

template <typename T>
bool all_finite(const Volume3<T>& v) {
  if constexpr (std::is_floating_point_v<T>) {
    return v.array().isFinite().all();
  }
  return true;
}

inline bool is_binary(const MaskVolume& m) {
  return ((m.array() == 0) || (m.array() == 1)).all();
}

// ---------------------------------------------------------------------------
// Slicing

enum class SlicePlane { axial, coronal, sagittal };

inline const char* to_string(SlicePlane p) {
  switch (p) {
    case SlicePlane::axial: return "axial";
    case SlicePlane::coronal: return "coronal";
    case SlicePlane::sagittal: return "sagittal";
  }
  return "?";
}

inline constexpr std::array<SlicePlane, 3> kAllPlanes = {
    SlicePlane::axial, SlicePlane::coronal, SlicePlane::sagittal};

/// Volume axis fixed by the plane: axial->d, coronal->h, sagittal->w.
inline int plane_axis(SlicePlane p) { return static_cast<int>(p); }

inline int axis_length(const std::array<int, 3>& shape, SlicePlane p) {
  return shape[plane_axis(p)];
}

/// (rows, cols) of a slice taken in this plane.
inline std::array<int, 2> slice_extent(const std::array<int, 3>& shape,
                                       SlicePlane p) {
  switch (p) {
    case SlicePlane::axial: return {shape[1], shape[2]};
    case SlicePlane::coronal: return {shape[0], shape[2]};
    case SlicePlane::sagittal: return {shape[0], shape[1]};
  }
  return {0, 0};
}

template <typename T>
void check_slice_index(const Volume3<T>& v, SlicePlane p, int index) {
  const int n = axis_length(v.shape(), p);
  if (index < 0 || index >= n) {
    throw std::out_of_range(std::string("slice index ") +
                            std::to_string(index) + " out of range for " +
                            to_string(p) + " plane with " + std::to_string(n) +
                            " slices");
  }
}

/// Cross-section of one volume as a (1, rows, cols) tensor.
template <typename T>
Tensor<T> volume_slice(const Volume3<T>& v, SlicePlane p, int index) {
  check_slice_index(v, p, index);
  const auto [rows, cols] = slice_extent(v.shape(), p);
  Tensor<T> out(1, rows, cols);
  switch (p) {
    case SlicePlane::axial:
      for (int h = 0; h < rows; ++h)
        for (int w = 0; w < cols; ++w) out(0, h, w) = v(index, h, w);
      break;
    case SlicePlane::coronal:
      for (int d = 0; d < rows; ++d)
        for (int w = 0; w < cols; ++w) out(0, d, w) = v(d, index, w);
      break;
    case SlicePlane::sagittal:
      for (int d = 0; d < rows; ++d)
        for (int h = 0; h < cols; ++h) out(0, d, h) = v(d, h, index);
      break;
  }
  return out;
}

/// Writes a (1, rows, cols) tensor back into the cross-section it came from.
template <typename T>
void insert_volume_slice(Volume3<T>& v, SlicePlane p, int index,
                         const Tensor<T>& s) {
  check_slice_index(v, p, index);
  const auto [rows, cols] = slice_extent(v.shape(), p);
  if (s.channels() != 1 || s.height() != rows || s.width() != cols) {
    throw std::invalid_argument(std::string("insert_volume_slice: got ") +
                                s.shape_string() + " for " + to_string(p) +
                                " cross-section of " + std::to_string(rows) +
                                "x" + std::to_string(cols));
  }
  switch (p) {
    case SlicePlane::axial:
      for (int h = 0; h < rows; ++h)
        for (int w = 0; w < cols; ++w) v(index, h, w) = s(0, h, w);
      break;
    case SlicePlane::coronal:
      for (int d = 0; d < rows; ++d)
        for (int w = 0; w < cols; ++w) v(d, index, w) = s(0, d, w);
      break;
    case SlicePlane::sagittal:
      for (int d = 0; d < rows; ++d)
        for (int h = 0; h < cols; ++h) v(d, h, index) = s(0, d, h);
      break;
  }
}

// ---------------------------------------------------------------------------
// Longitudinal samples

enum class Modality { T1, FLAIR };
enum class TimePoint { ti, tj };  // ti = reference, tj = other scan

/// Aligned multi-modal volumes for two time-points plus ground truth.
/// All member volumes share one shape; scans are assumed rigidly pre-aligned
/// and skull-stripped upstream.
struct LongitudinalSample {
  std::string subject_id;
  VolumeF t1_ti, flair_ti;
  VolumeF t1_tj, flair_tj;
  MaskVolume gt_mask_ti;
  std::optional<MaskVolume> gt_mask_tj;
  /// Ground-truth displacement (synthetic data only): component-major
  /// (3, D, H, W), displacements in voxel units along (d, h, w).
  std::optional<std::array<VolumeF, 3>> gt_field;

  const VolumeF& scan(TimePoint t, Modality m) const {
    if (t == TimePoint::ti) return m == Modality::T1 ? t1_ti : flair_ti;
    return m == Modality::T1 ? t1_tj : flair_tj;
  }
  VolumeF& scan(TimePoint t, Modality m) {
    if (t == TimePoint::ti) return m == Modality::T1 ? t1_ti : flair_ti;
    return m == Modality::T1 ? t1_tj : flair_tj;
  }

  std::array<int, 3> shape() const { return t1_ti.shape(); }

  void check_consistent() const {
    const auto sh = t1_ti.shape();
    auto same = [&](const auto& v) { return v.shape() == sh; };
    if (!same(flair_ti) || !same(t1_tj) || !same(flair_tj) || !same(gt_mask_ti) ||
        (gt_mask_tj && !same(*gt_mask_tj))) {
      throw std::invalid_argument("LongitudinalSample: member volume shapes differ");
    }
    if (!is_binary(gt_mask_ti) || (gt_mask_tj && !is_binary(*gt_mask_tj))) {
      throw std::invalid_argument("LongitudinalSample: ground-truth mask is not binary");
    }
  }
};

// ---------------------------------------------------------------------------
// Network input stacks

/// Which channels a network consumes.
enum class ChannelLayout { Static, Longitudinal };

/// Fixed channel orders:
///   Static       (C=2): [T1@ti, FLAIR@ti]
///   Longitudinal (C=4): [T1@ti, FLAIR@ti, T1@tj, FLAIR@tj]
inline std::vector<std::string> channel_order(ChannelLayout layout) {
  if (layout == ChannelLayout::Static) return {"T1@ti", "FLAIR@ti"};
  return {"T1@ti", "FLAIR@ti", "T1@tj", "FLAIR@tj"};
}

inline int channel_count(ChannelLayout layout) {
  return layout == ChannelLayout::Static ? 2 : 4;
}

/// Multi-channel 2D network input plus the bookkeeping needed to undo padding.
struct SliceStack {
  TensorF data;  // (C, h, w)
  std::vector<std::string> channels;
  SlicePlane plane = SlicePlane::axial;
  int index = 0;
  struct CropRecord {
    int h = 0, w = 0;  // extent before padding
  } crop_record;
};

/// Extracts the cross-section of every required channel at `index`, in the
/// fixed channel order for `layout`.
inline SliceStack extract_slice(const LongitudinalSample& sample, SlicePlane plane,
                                int index, ChannelLayout layout) {
  check_slice_index(sample.t1_ti, plane, index);
  std::vector<TensorF> planes;
  planes.push_back(volume_slice(sample.t1_ti, plane, index));
  planes.push_back(volume_slice(sample.flair_ti, plane, index));
  if (layout == ChannelLayout::Longitudinal) {
    planes.push_back(volume_slice(sample.t1_tj, plane, index));
    planes.push_back(volume_slice(sample.flair_tj, plane, index));
  }
  SliceStack s;
  s.data = stack_channels(planes);
  s.channels = channel_order(layout);
  s.plane = plane;
  s.index = index;
  s.crop_record = {s.data.height(), s.data.width()};
  return s;
}

inline int next_multiple(int n, int m) { return ((n + m - 1) / m) * m; }

/// Zero-pads bottom/right so both spatial extents are multiples of m.
/// crop_record keeps the original extent; crop_to_record(pad_to_multiple(s))
/// returns s bitwise.
inline SliceStack pad_to_multiple(const SliceStack& s, int m) {
  if (m < 1) throw std::invalid_argument("pad_to_multiple: m must be >= 1");
  SliceStack out = s;
  out.data = pad_bottom_right(s.data, next_multiple(s.data.height(), m),
                              next_multiple(s.data.width(), m));
  return out;
}

/// Undoes pad_to_multiple using the stored crop record.
inline SliceStack crop_to_record(const SliceStack& s) {
  SliceStack out = s;
  out.data = crop_top_left(s.data, s.crop_record.h, s.crop_record.w);
  return out;
}

// ---------------------------------------------------------------------------
// Intensity normalization

/// Per-volume z-score: subtracts the mean and divides by the population
/// standard deviation. When `region` is given, the moments are computed over
/// region-nonzero voxels only (the transform is still applied everywhere).
inline VolumeF normalize_volume(const VolumeF& v,
                                const MaskVolume* region = nullptr) {
  double mean = 0.0, var = 0.0;
  if (region) {
    if (region->shape() != v.shape()) {
      throw std::invalid_argument("normalize_volume: region shape mismatch");
    }
    const auto sel = region->array().template cast<double>();
    const double n = sel.sum();
    if (n < 1) throw std::invalid_argument("normalize_volume: empty region");
    mean = (v.array() * sel).sum() / n;
    var = ((v.array() - mean).square() * sel).sum() / n;
  } else {
    mean = v.array().mean();
    var = (v.array() - mean).square().mean();
  }
  const double sd = std::sqrt(var);
  if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
    throw std::invalid_argument("normalize_volume: zero variance");
  }
  VolumeF out = v;
  out.array() = (v.array() - mean) / sd;
  return out;
}

}  // namespace longiseg
