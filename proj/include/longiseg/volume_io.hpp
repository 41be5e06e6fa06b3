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

/// Volume I/O.
///
/// NIfTI-1 (.nii, .nii.gz): minimal single-file reader/writer, little-endian
/// only. Scans are written as float32, masks as uint8. On disk nx = W,
/// ny = H, nz = D so the in-memory (d, h, w) layout maps directly.
///
/// Portable fallback: raw little-endian float32 array (<base>.raw) plus a
/// JSON sidecar (<base>.json) carrying {shape, spacing, dtype, is_mask}.
/// Displacement fields use this format with the component axis first.

#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "longiseg/volume.hpp"

namespace longiseg {

void write_volume_nifti(const std::string& path, const VolumeF& v);
void write_mask_nifti(const std::string& path, const MaskVolume& m);

VolumeF read_volume_nifti(const std::string& path);
/// Validates that the file contains only 0/1.
MaskVolume read_mask_nifti(const std::string& path);

/// N-dimensional raw+JSON array, used for anything that is not a plain scan.
struct RawArray {
  std::vector<int> shape;  // slowest axis first
  std::vector<float> data;
  bool is_mask = false;
  std::optional<std::array<double, 3>> spacing;
};

void write_raw_array(const std::string& base, const RawArray& a);
RawArray read_raw_array(const std::string& base);

void write_volume_raw(const std::string& base, const VolumeF& v);
VolumeF read_volume_raw(const std::string& base);
void write_mask_raw(const std::string& base, const MaskVolume& m);
MaskVolume read_mask_raw(const std::string& base);

/// 3D displacement field, component-major (3, D, H, W).
void write_field3_raw(const std::string& base, const std::array<VolumeF, 3>& field);
std::array<VolumeF, 3> read_field3_raw(const std::string& base);

/// 2D displacement field, component-major (2, h, w).
void write_field2_raw(const std::string& base, const TensorF& field);
TensorF read_field2_raw(const std::string& base);

}  // namespace longiseg
