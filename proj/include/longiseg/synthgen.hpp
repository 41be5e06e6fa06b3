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

/// Deterministic synthetic longitudinal phantom generator.
///
/// Each subject is an ellipsoidal "brain" with smooth tissue texture and
/// ellipsoidal lesion blobs (FLAIR-hyperintense, T1-hypointense). The other
/// time-point's anatomy is linked to the reference by a smooth random
/// displacement field: the reference tissue is the pull-warp of the follow-up
/// tissue by gt_field, so warping the follow-up scan by gt_field reproduces
/// the reference scan up to lesion change and noise. Lesion change is applied
/// by radius scaling and presence toggling before intensity rendering, so the
/// ground-truth masks are exact by construction.

#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "longiseg/volume.hpp"

namespace longiseg {

/// Fractions of lesions that take each temporal behaviour; must sum to 1.
struct ChangeProfile {
  double grow = 0.35;
  double shrink = 0.25;
  double appear = 0.05;
  double disappear = 0.15;
  double stay = 0.2;

  double sum() const { return grow + shrink + appear + disappear + stay; }
};

struct SynthConfig {
  std::array<int, 3> shape = {64, 64, 64};
  int n_subjects = 7;
  std::array<int, 2> lesion_count_range = {3, 6};
  std::array<double, 2> lesion_radius_range_vox = {2.0, 4.0};
  /// Lesion-look-alike blobs that stay identical across both time-points and
  /// are absent from the ground-truth masks. They make single-time-point
  /// segmentation genuinely ambiguous: only temporal change separates a true
  /// lesion from a stable structure.
  std::array<int, 2> distractor_count_range = {4, 8};
  ChangeProfile change_profile;
  double background_level = 0.0;
  double tissue_contrast = 0.12;     // texture amplitude inside the brain
  double lesion_hyperintensity = 0.3;  // FLAIR boost; T1 drops by half of it
  double noise_sigma = 0.04;
  double warp_amplitude_vox = 1.5;  // max displacement of the smooth field
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument naming the offending field.
  void validate() const;
};

struct DatasetSplit {
  std::vector<int> train, val, test;
};

/// Deterministic function of (cfg, subject_index); safe to run in parallel
/// across subjects.
LongitudinalSample generate_subject(const SynthConfig& cfg, int subject_index);

/// Same sample plus the noiseless rendered scans and the stable-distractor
/// region, for verification.
struct SubjectWithNoiseless {
  LongitudinalSample sample;
  VolumeF flair_ti_clean, flair_tj_clean;
  VolumeF t1_ti_clean, t1_tj_clean;
  MaskVolume distractor_region;
};
SubjectWithNoiseless generate_subject_detailed(const SynthConfig& cfg,
                                               int subject_index);

/// Subject-disjoint deterministic split in proportion 3:1:3 (train:val:test);
/// every part gets at least one subject. Requires n_subjects >= 3.
DatasetSplit split_subjects(int n_subjects);

struct GeneratedDataset {
  std::vector<LongitudinalSample> samples;  // indexed by subject
  DatasetSplit split;
};
GeneratedDataset generate_dataset(const SynthConfig& cfg);

/// Pull-warp of a volume by a (3, D, H, W) displacement field in voxel units:
/// out(p) = trilinear sample of v at p + u(p), border-clamped. This is the
/// module's own oracle for what gt_field means.
VolumeF warp_volume_trilinear(const VolumeF& v, const std::array<VolumeF, 3>& field);

/// The brain ellipsoid used for a given volume shape; lesions are guaranteed
/// to lie strictly inside it (norm_sq < 1).
struct BrainEllipsoid {
  std::array<double, 3> center;
  std::array<double, 3> semi_axes;
  double norm_sq(double d, double h, double w) const;
};
BrainEllipsoid brain_ellipsoid(const std::array<int, 3>& shape);

double mean_squared_error(const VolumeF& a, const VolumeF& b);

inline std::string subject_name(int subject_index) {
  char buf[16];
  std::snprintf(buf, sizeof(buf), "subj%03d", subject_index);
  return buf;
}

}  // namespace longiseg
