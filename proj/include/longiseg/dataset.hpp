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

/// On-disk dataset layout:
///
///   <root>/manifest.json                     config echo + split membership
///   <root>/<subject>/t0/T1.nii.gz            reference time-point (ti)
///   <root>/<subject>/t0/FLAIR.nii.gz
///   <root>/<subject>/t1/T1.nii.gz            other time-point (tj)
///   <root>/<subject>/t1/FLAIR.nii.gz
///   <root>/<subject>/gt_mask_t0.nii.gz
///   <root>/<subject>/gt_mask_t1.nii.gz
///   <root>/<subject>/gt_field.{raw,json}     (3, D, H, W) displacement

#pragma once

#include <string>
#include <vector>

#include "longiseg/synthgen.hpp"
#include "longiseg/volume.hpp"

namespace longiseg {

enum class SplitName { train, val, test };

const char* to_string(SplitName s);
SplitName split_from_string(const std::string& name);

struct DatasetManifest {
  SynthConfig config;
  int n_subjects = 0;
  std::vector<std::string> train, val, test;

  const std::vector<std::string>& split(SplitName s) const;
};

/// Generates every subject and writes the layout above. Returns the manifest.
DatasetManifest write_dataset(const std::string& root, const SynthConfig& cfg);

/// JSON (de)serialization of the generator config, as used by the CLI and the
/// dataset manifest. Absent fields keep their defaults.
SynthConfig parse_synth_config(const std::string& json_text);
std::string synth_config_json(const SynthConfig& cfg);

DatasetManifest read_manifest(const std::string& root);

LongitudinalSample load_sample(const std::string& root, const std::string& subject,
                               bool with_field = false);

/// Loads one split; scans are z-scored per volume when `normalize` is set
/// (masks are never touched).
std::vector<LongitudinalSample> load_split(const std::string& root, SplitName split,
                                           bool normalize = true);

/// Per-volume z-score of all four scans of a sample.
void normalize_sample(LongitudinalSample& s);

}  // namespace longiseg
