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

/// Evaluation metric suite: voxel-wise DSC / PPV / VD, lesion-wise TPR / FPR
/// over 26-connected components, and the weighted overall score
///   0.125 DSC + 0.125 PPV + 0.25 (1 - VD) + 0.25 LTPR + 0.25 (1 - LFPR).
///
/// Degenerate-case conventions (also emitted in every report):
///   |P| = 0: ppv = 1 if |G| = 0 else 0
///   |G| = 0: dsc = 1 and vd = 0 if |P| = 0, else dsc = 0 and vd = 1
///   no ground-truth lesions: ltpr = 1;  no predicted lesions: lfpr = 0
/// VD is clipped to 1 inside the overall score only; the raw value is kept.

#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "longiseg/volume.hpp"

namespace longiseg {

enum class Connectivity { faces6 = 6, full26 = 26 };

struct ComponentLabels {
  Volume3<std::int32_t> labels;  // background 0, components 1..count
  int count = 0;
};

/// Labels maximal connected foreground regions.
ComponentLabels connected_components(const MaskVolume& mask,
                                     Connectivity conn = Connectivity::full26);

struct VoxelMetrics {
  double dsc = 0, ppv = 0, vd = 0;
  long tp = 0, fp = 0, fn = 0;
};

VoxelMetrics voxel_metrics(const MaskVolume& pred, const MaskVolume& gt);

struct LesionMetrics {
  double ltpr = 0, lfpr = 0;
  int n_gt_lesions = 0, n_pred_lesions = 0;
  int n_detected = 0, n_false_lesions = 0;
};

/// A ground-truth lesion counts as detected when at least one of its voxels
/// overlaps predicted foreground; a predicted component with no ground-truth
/// overlap counts as false.
LesionMetrics lesion_metrics(const MaskVolume& pred, const MaskVolume& gt,
                             Connectivity conn = Connectivity::full26);

/// Weighted sum of the five metrics; vd is clipped to [0,1] before use.
double overall_score(double dsc, double ppv, double vd, double ltpr, double lfpr);

struct MetricReport {
  double dsc = 0, ppv = 0, ltpr = 0, lfpr = 0, vd = 0;
  double overall = 0;
  long tp = 0, fp = 0, fn = 0;
  int n_gt_lesions = 0, n_pred_lesions = 0;
  int n_detected = 0, n_false_lesions = 0;

  std::string to_json() const;
  static MetricReport from_json(const std::string& text);
};

MetricReport compute_report(const MaskVolume& pred, const MaskVolume& gt,
                            Connectivity conn = Connectivity::full26);

/// Per-subject metric rows averaged into one report; voxel and lesion counts
/// are summed. Metrics are averaged per subject, not pooled over voxels.
MetricReport average_reports(const std::vector<MetricReport>& reports);

/// One CSV row per subject plus mean and std rows, byte-stable ordering.
std::string reports_to_csv(const std::vector<std::string>& subject_ids,
                           const std::vector<MetricReport>& reports);

}  // namespace longiseg
