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

#include "longiseg/infer.hpp"

#include <chrono>
#include <sstream>
#include <stdexcept>

namespace longiseg {

namespace {

Orientation orientation_of(SlicePlane p) {
  switch (p) {
    case SlicePlane::axial: return Orientation::axial;
    case SlicePlane::coronal: return Orientation::coronal;
    case SlicePlane::sagittal: return Orientation::sagittal;
  }
  return Orientation::fused;
}

ChannelLayout layout_for(const SliceNet& net) {
  if (net.input_channels() == 2) return ChannelLayout::Static;
  if (net.input_channels() == 4) return ChannelLayout::Longitudinal;
  throw std::invalid_argument("SliceNet must consume 2 or 4 channels");
}

}  // namespace

ProbabilityVolume predict_orientation(SliceNet& net, const LongitudinalSample& sample,
                                      SlicePlane plane) {
  const ChannelLayout layout = layout_for(net);
  const auto shape = sample.shape();
  ProbabilityVolume out;
  out.orientation = orientation_of(plane);
  out.data = VolumeF(shape[0], shape[1], shape[2]);
  const int n = axis_length(shape, plane);
  for (int index = 0; index < n; ++index) {
    SliceStack stack = extract_slice(sample, plane, index, layout);
    stack = pad_to_multiple(stack, net.size_multiple());
    TensorF prob = net.predict_prob(stack.data);
    if (prob.channels() != 1 || prob.height() != stack.data.height() ||
        prob.width() != stack.data.width()) {
      throw std::runtime_error("predict_prob returned " + prob.shape_string() +
                               " for input " + stack.data.shape_string());
    }
    prob = crop_top_left(prob, stack.crop_record.h, stack.crop_record.w);
    insert_volume_slice(out.data, plane, index, prob);
  }
  return out;
}

FusedPrediction fuse_and_threshold(const ProbabilityVolume& pa,
                                   const ProbabilityVolume& pc,
                                   const ProbabilityVolume& ps, double tau) {
  if (!pa.data.same_shape(pc.data) || !pa.data.same_shape(ps.data)) {
    throw std::invalid_argument("fuse_and_threshold: shape mismatch");
  }
  FusedPrediction out;
  out.fused.orientation = Orientation::fused;
  out.fused.data = VolumeF(pa.data.depth(), pa.data.height(), pa.data.width());
  out.fused.data.array() =
      (pa.data.array() + pc.data.array() + ps.data.array()) / 3.0;
  out.mask = MaskVolume(pa.data.depth(), pa.data.height(), pa.data.width());
  out.mask.array() = (out.fused.data.array() > tau).cast<std::uint8_t>();
  return out;
}

SegmentationResult segment_subject(SliceNet& net, const LongitudinalSample& sample,
                                   double tau) {
  using clock = std::chrono::steady_clock;
  SegmentationResult result;
  const auto t0 = clock::now();
  std::array<ProbabilityVolume, 3> per_plane;
  for (size_t p = 0; p < 3; ++p) {
    const auto tp0 = clock::now();
    per_plane[p] = predict_orientation(net, sample, kAllPlanes[p]);
    result.seconds_per_orientation[p] =
        std::chrono::duration<double>(clock::now() - tp0).count();
  }
  FusedPrediction fused =
      fuse_and_threshold(per_plane[0], per_plane[1], per_plane[2], tau);
  result.mask = std::move(fused.mask);
  result.fused = std::move(fused.fused);
  result.seconds_total = std::chrono::duration<double>(clock::now() - t0).count();
  return result;
}

std::string SegmentationResult::timing_json() const {
  std::ostringstream os;
  os.precision(6);
  os << "{\n  \"seconds_total\": " << seconds_total
     << ",\n  \"seconds_per_orientation\": {\"axial\": "
     << seconds_per_orientation[0] << ", \"coronal\": " << seconds_per_orientation[1]
     << ", \"sagittal\": " << seconds_per_orientation[2] << "}\n}\n";
  return os.str();
}

}  // namespace longiseg
