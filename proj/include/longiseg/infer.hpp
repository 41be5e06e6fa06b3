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

/// 2.5D volumetric inference: predict every slice along each of the three
/// orthogonal orientations, average the three probability volumes per voxel
/// and threshold (strictly greater-than) into the final 3D mask.

#pragma once

#include <array>
#include <string>

#include "longiseg/nn/model.hpp"
#include "longiseg/volume.hpp"

namespace longiseg {

enum class Orientation { axial, coronal, sagittal, fused };

struct ProbabilityVolume {
  VolumeF data;  // values in [0, 1]
  Orientation orientation = Orientation::fused;
};

/// Minimal slice-prediction interface 2.5D inference runs against; the real
/// models adapt to it and tests substitute stubs. Implementations may keep
/// internal scratch state, so share one instance per thread only.
class SliceNet {
 public:
  virtual ~SliceNet() = default;
  virtual int input_channels() const = 0;  // 2 -> static, 4 -> longitudinal
  virtual int size_multiple() const = 0;
  /// (1, h, w) probabilities in [0, 1] for an already padded stack.
  virtual TensorF predict_prob(const TensorF& stack) = 0;
};

/// Eval-mode (dropout-free) adapter around a trained model.
class ModelSliceNet : public SliceNet {
 public:
  explicit ModelSliceNet(nn::Model& model) : model_(model) {}
  int input_channels() const override { return model_.input_channels(); }
  int size_multiple() const override { return model_.size_multiple(); }
  TensorF predict_prob(const TensorF& stack) override {
    nn::ForwardCtx ctx;
    ctx.seg_only = true;
    return model_.forward(stack, ctx).prob;
  }

 private:
  nn::Model& model_;
};

/// Slice-wise prediction along one plane; every voxel is written exactly once.
ProbabilityVolume predict_orientation(SliceNet& net, const LongitudinalSample& sample,
                                      SlicePlane plane);

struct FusedPrediction {
  ProbabilityVolume fused;
  MaskVolume mask;
};

/// fused = (pa + pc + ps) / 3, mask = fused > tau (strict).
FusedPrediction fuse_and_threshold(const ProbabilityVolume& pa,
                                   const ProbabilityVolume& pc,
                                   const ProbabilityVolume& ps, double tau);

struct SegmentationResult {
  MaskVolume mask;
  ProbabilityVolume fused;
  std::array<double, 3> seconds_per_orientation{0, 0, 0};
  double seconds_total = 0;

  std::string timing_json() const;
};

SegmentationResult segment_subject(SliceNet& net, const LongitudinalSample& sample,
                                   double tau);

}  // namespace longiseg
