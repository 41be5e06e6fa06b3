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

/// Network variants on a fully-convolutional densely connected
/// encoder-decoder backbone:
///
///   Static                 one time-point (C=2), segmentation head only
///   LongitudinalEarlyFusion both time-points concatenated (C=4)
///   MultitaskLongitudinal  shared encoder, two architecturally equivalent
///                          decoders (segmentation + displacement field)
///   SiameseLateFusion      weight-tied C=2 streams fused at the bottleneck
///
/// One model instance serves all three plane orientations; spatial extents
/// only need to be multiples of the downsampling factor.

#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "longiseg/nn/layers.hpp"

namespace longiseg::nn {

struct BackboneConfig {
  int in_channels = 4;
  int first_conv_channels = 48;
  int growth_rate = 12;
  int layers_per_dense_block = 4;
  int n_pool = 5;
  double dropout_rate = 0.2;
  int bottleneck_layers = 4;

  int downsampling_factor() const { return 1 << n_pool; }
  void validate() const;
  bool operator==(const BackboneConfig&) const = default;
};

enum class ModelVariant {
  Static,
  LongitudinalEarlyFusion,
  MultitaskLongitudinal,
  SiameseLateFusion,
};

std::string to_string(ModelVariant v);
ModelVariant variant_from_string(const std::string& name);
int variant_input_channels(ModelVariant v);

// ---------------------------------------------------------------------------

/// norm -> relu -> 3x3 conv (growth_rate channels) -> dropout
class DenseLayer {
 public:
  DenseLayer(const std::string& name, int c_in, int growth, double dropout);

  void init(std::mt19937_64& rng) { conv_.init_he(rng); }
  Tensor forward(const Tensor& x, const ForwardCtx& ctx);
  Tensor backward(const Tensor& d_y);
  void collect_params(std::vector<ParamPtr>& out) const;

 private:
  InstanceNorm norm_;
  ReLU relu_;
  Conv2d conv_;
  Dropout drop_;
};

/// Dense block: every layer consumes the concatenation of the block input and
/// all previous layer outputs; the block returns the full concatenation.
class DenseBlock {
 public:
  DenseBlock(const std::string& name, int c_in, int growth, int n_layers,
             double dropout);

  void init(std::mt19937_64& rng);
  /// Returns the full stack (in_channels + n_layers * growth channels); the
  /// trailing new_channels() channels are the block's new features.
  Tensor forward(const Tensor& x, const ForwardCtx& ctx);
  /// Takes the gradient w.r.t. the full stack, returns d(input).
  Tensor backward(const Tensor& d_stack);
  void collect_params(std::vector<ParamPtr>& out) const;

  int in_channels() const { return c_in_; }
  int out_channels() const { return c_in_ + growth_ * static_cast<int>(layers_.size()); }
  int new_channels() const { return growth_ * static_cast<int>(layers_.size()); }

 private:
  int c_in_, growth_;
  std::vector<DenseLayer> layers_;
};

/// norm -> relu -> 1x1 conv (channel-preserving) -> dropout -> 2x2 max pool
class TransitionDown {
 public:
  TransitionDown(const std::string& name, int channels, double dropout);

  void init(std::mt19937_64& rng) { conv_.init_he(rng); }
  Tensor forward(const Tensor& x, const ForwardCtx& ctx);
  Tensor backward(const Tensor& d_y);
  void collect_params(std::vector<ParamPtr>& out) const;

 private:
  InstanceNorm norm_;
  ReLU relu_;
  Conv2d conv_;
  Dropout drop_;
  MaxPool2 pool_;
};

/// First conv plus the down path; the bottleneck block lives in the model so
/// siamese streams can fuse before it.
class Encoder {
 public:
  Encoder(const std::string& name, const BackboneConfig& cfg, int in_channels);

  struct Out {
    Tensor deep;                // stack after the last transition down
    std::vector<Tensor> skips;  // per stage, recorded before downsampling
  };

  void init(std::mt19937_64& rng);
  Out forward(const Tensor& x, const ForwardCtx& ctx);
  /// d_skips entries may be empty tensors, meaning zero gradient.
  Tensor backward(const Tensor& d_deep, std::vector<Tensor>& d_skips);
  void collect_params(std::vector<ParamPtr>& out) const;

  int deep_channels() const;
  std::vector<int> skip_channels() const;
  int forward_calls() const { return forward_calls_; }

 private:
  Conv2d first_;
  std::vector<DenseBlock> blocks_;
  std::vector<TransitionDown> downs_;
  int forward_calls_ = 0;
};

/// Up path: transition up (stride-2 transposed conv) + skip concatenation +
/// dense block per stage, then a 1x1 head. Only a block's new features travel
/// further up; the head sees the final full stack.
class Decoder {
 public:
  Decoder(const std::string& name, const BackboneConfig& cfg, int in_new_channels,
          const std::vector<int>& skip_channels, int out_channels,
          bool sigmoid_head);

  void init(std::mt19937_64& rng, bool zero_head);

  Tensor forward(const Tensor& deep_new, const std::vector<Tensor>& skips,
                 const ForwardCtx& ctx);

  struct InGrads {
    Tensor d_new;
    std::vector<Tensor> d_skips;
  };
  InGrads backward(const Tensor& d_out);
  void collect_params(std::vector<ParamPtr>& out) const;

 private:
  int n_stages_;
  std::vector<int> up_channels_;  // per stage, deepest first entry is stage n-1
  std::vector<ConvTranspose2d> ups_;
  std::vector<DenseBlock> blocks_;
  Conv2d head_;
  bool sigmoid_head_;
  Sigmoid sigmoid_;
};

// ---------------------------------------------------------------------------

class Model {
 public:
  struct Output {
    Tensor prob;                  // (1, h, w) in [0, 1]
    std::optional<Tensor> field;  // (2, h, w), multitask only
  };

  Model(ModelVariant variant, const BackboneConfig& cfg, std::uint64_t seed);

  Output forward(const Tensor& x, const ForwardCtx& ctx);
  /// d_field must be given exactly for the multitask variant.
  void backward(const Tensor& d_prob, const Tensor* d_field = nullptr);

  void zero_grad();
  const std::vector<ParamPtr>& parameters() const { return params_; }

  ModelVariant variant() const { return variant_; }
  const BackboneConfig& config() const { return cfg_; }
  int input_channels() const { return cfg_.in_channels; }
  int size_multiple() const { return cfg_.downsampling_factor(); }
  int encoder_forward_calls() const { return encoder_.forward_calls(); }

  /// Architecture facts for structural tests and reports.
  struct Structure {
    int encoder_streams = 1;
    bool streams_share_weights = false;
    int bottleneck_in_channels = 0;
    int decoder_count = 1;
  };
  Structure structure() const;

 private:
  ModelVariant variant_;
  BackboneConfig cfg_;
  Encoder encoder_;
  std::optional<Encoder> encoder_b_;  // siamese second stream, weight-tied
  DenseBlock bottleneck_;
  Decoder seg_decoder_;
  std::optional<Decoder> reg_decoder_;
  std::vector<ParamPtr> params_;

  void check_input(const Tensor& x) const;
};

/// Exact count of trainable scalars; weight-tied parameters count once.
long count_parameters(const Model& model);

/// Validated constructor matching the CLI surface.
Model build_model(ModelVariant variant, const BackboneConfig& cfg,
                  std::uint64_t seed = 0);

}  // namespace longiseg::nn
