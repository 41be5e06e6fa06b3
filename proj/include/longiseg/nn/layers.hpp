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

/// Trainable 2D layer primitives with explicit forward/backward passes,
/// backed by Eigen matrix products (im2col GEMM for the convolutions).
///
/// Layers process one (C, H, W) sample at a time and cache whatever the
/// matching backward pass needs, so each instance supports exactly one
/// in-flight forward. Parameters are shared_ptr objects: copying a layer
/// shares its weights (fresh caches), which is how weight-tied siamese
/// streams are built. Gradients accumulate across backward calls until
/// zero_grad.

#pragma once

#include <Eigen/Core>

#include <memory>
#include <random>
#include <string>
#include <vector>

#include "longiseg/tensor.hpp"

namespace longiseg::nn {

using Tensor = longiseg::TensorF;

struct Param {
  std::string name;
  std::vector<int> shape;
  Eigen::ArrayXd value;
  Eigen::ArrayXd grad;

  Eigen::Index size() const { return value.size(); }
};
using ParamPtr = std::shared_ptr<Param>;

ParamPtr make_param(const std::string& name, const std::vector<int>& shape);

/// Per-call context. `rng` is only consumed by dropout in training mode;
/// `seg_only` skips auxiliary heads that inference does not need.
struct ForwardCtx {
  bool training = false;
  std::mt19937_64* rng = nullptr;
  bool seg_only = false;
};

// ---------------------------------------------------------------------------

class Conv2d {
 public:
  Conv2d(const std::string& name, int c_in, int c_out, int kernel, int stride,
         int pad);

  void init_he(std::mt19937_64& rng);
  void init_zero();

  Tensor forward(const Tensor& x);
  /// Accumulates weight/bias gradients, returns dL/dx.
  Tensor backward(const Tensor& d_y);

  int in_channels() const { return c_in_; }
  int out_channels() const { return c_out_; }
  void collect_params(std::vector<ParamPtr>& out) const;

  ParamPtr weight;  // (c_out, c_in, k, k) row-major
  ParamPtr bias;    // (c_out)

 private:
  bool is_pointwise() const { return kernel_ == 1 && stride_ == 1 && pad_ == 0; }

  int c_in_, c_out_, kernel_, stride_, pad_;
  Tensor x_cache_;
};

/// Stride-2 kernel-3 transposed convolution doubling the spatial extent
/// (pad 1, output padding 1).
class ConvTranspose2d {
 public:
  ConvTranspose2d(const std::string& name, int c_in, int c_out);

  void init_he(std::mt19937_64& rng);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& d_y);

  int in_channels() const { return c_in_; }
  int out_channels() const { return c_out_; }
  void collect_params(std::vector<ParamPtr>& out) const;

  ParamPtr weight;  // (c_in, c_out, k, k) row-major
  ParamPtr bias;    // (c_out)

 private:
  static constexpr int kKernel = 3, kStride = 2, kPad = 1;
  int c_in_, c_out_;
  Tensor x_cache_;
};

/// Per-channel spatial normalization with learnable affine. Statistics are
/// computed over each slice individually, so training/eval behaviour is
/// identical and independent of batching.
class InstanceNorm {
 public:
  explicit InstanceNorm(const std::string& name, int channels);

  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& d_y);

  void collect_params(std::vector<ParamPtr>& out) const;

  ParamPtr gamma, beta;

 private:
  static constexpr double kEps = 1e-5;
  int channels_;
  Tensor xhat_cache_;
  std::vector<double> inv_std_cache_;
};

class ReLU {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& d_y) const;

 private:
  Tensor x_cache_;
};

class Sigmoid {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& d_y) const;

 private:
  Tensor y_cache_;
};

/// Inverted dropout; identity when rate == 0 or in eval mode (and then it
/// consumes no randomness).
class Dropout {
 public:
  explicit Dropout(double rate);

  Tensor forward(const Tensor& x, const ForwardCtx& ctx);
  Tensor backward(const Tensor& d_y) const;

 private:
  double rate_;
  bool active_ = false;
  Tensor mask_cache_;
};

class MaxPool2 {
 public:
  Tensor forward(const Tensor& x);
  Tensor backward(const Tensor& d_y) const;

 private:
  int in_h_ = 0, in_w_ = 0, channels_ = 0;
  std::vector<Eigen::Index> argmax_cache_;
};

}  // namespace longiseg::nn
