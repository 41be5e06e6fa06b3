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

#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace longiseg {

/// Dense multi-channel 2D image, laid out (channels, height, width) with the
/// width index fastest. This is the unit every 2D operation in the project
/// works on: network inputs, probability maps and displacement fields.
template <typename Scalar>
class Tensor {
 public:
  using Storage = Eigen::Array<Scalar, Eigen::Dynamic, 1>;
  using Plane =
      Eigen::Array<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  using PlaneMap = Eigen::Map<Plane>;
  using ConstPlaneMap = Eigen::Map<const Plane>;

  Tensor() = default;

  Tensor(int channels, int height, int width)
      : c_(channels), h_(height), w_(width) {
    if (channels < 1 || height < 1 || width < 1) {
      throw std::invalid_argument("Tensor: all dimensions must be >= 1, got " +
                                  shape_string(channels, height, width));
    }
    data_ = Storage::Zero(static_cast<Eigen::Index>(channels) * height * width);
  }

  static Tensor constant(int channels, int height, int width, Scalar value) {
    Tensor t(channels, height, width);
    t.data_.setConstant(value);
    return t;
  }

  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  bool empty() const { return data_.size() == 0; }
  Eigen::Index size() const { return data_.size(); }

  Scalar& operator()(int c, int y, int x) { return data_[offset(c, y, x)]; }
  Scalar operator()(int c, int y, int x) const { return data_[offset(c, y, x)]; }

  Scalar& at(int c, int y, int x) {
    check_index(c, y, x);
    return data_[offset(c, y, x)];
  }
  Scalar at(int c, int y, int x) const {
    check_index(c, y, x);
    return data_[offset(c, y, x)];
  }

  Storage& array() { return data_; }
  const Storage& array() const { return data_; }

  /// 2D expression view of one channel.
  PlaneMap plane(int c) {
    return PlaneMap(data_.data() + static_cast<Eigen::Index>(c) * h_ * w_, h_, w_);
  }
  ConstPlaneMap plane(int c) const {
    return ConstPlaneMap(data_.data() + static_cast<Eigen::Index>(c) * h_ * w_, h_, w_);
  }

  bool same_shape(const Tensor& o) const {
    return c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  std::string shape_string() const { return shape_string(c_, h_, w_); }

  static std::string shape_string(int c, int h, int w) {
    return "(" + std::to_string(c) + "," + std::to_string(h) + "," +
           std::to_string(w) + ")";
  }

 private:
  Eigen::Index offset(int c, int y, int x) const {
    return (static_cast<Eigen::Index>(c) * h_ + y) * w_ + x;
  }

  void check_index(int c, int y, int x) const {
    if (c < 0 || c >= c_ || y < 0 || y >= h_ || x < 0 || x >= w_) {
      throw std::out_of_range("Tensor index " + shape_string(c, y, x) +
                              " outside " + shape_string());
    }
  }

  int c_ = 0, h_ = 0, w_ = 0;
  Storage data_;
};

using TensorF = Tensor<double>;

/// Concatenates tensors along the channel axis. Spatial extents must agree.
template <typename Scalar>
Tensor<Scalar> concat_channels(const std::vector<const Tensor<Scalar>*>& parts) {
  if (parts.empty()) throw std::invalid_argument("concat_channels: no inputs");
  int h = parts.front()->height(), w = parts.front()->width();
  int c = 0;
  for (const auto* p : parts) {
    if (p->height() != h || p->width() != w) {
      throw std::invalid_argument("concat_channels: spatial shape mismatch " +
                                  p->shape_string());
    }
    c += p->channels();
  }
  Tensor<Scalar> out(c, h, w);
  Eigen::Index pos = 0;
  for (const auto* p : parts) {
    out.array().segment(pos, p->array().size()) = p->array();
    pos += p->array().size();
  }
  return out;
}

template <typename Scalar>
Tensor<Scalar> concat_channels(const Tensor<Scalar>& a, const Tensor<Scalar>& b) {
  return concat_channels<Scalar>({&a, &b});
}

/// Copies channels [first, first+count) into a new tensor.
template <typename Scalar>
Tensor<Scalar> channel_slice(const Tensor<Scalar>& t, int first, int count) {
  if (first < 0 || count < 1 || first + count > t.channels()) {
    throw std::out_of_range("channel_slice: [" + std::to_string(first) + "," +
                            std::to_string(first + count) + ") outside " +
                            t.shape_string());
  }
  Tensor<Scalar> out(count, t.height(), t.width());
  const Eigen::Index plane = static_cast<Eigen::Index>(t.height()) * t.width();
  out.array() = t.array().segment(static_cast<Eigen::Index>(first) * plane,
                                  static_cast<Eigen::Index>(count) * plane);
  return out;
}

/// Stacks single-channel tensors into one multi-channel tensor.
template <typename Scalar>
Tensor<Scalar> stack_channels(const std::vector<Tensor<Scalar>>& channels) {
  std::vector<const Tensor<Scalar>*> ptrs;
  ptrs.reserve(channels.size());
  for (const auto& ch : channels) ptrs.push_back(&ch);
  return concat_channels(ptrs);
}

/// Splits a tensor back into its single-channel planes.
template <typename Scalar>
std::vector<Tensor<Scalar>> unstack_channels(const Tensor<Scalar>& t) {
  std::vector<Tensor<Scalar>> out;
  out.reserve(t.channels());
  for (int c = 0; c < t.channels(); ++c) out.push_back(channel_slice(t, c, 1));
  return out;
}

/// Zero-pads bottom/right to (new_h, new_w); the original content keeps its
/// top-left position.
template <typename Scalar>
Tensor<Scalar> pad_bottom_right(const Tensor<Scalar>& t, int new_h, int new_w) {
  if (new_h < t.height() || new_w < t.width()) {
    throw std::invalid_argument("pad_bottom_right: target smaller than input");
  }
  if (new_h == t.height() && new_w == t.width()) return t;
  Tensor<Scalar> out(t.channels(), new_h, new_w);
  for (int c = 0; c < t.channels(); ++c) {
    out.plane(c).topLeftCorner(t.height(), t.width()) = t.plane(c);
  }
  return out;
}

/// Crops to the top-left (new_h, new_w) corner.
template <typename Scalar>
Tensor<Scalar> crop_top_left(const Tensor<Scalar>& t, int new_h, int new_w) {
  if (new_h > t.height() || new_w > t.width()) {
    throw std::invalid_argument("crop_top_left: target larger than input");
  }
  if (new_h == t.height() && new_w == t.width()) return t;
  Tensor<Scalar> out(t.channels(), new_h, new_w);
  for (int c = 0; c < t.channels(); ++c) {
    out.plane(c) = t.plane(c).topLeftCorner(new_h, new_w);
  }
  return out;
}

template <typename Scalar>
bool all_finite(const Tensor<Scalar>& t) {
  return t.array().isFinite().all();
}

}  // namespace longiseg
