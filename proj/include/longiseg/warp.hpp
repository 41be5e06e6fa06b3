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

/// Differentiable 2D spatial transformer.
///
/// Displacement fields are (2, h, w) tensors in pixel units with the fixed
/// component order: channel 0 displaces rows, channel 1 displaces columns.
/// Sampling coordinates outside the grid are clamped to the border
/// (replicate), so warped images never pick up an artificial dark frame.

#pragma once

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>

#include "longiseg/tensor.hpp"

namespace longiseg {

template <typename Scalar>
void check_field_shape(const Tensor<Scalar>& img, const Tensor<Scalar>& field) {
  if (field.channels() != 2) {
    throw std::invalid_argument("displacement field must have 2 channels, got " +
                                field.shape_string());
  }
  if (field.height() != img.height() || field.width() != img.width()) {
    throw std::invalid_argument("field extent " + field.shape_string() +
                                " does not match image " + img.shape_string());
  }
}

/// out(c, y, x) = bilinear sample of img channel c at (y, x) + u(y, x),
/// with the sample coordinate clamped to the grid.
template <typename Scalar>
Tensor<Scalar> warp_image(const Tensor<Scalar>& img, const Tensor<Scalar>& field) {
  check_field_shape(img, field);
  const int c = img.channels(), h = img.height(), w = img.width();
  Tensor<Scalar> out(c, h, w);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Scalar ry = std::clamp<Scalar>(y + field(0, y, x), 0, Scalar(h - 1));
      const Scalar rx = std::clamp<Scalar>(x + field(1, y, x), 0, Scalar(w - 1));
      const int y0 = static_cast<int>(std::floor(ry));
      const int x0 = static_cast<int>(std::floor(rx));
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const Scalar fy = ry - y0;
      const Scalar fx = rx - x0;
      for (int ci = 0; ci < c; ++ci) {
        out(ci, y, x) = (1 - fy) * ((1 - fx) * img(ci, y0, x0) + fx * img(ci, y0, x1)) +
                        fy * ((1 - fx) * img(ci, y1, x0) + fx * img(ci, y1, x1));
      }
    }
  }
  return out;
}

/// Backpropagates d(out) through warp_image. Adds into d_img / d_field when
/// `accumulate` is set; otherwise both are zero-initialized first.
template <typename Scalar>
void warp_image_backward(const Tensor<Scalar>& img, const Tensor<Scalar>& field,
                         const Tensor<Scalar>& d_out, Tensor<Scalar>& d_img,
                         Tensor<Scalar>& d_field, bool accumulate = false) {
  check_field_shape(img, field);
  if (!d_out.same_shape(img)) {
    throw std::invalid_argument("warp_image_backward: d_out shape mismatch");
  }
  const int c = img.channels(), h = img.height(), w = img.width();
  if (!accumulate) {
    d_img = Tensor<Scalar>(c, h, w);
    d_field = Tensor<Scalar>(2, h, w);
  }
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const Scalar uy = y + field(0, y, x);
      const Scalar ux = x + field(1, y, x);
      const bool clamp_y = uy <= 0 || uy >= Scalar(h - 1);
      const bool clamp_x = ux <= 0 || ux >= Scalar(w - 1);
      const Scalar ry = std::clamp<Scalar>(uy, 0, Scalar(h - 1));
      const Scalar rx = std::clamp<Scalar>(ux, 0, Scalar(w - 1));
      const int y0 = static_cast<int>(std::floor(ry));
      const int x0 = static_cast<int>(std::floor(rx));
      const int y1 = std::min(y0 + 1, h - 1);
      const int x1 = std::min(x0 + 1, w - 1);
      const Scalar fy = ry - y0;
      const Scalar fx = rx - x0;
      Scalar gy = 0, gx = 0;
      for (int ci = 0; ci < c; ++ci) {
        const Scalar g = d_out(ci, y, x);
        d_img(ci, y0, x0) += g * (1 - fy) * (1 - fx);
        d_img(ci, y0, x1) += g * (1 - fy) * fx;
        d_img(ci, y1, x0) += g * fy * (1 - fx);
        d_img(ci, y1, x1) += g * fy * fx;
        // derivative of the bilinear sample w.r.t. the sample coordinate
        gy += g * ((1 - fx) * (img(ci, y1, x0) - img(ci, y0, x0)) +
                   fx * (img(ci, y1, x1) - img(ci, y0, x1)));
        gx += g * ((1 - fy) * (img(ci, y0, x1) - img(ci, y0, x0)) +
                   fy * (img(ci, y1, x1) - img(ci, y1, x0)));
      }
      d_field(0, y, x) += clamp_y ? 0 : gy;
      d_field(1, y, x) += clamp_x ? 0 : gx;
    }
  }
}

// ---------------------------------------------------------------------------
// Self-check of the differentiability contract

struct WarpGradCheckReport {
  bool passed = false;
  double max_rel_err_img = 0.0;
  double max_rel_err_field = 0.0;
  std::string worst;

  std::string summary() const {
    std::ostringstream os;
    os << (passed ? "pass" : "FAIL") << " (img " << max_rel_err_img
       << ", field " << max_rel_err_field << ")";
    if (!passed) os << " worst: " << worst;
    return os.str();
  }
};

namespace detail {
inline double rel_err(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}
}  // namespace detail

/// Compares analytic gradients of sum(warp_image(img, field)) against central
/// finite differences on a random case. Shapes above 8x8 are rejected: the
/// check is quadratic in the pixel count.
inline WarpGradCheckReport warp_gradcheck(int h, int w, unsigned seed,
                                          double tolerance = 1e-4) {
  if (h < 2 || w < 2 || h > 8 || w > 8) {
    throw std::invalid_argument("warp_gradcheck: shape must be within 2x2..8x8");
  }
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uimg(-1.0, 1.0);
  // keep sample points strictly interior so the check avoids clamp kinks
  std::uniform_real_distribution<double> ufield(-0.45, 0.45);

  TensorF img(1, h, w), field(2, h, w);
  for (Eigen::Index k = 0; k < img.array().size(); ++k) img.array()[k] = uimg(rng);
  for (Eigen::Index k = 0; k < field.array().size(); ++k) field.array()[k] = ufield(rng);

  TensorF d_out = TensorF::constant(1, h, w, 1.0);
  TensorF d_img, d_field;
  warp_image_backward(img, field, d_out, d_img, d_field);

  WarpGradCheckReport rep;
  const double step = 1e-6;
  auto objective = [&](const TensorF& i, const TensorF& f) {
    return warp_image(i, f).array().sum();
  };
  auto probe = [&](TensorF& target, const TensorF& analytic, const char* name,
                   double& max_err) {
    for (Eigen::Index k = 0; k < target.array().size(); ++k) {
      const double keep = target.array()[k];
      target.array()[k] = keep + step;
      const double up = objective(img, field);
      target.array()[k] = keep - step;
      const double dn = objective(img, field);
      target.array()[k] = keep;
      const double fd = (up - dn) / (2 * step);
      const double err = detail::rel_err(analytic.array()[k], fd);
      if (err > max_err) {
        max_err = err;
        if (err > tolerance) {
          std::ostringstream os;
          os << name << "[" << k << "] analytic=" << analytic.array()[k]
             << " fd=" << fd;
          rep.worst = os.str();
        }
      }
    }
  };
  probe(img, d_img, "img", rep.max_rel_err_img);
  probe(field, d_field, "field", rep.max_rel_err_field);
  rep.passed = rep.max_rel_err_img < tolerance && rep.max_rel_err_field < tolerance;
  return rep;
}

}  // namespace longiseg
