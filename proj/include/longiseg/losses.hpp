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

/// Training objectives.
///
/// The multitask objective is the plain sum of the segmentation loss and the
/// registration loss; the registration loss is image similarity between the
/// reference scan and the warped other-time-point scan plus a diffusion
/// penalty on the spatial gradients of the displacement field. Both tasks use
/// MSE as the data term so neither needs a balancing weight.

#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "longiseg/tensor.hpp"
#include "longiseg/warp.hpp"

namespace longiseg {

enum class SegLossKind { mse, asymmetric_dice };

struct LossConfig {
  double lambda_smooth = 0.01;  // weight of the diffusion regularizer
  SegLossKind seg_loss_kind = SegLossKind::mse;
  double beta = 1.5;  // asymmetry parameter of the dice variant

  void validate() const {
    if (lambda_smooth < 0) throw std::invalid_argument("lambda_smooth must be >= 0");
    if (beta <= 0) throw std::invalid_argument("beta must be > 0");
  }
};

namespace detail {

template <typename Scalar>
void check_same_shape(const Tensor<Scalar>& a, const Tensor<Scalar>& b,
                      const char* what) {
  if (!a.same_shape(b)) {
    throw std::invalid_argument(std::string(what) + ": shape mismatch " +
                                a.shape_string() + " vs " + b.shape_string());
  }
}

template <typename Scalar>
void check_binary(const Tensor<Scalar>& gt, const char* what) {
  if (!((gt.array() == Scalar(0)) || (gt.array() == Scalar(1))).all()) {
    throw std::invalid_argument(std::string(what) + ": ground truth is not binary");
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Segmentation MSE

template <typename Scalar>
Scalar seg_loss_mse(const Tensor<Scalar>& prob, const Tensor<Scalar>& gt) {
  detail::check_same_shape(prob, gt, "seg_loss_mse");
  detail::check_binary(gt, "seg_loss_mse");
  return (prob.array() - gt.array()).square().mean();
}

/// Returns the loss and fills d_prob with dL/dprob.
template <typename Scalar>
Scalar seg_loss_mse_grad(const Tensor<Scalar>& prob, const Tensor<Scalar>& gt,
                         Tensor<Scalar>& d_prob) {
  detail::check_same_shape(prob, gt, "seg_loss_mse");
  detail::check_binary(gt, "seg_loss_mse");
  d_prob = Tensor<Scalar>(prob.channels(), prob.height(), prob.width());
  const Scalar n = static_cast<Scalar>(prob.size());
  d_prob.array() = Scalar(2) * (prob.array() - gt.array()) / n;
  return (prob.array() - gt.array()).square().mean();
}

// ---------------------------------------------------------------------------
// Diffusion regularizer

/// Mean of all squared forward differences of the field: 2 components x 2
/// directions, valid grids of sizes (h-1) x w and h x (w-1). A direction with
/// no valid positions contributes no entries; a 1x1 field is an error.
template <typename Scalar>
Scalar smoothness_loss(const Tensor<Scalar>& field) {
  if (field.channels() != 2) {
    throw std::invalid_argument("smoothness_loss: field must have 2 channels");
  }
  const int h = field.height(), w = field.width();
  const long n_entries = 2L * ((h - 1) * static_cast<long>(w) + h * static_cast<long>(w - 1));
  if (n_entries == 0) {
    throw std::invalid_argument("smoothness_loss: field has no valid differences (1x1)");
  }
  Scalar sum = 0;
  for (int c = 0; c < 2; ++c) {
    auto p = field.plane(c);
    if (h > 1) sum += (p.bottomRows(h - 1) - p.topRows(h - 1)).square().sum();
    if (w > 1) sum += (p.rightCols(w - 1) - p.leftCols(w - 1)).square().sum();
  }
  return sum / static_cast<Scalar>(n_entries);
}

/// Adds dL/dfield into d_field (zero-initializes unless `accumulate`).
template <typename Scalar>
Scalar smoothness_loss_grad(const Tensor<Scalar>& field, Tensor<Scalar>& d_field,
                            bool accumulate = false, Scalar scale = Scalar(1)) {
  const Scalar value = smoothness_loss(field);
  const int h = field.height(), w = field.width();
  const long n_entries = 2L * ((h - 1) * static_cast<long>(w) + h * static_cast<long>(w - 1));
  if (!accumulate) d_field = Tensor<Scalar>(2, h, w);
  const Scalar k = scale * Scalar(2) / static_cast<Scalar>(n_entries);
  for (int c = 0; c < 2; ++c) {
    for (int y = 0; y + 1 < h; ++y) {
      for (int x = 0; x < w; ++x) {
        const Scalar d = field(c, y + 1, x) - field(c, y, x);
        d_field(c, y + 1, x) += k * d;
        d_field(c, y, x) -= k * d;
      }
    }
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x + 1 < w; ++x) {
        const Scalar d = field(c, y, x + 1) - field(c, y, x);
        d_field(c, y, x + 1) += k * d;
        d_field(c, y, x) -= k * d;
      }
    }
  }
  return value;
}

// ---------------------------------------------------------------------------
// Registration loss

template <typename Scalar>
struct RegistrationLossValue {
  Scalar total = 0;
  Scalar sim = 0;
  Scalar smooth = 0;
};

/// sim(x_i, warp(x_j, field)) + lambda * smoothness(field), with MSE as the
/// similarity term.
template <typename Scalar>
RegistrationLossValue<Scalar> registration_loss(const Tensor<Scalar>& x_i,
                                                const Tensor<Scalar>& x_j,
                                                const Tensor<Scalar>& field,
                                                const LossConfig& cfg) {
  detail::check_same_shape(x_i, x_j, "registration_loss");
  RegistrationLossValue<Scalar> v;
  const Tensor<Scalar> warped = warp_image(x_j, field);
  v.sim = (x_i.array() - warped.array()).square().mean();
  v.smooth = smoothness_loss(field);
  v.total = v.sim + static_cast<Scalar>(cfg.lambda_smooth) * v.smooth;
  return v;
}

template <typename Scalar>
struct RegistrationLossGrads {
  Tensor<Scalar> d_x_i, d_x_j, d_field;
};

template <typename Scalar>
RegistrationLossValue<Scalar> registration_loss_grad(const Tensor<Scalar>& x_i,
                                                     const Tensor<Scalar>& x_j,
                                                     const Tensor<Scalar>& field,
                                                     const LossConfig& cfg,
                                                     RegistrationLossGrads<Scalar>& g) {
  detail::check_same_shape(x_i, x_j, "registration_loss");
  RegistrationLossValue<Scalar> v;
  const Tensor<Scalar> warped = warp_image(x_j, field);
  const Scalar n = static_cast<Scalar>(x_i.size());
  v.sim = (x_i.array() - warped.array()).square().mean();

  g.d_x_i = Tensor<Scalar>(x_i.channels(), x_i.height(), x_i.width());
  g.d_x_i.array() = Scalar(2) * (x_i.array() - warped.array()) / n;

  Tensor<Scalar> d_warped(x_i.channels(), x_i.height(), x_i.width());
  d_warped.array() = Scalar(2) * (warped.array() - x_i.array()) / n;
  warp_image_backward(x_j, field, d_warped, g.d_x_j, g.d_field);

  const Scalar lambda = static_cast<Scalar>(cfg.lambda_smooth);
  v.smooth = smoothness_loss_grad(field, g.d_field, /*accumulate=*/true, lambda);
  v.total = v.sim + lambda * v.smooth;
  return v;
}

// ---------------------------------------------------------------------------
// Asymmetric dice

/// 1 - F_beta with soft counts TP = sum(p*g), FN = sum((1-p)*g),
/// FP = sum(p*(1-g)) and additive smoothing eps in numerator and denominator.
template <typename Scalar>
Scalar asymmetric_dice_loss(const Tensor<Scalar>& prob, const Tensor<Scalar>& gt,
                            Scalar beta, Scalar eps = Scalar(1e-7)) {
  detail::check_same_shape(prob, gt, "asymmetric_dice_loss");
  detail::check_binary(gt, "asymmetric_dice_loss");
  if (!(beta > 0)) throw std::invalid_argument("asymmetric_dice_loss: beta must be > 0");
  const Scalar b2 = beta * beta;
  const Scalar tp = (prob.array() * gt.array()).sum();
  const Scalar fn = ((Scalar(1) - prob.array()) * gt.array()).sum();
  const Scalar fp = (prob.array() * (Scalar(1) - gt.array())).sum();
  const Scalar num = (1 + b2) * tp + eps;
  const Scalar den = (1 + b2) * tp + b2 * fn + fp + eps;
  return Scalar(1) - num / den;
}

template <typename Scalar>
Scalar asymmetric_dice_loss_grad(const Tensor<Scalar>& prob, const Tensor<Scalar>& gt,
                                 Scalar beta, Tensor<Scalar>& d_prob,
                                 Scalar eps = Scalar(1e-7)) {
  const Scalar value = asymmetric_dice_loss(prob, gt, beta, eps);
  const Scalar b2 = beta * beta;
  const Scalar tp = (prob.array() * gt.array()).sum();
  const Scalar fn = ((Scalar(1) - prob.array()) * gt.array()).sum();
  const Scalar fp = (prob.array() * (Scalar(1) - gt.array())).sum();
  const Scalar num = (1 + b2) * tp + eps;
  const Scalar den = (1 + b2) * tp + b2 * fn + fp + eps;
  // d num / d p_i = (1+b2) g_i; d den / d p_i = 1 (the b2 terms cancel)
  d_prob = Tensor<Scalar>(prob.channels(), prob.height(), prob.width());
  d_prob.array() = -((1 + b2) * gt.array() * den - num) / (den * den);
  return value;
}

// ---------------------------------------------------------------------------
// Multitask sum

template <typename Scalar>
struct MultitaskLossValue {
  Scalar total = 0;
  Scalar seg = 0;
  Scalar sim = 0;
  Scalar smooth = 0;
  Scalar reg() const { return total - seg; }
};

/// L = L_seg + L_reg with unit inter-task weighting.
template <typename Scalar>
MultitaskLossValue<Scalar> multitask_loss(const Tensor<Scalar>& prob,
                                          const Tensor<Scalar>& gt,
                                          const Tensor<Scalar>& x_i,
                                          const Tensor<Scalar>& x_j,
                                          const Tensor<Scalar>& field,
                                          const LossConfig& cfg) {
  MultitaskLossValue<Scalar> v;
  v.seg = cfg.seg_loss_kind == SegLossKind::mse
              ? seg_loss_mse(prob, gt)
              : asymmetric_dice_loss(prob, gt, static_cast<Scalar>(cfg.beta));
  const auto reg = registration_loss(x_i, x_j, field, cfg);
  v.sim = reg.sim;
  v.smooth = reg.smooth;
  v.total = v.seg + reg.total;
  return v;
}

template <typename Scalar>
struct MultitaskLossGrads {
  Tensor<Scalar> d_prob;
  RegistrationLossGrads<Scalar> reg;
};

template <typename Scalar>
MultitaskLossValue<Scalar> multitask_loss_grad(const Tensor<Scalar>& prob,
                                               const Tensor<Scalar>& gt,
                                               const Tensor<Scalar>& x_i,
                                               const Tensor<Scalar>& x_j,
                                               const Tensor<Scalar>& field,
                                               const LossConfig& cfg,
                                               MultitaskLossGrads<Scalar>& g) {
  MultitaskLossValue<Scalar> v;
  v.seg = cfg.seg_loss_kind == SegLossKind::mse
              ? seg_loss_mse_grad(prob, gt, g.d_prob)
              : asymmetric_dice_loss_grad(prob, gt, static_cast<Scalar>(cfg.beta),
                                          g.d_prob);
  const auto reg = registration_loss_grad(x_i, x_j, field, cfg, g.reg);
  v.sim = reg.sim;
  v.smooth = reg.smooth;
  v.total = v.seg + reg.total;
  return v;
}

}  // namespace longiseg
