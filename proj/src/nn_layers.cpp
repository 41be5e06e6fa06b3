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

#include "longiseg/nn/layers.hpp"

#include <cmath>
#include <stdexcept>

namespace longiseg::nn {

namespace {

using MatrixRM = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using Matrix = MatrixRM;  // patch matrices are row-major: one patch row is contiguous
using MapRM = Eigen::Map<MatrixRM>;
using ConstMapRM = Eigen::Map<const MatrixRM>;

int conv_out_extent(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

/// Columns indexed by output pixel, rows by (c_in, ky, kx); out-of-image taps
/// read as zero. Stride-1 rows are filled with contiguous runs.
Matrix im2col(const Tensor& x, int kernel, int stride, int pad, int out_h,
              int out_w) {
  const int c_in = x.channels(), h = x.height(), w = x.width();
  Matrix cols = Matrix::Zero(static_cast<Eigen::Index>(c_in) * kernel * kernel,
                             static_cast<Eigen::Index>(out_h) * out_w);
  for (int ci = 0; ci < c_in; ++ci) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        double* row = cols.row((static_cast<Eigen::Index>(ci) * kernel + ky) *
                               kernel + kx).data();
        if (stride == 1) {
          // ix = ox + kx - pad stays in [0, w) for ox in [x_lo, x_hi)
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(out_w, w + pad - kx);
          if (x_lo >= x_hi) continue;
          const double* x_base = x.array().data();
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            std::memcpy(row + static_cast<size_t>(oy) * out_w + x_lo,
                        x_base + (static_cast<Eigen::Index>(ci) * h + iy) * w +
                            (x_lo + kx - pad),
                        static_cast<size_t>(x_hi - x_lo) * sizeof(double));
          }
        } else {
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) {
                row[static_cast<size_t>(oy) * out_w + ox] = x(ci, iy, ix);
              }
            }
          }
        }
      }
    }
  }
  return cols;
}

/// Adjoint of im2col: scatter-adds columns back into an image.
Tensor col2im(const Matrix& cols, int c, int h, int w, int kernel, int stride,
              int pad, int out_h, int out_w) {
  Tensor img(c, h, w);
  for (int ci = 0; ci < c; ++ci) {
    for (int ky = 0; ky < kernel; ++ky) {
      for (int kx = 0; kx < kernel; ++kx) {
        const double* row = cols.row((static_cast<Eigen::Index>(ci) * kernel + ky) *
                                     kernel + kx).data();
        if (stride == 1) {
          const int x_lo = std::max(0, pad - kx);
          const int x_hi = std::min(out_w, w + pad - kx);
          if (x_lo >= x_hi) continue;
          const int run = x_hi - x_lo;
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy + ky - pad;
            if (iy < 0 || iy >= h) continue;
            Eigen::Map<Eigen::ArrayXd>(&img(ci, iy, x_lo + kx - pad), run) +=
                Eigen::Map<const Eigen::ArrayXd>(
                    row + static_cast<size_t>(oy) * out_w + x_lo, run);
          }
        } else {
          for (int oy = 0; oy < out_h; ++oy) {
            const int iy = oy * stride + ky - pad;
            if (iy < 0 || iy >= h) continue;
            for (int ox = 0; ox < out_w; ++ox) {
              const int ix = ox * stride + kx - pad;
              if (ix >= 0 && ix < w) {
                img(ci, iy, ix) += row[static_cast<size_t>(oy) * out_w + ox];
              }
            }
          }
        }
      }
    }
  }
  return img;
}

void he_normal(Eigen::ArrayXd& values, int fan_in, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
  for (Eigen::Index i = 0; i < values.size(); ++i) values[i] = dist(rng);
}

}  // namespace

ParamPtr make_param(const std::string& name, const std::vector<int>& shape) {
  auto p = std::make_shared<Param>();
  p->name = name;
  p->shape = shape;
  Eigen::Index n = 1;
  for (int s : shape) n *= s;
  p->value = Eigen::ArrayXd::Zero(n);
  p->grad = Eigen::ArrayXd::Zero(n);
  return p;
}

// ---------------------------------------------------------------------------
// Conv2d

Conv2d::Conv2d(const std::string& name, int c_in, int c_out, int kernel,
               int stride, int pad)
    : c_in_(c_in), c_out_(c_out), kernel_(kernel), stride_(stride), pad_(pad) {
  weight = make_param(name + ".weight", {c_out, c_in, kernel, kernel});
  bias = make_param(name + ".bias", {c_out});
}

void Conv2d::init_he(std::mt19937_64& rng) {
  he_normal(weight->value, c_in_ * kernel_ * kernel_, rng);
  bias->value.setZero();
}

void Conv2d::init_zero() {
  weight->value.setZero();
  bias->value.setZero();
}

Tensor Conv2d::forward(const Tensor& x) {
  if (x.channels() != c_in_) {
    throw std::invalid_argument(weight->name + ": expected " +
                                std::to_string(c_in_) + " input channels, got " +
                                std::to_string(x.channels()));
  }
  x_cache_ = x;
  const int out_h = conv_out_extent(x.height(), kernel_, stride_, pad_);
  const int out_w = conv_out_extent(x.width(), kernel_, stride_, pad_);
  ConstMapRM w_mat(weight->value.data(), c_out_,
                   static_cast<Eigen::Index>(c_in_) * kernel_ * kernel_);
  Tensor y(c_out_, out_h, out_w);
  MapRM y_mat(y.array().data(), c_out_, static_cast<Eigen::Index>(out_h) * out_w);
  if (is_pointwise()) {
    ConstMapRM x_mat(x.array().data(), c_in_,
                     static_cast<Eigen::Index>(out_h) * out_w);
    y_mat.noalias() = w_mat * x_mat;
  } else {
    const Matrix cols = im2col(x, kernel_, stride_, pad_, out_h, out_w);
    y_mat.noalias() = w_mat * cols;
  }
  y_mat.colwise() += Eigen::Map<const Eigen::VectorXd>(bias->value.data(), c_out_);
  return y;
}

Tensor Conv2d::backward(const Tensor& d_y) {
  const Tensor& x = x_cache_;
  const int out_h = d_y.height(), out_w = d_y.width();
  ConstMapRM dy_mat(d_y.array().data(), c_out_,
                    static_cast<Eigen::Index>(out_h) * out_w);
  MapRM dw_mat(weight->grad.data(), c_out_,
               static_cast<Eigen::Index>(c_in_) * kernel_ * kernel_);
  Eigen::Map<Eigen::VectorXd>(bias->grad.data(), c_out_) += dy_mat.rowwise().sum();
  ConstMapRM w_mat(weight->value.data(), c_out_,
                   static_cast<Eigen::Index>(c_in_) * kernel_ * kernel_);

  if (is_pointwise()) {
    ConstMapRM x_mat(x.array().data(), c_in_,
                     static_cast<Eigen::Index>(out_h) * out_w);
    dw_mat.noalias() += dy_mat * x_mat.transpose();
    Tensor d_x(c_in_, x.height(), x.width());
    MapRM dx_mat(d_x.array().data(), c_in_,
                 static_cast<Eigen::Index>(out_h) * out_w);
    dx_mat.noalias() = w_mat.transpose() * dy_mat;
    return d_x;
  }
  const Matrix cols = im2col(x, kernel_, stride_, pad_, out_h, out_w);
  dw_mat.noalias() += dy_mat * cols.transpose();
  const Matrix d_cols = w_mat.transpose() * dy_mat;
  return col2im(d_cols, c_in_, x.height(), x.width(), kernel_, stride_, pad_,
                out_h, out_w);
}

void Conv2d::collect_params(std::vector<ParamPtr>& out) const {
  out.push_back(weight);
  out.push_back(bias);
}

// ---------------------------------------------------------------------------
// ConvTranspose2d

ConvTranspose2d::ConvTranspose2d(const std::string& name, int c_in, int c_out)
    : c_in_(c_in), c_out_(c_out) {
  weight = make_param(name + ".weight", {c_in, c_out, kKernel, kKernel});
  bias = make_param(name + ".bias", {c_out});
}

void ConvTranspose2d::init_he(std::mt19937_64& rng) {
  he_normal(weight->value, c_in_ * kKernel * kKernel, rng);
  bias->value.setZero();
}

Tensor ConvTranspose2d::forward(const Tensor& x) {
  if (x.channels() != c_in_) {
    throw std::invalid_argument(weight->name + ": expected " +
                                std::to_string(c_in_) + " input channels, got " +
                                std::to_string(x.channels()));
  }
  x_cache_ = x;
  const int out_h = 2 * x.height(), out_w = 2 * x.width();
  ConstMapRM w_mat(weight->value.data(), c_in_,
                   static_cast<Eigen::Index>(c_out_) * kKernel * kKernel);
  ConstMapRM x_mat(x.array().data(), c_in_,
                   static_cast<Eigen::Index>(x.height()) * x.width());
  const Matrix cols = w_mat.transpose() * x_mat;
  Tensor y = col2im(cols, c_out_, out_h, out_w, kKernel, kStride, kPad,
                    x.height(), x.width());
  for (int c = 0; c < c_out_; ++c) y.plane(c) += bias->value[c];
  return y;
}

Tensor ConvTranspose2d::backward(const Tensor& d_y) {
  const Tensor& x = x_cache_;
  const Matrix d_cols = im2col(d_y, kKernel, kStride, kPad, x.height(), x.width());
  ConstMapRM x_mat(x.array().data(), c_in_,
                   static_cast<Eigen::Index>(x.height()) * x.width());

  MapRM dw_mat(weight->grad.data(), c_in_,
               static_cast<Eigen::Index>(c_out_) * kKernel * kKernel);
  dw_mat.noalias() += x_mat * d_cols.transpose();
  for (int c = 0; c < c_out_; ++c) bias->grad[c] += d_y.plane(c).sum();

  ConstMapRM w_mat(weight->value.data(), c_in_,
                   static_cast<Eigen::Index>(c_out_) * kKernel * kKernel);
  Tensor d_x(c_in_, x.height(), x.width());
  MapRM dx_mat(d_x.array().data(), c_in_,
               static_cast<Eigen::Index>(x.height()) * x.width());
  dx_mat.noalias() = w_mat * d_cols;
  return d_x;
}

void ConvTranspose2d::collect_params(std::vector<ParamPtr>& out) const {
  out.push_back(weight);
  out.push_back(bias);
}

// ---------------------------------------------------------------------------
// InstanceNorm

InstanceNorm::InstanceNorm(const std::string& name, int channels)
    : channels_(channels) {
  gamma = make_param(name + ".gamma", {channels});
  beta = make_param(name + ".beta", {channels});
  gamma->value.setOnes();
}

Tensor InstanceNorm::forward(const Tensor& x) {
  if (x.channels() != channels_) {
    throw std::invalid_argument(gamma->name + ": channel count mismatch");
  }
  xhat_cache_ = Tensor(x.channels(), x.height(), x.width());
  inv_std_cache_.assign(channels_, 0.0);
  Tensor y(x.channels(), x.height(), x.width());
  for (int c = 0; c < channels_; ++c) {
    const auto p = x.plane(c);
    const double mu = p.mean();
    const double var = (p - mu).square().mean();
    const double inv = 1.0 / std::sqrt(var + kEps);
    inv_std_cache_[c] = inv;
    xhat_cache_.plane(c) = (p - mu) * inv;
    y.plane(c) = gamma->value[c] * xhat_cache_.plane(c) + beta->value[c];
  }
  return y;
}

Tensor InstanceNorm::backward(const Tensor& d_y) {
  Tensor d_x(d_y.channels(), d_y.height(), d_y.width());
  for (int c = 0; c < channels_; ++c) {
    const auto dy = d_y.plane(c);
    const auto xhat = xhat_cache_.plane(c);
    gamma->grad[c] += (dy * xhat).sum();
    beta->grad[c] += dy.sum();
    const double mean_dy = dy.mean();
    const double mean_dy_xhat = (dy * xhat).mean();
    d_x.plane(c) =
        gamma->value[c] * inv_std_cache_[c] * (dy - mean_dy - xhat * mean_dy_xhat);
  }
  return d_x;
}

void InstanceNorm::collect_params(std::vector<ParamPtr>& out) const {
  out.push_back(gamma);
  out.push_back(beta);
}

// ---------------------------------------------------------------------------
// Activations

Tensor ReLU::forward(const Tensor& x) {
  x_cache_ = x;
  Tensor y = x;
  y.array() = y.array().max(0.0);
  return y;
}

Tensor ReLU::backward(const Tensor& d_y) const {
  Tensor d_x = d_y;
  d_x.array() *= (x_cache_.array() > 0.0).cast<double>();
  return d_x;
}

Tensor Sigmoid::forward(const Tensor& x) {
  Tensor y = x;
  y.array() = 1.0 / (1.0 + (-y.array()).exp());
  y_cache_ = y;
  return y;
}

Tensor Sigmoid::backward(const Tensor& d_y) const {
  Tensor d_x = d_y;
  d_x.array() *= y_cache_.array() * (1.0 - y_cache_.array());
  return d_x;
}

// ---------------------------------------------------------------------------
// Dropout

Dropout::Dropout(double rate) : rate_(rate) {
  if (rate < 0.0 || rate >= 1.0) {
    throw std::invalid_argument("Dropout: rate must be in [0, 1)");
  }
}

Tensor Dropout::forward(const Tensor& x, const ForwardCtx& ctx) {
  active_ = ctx.training && rate_ > 0.0;
  if (!active_) return x;
  if (!ctx.rng) {
    throw std::invalid_argument("Dropout: training forward needs an RNG");
  }
  std::bernoulli_distribution keep(1.0 - rate_);
  mask_cache_ = Tensor(x.channels(), x.height(), x.width());
  const double scale = 1.0 / (1.0 - rate_);
  for (Eigen::Index i = 0; i < mask_cache_.size(); ++i) {
    mask_cache_.array()[i] = keep(*ctx.rng) ? scale : 0.0;
  }
  Tensor y = x;
  y.array() *= mask_cache_.array();
  return y;
}

Tensor Dropout::backward(const Tensor& d_y) const {
  if (!active_) return d_y;
  Tensor d_x = d_y;
  d_x.array() *= mask_cache_.array();
  return d_x;
}

// ---------------------------------------------------------------------------
// MaxPool2

Tensor MaxPool2::forward(const Tensor& x) {
  if (x.height() % 2 || x.width() % 2) {
    throw std::invalid_argument("MaxPool2: spatial extent must be even, got " +
                                x.shape_string());
  }
  in_h_ = x.height();
  in_w_ = x.width();
  channels_ = x.channels();
  const int oh = in_h_ / 2, ow = in_w_ / 2;
  Tensor y(channels_, oh, ow);
  argmax_cache_.assign(static_cast<size_t>(y.size()), 0);
  Eigen::Index out_idx = 0;
  for (int c = 0; c < channels_; ++c) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox, ++out_idx) {
        double best = x(c, 2 * oy, 2 * ox);
        int best_dy = 0, best_dx = 0;
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const double v = x(c, 2 * oy + dy, 2 * ox + dx);
            if (v > best) {
              best = v;
              best_dy = dy;
              best_dx = dx;
            }
          }
        }
        y(c, oy, ox) = best;
        argmax_cache_[static_cast<size_t>(out_idx)] =
            (static_cast<Eigen::Index>(c) * in_h_ + 2 * oy + best_dy) * in_w_ +
            2 * ox + best_dx;
      }
    }
  }
  return y;
}

Tensor MaxPool2::backward(const Tensor& d_y) const {
  Tensor d_x(channels_, in_h_, in_w_);
  for (Eigen::Index i = 0; i < d_y.size(); ++i) {
    d_x.array()[argmax_cache_[static_cast<size_t>(i)]] += d_y.array()[i];
  }
  return d_x;
}

}  // namespace longiseg::nn
