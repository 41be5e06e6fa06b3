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

#include <cmath>
#include <stdexcept>
#include <vector>

#include "longiseg/nn/layers.hpp"

namespace longiseg::nn {

/// Adam with the AMSGrad correction (running maximum of the second-moment
/// estimate in the denominator).
class Adam {
 public:
  struct Moments {
    Eigen::ArrayXd m, v, v_max;
  };

  explicit Adam(std::vector<ParamPtr> params, double lr, double beta1 = 0.9,
                double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), lr_(lr), beta1_(beta1), beta2_(beta2), eps_(eps) {
    if (!(lr > 0)) throw std::invalid_argument("Adam: learning rate must be > 0");
    for (const auto& p : params_) {
      Moments s;
      s.m = Eigen::ArrayXd::Zero(p->size());
      s.v = Eigen::ArrayXd::Zero(p->size());
      s.v_max = Eigen::ArrayXd::Zero(p->size());
      state_.push_back(std::move(s));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    for (size_t i = 0; i < params_.size(); ++i) {
      Param& p = *params_[i];
      Moments& s = state_[i];
      s.m = beta1_ * s.m + (1.0 - beta1_) * p.grad;
      s.v = beta2_ * s.v + (1.0 - beta2_) * p.grad.square();
      s.v_max = s.v_max.max(s.v);
      p.value -= lr_ * (s.m / c1) / ((s.v_max / c2).sqrt() + eps_);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p->grad.setZero();
  }

  long step_count() const { return t_; }
  double learning_rate() const { return lr_; }
  const std::vector<Moments>& moments() const { return state_; }

  void restore(long t, std::vector<Moments> moments) {
    if (moments.size() != params_.size()) {
      throw std::invalid_argument("Adam::restore: state size mismatch");
    }
    for (size_t i = 0; i < moments.size(); ++i) {
      if (moments[i].m.size() != params_[i]->size()) {
        throw std::invalid_argument("Adam::restore: moment shape mismatch");
      }
    }
    t_ = t;
    state_ = std::move(moments);
  }

 private:
  std::vector<ParamPtr> params_;
  std::vector<Moments> state_;
  double lr_, beta1_, beta2_, eps_;
  long t_ = 0;
};

}  // namespace longiseg::nn
