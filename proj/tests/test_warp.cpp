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

#include <doctest.h>

#include <cmath>
#include <random>

#include "longiseg/warp.hpp"
#include "test_helpers.hpp"

using namespace longiseg;

TEST_SUITE("warp") {

TEST_CASE("zero field is the bitwise identity") {
  std::mt19937_64 rng(1);
  const TensorF img = testing::random_tensor(3, 6, 7, rng);
  const TensorF field(2, 6, 7);
  const TensorF out = warp_image(img, field);
  CHECK((out.array() == img.array()).all());
}

TEST_CASE("unit column displacement shifts a ramp with border clamp") {
  TensorF img(1, 3, 5);
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 5; ++c) img(0, r, c) = c;
  TensorF field(2, 3, 5);
  field.plane(1).setConstant(1.0);
  const TensorF out = warp_image(img, field);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 5; ++c) {
      CHECK(out(0, r, c) == doctest::Approx(std::min(c + 1, 4)));
    }
  }
}

TEST_CASE("half-pixel shift interpolates the hand-computed values") {
  TensorF img(1, 1, 4);
  img(0, 0, 0) = 0;
  img(0, 0, 1) = 1;
  img(0, 0, 2) = 2;
  img(0, 0, 3) = 3;
  TensorF field(2, 1, 4);
  field.plane(1).setConstant(0.5);
  const TensorF out = warp_image(img, field);
  CHECK(out(0, 0, 0) == doctest::Approx(0.5));
  CHECK(out(0, 0, 1) == doctest::Approx(1.5));
  CHECK(out(0, 0, 2) == doctest::Approx(2.5));
  CHECK(out(0, 0, 3) == doctest::Approx(3.0));  // clamped at the right border
}

TEST_CASE("gradient check against central finite differences") {
  const WarpGradCheckReport rep = warp_gradcheck(4, 4, /*seed=*/0);
  INFO(rep.summary());
  CHECK(rep.passed);
  CHECK(rep.max_rel_err_img < 1e-4);
  CHECK(rep.max_rel_err_field < 1e-4);
  const WarpGradCheckReport rep8 = warp_gradcheck(8, 8, /*seed=*/42);
  INFO(rep8.summary());
  CHECK(rep8.passed);
}

TEST_CASE("zero field makes the image gradient of a sum objective all ones") {
  std::mt19937_64 rng(2);
  const TensorF img = testing::random_tensor(1, 5, 5, rng);
  const TensorF field(2, 5, 5);
  const TensorF d_out = TensorF::constant(1, 5, 5, 1.0);
  TensorF d_img, d_field;
  warp_image_backward(img, field, d_out, d_img, d_field);
  CHECK((d_img.array() == 1.0).all());
}

TEST_CASE("integer displacements landing on grid points keep gradients finite") {
  std::mt19937_64 rng(3);
  const TensorF img = testing::random_tensor(1, 6, 6, rng);
  TensorF field(2, 6, 6);
  field.plane(0).setConstant(1.0);
  field.plane(1).setConstant(-2.0);
  const TensorF d_out = TensorF::constant(1, 6, 6, 1.0);
  TensorF d_img, d_field;
  warp_image_backward(img, field, d_out, d_img, d_field);
  CHECK(all_finite(d_img));
  CHECK(all_finite(d_field));
  CHECK(all_finite(warp_image(img, field)));
}

TEST_CASE("forward then inverse warp returns smooth images within tolerance") {
  // smooth test image, |f| <= 0.5 px
  const int n = 16;
  TensorF img(1, n, n);
  for (int r = 0; r < n; ++r)
    for (int c = 0; c < n; ++c)
      img(0, r, c) = std::sin(0.15 * r) + std::cos(0.12 * c);
  TensorF field(2, n, n);
  for (int r = 0; r < n; ++r) {
    for (int c = 0; c < n; ++c) {
      field(0, r, c) = 0.5 * std::sin(0.1 * c);
      field(1, r, c) = 0.5 * std::cos(0.12 * r);
    }
  }
  TensorF inverse(2, n, n);
  inverse.array() = -field.array();
  const TensorF round = warp_image(warp_image(img, field), inverse);
  // compare away from the borders where clamping interferes
  double worst = 0;
  for (int r = 2; r < n - 2; ++r)
    for (int c = 2; c < n - 2; ++c)
      worst = std::max(worst, std::abs(round(0, r, c) - img(0, r, c)));
  CHECK(worst < 1e-2);
}

TEST_CASE("warping is linear in the image for a fixed field") {
  std::mt19937_64 rng(4);
  const TensorF x = testing::random_tensor(1, 6, 6, rng);
  const TensorF y = testing::random_tensor(1, 6, 6, rng);
  const TensorF field = testing::random_tensor(2, 6, 6, rng, -1.5, 1.5);
  const double a = 1.7, b = -0.6;
  TensorF combo(1, 6, 6);
  combo.array() = a * x.array() + b * y.array();
  const TensorF lhs = warp_image(combo, field);
  TensorF rhs(1, 6, 6);
  rhs.array() =
      a * warp_image(x, field).array() + b * warp_image(y, field).array();
  CHECK((lhs.array() - rhs.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("warped values stay inside the input range") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    const TensorF img = testing::random_tensor(1, 7, 7, rng, -3, 5);
    const TensorF field = testing::random_tensor(2, 7, 7, rng, -4, 4);
    const TensorF out = warp_image(img, field);
    CHECK(out.array().maxCoeff() <= img.array().maxCoeff() + 1e-12);
    CHECK(out.array().minCoeff() >= img.array().minCoeff() - 1e-12);
  }
}

TEST_CASE("shape mismatches are rejected") {
  const TensorF img(1, 4, 4);
  CHECK_THROWS_AS(warp_image(img, TensorF(2, 4, 5)), std::invalid_argument);
  CHECK_THROWS_AS(warp_image(img, TensorF(3, 4, 4)), std::invalid_argument);
}

}  // TEST_SUITE
