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

#include <random>

#include "longiseg/volume.hpp"
#include "longiseg/volume_io.hpp"
#include "test_helpers.hpp"

using namespace longiseg;
using longiseg::testing::TempDir;
using longiseg::testing::counting_volume;

namespace {

LongitudinalSample constant_sample(int n, double t1i, double fli, double t1j,
                                   double flj) {
  LongitudinalSample s;
  s.subject_id = "const";
  s.t1_ti = VolumeF(n, n, n, t1i);
  s.flair_ti = VolumeF(n, n, n, fli);
  s.t1_tj = VolumeF(n, n, n, t1j);
  s.flair_tj = VolumeF(n, n, n, flj);
  s.gt_mask_ti = MaskVolume(n, n, n, 0);
  return s;
}

}  // namespace

TEST_SUITE("volumes") {

TEST_CASE("axial slice of a counting volume reads off the first block") {
  const VolumeF v = counting_volume(4, 4, 4);
  const TensorF s = volume_slice(v, SlicePlane::axial, 0);
  REQUIRE(s.height() == 4);
  REQUIRE(s.width() == 4);
  for (int h = 0; h < 4; ++h)
    for (int w = 0; w < 4; ++w) CHECK(s(0, h, w) == h * 4 + w);
}

TEST_CASE("sagittal slice equals data[:, :, index]") {
  const VolumeF v = counting_volume(4, 4, 4);
  const TensorF s = volume_slice(v, SlicePlane::sagittal, 3);
  for (int d = 0; d < 4; ++d)
    for (int h = 0; h < 4; ++h) CHECK(s(0, d, h) == v(d, h, 3));
}

TEST_CASE("longitudinal stack keeps the documented channel order") {
  const auto sample = constant_sample(4, 1, 2, 3, 4);
  const SliceStack s =
      extract_slice(sample, SlicePlane::coronal, 2, ChannelLayout::Longitudinal);
  REQUIRE(s.data.channels() == 4);
  CHECK(s.channels == std::vector<std::string>{"T1@ti", "FLAIR@ti", "T1@tj", "FLAIR@tj"});
  for (int c = 0; c < 4; ++c) {
    CHECK(s.data.plane(c).minCoeff() == c + 1);
    CHECK(s.data.plane(c).maxCoeff() == c + 1);
  }
  const SliceStack st =
      extract_slice(sample, SlicePlane::coronal, 2, ChannelLayout::Static);
  CHECK(st.data.channels() == 2);
  CHECK(st.channels == std::vector<std::string>{"T1@ti", "FLAIR@ti"});
}

TEST_CASE("slice index out of range names the plane and the bound") {
  const auto sample = constant_sample(4, 1, 2, 3, 4);
  try {
    extract_slice(sample, SlicePlane::coronal, 4, ChannelLayout::Static);
    FAIL("expected out_of_range");
  } catch (const std::out_of_range& e) {
    const std::string msg = e.what();
    CHECK(msg.find("coronal") != std::string::npos);
    CHECK(msg.find("4") != std::string::npos);
  }
}

TEST_CASE("slice extraction and re-insertion is the identity per cross-section") {
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> dist(-2, 2);
  VolumeF v(5, 6, 7);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) v.array()[i] = dist(rng);
  for (SlicePlane p : kAllPlanes) {
    const int n = axis_length(v.shape(), p);
    for (int k = 0; k < n; ++k) {
      VolumeF empty(5, 6, 7);
      const TensorF s = volume_slice(v, p, k);
      insert_volume_slice(empty, p, k, s);
      const TensorF back = volume_slice(empty, p, k);
      CHECK((back.array() == s.array()).all());
    }
  }
}

TEST_CASE("stack then unstack preserves each channel bitwise") {
  std::mt19937_64 rng(5);
  std::vector<TensorF> chans;
  for (int c = 0; c < 4; ++c) chans.push_back(testing::random_tensor(1, 6, 5, rng));
  const TensorF stacked = stack_channels(chans);
  const auto back = unstack_channels(stacked);
  REQUIRE(back.size() == chans.size());
  for (size_t c = 0; c < chans.size(); ++c) {
    CHECK((back[c].array() == chans[c].array()).all());
  }
}

TEST_CASE("normalize_volume maps a balanced two-level volume to -1/+1") {
  VolumeF v(2, 2, 2, 0.0);
  v(0, 0, 0) = 2.0;
  v(0, 1, 1) = 2.0;
  v(1, 0, 1) = 2.0;
  v(1, 1, 0) = 2.0;
  const VolumeF out = normalize_volume(v);
  for (Eigen::Index i = 0; i < out.voxels(); ++i) {
    CHECK(out.array()[i] == doctest::Approx(v.array()[i] == 2.0 ? 1.0 : -1.0));
  }
}

TEST_CASE("normalize_volume is idempotent within tolerance") {
  std::mt19937_64 rng(7);
  std::normal_distribution<double> dist(3.0, 2.5);
  VolumeF v(6, 6, 6);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) v.array()[i] = dist(rng);
  const VolumeF once = normalize_volume(v);
  const VolumeF twice = normalize_volume(once);
  CHECK((once.array() - twice.array()).abs().maxCoeff() < 1e-6);
}

TEST_CASE("normalize_volume produces zero mean and unit deviation") {
  std::mt19937_64 rng(13);
  std::uniform_real_distribution<double> dist(10.0, 40.0);
  VolumeF v(8, 8, 8);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) v.array()[i] = dist(rng);
  const VolumeF out = normalize_volume(v);
  // independent recomputation of the moments
  double mean = 0;
  for (Eigen::Index i = 0; i < out.voxels(); ++i) mean += out.array()[i];
  mean /= static_cast<double>(out.voxels());
  double var = 0;
  for (Eigen::Index i = 0; i < out.voxels(); ++i) {
    var += (out.array()[i] - mean) * (out.array()[i] - mean);
  }
  var /= static_cast<double>(out.voxels());
  CHECK(std::abs(mean) < 1e-6);
  CHECK(std::abs(std::sqrt(var) - 1.0) < 1e-6);
}

TEST_CASE("normalize_volume rejects a constant volume") {
  const VolumeF v(4, 4, 4, 3.25);
  CHECK_THROWS_WITH_AS(normalize_volume(v), doctest::Contains("zero variance"),
                       std::invalid_argument);
}

TEST_CASE("pad_to_multiple leaves aligned extents untouched") {
  auto sample = constant_sample(4, 1, 2, 3, 4);
  SliceStack s = extract_slice(sample, SlicePlane::axial, 0, ChannelLayout::Static);
  s.data = TensorF::constant(2, 224, 224, 0.5);
  s.crop_record = {224, 224};
  const SliceStack padded = pad_to_multiple(s, 32);
  CHECK(padded.data.height() == 224);
  CHECK(padded.data.width() == 224);
  CHECK(padded.crop_record.h == 224);
  CHECK(padded.crop_record.w == 224);
}

TEST_CASE("pad_to_multiple pads 181x217 up to 192x224 with zeros outside") {
  std::mt19937_64 rng(3);
  SliceStack s;
  s.data = testing::random_tensor(2, 181, 217, rng, 0.5, 1.5);
  s.crop_record = {181, 217};
  const SliceStack padded = pad_to_multiple(s, 32);
  REQUIRE(padded.data.height() == 192);
  REQUIRE(padded.data.width() == 224);
  for (int c = 0; c < 2; ++c) {
    CHECK((padded.data.plane(c).topLeftCorner(181, 217) == s.data.plane(c)).all());
    CHECK((padded.data.plane(c).bottomRows(192 - 181) == 0.0).all());
    CHECK((padded.data.plane(c).rightCols(224 - 217) == 0.0).all());
  }
}

TEST_CASE("crop after pad is the identity for all extents up to 64") {
  std::mt19937_64 rng(17);
  for (int trial = 0; trial < 120; ++trial) {
    std::uniform_int_distribution<int> ext(1, 64);
    std::uniform_int_distribution<int> mult(1, 32);
    SliceStack s;
    s.data = testing::random_tensor(2, ext(rng), ext(rng), rng);
    s.crop_record = {s.data.height(), s.data.width()};
    const SliceStack round = crop_to_record(pad_to_multiple(s, mult(rng)));
    REQUIRE(round.data.same_shape(s.data));
    CHECK((round.data.array() == s.data.array()).all());
  }
}

TEST_CASE("nifti round trip preserves volumes and spacing") {
  TempDir tmp("nifti");
  std::mt19937_64 rng(23);
  std::uniform_real_distribution<double> dist(-4, 9);
  VolumeF v(5, 7, 6);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) {
    v.array()[i] = static_cast<float>(dist(rng));  // float32 representable
  }
  v.spacing = std::array<double, 3>{2.0, 1.0, 0.5};
  SUBCASE("gzipped") {
    write_volume_nifti(tmp.sub("v.nii.gz"), v);
    const VolumeF back = read_volume_nifti(tmp.sub("v.nii.gz"));
    REQUIRE(back.shape() == v.shape());
    CHECK((back.array() == v.array()).all());
    REQUIRE(back.spacing.has_value());
    CHECK((*back.spacing)[0] == doctest::Approx(2.0));
    CHECK((*back.spacing)[2] == doctest::Approx(0.5));
  }
  SUBCASE("plain") {
    write_volume_nifti(tmp.sub("v.nii"), v);
    const VolumeF back = read_volume_nifti(tmp.sub("v.nii"));
    CHECK((back.array() == v.array()).all());
  }
}

TEST_CASE("mask io validates binarity") {
  TempDir tmp("mask");
  std::mt19937_64 rng(29);
  const MaskVolume m = testing::random_mask(6, 5, 4, rng);
  write_mask_nifti(tmp.sub("m.nii.gz"), m);
  const MaskVolume back = read_mask_nifti(tmp.sub("m.nii.gz"));
  CHECK((back.array() == m.array()).all());
  // a float volume with non-binary values must be rejected as a mask
  VolumeF v(2, 2, 2, 0.5);
  write_volume_nifti(tmp.sub("bad.nii.gz"), v);
  CHECK_THROWS_AS(read_mask_nifti(tmp.sub("bad.nii.gz")), std::runtime_error);
}

TEST_CASE("raw+json sidecar round trip, volumes and fields") {
  TempDir tmp("raw");
  std::mt19937_64 rng(31);
  VolumeF v(4, 5, 6);
  for (Eigen::Index i = 0; i < v.voxels(); ++i) {
    v.array()[i] = static_cast<float>(i) * 0.25f;
  }
  write_volume_raw(tmp.sub("v"), v);
  const VolumeF back = read_volume_raw(tmp.sub("v"));
  CHECK((back.array() == v.array()).all());

  TensorF field = testing::random_tensor(2, 5, 4, rng);
  for (Eigen::Index i = 0; i < field.size(); ++i) {
    field.array()[i] = static_cast<float>(field.array()[i]);
  }
  write_field2_raw(tmp.sub("f"), field);
  const TensorF fback = read_field2_raw(tmp.sub("f"));
  CHECK((fback.array() == field.array()).all());
}

}  // TEST_SUITE
