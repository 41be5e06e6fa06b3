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
#include <set>

#include "longiseg/dataset.hpp"
#include "longiseg/synthgen.hpp"
#include "test_helpers.hpp"

using namespace longiseg;
using longiseg::testing::TempDir;

namespace {

SynthConfig small_config() {
  SynthConfig cfg;
  cfg.shape = {32, 32, 32};
  cfg.n_subjects = 3;
  cfg.lesion_count_range = {2, 3};
  cfg.lesion_radius_range_vox = {1.5, 2.2};
  cfg.warp_amplitude_vox = 1.0;
  cfg.noise_sigma = 0.03;
  cfg.seed = 11;
  return cfg;
}

}  // namespace

TEST_SUITE("synthgen") {

TEST_CASE("same config and subject index give bitwise-identical samples") {
  const SynthConfig cfg = small_config();
  const LongitudinalSample a = generate_subject(cfg, 1);
  const LongitudinalSample b = generate_subject(cfg, 1);
  CHECK((a.t1_ti.array() == b.t1_ti.array()).all());
  CHECK((a.flair_ti.array() == b.flair_ti.array()).all());
  CHECK((a.t1_tj.array() == b.t1_tj.array()).all());
  CHECK((a.flair_tj.array() == b.flair_tj.array()).all());
  CHECK((a.gt_mask_ti.array() == b.gt_mask_ti.array()).all());
  CHECK((a.gt_mask_tj->array() == b.gt_mask_tj->array()).all());
  for (int c = 0; c < 3; ++c) {
    CHECK(((*a.gt_field)[c].array() == (*b.gt_field)[c].array()).all());
  }
  const LongitudinalSample other = generate_subject(cfg, 2);
  CHECK_FALSE((a.flair_ti.array() == other.flair_ti.array()).all());
}

TEST_CASE("degenerate config makes both time-points identical") {
  SynthConfig cfg = small_config();
  cfg.warp_amplitude_vox = 0.0;
  cfg.noise_sigma = 0.0;
  cfg.change_profile = ChangeProfile{0.0, 0.0, 0.0, 0.0, 1.0};
  const LongitudinalSample s = generate_subject(cfg, 0);
  CHECK((s.t1_ti.array() == s.t1_tj.array()).all());
  CHECK((s.flair_ti.array() == s.flair_tj.array()).all());
  CHECK((s.gt_mask_ti.array() == s.gt_mask_tj->array()).all());
  for (int c = 0; c < 3; ++c) CHECK(((*s.gt_field)[c].array() == 0.0).all());
}

TEST_CASE("warping the follow-up by gt_field reproduces the reference anatomy") {
  // gt_field explains the anatomy, not the lesion change, so the comparison
  // excludes the (dilated) union of the two lesion masks
  const SynthConfig cfg = small_config();
  const SubjectWithNoiseless s = generate_subject_detailed(cfg, 0);
  const VolumeF warped = warp_volume_trilinear(s.flair_tj_clean, *s.sample.gt_field);

  const int dilate = static_cast<int>(std::ceil(cfg.warp_amplitude_vox)) + 1;
  const auto [D, H, W] = cfg.shape;
  auto near_lesion = [&](int d, int h, int w) {
    for (int dd = -dilate; dd <= dilate; ++dd)
      for (int dh = -dilate; dh <= dilate; ++dh)
        for (int dw = -dilate; dw <= dilate; ++dw) {
          const int nd = d + dd, nh = h + dh, nw = w + dw;
          if (nd < 0 || nd >= D || nh < 0 || nh >= H || nw < 0 || nw >= W) continue;
          if (s.sample.gt_mask_ti(nd, nh, nw) || (*s.sample.gt_mask_tj)(nd, nh, nw) ||
              s.distractor_region(nd, nh, nw)) {
            return true;
          }
        }
    return false;
  };
  double mse_warped = 0, mse_unwarped = 0;
  long n = 0;
  for (int d = 0; d < D; ++d)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w) {
        if (near_lesion(d, h, w)) continue;
        const double ref = s.flair_ti_clean(d, h, w);
        mse_warped += std::pow(warped(d, h, w) - ref, 2);
        mse_unwarped += std::pow(s.flair_tj_clean(d, h, w) - ref, 2);
        ++n;
      }
  REQUIRE(n > 0);
  mse_warped /= static_cast<double>(n);
  mse_unwarped /= static_cast<double>(n);
  REQUIRE(mse_unwarped > 0.0);
  CHECK(mse_warped < 0.1 * mse_unwarped);
}

TEST_CASE("masks are binary and lesions lie strictly inside the brain") {
  const SynthConfig cfg = small_config();
  const BrainEllipsoid brain = brain_ellipsoid(cfg.shape);
  for (int subject = 0; subject < 3; ++subject) {
    const LongitudinalSample s = generate_subject(cfg, subject);
    CHECK(is_binary(s.gt_mask_ti));
    CHECK(is_binary(*s.gt_mask_tj));
    for (const MaskVolume* mask : {&s.gt_mask_ti, &*s.gt_mask_tj}) {
      for (int d = 0; d < 32; ++d)
        for (int h = 0; h < 32; ++h)
          for (int w = 0; w < 32; ++w)
            if ((*mask)(d, h, w)) {
              CHECK(brain.norm_sq(d, h, w) < 1.0);
            }
    }
  }
}

TEST_CASE("lesion voxel counts stay within the configured envelope") {
  SynthConfig cfg = small_config();
  cfg.change_profile = ChangeProfile{0.0, 0.0, 0.0, 0.0, 1.0};  // all stay
  const LongitudinalSample s = generate_subject(cfg, 1);
  const long count = static_cast<long>(s.gt_mask_ti.array().cast<long>().sum());
  // every present lesion covers at least its center voxel
  CHECK(count >= cfg.lesion_count_range[0]);
  // upper bound: max lesions at max radius, max anisotropy, loose slack
  const double rmax = cfg.lesion_radius_range_vox[1] * 1.2;
  const double ball = 4.0 / 3.0 * M_PI * rmax * rmax * rmax;
  CHECK(count <= static_cast<long>(cfg.lesion_count_range[1] * ball * 1.5));
}

TEST_CASE("noise strictly increases the aligned mean squared error") {
  SynthConfig cfg = small_config();
  cfg.change_profile = ChangeProfile{0.0, 0.0, 0.0, 0.0, 1.0};
  double previous = -1.0;
  for (double sigma : {0.0, 0.03, 0.09}) {
    cfg.noise_sigma = sigma;
    const LongitudinalSample s = generate_subject(cfg, 2);
    const VolumeF warped = warp_volume_trilinear(s.flair_tj, *s.gt_field);
    const double mse = mean_squared_error(s.flair_ti, warped);
    CHECK(mse > previous);
    previous = mse;
  }
}

TEST_CASE("impossible lesion geometry fails with a config echo") {
  SynthConfig cfg = small_config();
  cfg.lesion_radius_range_vox = {12.0, 14.0};
  CHECK_THROWS_WITH_AS(generate_subject(cfg, 0),
                       doctest::Contains("cannot place lesions"),
                       std::runtime_error);
}

TEST_CASE("split proportions follow 3:1:3") {
  SUBCASE("70 subjects -> 30/10/30") {
    const DatasetSplit s = split_subjects(70);
    CHECK(s.train.size() == 30);
    CHECK(s.val.size() == 10);
    CHECK(s.test.size() == 30);
  }
  SUBCASE("7 subjects -> 3/1/3") {
    const DatasetSplit s = split_subjects(7);
    CHECK(s.train.size() == 3);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 3);
  }
  SUBCASE("14 subjects -> 6/2/6") {
    const DatasetSplit s = split_subjects(14);
    CHECK(s.train.size() == 6);
    CHECK(s.val.size() == 2);
    CHECK(s.test.size() == 6);
  }
  SUBCASE("minimum viable split") {
    const DatasetSplit s = split_subjects(3);
    CHECK(s.train.size() == 1);
    CHECK(s.val.size() == 1);
    CHECK(s.test.size() == 1);
  }
  SUBCASE("too few subjects") {
    CHECK_THROWS_AS(split_subjects(2), std::invalid_argument);
  }
}

TEST_CASE("splits are subject-disjoint and deterministic") {
  const SynthConfig cfg = small_config();
  const GeneratedDataset a = generate_dataset(cfg);
  const GeneratedDataset b = generate_dataset(cfg);
  CHECK(a.split.train == b.split.train);
  CHECK(a.split.val == b.split.val);
  CHECK(a.split.test == b.split.test);
  std::set<int> seen;
  for (const auto& part : {a.split.train, a.split.val, a.split.test}) {
    for (int i : part) CHECK(seen.insert(i).second);
  }
  CHECK(seen.size() == static_cast<size_t>(cfg.n_subjects));
}

TEST_CASE("change profile fractions must sum to one") {
  SynthConfig cfg = small_config();
  cfg.change_profile.grow = 0.5;
  cfg.change_profile.stay = 0.5;
  cfg.change_profile.shrink = 0.2;  // sums to 1.2 now
  CHECK_THROWS_WITH_AS(cfg.validate(), doctest::Contains("change_profile"),
                       std::invalid_argument);
}

TEST_CASE("dataset round trip through disk preserves content") {
  TempDir tmp("dataset");
  SynthConfig cfg = small_config();
  cfg.shape = {24, 24, 24};
  cfg.lesion_radius_range_vox = {1.2, 1.8};
  cfg.lesion_count_range = {1, 2};
  const DatasetManifest manifest = write_dataset(tmp.str(), cfg);
  CHECK(manifest.train.size() == 1);
  CHECK(manifest.val.size() == 1);
  CHECK(manifest.test.size() == 1);

  const DatasetManifest back = read_manifest(tmp.str());
  CHECK(back.train == manifest.train);
  CHECK(back.config.seed == cfg.seed);

  const LongitudinalSample generated = generate_subject(cfg, 0);
  const LongitudinalSample loaded = load_sample(tmp.str(), "subj000", true);
  // scans are stored as float32, so compare at float precision
  CHECK((loaded.t1_ti.array() - generated.t1_ti.array()).abs().maxCoeff() < 1e-6);
  CHECK((loaded.gt_mask_ti.array() == generated.gt_mask_ti.array()).all());
  REQUIRE(loaded.gt_field.has_value());
  CHECK(((*loaded.gt_field)[0].array() -
         (*generated.gt_field)[0].array()).abs().maxCoeff() < 1e-6);
}

}  // TEST_SUITE
