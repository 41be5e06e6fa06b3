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

#include "longiseg/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <stdexcept>

namespace longiseg {

namespace {

constexpr double kT1TissueLevel = 0.70;
constexpr double kFlairTissueLevel = 0.45;
constexpr double kTextureGridSpacing = 8.0;
constexpr double kFieldGridSpacing = 16.0;

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

std::mt19937_64 stream_rng(std::uint64_t seed, int subject, int stream) {
  std::uint64_t s = splitmix64(seed ^ 0x6c6f6e6769736567ull);
  s = splitmix64(s + static_cast<std::uint64_t>(subject) * 0x100000001b3ull);
  s = splitmix64(s + static_cast<std::uint64_t>(stream));
  return std::mt19937_64(s);
}

/// Low-resolution random grid, trilinearly upsampled to full resolution.
VolumeF smooth_noise(const std::array<int, 3>& shape, double grid_spacing,
                     std::mt19937_64& rng) {
  const int gd = static_cast<int>(std::ceil(shape[0] / grid_spacing)) + 2;
  const int gh = static_cast<int>(std::ceil(shape[1] / grid_spacing)) + 2;
  const int gw = static_cast<int>(std::ceil(shape[2] / grid_spacing)) + 2;
  VolumeF grid(gd, gh, gw);
  std::normal_distribution<double> normal(0.0, 1.0);
  for (Eigen::Index i = 0; i < grid.voxels(); ++i) grid.array()[i] = normal(rng);

  VolumeF out(shape[0], shape[1], shape[2]);
  auto sample = [&](double d, double h, double w) {
    const int d0 = static_cast<int>(d), h0 = static_cast<int>(h), w0 = static_cast<int>(w);
    const double fd = d - d0, fh = h - h0, fw = w - w0;
    double v = 0;
    for (int a = 0; a < 2; ++a)
      for (int b = 0; b < 2; ++b)
        for (int c = 0; c < 2; ++c) {
          const double wgt = (a ? fd : 1 - fd) * (b ? fh : 1 - fh) * (c ? fw : 1 - fw);
          v += wgt * grid(std::min(d0 + a, gd - 1), std::min(h0 + b, gh - 1),
                          std::min(w0 + c, gw - 1));
        }
    return v;
  };
  for (int d = 0; d < shape[0]; ++d)
    for (int h = 0; h < shape[1]; ++h)
      for (int w = 0; w < shape[2]; ++w)
        out(d, h, w) = sample(d / grid_spacing, h / grid_spacing, w / grid_spacing);
  return out;
}

enum class LesionChange { grow, shrink, appear, disappear, stay };

struct Lesion {
  std::array<double, 3> center;
  std::array<double, 3> axis_scale;  // per-axis anisotropy
  double radius_ti = 0;
  double radius_tj = 0;
  LesionChange change = LesionChange::stay;

  bool present_ti() const { return change != LesionChange::appear; }
  bool present_tj() const { return change != LesionChange::disappear; }
};

bool inside_lesion(const Lesion& l, double radius, int d, int h, int w) {
  if (radius <= 0) return false;
  const double a = (d - l.center[0]) / (radius * l.axis_scale[0]);
  const double b = (h - l.center[1]) / (radius * l.axis_scale[1]);
  const double c = (w - l.center[2]) / (radius * l.axis_scale[2]);
  return a * a + b * b + c * c <= 1.0;
}

LesionChange draw_change(const ChangeProfile& p, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  const double x = u(rng);
  double acc = p.grow;
  if (x < acc) return LesionChange::grow;
  acc += p.shrink;
  if (x < acc) return LesionChange::shrink;
  acc += p.appear;
  if (x < acc) return LesionChange::appear;
  acc += p.disappear;
  if (x < acc) return LesionChange::disappear;
  return LesionChange::stay;
}

std::string config_echo(const SynthConfig& cfg) {
  std::ostringstream os;
  os << "shape=(" << cfg.shape[0] << "," << cfg.shape[1] << "," << cfg.shape[2]
     << ") lesion_count_range=[" << cfg.lesion_count_range[0] << ","
     << cfg.lesion_count_range[1] << "] lesion_radius_range_vox=["
     << cfg.lesion_radius_range_vox[0] << "," << cfg.lesion_radius_range_vox[1]
     << "]";
  return os.str();
}

}  // namespace

void SynthConfig::validate() const {
  for (int i = 0; i < 3; ++i) {
    if (shape[i] < 8) throw std::invalid_argument("shape: each axis must be >= 8");
  }
  if (n_subjects < 1) throw std::invalid_argument("n_subjects: must be >= 1");
  if (lesion_count_range[0] < 0 || lesion_count_range[1] < lesion_count_range[0]) {
    throw std::invalid_argument("lesion_count_range: need 0 <= min <= max");
  }
  if (lesion_radius_range_vox[0] < 1.0 ||
      lesion_radius_range_vox[1] < lesion_radius_range_vox[0]) {
    throw std::invalid_argument("lesion_radius_range_vox: need 1 <= min <= max");
  }
  if (distractor_count_range[0] < 0 ||
      distractor_count_range[1] < distractor_count_range[0]) {
    throw std::invalid_argument("distractor_count_range: need 0 <= min <= max");
  }
  const auto& p = change_profile;
  if (p.grow < 0 || p.shrink < 0 || p.appear < 0 || p.disappear < 0 || p.stay < 0) {
    throw std::invalid_argument("change_profile: fractions must be >= 0");
  }
  if (std::abs(p.sum() - 1.0) > 1e-9) {
    throw std::invalid_argument("change_profile: fractions must sum to 1, got " +
                                std::to_string(p.sum()));
  }
  if (noise_sigma < 0) throw std::invalid_argument("noise_sigma: must be >= 0");
  if (warp_amplitude_vox < 0) {
    throw std::invalid_argument("warp_amplitude_vox: must be >= 0");
  }
  if (tissue_contrast < 0) throw std::invalid_argument("tissue_contrast: must be >= 0");
  if (lesion_hyperintensity < 0) {
    throw std::invalid_argument("lesion_hyperintensity: must be >= 0");
  }
}

VolumeF warp_volume_trilinear(const VolumeF& v, const std::array<VolumeF, 3>& field) {
  for (const auto& c : field) {
    if (!c.same_shape(v)) {
      throw std::invalid_argument("warp_volume_trilinear: field shape mismatch");
    }
  }
  const auto [D, H, W] = v.shape();
  VolumeF out(D, H, W);
  for (int d = 0; d < D; ++d) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        const double rd = std::clamp(d + field[0](d, h, w), 0.0, double(D - 1));
        const double rh = std::clamp(h + field[1](d, h, w), 0.0, double(H - 1));
        const double rw = std::clamp(w + field[2](d, h, w), 0.0, double(W - 1));
        const int d0 = static_cast<int>(std::floor(rd));
        const int h0 = static_cast<int>(std::floor(rh));
        const int w0 = static_cast<int>(std::floor(rw));
        const int d1 = std::min(d0 + 1, D - 1);
        const int h1 = std::min(h0 + 1, H - 1);
        const int w1 = std::min(w0 + 1, W - 1);
        const double fd = rd - d0, fh = rh - h0, fw = rw - w0;
        double acc = 0;
        for (int a = 0; a < 2; ++a)
          for (int b = 0; b < 2; ++b)
            for (int c = 0; c < 2; ++c) {
              const double wgt =
                  (a ? fd : 1 - fd) * (b ? fh : 1 - fh) * (c ? fw : 1 - fw);
              acc += wgt * v(a ? d1 : d0, b ? h1 : h0, c ? w1 : w0);
            }
        out(d, h, w) = acc;
      }
    }
  }
  return out;
}

double mean_squared_error(const VolumeF& a, const VolumeF& b) {
  if (!a.same_shape(b)) throw std::invalid_argument("mean_squared_error: shape mismatch");
  return (a.array() - b.array()).square().mean();
}

double BrainEllipsoid::norm_sq(double d, double h, double w) const {
  const double a = (d - center[0]) / semi_axes[0];
  const double b = (h - center[1]) / semi_axes[1];
  const double c = (w - center[2]) / semi_axes[2];
  return a * a + b * b + c * c;
}

BrainEllipsoid brain_ellipsoid(const std::array<int, 3>& shape) {
  return BrainEllipsoid{{shape[0] / 2.0, shape[1] / 2.0, shape[2] / 2.0},
                        {0.42 * shape[0], 0.40 * shape[1], 0.38 * shape[2]}};
}

DatasetSplit split_subjects(int n_subjects) {
  if (n_subjects < 3) {
    throw std::invalid_argument(
        "n_subjects: need at least 3 subjects for a train/val/test split");
  }
  const int n_val = std::max(1, static_cast<int>(std::llround(n_subjects / 7.0)));
  const int n_train = std::max(1, static_cast<int>(std::llround(3.0 * n_subjects / 7.0)));
  const int n_test = n_subjects - n_train - n_val;
  if (n_test < 1) {
    throw std::invalid_argument("n_subjects: too small for a 3:1:3 split");
  }
  DatasetSplit s;
  for (int i = 0; i < n_train; ++i) s.train.push_back(i);
  for (int i = n_train; i < n_train + n_val; ++i) s.val.push_back(i);
  for (int i = n_train + n_val; i < n_subjects; ++i) s.test.push_back(i);
  return s;
}

SubjectWithNoiseless generate_subject_detailed(const SynthConfig& cfg,
                                               int subject_index) {
  cfg.validate();
  const auto [D, H, W] = cfg.shape;

  auto geom_rng = stream_rng(cfg.seed, subject_index, 1);
  auto field_rng = stream_rng(cfg.seed, subject_index, 2);
  auto tex_rng = stream_rng(cfg.seed, subject_index, 3);
  auto noise_rng = stream_rng(cfg.seed, subject_index, 4);

  const BrainEllipsoid brain = brain_ellipsoid(cfg.shape);
  const double min_semi = *std::min_element(brain.semi_axes.begin(), brain.semi_axes.end());

  // Lesions: centers kept far enough inside that the largest possible final
  // extent still lies strictly inside the brain ellipsoid.
  std::uniform_int_distribution<int> count_dist(cfg.lesion_count_range[0],
                                                cfg.lesion_count_range[1]);
  std::uniform_real_distribution<double> radius_dist(cfg.lesion_radius_range_vox[0],
                                                     cfg.lesion_radius_range_vox[1]);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::uniform_real_distribution<double> aniso(0.8, 1.2);
  std::uniform_real_distribution<double> grow_dist(1.3, 1.6);
  std::uniform_real_distribution<double> shrink_dist(0.45, 0.7);

  std::vector<Lesion> blobs;  // true lesions first, then stable distractors
  auto place_blob = [&](Lesion l) {
    const double max_extent =
        1.2 * std::max(l.radius_ti, l.radius_tj) + cfg.warp_amplitude_vox + 0.6;
    const double max_center_norm = 0.97 - max_extent / min_semi;
    if (max_center_norm <= 0) {
      throw std::runtime_error("cannot place lesions: radius too large for the brain (" +
                               config_echo(cfg) + ")");
    }
    // centers are sampled directly inside the shrunken ellipsoid, so staying
    // inside the brain is guaranteed; separation is best effort (overlapping
    // blobs merely merge)
    bool placed = false;
    for (int attempt = 0; attempt < 500 && !placed; ++attempt) {
      std::array<double, 3> u;
      do {
        u = {2 * unit(geom_rng) - 1, 2 * unit(geom_rng) - 1, 2 * unit(geom_rng) - 1};
      } while (u[0] * u[0] + u[1] * u[1] + u[2] * u[2] > 1.0);
      const std::array<double, 3> c = {
          brain.center[0] + max_center_norm * u[0] * brain.semi_axes[0],
          brain.center[1] + max_center_norm * u[1] * brain.semi_axes[1],
          brain.center[2] + max_center_norm * u[2] * brain.semi_axes[2]};
      bool too_close = false;
      if (attempt < 150) {
        for (const auto& other : blobs) {
          const double dist = std::hypot(c[0] - other.center[0],
                                         c[1] - other.center[1],
                                         c[2] - other.center[2]);
          const double min_sep = 1.2 * (std::max(l.radius_ti, l.radius_tj) +
                                        std::max(other.radius_ti, other.radius_tj)) +
                                 1.8;
          if (dist < min_sep) {
            too_close = true;
            break;
          }
        }
      }
      if (!too_close) {
        l.center = c;
        placed = true;
      }
    }
    if (!placed) {
      throw std::runtime_error("cannot place lesions: no valid position after 500 "
                               "attempts (" + config_echo(cfg) + ")");
    }
    blobs.push_back(l);
  };

  const int n_lesions = count_dist(geom_rng);
  for (int k = 0; k < n_lesions; ++k) {
    Lesion l;
    l.radius_ti = radius_dist(geom_rng);
    l.axis_scale = {aniso(geom_rng), aniso(geom_rng), aniso(geom_rng)};
    l.change = draw_change(cfg.change_profile, geom_rng);
    switch (l.change) {
      case LesionChange::grow: l.radius_tj = l.radius_ti * grow_dist(geom_rng); break;
      case LesionChange::shrink:
        l.radius_tj = std::max(1.0, l.radius_ti * shrink_dist(geom_rng));
        break;
      default: l.radius_tj = l.radius_ti; break;
    }
    place_blob(l);
  }
  const std::vector<Lesion> lesions(blobs.begin(), blobs.end());

  // temporally stable look-alikes, identical in both scans, not in the masks
  std::uniform_int_distribution<int> distractor_dist(cfg.distractor_count_range[0],
                                                     cfg.distractor_count_range[1]);
  const int n_distractors = distractor_dist(geom_rng);
  for (int k = 0; k < n_distractors; ++k) {
    Lesion l;
    l.radius_ti = radius_dist(geom_rng);
    l.radius_tj = l.radius_ti;
    l.axis_scale = {aniso(geom_rng), aniso(geom_rng), aniso(geom_rng)};
    l.change = LesionChange::stay;
    place_blob(l);
  }
  const std::vector<Lesion> distractors(blobs.begin() + n_lesions, blobs.end());

  // Smooth inter-time-point field, scaled to the requested max amplitude.
  std::array<VolumeF, 3> field{VolumeF(D, H, W), VolumeF(D, H, W), VolumeF(D, H, W)};
  if (cfg.warp_amplitude_vox > 0) {
    for (int c = 0; c < 3; ++c) {
      field[c] = smooth_noise(cfg.shape, kFieldGridSpacing, field_rng);
    }
    double max_norm = 0;
    for (Eigen::Index i = 0; i < field[0].voxels(); ++i) {
      const double n = std::sqrt(field[0].array()[i] * field[0].array()[i] +
                                 field[1].array()[i] * field[1].array()[i] +
                                 field[2].array()[i] * field[2].array()[i]);
      max_norm = std::max(max_norm, n);
    }
    if (max_norm > 0) {
      for (int c = 0; c < 3; ++c) {
        field[c].array() *= cfg.warp_amplitude_vox / max_norm;
      }
    }
  }

  // Tissue rendering. The follow-up (tj) tissue is the base; the reference
  // (ti) tissue is its pull-warp by the field, so warp(tj, field) == ti on
  // lesion-free anatomy by construction.
  const VolumeF texture = smooth_noise(cfg.shape, kTextureGridSpacing, tex_rng);
  VolumeF t1_tj(D, H, W), flair_tj(D, H, W);
  for (int d = 0; d < D; ++d) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        if (brain.norm_sq(d, h, w) <= 1.0) {
          const double tex = cfg.tissue_contrast * texture(d, h, w);
          t1_tj(d, h, w) = kT1TissueLevel + tex;
          flair_tj(d, h, w) = kFlairTissueLevel + 0.8 * tex;
        } else {
          t1_tj(d, h, w) = cfg.background_level;
          flair_tj(d, h, w) = cfg.background_level;
        }
      }
    }
  }
  VolumeF t1_ti = cfg.warp_amplitude_vox > 0 ? warp_volume_trilinear(t1_tj, field) : t1_tj;
  VolumeF flair_ti =
      cfg.warp_amplitude_vox > 0 ? warp_volume_trilinear(flair_tj, field) : flair_tj;

  // Exact masks, then lesion intensity stamped per time-point.
  MaskVolume mask_ti(D, H, W), mask_tj(D, H, W);
  for (int d = 0; d < D; ++d) {
    for (int h = 0; h < H; ++h) {
      for (int w = 0; w < W; ++w) {
        for (const auto& l : lesions) {
          if (l.present_ti() && inside_lesion(l, l.radius_ti, d, h, w)) {
            mask_ti(d, h, w) = 1;
          }
          if (l.present_tj() && inside_lesion(l, l.radius_tj, d, h, w)) {
            mask_tj(d, h, w) = 1;
          }
        }
      }
    }
  }
  // distractor region, shared by both time-points
  MaskVolume distractor_region(D, H, W);
  for (int d = 0; d < D; ++d)
    for (int h = 0; h < H; ++h)
      for (int w = 0; w < W; ++w)
        for (const auto& l : distractors)
          if (inside_lesion(l, l.radius_ti, d, h, w)) distractor_region(d, h, w) = 1;

  auto stamp = [&](VolumeF& t1, VolumeF& flair, const MaskVolume& mask) {
    for (Eigen::Index i = 0; i < mask.voxels(); ++i) {
      if (mask.array()[i] || distractor_region.array()[i]) {
        flair.array()[i] += cfg.lesion_hyperintensity;
        t1.array()[i] -= 0.5 * cfg.lesion_hyperintensity;
      }
    }
  };
  stamp(t1_ti, flair_ti, mask_ti);
  stamp(t1_tj, flair_tj, mask_tj);

  SubjectWithNoiseless out;
  out.t1_ti_clean = t1_ti;
  out.flair_ti_clean = flair_ti;
  out.t1_tj_clean = t1_tj;
  out.flair_tj_clean = flair_tj;
  out.distractor_region = distractor_region;

  // i.i.d. noise inside the brain; background stays exactly at its level.
  if (cfg.noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, cfg.noise_sigma);
    for (VolumeF* v : {&t1_ti, &flair_ti, &t1_tj, &flair_tj}) {
      for (int d = 0; d < D; ++d)
        for (int h = 0; h < H; ++h)
          for (int w = 0; w < W; ++w)
            if (brain.norm_sq(d, h, w) <= 1.0) (*v)(d, h, w) += noise(noise_rng);
    }
  }

  LongitudinalSample& s = out.sample;
  s.subject_id = subject_name(subject_index);
  s.t1_ti = std::move(t1_ti);
  s.flair_ti = std::move(flair_ti);
  s.t1_tj = std::move(t1_tj);
  s.flair_tj = std::move(flair_tj);
  s.gt_mask_ti = std::move(mask_ti);
  s.gt_mask_tj = std::move(mask_tj);
  s.gt_field = std::move(field);
  s.check_consistent();
  return out;
}

LongitudinalSample generate_subject(const SynthConfig& cfg, int subject_index) {
  return generate_subject_detailed(cfg, subject_index).sample;
}

GeneratedDataset generate_dataset(const SynthConfig& cfg) {
  cfg.validate();
  GeneratedDataset out;
  out.split = split_subjects(cfg.n_subjects);
  out.samples.reserve(cfg.n_subjects);
  for (int i = 0; i < cfg.n_subjects; ++i) {
    out.samples.push_back(generate_subject(cfg, i));
  }
  return out;
}

}  // namespace longiseg
