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

#include "longiseg/dataset.hpp"

#include <filesystem>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

#include "longiseg/volume_io.hpp"

namespace fs = std::filesystem;

namespace longiseg {

namespace {

nlohmann::json synth_config_to_json(const SynthConfig& c) {
  return nlohmann::json{
      {"shape", c.shape},
      {"n_subjects", c.n_subjects},
      {"lesion_count_range", c.lesion_count_range},
      {"lesion_radius_range_vox", c.lesion_radius_range_vox},
      {"distractor_count_range", c.distractor_count_range},
      {"change_profile",
       {{"grow", c.change_profile.grow},
        {"shrink", c.change_profile.shrink},
        {"appear", c.change_profile.appear},
        {"disappear", c.change_profile.disappear},
        {"static", c.change_profile.stay}}},
      {"background_level", c.background_level},
      {"tissue_contrast", c.tissue_contrast},
      {"lesion_hyperintensity", c.lesion_hyperintensity},
      {"noise_sigma", c.noise_sigma},
      {"warp_amplitude_vox", c.warp_amplitude_vox},
      {"seed", c.seed}};
}

SynthConfig synth_config_from_json(const nlohmann::json& j) {
  SynthConfig c;
  if (j.contains("shape")) c.shape = j.at("shape").get<std::array<int, 3>>();
  if (j.contains("n_subjects")) c.n_subjects = j.at("n_subjects").get<int>();
  if (j.contains("lesion_count_range")) {
    c.lesion_count_range = j.at("lesion_count_range").get<std::array<int, 2>>();
  }
  if (j.contains("lesion_radius_range_vox")) {
    c.lesion_radius_range_vox =
        j.at("lesion_radius_range_vox").get<std::array<double, 2>>();
  }
  if (j.contains("distractor_count_range")) {
    c.distractor_count_range = j.at("distractor_count_range").get<std::array<int, 2>>();
  }
  if (j.contains("change_profile")) {
    const auto& p = j.at("change_profile");
    c.change_profile.grow = p.value("grow", 0.0);
    c.change_profile.shrink = p.value("shrink", 0.0);
    c.change_profile.appear = p.value("appear", 0.0);
    c.change_profile.disappear = p.value("disappear", 0.0);
    c.change_profile.stay = p.value("static", 0.0);
  }
  if (j.contains("background_level")) c.background_level = j.at("background_level").get<double>();
  if (j.contains("tissue_contrast")) c.tissue_contrast = j.at("tissue_contrast").get<double>();
  if (j.contains("lesion_hyperintensity")) {
    c.lesion_hyperintensity = j.at("lesion_hyperintensity").get<double>();
  }
  if (j.contains("noise_sigma")) c.noise_sigma = j.at("noise_sigma").get<double>();
  if (j.contains("warp_amplitude_vox")) {
    c.warp_amplitude_vox = j.at("warp_amplitude_vox").get<double>();
  }
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  return c;
}

}  // namespace

SynthConfig parse_synth_config(const std::string& json_text) {
  return synth_config_from_json(nlohmann::json::parse(json_text));
}

std::string synth_config_json(const SynthConfig& cfg) {
  return synth_config_to_json(cfg).dump(2);
}

const char* to_string(SplitName s) {
  switch (s) {
    case SplitName::train: return "train";
    case SplitName::val: return "val";
    case SplitName::test: return "test";
  }
  return "?";
}

SplitName split_from_string(const std::string& name) {
  if (name == "train") return SplitName::train;
  if (name == "val") return SplitName::val;
  if (name == "test") return SplitName::test;
  throw std::invalid_argument("unknown split '" + name + "' (train|val|test)");
}

const std::vector<std::string>& DatasetManifest::split(SplitName s) const {
  switch (s) {
    case SplitName::train: return train;
    case SplitName::val: return val;
    default: return test;
  }
}

DatasetManifest write_dataset(const std::string& root, const SynthConfig& cfg) {
  cfg.validate();
  const DatasetSplit split = split_subjects(cfg.n_subjects);
  fs::create_directories(root);

  DatasetManifest manifest;
  manifest.config = cfg;
  manifest.n_subjects = cfg.n_subjects;
  for (int i : split.train) manifest.train.push_back(subject_name(i));
  for (int i : split.val) manifest.val.push_back(subject_name(i));
  for (int i : split.test) manifest.test.push_back(subject_name(i));

  for (int i = 0; i < cfg.n_subjects; ++i) {
    const LongitudinalSample s = generate_subject(cfg, i);
    const fs::path dir = fs::path(root) / s.subject_id;
    fs::create_directories(dir / "t0");
    fs::create_directories(dir / "t1");
    write_volume_nifti((dir / "t0" / "T1.nii.gz").string(), s.t1_ti);
    write_volume_nifti((dir / "t0" / "FLAIR.nii.gz").string(), s.flair_ti);
    write_volume_nifti((dir / "t1" / "T1.nii.gz").string(), s.t1_tj);
    write_volume_nifti((dir / "t1" / "FLAIR.nii.gz").string(), s.flair_tj);
    write_mask_nifti((dir / "gt_mask_t0.nii.gz").string(), s.gt_mask_ti);
    if (s.gt_mask_tj) {
      write_mask_nifti((dir / "gt_mask_t1.nii.gz").string(), *s.gt_mask_tj);
    }
    if (s.gt_field) {
      write_field3_raw((dir / "gt_field").string(), *s.gt_field);
    }
  }

  nlohmann::json j;
  j["format"] = 1;
  j["config"] = synth_config_to_json(cfg);
  j["n_subjects"] = cfg.n_subjects;
  j["split"] = {{"train", manifest.train}, {"val", manifest.val},
                {"test", manifest.test}};
  std::ofstream out(fs::path(root) / "manifest.json");
  if (!out) throw std::runtime_error("cannot write dataset manifest in " + root);
  out << j.dump(2) << "\n";
  return manifest;
}

DatasetManifest read_manifest(const std::string& root) {
  const fs::path path = fs::path(root) / "manifest.json";
  std::ifstream in(path);
  if (!in) {
    throw std::runtime_error("no dataset manifest at " + path.string());
  }
  nlohmann::json j;
  in >> j;
  DatasetManifest m;
  m.config = synth_config_from_json(j.at("config"));
  m.n_subjects = j.at("n_subjects").get<int>();
  m.train = j.at("split").at("train").get<std::vector<std::string>>();
  m.val = j.at("split").at("val").get<std::vector<std::string>>();
  m.test = j.at("split").at("test").get<std::vector<std::string>>();
  return m;
}

LongitudinalSample load_sample(const std::string& root, const std::string& subject,
                               bool with_field) {
  const fs::path dir = fs::path(root) / subject;
  LongitudinalSample s;
  s.subject_id = subject;
  s.t1_ti = read_volume_nifti((dir / "t0" / "T1.nii.gz").string());
  s.flair_ti = read_volume_nifti((dir / "t0" / "FLAIR.nii.gz").string());
  s.t1_tj = read_volume_nifti((dir / "t1" / "T1.nii.gz").string());
  s.flair_tj = read_volume_nifti((dir / "t1" / "FLAIR.nii.gz").string());
  s.gt_mask_ti = read_mask_nifti((dir / "gt_mask_t0.nii.gz").string());
  if (fs::exists(dir / "gt_mask_t1.nii.gz")) {
    s.gt_mask_tj = read_mask_nifti((dir / "gt_mask_t1.nii.gz").string());
  }
  if (with_field && fs::exists(dir / "gt_field.json")) {
    s.gt_field = read_field3_raw((dir / "gt_field").string());
  }
  s.check_consistent();
  return s;
}

void normalize_sample(LongitudinalSample& s) {
  s.t1_ti = normalize_volume(s.t1_ti);
  s.flair_ti = normalize_volume(s.flair_ti);
  s.t1_tj = normalize_volume(s.t1_tj);
  s.flair_tj = normalize_volume(s.flair_tj);
}

std::vector<LongitudinalSample> load_split(const std::string& root, SplitName split,
                                           bool normalize) {
  const DatasetManifest manifest = read_manifest(root);
  std::vector<LongitudinalSample> out;
  for (const auto& subject : manifest.split(split)) {
    LongitudinalSample s = load_sample(root, subject);
    if (normalize) normalize_sample(s);
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace longiseg
