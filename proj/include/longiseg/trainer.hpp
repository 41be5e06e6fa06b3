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

/// Training loop for all model variants.
///
/// One slice sampler mixes all three plane orientations into a single model
/// with shared weights. Optimization is Adam with the AMSGrad correction.
/// One logical training thread owns the model, the optimizer and a single
/// RNG, so runs are bit-reproducible given the seed; the RNG state travels
/// with every checkpoint.

#pragma once

#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "longiseg/losses.hpp"
#include "longiseg/metrics.hpp"
#include "longiseg/nn/adam.hpp"
#include "longiseg/nn/checkpoint.hpp"
#include "longiseg/nn/model.hpp"
#include "longiseg/volume.hpp"

namespace longiseg {

enum class SliceSampling { all, lesion_biased };

const char* to_string(SliceSampling s);
SliceSampling sampling_from_string(const std::string& name);

struct TrainConfig {
  nn::ModelVariant variant = nn::ModelVariant::MultitaskLongitudinal;
  nn::BackboneConfig backbone;
  LossConfig loss;
  double learning_rate = 1e-4;
  int batch_size = 8;
  int epochs = 4;
  int steps_per_epoch = 0;  // 0: one pass worth of slices per epoch
  std::uint64_t seed = 0;
  int val_every = 1;  // epochs between validations
  SliceSampling slice_sampling = SliceSampling::lesion_biased;
  double threshold = 0.5;  // tau for validation metrics

  void validate() const;
  std::string to_json() const;
  static TrainConfig from_json(const std::string& text);
};

struct SliceDraw {
  int subject = 0;
  SlicePlane plane = SlicePlane::axial;
  int index = 0;
};

/// Deterministic sampler over (subject, plane, index). Mode `all` draws
/// uniformly over that domain; `lesion_biased` constrains half of the draws
/// to slices intersecting the reference ground-truth mask.
class SliceSampler {
 public:
  SliceSampler(const std::vector<LongitudinalSample>& dataset, SliceSampling mode);

  SliceDraw draw(std::mt19937_64& rng) const;
  long domain_size() const { return static_cast<long>(all_.size()); }
  long lesion_domain_size() const { return static_cast<long>(lesion_.size()); }

 private:
  SliceSampling mode_;
  std::vector<SliceDraw> all_;
  std::vector<SliceDraw> lesion_;
};

struct StepRecord {
  long step = 0;
  double total = 0, seg = 0, sim = 0, smooth = 0;
};

struct ValRecord {
  int epoch = 0;
  long step = 0;
  MetricReport report;
};

struct TrainHistory {
  std::vector<StepRecord> steps;
  std::vector<ValRecord> validations;
  double started_unix = 0, finished_unix = 0;

  /// step,L_total,L_seg,L_sim,L_smooth — deliberately timestamp-free so two
  /// identically seeded runs produce identical files.
  std::string to_csv() const;
  std::string validations_to_csv() const;
};

/// 2.5D validation: full inference per subject, metrics averaged per subject.
MetricReport validate_model(nn::Model& model,
                            const std::vector<LongitudinalSample>& split,
                            double tau,
                            std::vector<MetricReport>* per_subject = nullptr);

class Trainer {
 public:
  Trainer(std::vector<LongitudinalSample> train_split,
          std::vector<LongitudinalSample> val_split, const TrainConfig& cfg);

  /// One optimization step over a fresh batch. Throws std::runtime_error on a
  /// non-finite loss, before the parameters are touched.
  StepRecord step();

  MetricReport validate(std::vector<MetricReport>* per_subject = nullptr);

  void save_checkpoint(const std::string& path) const;
  /// Restores weights, optimizer moments, step counters and RNG state; the
  /// stored variant/backbone must match this trainer's config.
  void resume_from(const std::string& path);

  /// Full loop: epochs x steps_per_epoch with periodic validation; writes
  /// checkpoints/{best,last}.ckpt, history.csv and val_history.csv under
  /// out_dir (pass "" to keep everything in memory). On divergence the last
  /// finite state is saved before the error propagates.
  struct RunResult {
    std::string best_checkpoint, last_checkpoint;
    double best_val_overall = -1;
  };
  RunResult run(const std::string& out_dir);

  nn::Model& model() { return model_; }
  const TrainConfig& config() const { return cfg_; }
  int steps_per_epoch() const;
  long step_index() const { return step_; }
  int epoch_index() const { return epoch_; }
  const TrainHistory& history() const { return history_; }
  const std::vector<LongitudinalSample>& train_split() const { return train_; }

 private:
  std::vector<LongitudinalSample> train_, val_;
  TrainConfig cfg_;
  nn::Model model_;
  nn::Adam adam_;
  SliceSampler sampler_;
  std::mt19937_64 rng_;
  long step_ = 0;
  int epoch_ = 0;
  double best_val_ = -1;
  TrainHistory history_;
};

}  // namespace longiseg
