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

/// Versioned checkpoint container: variant + backbone config + weights +
/// optimizer moments + step counters + RNG state. Loading against a
/// mismatched config is an error, never a silent reshape.

#pragma once

#include <optional>
#include <string>

#include "longiseg/nn/adam.hpp"
#include "longiseg/nn/model.hpp"

namespace longiseg::nn {

struct CheckpointMeta {
  int epoch = 0;
  long step = 0;
  std::string rng_state;  // serialized mt19937_64 stream
  double best_val_overall = -1.0;
};

void save_checkpoint(const std::string& path, const Model& model,
                     const Adam* optimizer, const CheckpointMeta& meta);

struct LoadedCheckpoint {
  Model model;
  CheckpointMeta meta;
  long adam_step = 0;
  std::vector<Adam::Moments> adam_moments;  // empty if none stored
  bool has_optimizer = false;
};

/// When `expected` is given, the stored variant/backbone must match exactly.
LoadedCheckpoint load_checkpoint(
    const std::string& path,
    const std::optional<std::pair<ModelVariant, BackboneConfig>>& expected =
        std::nullopt);

}  // namespace longiseg::nn
