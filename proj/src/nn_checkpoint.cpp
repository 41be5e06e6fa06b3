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

#include "longiseg/nn/checkpoint.hpp"

#include <cstdint>
#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace longiseg::nn {

namespace {

constexpr char kMagic[8] = {'L', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

nlohmann::json backbone_to_json(const BackboneConfig& c) {
  return nlohmann::json{{"in_channels", c.in_channels},
                        {"first_conv_channels", c.first_conv_channels},
                        {"growth_rate", c.growth_rate},
                        {"layers_per_dense_block", c.layers_per_dense_block},
                        {"n_pool", c.n_pool},
                        {"dropout_rate", c.dropout_rate},
                        {"bottleneck_layers", c.bottleneck_layers}};
}

BackboneConfig backbone_from_json(const nlohmann::json& j) {
  BackboneConfig c;
  c.in_channels = j.at("in_channels").get<int>();
  c.first_conv_channels = j.at("first_conv_channels").get<int>();
  c.growth_rate = j.at("growth_rate").get<int>();
  c.layers_per_dense_block = j.at("layers_per_dense_block").get<int>();
  c.n_pool = j.at("n_pool").get<int>();
  c.dropout_rate = j.at("dropout_rate").get<double>();
  c.bottleneck_layers = j.at("bottleneck_layers").get<int>();
  return c;
}

void write_doubles(std::ofstream& out, const Eigen::ArrayXd& a) {
  out.write(reinterpret_cast<const char*>(a.data()),
            static_cast<std::streamsize>(a.size() * sizeof(double)));
}

void read_doubles(std::ifstream& in, Eigen::ArrayXd& a) {
  in.read(reinterpret_cast<char*>(a.data()),
          static_cast<std::streamsize>(a.size() * sizeof(double)));
  if (!in) throw std::runtime_error("checkpoint: truncated tensor data");
}

}  // namespace

void save_checkpoint(const std::string& path, const Model& model,
                     const Adam* optimizer, const CheckpointMeta& meta) {
  nlohmann::json header;
  header["format"] = 1;
  header["variant"] = to_string(model.variant());
  header["backbone"] = backbone_to_json(model.config());
  header["epoch"] = meta.epoch;
  header["step"] = meta.step;
  header["rng_state"] = meta.rng_state;
  header["best_val_overall"] = meta.best_val_overall;
  header["has_optimizer"] = optimizer != nullptr;
  header["adam_step"] = optimizer ? optimizer->step_count() : 0;
  nlohmann::json plist = nlohmann::json::array();
  for (const auto& p : model.parameters()) {
    plist.push_back({{"name", p->name}, {"size", p->size()}});
  }
  header["params"] = plist;

  const std::string header_text = header.dump();
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  out.write(kMagic, sizeof(kMagic));
  const std::uint64_t len = header_text.size();
  out.write(reinterpret_cast<const char*>(&len), sizeof(len));
  out.write(header_text.data(), static_cast<std::streamsize>(len));
  for (const auto& p : model.parameters()) write_doubles(out, p->value);
  if (optimizer) {
    for (const auto& s : optimizer->moments()) {
      write_doubles(out, s.m);
      write_doubles(out, s.v);
      write_doubles(out, s.v_max);
    }
  }
  if (!out) throw std::runtime_error("short write to " + path);
}

LoadedCheckpoint load_checkpoint(
    const std::string& path,
    const std::optional<std::pair<ModelVariant, BackboneConfig>>& expected) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open checkpoint " + path);
  char magic[8];
  in.read(magic, sizeof(magic));
  if (!in || std::string(magic, 8) != std::string(kMagic, 8)) {
    throw std::runtime_error(path + ": not a longiseg checkpoint");
  }
  std::uint64_t len = 0;
  in.read(reinterpret_cast<char*>(&len), sizeof(len));
  std::string header_text(len, '\0');
  in.read(header_text.data(), static_cast<std::streamsize>(len));
  if (!in) throw std::runtime_error(path + ": truncated header");
  const auto header = nlohmann::json::parse(header_text);

  const ModelVariant variant =
      variant_from_string(header.at("variant").get<std::string>());
  const BackboneConfig backbone = backbone_from_json(header.at("backbone"));
  if (expected) {
    if (expected->first != variant) {
      throw std::runtime_error(path + ": checkpoint variant '" + to_string(variant) +
                               "' does not match requested '" +
                               to_string(expected->first) + "'");
    }
    if (!(expected->second == backbone)) {
      throw std::runtime_error(path +
                               ": checkpoint backbone config does not match the "
                               "requested config");
    }
  }

  LoadedCheckpoint loaded{Model(variant, backbone, /*seed=*/0), {}, 0, {}, false};
  loaded.meta.epoch = header.at("epoch").get<int>();
  loaded.meta.step = header.at("step").get<long>();
  loaded.meta.rng_state = header.at("rng_state").get<std::string>();
  loaded.meta.best_val_overall = header.at("best_val_overall").get<double>();

  const auto& plist = header.at("params");
  const auto& params = loaded.model.parameters();
  if (plist.size() != params.size()) {
    throw std::runtime_error(path + ": parameter list does not match the model");
  }
  for (size_t i = 0; i < params.size(); ++i) {
    if (plist[i].at("name").get<std::string>() != params[i]->name ||
        plist[i].at("size").get<Eigen::Index>() != params[i]->size()) {
      throw std::runtime_error(path + ": parameter mismatch at '" +
                               params[i]->name + "'");
    }
    read_doubles(in, params[i]->value);
  }
  loaded.has_optimizer = header.at("has_optimizer").get<bool>();
  if (loaded.has_optimizer) {
    loaded.adam_step = header.at("adam_step").get<long>();
    for (const auto& p : params) {
      Adam::Moments s;
      s.m = Eigen::ArrayXd::Zero(p->size());
      s.v = Eigen::ArrayXd::Zero(p->size());
      s.v_max = Eigen::ArrayXd::Zero(p->size());
      read_doubles(in, s.m);
      read_doubles(in, s.v);
      read_doubles(in, s.v_max);
      loaded.adam_moments.push_back(std::move(s));
    }
  }
  return loaded;
}

}  // namespace longiseg::nn
