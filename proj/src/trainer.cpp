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

#include "longiseg/trainer.hpp"

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "longiseg/infer.hpp"

namespace fs = std::filesystem;

namespace longiseg {

namespace {

std::string serialize_rng(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

void restore_rng(std::mt19937_64& rng, const std::string& state) {
  std::istringstream is(state);
  is >> rng;
  if (is.fail()) throw std::runtime_error("cannot restore RNG state");
}

TensorF mask_slice(const MaskVolume& mask, SlicePlane plane, int index) {
  const Tensor<std::uint8_t> raw = volume_slice(mask, plane, index);
  TensorF out(1, raw.height(), raw.width());
  out.array() = raw.array().cast<double>();
  return out;
}

double now_unix() {
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

}  // namespace

const char* to_string(SliceSampling s) {
  return s == SliceSampling::all ? "all" : "lesion_biased";
}

SliceSampling sampling_from_string(const std::string& name) {
  if (name == "all") return SliceSampling::all;
  if (name == "lesion_biased") return SliceSampling::lesion_biased;
  throw std::invalid_argument("unknown slice_sampling '" + name +
                              "' (all|lesion_biased)");
}

void TrainConfig::validate() const {
  backbone.validate();
  loss.validate();
  if (!(learning_rate > 0)) throw std::invalid_argument("learning_rate must be > 0");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (epochs < 1) throw std::invalid_argument("epochs must be >= 1");
  if (steps_per_epoch < 0) throw std::invalid_argument("steps_per_epoch must be >= 0");
  if (val_every < 1) throw std::invalid_argument("val_every must be >= 1");
  if (!(threshold >= 0 && threshold <= 1)) {
    throw std::invalid_argument("threshold must be in [0, 1]");
  }
  if (backbone.in_channels != nn::variant_input_channels(variant)) {
    throw std::invalid_argument("channel mismatch: variant '" + to_string(variant) +
                                "' needs in_channels=" +
                                std::to_string(nn::variant_input_channels(variant)));
  }
}

std::string TrainConfig::to_json() const {
  nlohmann::json j;
  j["variant"] = nn::to_string(variant);
  j["backbone"] = {{"in_channels", backbone.in_channels},
                   {"first_conv_channels", backbone.first_conv_channels},
                   {"growth_rate", backbone.growth_rate},
                   {"layers_per_dense_block", backbone.layers_per_dense_block},
                   {"n_pool", backbone.n_pool},
                   {"dropout_rate", backbone.dropout_rate},
                   {"bottleneck_layers", backbone.bottleneck_layers}};
  j["loss"] = {{"lambda_smooth", loss.lambda_smooth},
               {"seg_loss", loss.seg_loss_kind == SegLossKind::mse
                                ? "mse"
                                : "asymmetric_dice"},
               {"beta", loss.beta}};
  j["learning_rate"] = learning_rate;
  j["batch_size"] = batch_size;
  j["epochs"] = epochs;
  j["steps_per_epoch"] = steps_per_epoch;
  j["seed"] = seed;
  j["val_every"] = val_every;
  j["slice_sampling"] = to_string(slice_sampling);
  j["threshold"] = threshold;
  return j.dump(2);
}

TrainConfig TrainConfig::from_json(const std::string& text) {
  const auto j = nlohmann::json::parse(text);
  TrainConfig c;
  if (j.contains("variant")) {
    c.variant = nn::variant_from_string(j.at("variant").get<std::string>());
  }
  c.backbone.in_channels = nn::variant_input_channels(c.variant);
  if (j.contains("backbone")) {
    const auto& b = j.at("backbone");
    if (b.contains("in_channels")) c.backbone.in_channels = b.at("in_channels").get<int>();
    if (b.contains("first_conv_channels")) {
      c.backbone.first_conv_channels = b.at("first_conv_channels").get<int>();
    }
    if (b.contains("growth_rate")) c.backbone.growth_rate = b.at("growth_rate").get<int>();
    if (b.contains("layers_per_dense_block")) {
      c.backbone.layers_per_dense_block = b.at("layers_per_dense_block").get<int>();
    }
    if (b.contains("n_pool")) c.backbone.n_pool = b.at("n_pool").get<int>();
    if (b.contains("dropout_rate")) c.backbone.dropout_rate = b.at("dropout_rate").get<double>();
    if (b.contains("bottleneck_layers")) {
      c.backbone.bottleneck_layers = b.at("bottleneck_layers").get<int>();
    }
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    if (l.contains("lambda_smooth")) c.loss.lambda_smooth = l.at("lambda_smooth").get<double>();
    if (l.contains("seg_loss")) {
      const auto kind = l.at("seg_loss").get<std::string>();
      if (kind == "mse") {
        c.loss.seg_loss_kind = SegLossKind::mse;
      } else if (kind == "asymmetric_dice") {
        c.loss.seg_loss_kind = SegLossKind::asymmetric_dice;
      } else {
        throw std::invalid_argument("loss.seg_loss must be mse|asymmetric_dice");
      }
    }
    if (l.contains("beta")) c.loss.beta = l.at("beta").get<double>();
  }
  if (j.contains("learning_rate")) c.learning_rate = j.at("learning_rate").get<double>();
  if (j.contains("batch_size")) c.batch_size = j.at("batch_size").get<int>();
  if (j.contains("epochs")) c.epochs = j.at("epochs").get<int>();
  if (j.contains("steps_per_epoch")) c.steps_per_epoch = j.at("steps_per_epoch").get<int>();
  if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
  if (j.contains("val_every")) c.val_every = j.at("val_every").get<int>();
  if (j.contains("slice_sampling")) {
    c.slice_sampling = sampling_from_string(j.at("slice_sampling").get<std::string>());
  }
  if (j.contains("threshold")) c.threshold = j.at("threshold").get<double>();
  return c;
}

// ---------------------------------------------------------------------------
// SliceSampler

SliceSampler::SliceSampler(const std::vector<LongitudinalSample>& dataset,
                           SliceSampling mode)
    : mode_(mode) {
  if (dataset.empty()) {
    throw std::invalid_argument("SliceSampler: empty dataset");
  }
  for (size_t s = 0; s < dataset.size(); ++s) {
    const auto& sample = dataset[s];
    const auto shape = sample.shape();
    // per-plane sets of slice indices intersecting the reference mask
    std::array<std::vector<char>, 3> hit;
    for (int p = 0; p < 3; ++p) {
      hit[static_cast<size_t>(p)].assign(
          static_cast<size_t>(axis_length(shape, kAllPlanes[static_cast<size_t>(p)])), 0);
    }
    const auto& mask = sample.gt_mask_ti;
    for (int d = 0; d < shape[0]; ++d)
      for (int h = 0; h < shape[1]; ++h)
        for (int w = 0; w < shape[2]; ++w)
          if (mask(d, h, w)) {
            hit[0][static_cast<size_t>(d)] = 1;
            hit[1][static_cast<size_t>(h)] = 1;
            hit[2][static_cast<size_t>(w)] = 1;
          }
    for (int p = 0; p < 3; ++p) {
      const SlicePlane plane = kAllPlanes[static_cast<size_t>(p)];
      const int n = axis_length(shape, plane);
      for (int k = 0; k < n; ++k) {
        const SliceDraw draw{static_cast<int>(s), plane, k};
        all_.push_back(draw);
        if (hit[static_cast<size_t>(p)][static_cast<size_t>(k)]) {
          lesion_.push_back(draw);
        }
      }
    }
  }
}

SliceDraw SliceSampler::draw(std::mt19937_64& rng) const {
  const bool biased = mode_ == SliceSampling::lesion_biased && !lesion_.empty();
  if (biased) {
    std::bernoulli_distribution coin(0.5);
    if (coin(rng)) {
      std::uniform_int_distribution<size_t> pick(0, lesion_.size() - 1);
      return lesion_[pick(rng)];
    }
  }
  std::uniform_int_distribution<size_t> pick(0, all_.size() - 1);
  return all_[pick(rng)];
}

// ---------------------------------------------------------------------------
// History

std::string TrainHistory::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << "step,L_total,L_seg,L_sim,L_smooth\n";
  for (const auto& r : steps) {
    os << r.step << "," << r.total << "," << r.seg << "," << r.sim << ","
       << r.smooth << "\n";
  }
  return os.str();
}

std::string TrainHistory::validations_to_csv() const {
  std::ostringstream os;
  os.precision(10);
  os << "epoch,step,dsc,ppv,ltpr,lfpr,vd,overall\n";
  for (const auto& v : validations) {
    os << v.epoch << "," << v.step << "," << v.report.dsc << "," << v.report.ppv
       << "," << v.report.ltpr << "," << v.report.lfpr << "," << v.report.vd
       << "," << v.report.overall << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Validation

MetricReport validate_model(nn::Model& model,
                            const std::vector<LongitudinalSample>& split,
                            double tau, std::vector<MetricReport>* per_subject) {
  if (split.empty()) throw std::invalid_argument("validate_model: empty split");
  ModelSliceNet net(model);
  std::vector<MetricReport> reports;
  for (const auto& sample : split) {
    const SegmentationResult seg = segment_subject(net, sample, tau);
    reports.push_back(compute_report(seg.mask, sample.gt_mask_ti));
  }
  if (per_subject) *per_subject = reports;
  return average_reports(reports);
}

// ---------------------------------------------------------------------------
// Trainer

Trainer::Trainer(std::vector<LongitudinalSample> train_split,
                 std::vector<LongitudinalSample> val_split, const TrainConfig& cfg)
    : train_(std::move(train_split)),
      val_(std::move(val_split)),
      cfg_(cfg),
      model_((cfg.validate(), nn::build_model(cfg.variant, cfg.backbone, cfg.seed))),
      adam_(model_.parameters(), cfg.learning_rate),
      sampler_(train_, cfg.slice_sampling),
      rng_(cfg.seed ^ 0x5851f42d4c957f2dull) {
  for (const auto& s : train_) s.check_consistent();
}

int Trainer::steps_per_epoch() const {
  if (cfg_.steps_per_epoch > 0) return cfg_.steps_per_epoch;
  return static_cast<int>(
      (sampler_.domain_size() + cfg_.batch_size - 1) / cfg_.batch_size);
}

StepRecord Trainer::step() {
  const bool multitask = cfg_.variant == nn::ModelVariant::MultitaskLongitudinal;
  const ChannelLayout layout = cfg_.variant == nn::ModelVariant::Static
                                   ? ChannelLayout::Static
                                   : ChannelLayout::Longitudinal;
  const int m = model_.size_multiple();

  std::vector<SliceDraw> draws;
  draws.reserve(static_cast<size_t>(cfg_.batch_size));
  for (int b = 0; b < cfg_.batch_size; ++b) draws.push_back(sampler_.draw(rng_));

  // batch slices are padded to one common extent
  int max_h = 0, max_w = 0;
  for (const auto& d : draws) {
    const auto extent = slice_extent(train_[static_cast<size_t>(d.subject)].shape(),
                                     d.plane);
    max_h = std::max(max_h, next_multiple(extent[0], m));
    max_w = std::max(max_w, next_multiple(extent[1], m));
  }

  model_.zero_grad();
  StepRecord rec;
  rec.step = step_ + 1;
  const double inv_batch = 1.0 / cfg_.batch_size;
  nn::ForwardCtx ctx{true, &rng_};

  for (const auto& d : draws) {
    const LongitudinalSample& sample = train_[static_cast<size_t>(d.subject)];
    SliceStack stack = extract_slice(sample, d.plane, d.index, layout);
    stack.data = pad_bottom_right(stack.data, max_h, max_w);
    TensorF gt = mask_slice(sample.gt_mask_ti, d.plane, d.index);
    gt = pad_bottom_right(gt, max_h, max_w);

    nn::Model::Output out = model_.forward(stack.data, ctx);
    if (multitask) {
      const TensorF x_i = channel_slice(stack.data, 0, 2);
      const TensorF x_j = channel_slice(stack.data, 2, 2);
      MultitaskLossGrads<double> grads;
      const auto v =
          multitask_loss_grad(out.prob, gt, x_i, x_j, *out.field, cfg_.loss, grads);
      rec.total += v.total * inv_batch;
      rec.seg += v.seg * inv_batch;
      rec.sim += v.sim * inv_batch;
      rec.smooth += v.smooth * inv_batch;
      grads.d_prob.array() *= inv_batch;
      grads.reg.d_field.array() *= inv_batch;
      model_.backward(grads.d_prob, &grads.reg.d_field);
    } else {
      TensorF d_prob;
      double seg;
      if (cfg_.loss.seg_loss_kind == SegLossKind::mse) {
        seg = seg_loss_mse_grad(out.prob, gt, d_prob);
      } else {
        seg = asymmetric_dice_loss_grad(out.prob, gt, cfg_.loss.beta, d_prob);
      }
      rec.total += seg * inv_batch;
      rec.seg += seg * inv_batch;
      d_prob.array() *= inv_batch;
      model_.backward(d_prob);
    }
  }

  if (!std::isfinite(rec.total)) {
    throw std::runtime_error("training diverged: non-finite loss at step " +
                             std::to_string(rec.step) +
                             " (parameters left at the last finite state)");
  }
  adam_.step();
  ++step_;
  return rec;
}

MetricReport Trainer::validate(std::vector<MetricReport>* per_subject) {
  return validate_model(model_, val_, cfg_.threshold, per_subject);
}

void Trainer::save_checkpoint(const std::string& path) const {
  nn::CheckpointMeta meta;
  meta.epoch = epoch_;
  meta.step = step_;
  meta.rng_state = serialize_rng(rng_);
  meta.best_val_overall = best_val_;
  nn::save_checkpoint(path, model_, &adam_, meta);
}

void Trainer::resume_from(const std::string& path) {
  const nn::LoadedCheckpoint loaded = nn::load_checkpoint(
      path, std::make_pair(cfg_.variant, cfg_.backbone));
  const auto& src = loaded.model.parameters();
  const auto& dst = model_.parameters();
  for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
  if (loaded.has_optimizer) {
    adam_.restore(loaded.adam_step, loaded.adam_moments);
  }
  restore_rng(rng_, loaded.meta.rng_state);
  step_ = loaded.meta.step;
  epoch_ = loaded.meta.epoch;
  best_val_ = loaded.meta.best_val_overall;
}

Trainer::RunResult Trainer::run(const std::string& out_dir) {
  const bool persist = !out_dir.empty();
  fs::path ckpt_dir;
  if (persist) {
    ckpt_dir = fs::path(out_dir) / "checkpoints";
    fs::create_directories(ckpt_dir);
  }
  RunResult result;
  result.best_val_overall = best_val_;
  if (persist) {
    result.best_checkpoint = (ckpt_dir / "best.ckpt").string();
    result.last_checkpoint = (ckpt_dir / "last.ckpt").string();
  }
  history_.started_unix = now_unix();
  const int spe = steps_per_epoch();

  auto flush_logs = [&] {
    if (!persist) return;
    std::ofstream hist(fs::path(out_dir) / "history.csv");
    hist << history_.to_csv();
    std::ofstream vals(fs::path(out_dir) / "val_history.csv");
    vals << history_.validations_to_csv();
  };

  const int first_epoch = epoch_;
  for (int e = first_epoch; e < cfg_.epochs; ++e) {
    for (int s = 0; s < spe; ++s) {
      StepRecord rec;
      try {
        rec = step();
      } catch (const std::exception&) {
        if (persist) {
          save_checkpoint(result.last_checkpoint);
          flush_logs();
        }
        throw;
      }
      history_.steps.push_back(rec);
    }
    epoch_ = e + 1;
    if (!val_.empty() && (epoch_ % cfg_.val_every == 0 || epoch_ == cfg_.epochs)) {
      ValRecord v;
      v.epoch = epoch_;
      v.step = step_;
      v.report = validate();
      history_.validations.push_back(v);
      if (v.report.overall > best_val_) {
        best_val_ = v.report.overall;
        result.best_val_overall = best_val_;
        if (persist) save_checkpoint(result.best_checkpoint);
      }
    }
  }
  history_.finished_unix = now_unix();
  if (persist) {
    save_checkpoint(result.last_checkpoint);
    if (!fs::exists(result.best_checkpoint)) {
      // no validation ran (empty val split): keep last as best
      save_checkpoint(result.best_checkpoint);
    }
    flush_logs();
  }
  return result;
}

}  // namespace longiseg
