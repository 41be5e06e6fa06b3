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

#include "longiseg/nn/model.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

namespace longiseg::nn {

void BackboneConfig::validate() const {
  if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
  if (first_conv_channels < 1) {
    throw std::invalid_argument("first_conv_channels must be >= 1");
  }
  if (growth_rate < 1) throw std::invalid_argument("growth_rate must be >= 1");
  if (layers_per_dense_block < 1) {
    throw std::invalid_argument("layers_per_dense_block must be >= 1");
  }
  if (n_pool < 1 || n_pool > 8) throw std::invalid_argument("n_pool must be in 1..8");
  if (dropout_rate < 0.0 || dropout_rate >= 1.0) {
    throw std::invalid_argument("dropout_rate must be in [0, 1)");
  }
  if (bottleneck_layers < 1) {
    throw std::invalid_argument("bottleneck_layers must be >= 1");
  }
}

std::string to_string(ModelVariant v) {
  switch (v) {
    case ModelVariant::Static: return "static";
    case ModelVariant::LongitudinalEarlyFusion: return "longitudinal";
    case ModelVariant::MultitaskLongitudinal: return "multitask";
    case ModelVariant::SiameseLateFusion: return "siamese";
  }
  return "?";
}

ModelVariant variant_from_string(const std::string& name) {
  if (name == "static") return ModelVariant::Static;
  if (name == "longitudinal") return ModelVariant::LongitudinalEarlyFusion;
  if (name == "multitask") return ModelVariant::MultitaskLongitudinal;
  if (name == "siamese") return ModelVariant::SiameseLateFusion;
  throw std::invalid_argument(
      "unknown variant '" + name +
      "' (expected static|longitudinal|multitask|siamese)");
}

int variant_input_channels(ModelVariant v) {
  return v == ModelVariant::Static ? 2 : 4;
}

// ---------------------------------------------------------------------------
// DenseLayer / DenseBlock

DenseLayer::DenseLayer(const std::string& name, int c_in, int growth,
                       double dropout)
    : norm_(name + ".norm", c_in),
      conv_(name + ".conv", c_in, growth, 3, 1, 1),
      drop_(dropout) {}

Tensor DenseLayer::forward(const Tensor& x, const ForwardCtx& ctx) {
  return drop_.forward(conv_.forward(relu_.forward(norm_.forward(x))), ctx);
}

Tensor DenseLayer::backward(const Tensor& d_y) {
  return norm_.backward(relu_.backward(conv_.backward(drop_.backward(d_y))));
}

void DenseLayer::collect_params(std::vector<ParamPtr>& out) const {
  norm_.collect_params(out);
  conv_.collect_params(out);
}

DenseBlock::DenseBlock(const std::string& name, int c_in, int growth,
                       int n_layers, double dropout)
    : c_in_(c_in), growth_(growth) {
  for (int l = 0; l < n_layers; ++l) {
    layers_.emplace_back(name + ".layer" + std::to_string(l),
                         c_in + l * growth, growth, dropout);
  }
}

void DenseBlock::init(std::mt19937_64& rng) {
  for (auto& l : layers_) l.init(rng);
}

Tensor DenseBlock::forward(const Tensor& x, const ForwardCtx& ctx) {
  if (x.channels() != c_in_) {
    throw std::invalid_argument("DenseBlock: expected " + std::to_string(c_in_) +
                                " channels, got " + std::to_string(x.channels()));
  }
  Tensor stack = x;
  for (auto& layer : layers_) {
    stack = concat_channels(stack, layer.forward(stack, ctx));
  }
  return stack;
}

Tensor DenseBlock::backward(const Tensor& d_stack_in) {
  Tensor d_stack = d_stack_in;
  for (int l = static_cast<int>(layers_.size()) - 1; l >= 0; --l) {
    const int base = c_in_ + l * growth_;
    const Tensor d_out = channel_slice(d_stack, base, growth_);
    const Tensor d_in = layers_[static_cast<size_t>(l)].backward(d_out);
    d_stack.array().head(d_in.size()) += d_in.array();
  }
  return channel_slice(d_stack, 0, c_in_);
}

void DenseBlock::collect_params(std::vector<ParamPtr>& out) const {
  for (const auto& l : layers_) l.collect_params(out);
}

// ---------------------------------------------------------------------------
// Transitions

TransitionDown::TransitionDown(const std::string& name, int channels,
                               double dropout)
    : norm_(name + ".norm", channels),
      conv_(name + ".conv", channels, channels, 1, 1, 0),
      drop_(dropout) {}

Tensor TransitionDown::forward(const Tensor& x, const ForwardCtx& ctx) {
  return pool_.forward(
      drop_.forward(conv_.forward(relu_.forward(norm_.forward(x))), ctx));
}

Tensor TransitionDown::backward(const Tensor& d_y) {
  return norm_.backward(
      relu_.backward(conv_.backward(drop_.backward(pool_.backward(d_y)))));
}

void TransitionDown::collect_params(std::vector<ParamPtr>& out) const {
  norm_.collect_params(out);
  conv_.collect_params(out);
}

// ---------------------------------------------------------------------------
// Encoder

Encoder::Encoder(const std::string& name, const BackboneConfig& cfg,
                 int in_channels)
    : first_(name + ".first", in_channels, cfg.first_conv_channels, 3, 1, 1) {
  int ch = cfg.first_conv_channels;
  for (int s = 0; s < cfg.n_pool; ++s) {
    blocks_.emplace_back(name + ".down" + std::to_string(s), ch, cfg.growth_rate,
                         cfg.layers_per_dense_block, cfg.dropout_rate);
    ch = blocks_.back().out_channels();
    downs_.emplace_back(name + ".td" + std::to_string(s), ch, cfg.dropout_rate);
  }
}

void Encoder::init(std::mt19937_64& rng) {
  first_.init_he(rng);
  for (size_t s = 0; s < blocks_.size(); ++s) {
    blocks_[s].init(rng);
    downs_[s].init(rng);
  }
}

Encoder::Out Encoder::forward(const Tensor& x, const ForwardCtx& ctx) {
  ++forward_calls_;
  Out out;
  Tensor t = first_.forward(x);
  for (size_t s = 0; s < blocks_.size(); ++s) {
    t = blocks_[s].forward(t, ctx);
    out.skips.push_back(t);
    t = downs_[s].forward(t, ctx);
  }
  out.deep = std::move(t);
  return out;
}

Tensor Encoder::backward(const Tensor& d_deep, std::vector<Tensor>& d_skips) {
  Tensor g = d_deep;
  for (int s = static_cast<int>(blocks_.size()) - 1; s >= 0; --s) {
    Tensor d_block_out = downs_[static_cast<size_t>(s)].backward(g);
    if (!d_skips[static_cast<size_t>(s)].empty()) {
      d_block_out.array() += d_skips[static_cast<size_t>(s)].array();
    }
    g = blocks_[static_cast<size_t>(s)].backward(d_block_out);
  }
  return first_.backward(g);
}

void Encoder::collect_params(std::vector<ParamPtr>& out) const {
  first_.collect_params(out);
  for (size_t s = 0; s < blocks_.size(); ++s) {
    blocks_[s].collect_params(out);
    downs_[s].collect_params(out);
  }
}

int Encoder::deep_channels() const { return blocks_.back().out_channels(); }

std::vector<int> Encoder::skip_channels() const {
  std::vector<int> out;
  for (const auto& b : blocks_) out.push_back(b.out_channels());
  return out;
}

// ---------------------------------------------------------------------------
// Decoder

namespace {

struct DecoderPlan {
  std::vector<int> up_channels;     // deepest stage first
  std::vector<int> stack_channels;  // deepest stage first
  int head_in = 0;
};

DecoderPlan plan_decoder(const BackboneConfig& cfg, int in_new_channels,
                         const std::vector<int>& skip_channels) {
  DecoderPlan plan;
  const int new_per_block = cfg.growth_rate * cfg.layers_per_dense_block;
  int cur = in_new_channels;
  for (int s = cfg.n_pool - 1; s >= 0; --s) {
    plan.up_channels.push_back(cur);
    plan.stack_channels.push_back(cur + skip_channels[static_cast<size_t>(s)]);
    cur = new_per_block;
  }
  plan.head_in = plan.stack_channels.back() + new_per_block;
  return plan;
}

}  // namespace

Decoder::Decoder(const std::string& name, const BackboneConfig& cfg,
                 int in_new_channels, const std::vector<int>& skip_channels,
                 int out_channels, bool sigmoid_head)
    : n_stages_(cfg.n_pool),
      head_(name + ".head",
            plan_decoder(cfg, in_new_channels, skip_channels).head_in,
            out_channels, 1, 1, 0),
      sigmoid_head_(sigmoid_head) {
  const DecoderPlan plan = plan_decoder(cfg, in_new_channels, skip_channels);
  up_channels_ = plan.up_channels;
  for (int i = 0; i < n_stages_; ++i) {
    const int s = n_stages_ - 1 - i;
    ups_.emplace_back(name + ".tu" + std::to_string(s), plan.up_channels[i],
                      plan.up_channels[i]);
    blocks_.emplace_back(name + ".up" + std::to_string(s),
                         plan.stack_channels[i], cfg.growth_rate,
                         cfg.layers_per_dense_block, cfg.dropout_rate);
  }
}

void Decoder::init(std::mt19937_64& rng, bool zero_head) {
  for (int i = 0; i < n_stages_; ++i) {
    ups_[static_cast<size_t>(i)].init_he(rng);
    blocks_[static_cast<size_t>(i)].init(rng);
  }
  if (zero_head) {
    head_.init_zero();
  } else {
    head_.init_he(rng);
  }
}

Tensor Decoder::forward(const Tensor& deep_new, const std::vector<Tensor>& skips,
                        const ForwardCtx& ctx) {
  Tensor cur = deep_new;
  Tensor full;
  for (int i = 0; i < n_stages_; ++i) {
    const int s = n_stages_ - 1 - i;
    const Tensor up = ups_[static_cast<size_t>(i)].forward(cur);
    const Tensor stack = concat_channels(up, skips[static_cast<size_t>(s)]);
    full = blocks_[static_cast<size_t>(i)].forward(stack, ctx);
    if (s > 0) {
      cur = channel_slice(full, stack.channels(),
                          blocks_[static_cast<size_t>(i)].new_channels());
    }
  }
  Tensor out = head_.forward(full);
  if (sigmoid_head_) out = sigmoid_.forward(out);
  return out;
}

Decoder::InGrads Decoder::backward(const Tensor& d_out) {
  InGrads grads;
  grads.d_skips.resize(static_cast<size_t>(n_stages_));
  Tensor g = sigmoid_head_ ? sigmoid_.backward(d_out) : d_out;
  Tensor d_full = head_.backward(g);
  for (int i = n_stages_ - 1; i >= 0; --i) {
    const int s = n_stages_ - 1 - i;
    const Tensor d_stack = blocks_[static_cast<size_t>(i)].backward(d_full);
    const int up_ch = up_channels_[static_cast<size_t>(i)];
    const Tensor d_up = channel_slice(d_stack, 0, up_ch);
    grads.d_skips[static_cast<size_t>(s)] =
        channel_slice(d_stack, up_ch, d_stack.channels() - up_ch);
    const Tensor d_cur = ups_[static_cast<size_t>(i)].backward(d_up);
    if (i == 0) {
      grads.d_new = d_cur;
    } else {
      const DenseBlock& deeper = blocks_[static_cast<size_t>(i - 1)];
      d_full = Tensor(deeper.out_channels(), d_cur.height(), d_cur.width());
      d_full.array().tail(d_cur.size()) = d_cur.array();
    }
  }
  return grads;
}

void Decoder::collect_params(std::vector<ParamPtr>& out) const {
  for (int i = 0; i < n_stages_; ++i) {
    ups_[static_cast<size_t>(i)].collect_params(out);
    blocks_[static_cast<size_t>(i)].collect_params(out);
  }
  head_.collect_params(out);
}

// ---------------------------------------------------------------------------
// Model

namespace {

const BackboneConfig& validated(const BackboneConfig& cfg) {
  cfg.validate();
  return cfg;
}

int encoder_stream_channels(ModelVariant v, const BackboneConfig& cfg) {
  return v == ModelVariant::SiameseLateFusion ? 2 : cfg.in_channels;
}

int fusion_factor(ModelVariant v) {
  return v == ModelVariant::SiameseLateFusion ? 2 : 1;
}

std::vector<int> scaled(std::vector<int> v, int k) {
  for (auto& x : v) x *= k;
  return v;
}

}  // namespace

Model::Model(ModelVariant variant, const BackboneConfig& cfg, std::uint64_t seed)
    : variant_(variant),
      cfg_(validated(cfg)),
      encoder_("encoder", cfg, encoder_stream_channels(variant, cfg)),
      bottleneck_("bottleneck", fusion_factor(variant) * encoder_.deep_channels(),
                  cfg.growth_rate, cfg.bottleneck_layers, cfg.dropout_rate),
      seg_decoder_("seg_decoder", cfg, bottleneck_.new_channels(),
                   scaled(encoder_.skip_channels(), fusion_factor(variant)), 1,
                   /*sigmoid_head=*/true) {
  if (variant == ModelVariant::SiameseLateFusion) {
    encoder_b_.emplace(encoder_);  // copy shares parameters, fresh caches
  }
  if (variant == ModelVariant::MultitaskLongitudinal) {
    reg_decoder_.emplace("reg_decoder", cfg, bottleneck_.new_channels(),
                         encoder_.skip_channels(), 2, /*sigmoid_head=*/false);
  }

  std::mt19937_64 rng(seed ^ 0x9e3779b97f4a7c15ull);
  encoder_.init(rng);
  bottleneck_.init(rng);
  seg_decoder_.init(rng, /*zero_head=*/false);
  // deformation head starts at the identity warp
  if (reg_decoder_) reg_decoder_->init(rng, /*zero_head=*/true);

  std::vector<ParamPtr> all;
  encoder_.collect_params(all);
  bottleneck_.collect_params(all);
  seg_decoder_.collect_params(all);
  if (reg_decoder_) reg_decoder_->collect_params(all);
  std::unordered_set<const Param*> seen;
  for (auto& p : all) {
    if (seen.insert(p.get()).second) params_.push_back(p);
  }
}

void Model::check_input(const Tensor& x) const {
  if (x.channels() != cfg_.in_channels) {
    throw std::invalid_argument(
        to_string(variant_) + " variant expects " +
        std::to_string(cfg_.in_channels) + " input channels, got " +
        std::to_string(x.channels()));
  }
  const int m = size_multiple();
  if (x.height() % m || x.width() % m) {
    throw std::invalid_argument(
        "input extent " + std::to_string(x.height()) + "x" +
        std::to_string(x.width()) + " must be a multiple of " +
        std::to_string(m) + "; pad first");
  }
}

Model::Output Model::forward(const Tensor& x, const ForwardCtx& ctx) {
  check_input(x);
  Output out;
  if (variant_ == ModelVariant::SiameseLateFusion) {
    const Tensor xa = channel_slice(x, 0, 2);
    const Tensor xb = channel_slice(x, 2, 2);
    Encoder::Out ea = encoder_.forward(xa, ctx);
    Encoder::Out eb = encoder_b_->forward(xb, ctx);
    const Tensor deep = concat_channels(ea.deep, eb.deep);
    std::vector<Tensor> skips;
    for (size_t s = 0; s < ea.skips.size(); ++s) {
      skips.push_back(concat_channels(ea.skips[s], eb.skips[s]));
    }
    const Tensor bn_full = bottleneck_.forward(deep, ctx);
    const Tensor bn_new = channel_slice(bn_full, bottleneck_.in_channels(),
                                        bottleneck_.new_channels());
    out.prob = seg_decoder_.forward(bn_new, skips, ctx);
    return out;
  }

  Encoder::Out e = encoder_.forward(x, ctx);
  const Tensor bn_full = bottleneck_.forward(e.deep, ctx);
  const Tensor bn_new = channel_slice(bn_full, bottleneck_.in_channels(),
                                      bottleneck_.new_channels());
  out.prob = seg_decoder_.forward(bn_new, e.skips, ctx);
  if (variant_ == ModelVariant::MultitaskLongitudinal && !ctx.seg_only) {
    out.field = reg_decoder_->forward(bn_new, e.skips, ctx);
  }
  return out;
}

void Model::backward(const Tensor& d_prob, const Tensor* d_field) {
  if ((variant_ == ModelVariant::MultitaskLongitudinal) != (d_field != nullptr)) {
    throw std::invalid_argument(
        "backward: d_field must be given exactly for the multitask variant");
  }
  Decoder::InGrads g = seg_decoder_.backward(d_prob);
  if (reg_decoder_) {
    Decoder::InGrads gr = reg_decoder_->backward(*d_field);
    g.d_new.array() += gr.d_new.array();
    for (size_t s = 0; s < g.d_skips.size(); ++s) {
      g.d_skips[s].array() += gr.d_skips[s].array();
    }
  }

  Tensor d_bn_full(bottleneck_.out_channels(), g.d_new.height(), g.d_new.width());
  d_bn_full.array().tail(g.d_new.size()) = g.d_new.array();
  const Tensor d_deep = bottleneck_.backward(d_bn_full);

  if (variant_ == ModelVariant::SiameseLateFusion) {
    const int half_deep = encoder_.deep_channels();
    const Tensor d_deep_a = channel_slice(d_deep, 0, half_deep);
    const Tensor d_deep_b = channel_slice(d_deep, half_deep, half_deep);
    const std::vector<int> half_skips = encoder_.skip_channels();
    std::vector<Tensor> d_skips_a, d_skips_b;
    for (size_t s = 0; s < g.d_skips.size(); ++s) {
      d_skips_a.push_back(channel_slice(g.d_skips[s], 0, half_skips[s]));
      d_skips_b.push_back(channel_slice(g.d_skips[s], half_skips[s], half_skips[s]));
    }
    encoder_b_->backward(d_deep_b, d_skips_b);
    encoder_.backward(d_deep_a, d_skips_a);
  } else {
    encoder_.backward(d_deep, g.d_skips);
  }
}

void Model::zero_grad() {
  for (auto& p : params_) p->grad.setZero();
}

Model::Structure Model::structure() const {
  Structure s;
  s.encoder_streams = variant_ == ModelVariant::SiameseLateFusion ? 2 : 1;
  s.streams_share_weights = s.encoder_streams == 2;
  s.bottleneck_in_channels = bottleneck_.in_channels();
  s.decoder_count = reg_decoder_ ? 2 : 1;
  return s;
}

long count_parameters(const Model& model) {
  long n = 0;
  for (const auto& p : model.parameters()) n += static_cast<long>(p->size());
  return n;
}

Model build_model(ModelVariant variant, const BackboneConfig& cfg,
                  std::uint64_t seed) {
  cfg.validate();
  if (cfg.in_channels != variant_input_channels(variant)) {
    throw std::invalid_argument(
        "channel mismatch: " + to_string(variant) + " variant needs in_channels=" +
        std::to_string(variant_input_channels(variant)) + ", config says " +
        std::to_string(cfg.in_channels));
  }
  return Model(variant, cfg, seed);
}

}  // namespace longiseg::nn
