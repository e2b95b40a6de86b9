#include "pct/backbone.hpp"

#include <random>
#include <string>

#include "pct/errors.hpp"
#include "pct/ops.hpp"

namespace pct::backbone {

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  // splitmix64 finaliser
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

void BackboneConfig::validate() const {
  if (stages.empty()) throw ConfigError("backbone needs at least one stage");
  if (in_channels == 0 || in_height == 0 || in_width == 0) throw ConfigError("input extents must be positive");
  if (stem_width == 0 || embed_dim == 0) throw ConfigError("widths must be positive");
  if (kernel == 0 || kernel % 2 == 0) throw ConfigError("kernel size must be odd");
  if (stem_stride != 1 && stem_stride != 2) throw ConfigError("stem stride must be 1 or 2");
  for (std::size_t t = 0; t < stages.size(); ++t) {
    if (stages[t].width == 0) throw ConfigError("stage " + std::to_string(t) + " width must be positive");
    if (stages[t].stride != 1 && stages[t].stride != 2) {
      throw ConfigError("stage " + std::to_string(t) + " stride must be 1 or 2");
    }
    if (stages[t].ct_enabled) ct_config(t).validate();
  }
}

std::size_t BackboneConfig::stage_input_width(std::size_t t) const {
  return t == 0 ? stem_width : stages.at(t - 1).width;
}

ct::CtConfig BackboneConfig::ct_config(std::size_t t) const {
  return ct::CtConfig{stage_input_width(t), heads, max_rel_offset};
}

Tensor ConvLayer::operator()(const Tensor& x) const {
  const int pad = static_cast<int>(kernel.value.dim(2) / 2);
  return relu(add_channel_bias(conv2d(x, kernel.value, stride, pad), bias.value));
}

namespace {

ConvLayer make_conv(std::size_t in, std::size_t out, std::size_t k, int stride, std::mt19937_64& rng,
                    const std::string& name) {
  return ConvLayer{Param(name + ".kernel", he_uniform({out, in, k, k}, in * k * k, rng)),
                   Param(name + ".bias", Tensor::zeros({out}, true)), stride};
}

BranchWeights make_branch(const BackboneConfig& cfg, std::uint64_t seed, const std::string& name) {
  std::mt19937_64 rng(seed);
  BranchWeights b;
  b.stem = make_conv(cfg.in_channels, cfg.stem_width, cfg.kernel, cfg.stem_stride, rng, name + ".stem");
  std::size_t in = cfg.stem_width;
  for (std::size_t t = 0; t < cfg.stages.size(); ++t) {
    b.stages.push_back(
        make_conv(in, cfg.stages[t].width, cfg.kernel, cfg.stages[t].stride, rng, name + ".stage" + std::to_string(t)));
    in = cfg.stages[t].width;
  }
  b.embed_weight = Param(name + ".embed.weight", glorot_uniform({in, cfg.embed_dim}, in, cfg.embed_dim, rng));
  b.embed_bias = Param(name + ".embed.bias", Tensor::zeros({cfg.embed_dim}, true));
  return b;
}

void append_branch(BranchWeights& b, std::vector<Param*>& out) {
  out.push_back(&b.stem.kernel);
  out.push_back(&b.stem.bias);
  for (ConvLayer& layer : b.stages) {
    out.push_back(&layer.kernel);
    out.push_back(&layer.bias);
  }
  out.push_back(&b.embed_weight);
  out.push_back(&b.embed_bias);
}

// Global pooling of the (B, C, H, W) features without history.
Tensor pooled_values(const Tensor& x) {
  NoGradGuard guard;
  return global_avg_pool(x).detach();
}

}  // namespace

Backbone::Backbone(BackboneConfig cfg, std::uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  id_ = make_branch(cfg_, derive_seed(seed, 1), "id");
  ra_ = make_branch(cfg_, derive_seed(seed, 2), "ra");
  for (std::size_t t = 0; t < cfg_.stages.size(); ++t) {
    if (cfg_.stages[t].ct_enabled) {
      std::mt19937_64 rng(derive_seed(seed, 100 + t));
      ct_.emplace_back(ct::CtWeights::init(cfg_.ct_config(t), rng, "ct" + std::to_string(t), cfg_.ct_value_gain));
    } else {
      ct_.emplace_back(std::nullopt);
    }
  }
}

StagePair Backbone::stem(const Tensor& images) const {
  if (images.rank() != 4 || images.dim(1) != cfg_.in_channels || images.dim(2) != cfg_.in_height ||
      images.dim(3) != cfg_.in_width) {
    throw ConfigError("stem: images " + to_string(images.shape()) + " do not match configured input (" +
                      std::to_string(cfg_.in_channels) + ", " + std::to_string(cfg_.in_height) + ", " +
                      std::to_string(cfg_.in_width) + ")");
  }
  return StagePair{id_.stem(images), ra_.stem(images), 0};
}

StagePair Backbone::stage_step(const StagePair& pair, std::vector<AttentionRecord>* attention) const {
  const std::size_t t = pair.stage;
  if (t >= cfg_.stages.size()) throw ContractError("stage_step: stage " + std::to_string(t) + " out of range");
  Tensor x_id = pair.x_id;
  Tensor x_ra = pair.x_ra;
  if (ct_[t]) {
    const std::size_t h = x_id.dim(2), w = x_id.dim(3);
    const ct::CtOutput out = ct::ct_forward(ct::FeatureMap{to_tokens(x_id), h, w},
                                            ct::FeatureMap{to_tokens(x_ra), h, w}, *ct_[t], cfg_.ct_config(t));
    x_id = from_tokens(out.x_id_out.values, h, w);
    x_ra = from_tokens(out.x_ra_out.values, h, w);
    if (attention) attention->push_back(AttentionRecord{t, h, w, out.attn_id_to_ra, out.attn_ra_to_id});
  }
  return StagePair{id_.stages[t](x_id), ra_.stages[t](x_ra), t + 1};
}

Tensor Backbone::embed(const Tensor& features, const BranchWeights& branch) const {
  return add_broadcast(matmul(global_avg_pool(features), branch.embed_weight.value), branch.embed_bias.value);
}

ForwardResult Backbone::forward(const Tensor& images) const {
  const Tensor batch =
      images.rank() == 3 ? reshape(images, {1, images.dim(0), images.dim(1), images.dim(2)}) : images;
  ForwardResult result;
  StagePair pair = stem(batch);
  for (std::size_t t = 0; t < cfg_.stages.size(); ++t) {
    pair = stage_step(pair, &result.attention);
    result.stage_id_pooled.push_back(pooled_values(pair.x_id));
  }
  result.embeddings = EmbeddingPair{embed(pair.x_id, id_), embed(pair.x_ra, ra_)};
  return result;
}

std::vector<Param*> Backbone::identity_params() {
  std::vector<Param*> out;
  append_branch(id_, out);
  return out;
}

std::vector<Param*> Backbone::race_params() {
  std::vector<Param*> out;
  append_branch(ra_, out);
  return out;
}

std::vector<Param*> Backbone::ct_params() {
  std::vector<Param*> out;
  for (auto& w : ct_) {
    if (w) {
      auto p = w->params();
      out.insert(out.end(), p.begin(), p.end());
    }
  }
  return out;
}

std::vector<Param*> Backbone::all_params() {
  std::vector<Param*> out = identity_params();
  auto ra = race_params();
  auto ct = ct_params();
  out.insert(out.end(), ra.begin(), ra.end());
  out.insert(out.end(), ct.begin(), ct.end());
  return out;
}

}  // namespace pct::backbone
