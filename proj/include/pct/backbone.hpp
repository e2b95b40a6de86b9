#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pct/ct.hpp"
#include "pct/optim.hpp"
#include "pct/tensor.hpp"

namespace pct::backbone {

struct StageConfig {
  std::size_t width = 8;
  int stride = 1;
  bool ct_enabled = true;
};

struct BackboneConfig {
  std::size_t in_channels = 1;
  std::size_t in_height = 16;
  std::size_t in_width = 16;
  std::size_t stem_width = 8;
  int stem_stride = 2;
  std::size_t kernel = 3;
  std::vector<StageConfig> stages = {{8, 1, true}, {16, 2, true}, {16, 1, true}, {32, 2, true}};
  std::size_t embed_dim = 32;
  std::size_t heads = 2;
  std::size_t max_rel_offset = 4;
  // Scale of the CT value projections at initialisation.
  double ct_value_gain = 0.0;

  void validate() const;
  // Channels entering stage t (what its CT module sees).
  std::size_t stage_input_width(std::size_t t) const;
  ct::CtConfig ct_config(std::size_t t) const;
};

// conv -> bias -> ReLU with "same" padding.
struct ConvLayer {
  Param kernel;  // O x I x k x k
  Param bias;    // O
  int stride = 1;

  Tensor operator()(const Tensor& x) const;
};

struct BranchWeights {
  ConvLayer stem;
  std::vector<ConvLayer> stages;
  Param embed_weight;  // last width x embed_dim
  Param embed_bias;    // embed_dim
};

// Both branches at one point of the network, NCHW.
struct StagePair {
  Tensor x_id;
  Tensor x_ra;
  std::size_t stage = 0;
};

struct AttentionRecord {
  std::size_t stage = 0;
  std::size_t h = 0;
  std::size_t w = 0;
  Tensor id_to_ra;  // (B, heads, n, n)
  Tensor ra_to_id;
};

struct EmbeddingPair {
  Tensor id_embed;  // (B, embed_dim); the verification feature
  Tensor ra_embed;
};

struct ForwardResult {
  EmbeddingPair embeddings;
  std::vector<AttentionRecord> attention;
  // Globally pooled identity-branch features after each stage, values only.
  std::vector<Tensor> stage_id_pooled;
};

class Backbone {
 public:
  Backbone(BackboneConfig cfg, std::uint64_t seed);

  const BackboneConfig& config() const { return cfg_; }

  StagePair stem(const Tensor& images) const;
  StagePair stage_step(const StagePair& pair, std::vector<AttentionRecord>* attention = nullptr) const;
  // images are (B, C, H, W) or a single (C, H, W).
  ForwardResult forward(const Tensor& images) const;

  std::vector<Param*> identity_params();
  std::vector<Param*> race_params();
  std::vector<Param*> ct_params();
  std::vector<Param*> all_params();

  BranchWeights& identity_branch() { return id_; }
  BranchWeights& race_branch() { return ra_; }
  const BranchWeights& identity_branch() const { return id_; }
  const BranchWeights& race_branch() const { return ra_; }
  // Empty optional for stages with CT disabled.
  std::vector<std::optional<ct::CtWeights>>& ct_weights() { return ct_; }
  const std::vector<std::optional<ct::CtWeights>>& ct_weights() const { return ct_; }

 private:
  Tensor embed(const Tensor& features, const BranchWeights& branch) const;

  BackboneConfig cfg_;
  BranchWeights id_;
  BranchWeights ra_;
  std::vector<std::optional<ct::CtWeights>> ct_;
};

// Splits one seed into independent, reproducible sub-streams.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace pct::backbone
