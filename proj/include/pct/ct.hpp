#pragma once

#include <random>
#include <span>
#include <string>
#include <vector>

#include "pct/optim.hpp"
#include "pct/tensor.hpp"

// Cross transformer: two mirrored cross-attention blocks. The identity block
// queries the identity features against race keys, aggregates identity values
// with that attention and subtracts the result (the race-induced component)
// from the identity features. The race block does the converse.
namespace pct::ct {

struct CtConfig {
  std::size_t d = 8;
  std::size_t heads = 2;
  // Relative offsets beyond +/- this value share the outermost table entry.
  std::size_t max_rel_offset = 4;

  std::size_t d_head() const { return d / heads; }
  std::size_t table_size() const { return 2 * max_rel_offset + 1; }
  void validate() const;
};

// Token features of an h x w grid: values is (n, d) or batched (B, n, d).
struct FeatureMap {
  Tensor values;
  std::size_t h = 0;
  std::size_t w = 0;

  std::size_t positions() const { return h * w; }
  std::size_t channels() const { return values.shape().back(); }
  void validate() const;
};

// x * weight + bias with weight d x d_head.
struct Projection {
  Param weight;
  Param bias;
};

struct HeadWeights {
  Projection id_qry, id_key, id_val;
  Projection ra_qry, ra_key, ra_val;
  // Additive logit tables indexed by clipped row / column offset. The id
  // tables serve the identity block, the ra tables the race block.
  Param id_rel_rows, id_rel_cols;
  Param ra_rel_rows, ra_rel_cols;
};

struct CtWeights {
  std::vector<HeadWeights> heads;

  // Glorot-uniform projections, zero biases and zero position tables. Value
  // weights are further multiplied by value_gain; 0 makes the fresh module
  // the identity map.
  static CtWeights init(const CtConfig& cfg, std::mt19937_64& rng, const std::string& prefix = "ct",
                        double value_gain = 1.0);
  std::vector<Param*> params();
  std::vector<const Param*> params() const;
  void validate(const CtConfig& cfg) const;
};

struct CtOutput {
  FeatureMap x_id_out;
  FeatureMap x_ra_out;
  // Per-head attention, (heads, n, n) or (B, heads, n, n); values only.
  Tensor attn_id_to_ra;
  Tensor attn_ra_to_id;
  Tensor eps_ra;  // subtracted from the identity branch
  Tensor eps_id;  // subtracted from the race branch
};

Tensor project(const Tensor& x, const Projection& proj);

// (n, n) additive logit bias: rows[clip(dr)] + cols[clip(dc)] with
// dr = row(j) - row(i), dc = col(j) - col(i) for query i and key j.
Tensor relative_position_bias(const Tensor& rows, const Tensor& cols, std::size_t h, std::size_t w,
                              std::size_t max_rel_offset);

// softmax over keys of q k^T / sqrt(d_head) + relative bias.
Tensor cross_attention(const Tensor& q, const Tensor& k, std::size_t h, std::size_t w, const Tensor& rel_rows,
                       const Tensor& rel_cols, std::size_t max_rel_offset);

// Concatenation over heads of attn[h] * (x_src W_h + b_h).
Tensor estimate_bias(std::span<const Tensor> attn, const Tensor& x_src, std::span<const Projection* const> values);

CtOutput ct_forward(const FeatureMap& x_id, const FeatureMap& x_ra, const CtWeights& weights, const CtConfig& cfg);

// Sum over queries of each head's attention, shaped (heads, h, w): how much
// every key position is attended to. Expects unbatched (heads, n, n) input.
Tensor key_marginal_heatmaps(const Tensor& attn, std::size_t h, std::size_t w);

}  // namespace pct::ct
