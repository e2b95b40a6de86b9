#include "pct/ct.hpp"

#include <algorithm>
#include <cmath>

#include "pct/errors.hpp"
#include "pct/ops.hpp"

namespace pct::ct {

using detail::make_result;
using detail::Node;

void CtConfig::validate() const {
  if (d == 0 || heads == 0) throw ConfigError("CT: feature dim and head count must be positive");
  if (d % heads != 0) {
    throw ConfigError("CT: head count " + std::to_string(heads) + " does not divide feature dim " + std::to_string(d));
  }
  if (max_rel_offset == 0) throw ConfigError("CT: max_rel_offset must be positive");
}

void FeatureMap::validate() const {
  if (!values.defined()) throw ConfigError("feature map has no values");
  if (values.rank() != 2 && values.rank() != 3) {
    throw ConfigError("feature map values must be (n, d) or (B, n, d), got " + to_string(values.shape()));
  }
  const std::size_t n = values.shape()[values.rank() - 2];
  if (n != h * w) {
    throw ConfigError("feature map has " + std::to_string(n) + " positions but grid " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
}

namespace {

Projection make_projection(const CtConfig& cfg, std::mt19937_64& rng, const std::string& name, double gain = 1.0) {
  Tensor weight = glorot_uniform({cfg.d, cfg.d_head()}, cfg.d, cfg.d_head(), rng);
  for (double& v : weight.mutable_data()) v *= gain;
  return Projection{Param(name + ".weight", weight), Param(name + ".bias", Tensor::zeros({cfg.d_head()}, true))};
}

Param make_table(const CtConfig& cfg, const std::string& name) {
  return Param(name, Tensor::zeros({cfg.table_size()}, true));
}

template <typename HW, typename P>
void collect(HW& hw, std::vector<P>& out) {
  for (auto* proj : {&hw.id_qry, &hw.id_key, &hw.id_val, &hw.ra_qry, &hw.ra_key, &hw.ra_val}) {
    out.push_back(&proj->weight);
    out.push_back(&proj->bias);
  }
  for (auto* table : {&hw.id_rel_rows, &hw.id_rel_cols, &hw.ra_rel_rows, &hw.ra_rel_cols}) out.push_back(table);
}

std::size_t clip_offset(long delta, std::size_t max_off) {
  const long m = static_cast<long>(max_off);
  return static_cast<std::size_t>(std::clamp(delta, -m, m) + m);
}

// Collects per-head (.., n, n) attention values into (.., heads, n, n).
Tensor stack_heads(std::span<const Tensor> attn) {
  const Shape& s = attn.front().shape();
  const bool batched = s.size() == 3;
  const std::size_t batch = batched ? s[0] : 1;
  const std::size_t nn = s[s.size() - 2] * s.back();
  const std::size_t heads = attn.size();
  std::vector<double> out(batch * heads * nn);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    auto d = attn[hd].data();
    for (std::size_t b = 0; b < batch; ++b) {
      std::copy_n(d.data() + b * nn, nn, out.data() + (b * heads + hd) * nn);
    }
  }
  Shape shape = batched ? Shape{batch, heads, s[1], s[2]} : Shape{heads, s[0], s[1]};
  return Tensor::from(std::move(shape), std::move(out));
}

struct BlockRoles {
  const Projection& query;
  const Projection& key;
  const Projection& value;
  const Param& rel_rows;
  const Param& rel_cols;
};

// One cross-attention block: returns the estimated component and the per-head maps.
Tensor run_block(const Tensor& x_query, const Tensor& x_key, std::span<const BlockRoles> roles, std::size_t h,
                 std::size_t w, const CtConfig& cfg, std::vector<Tensor>& attn_out) {
  attn_out.clear();
  std::vector<const Projection*> values;
  for (const BlockRoles& r : roles) {
    Tensor q = project(x_query, r.query);
    Tensor k = project(x_key, r.key);
    attn_out.push_back(cross_attention(q, k, h, w, r.rel_rows.value, r.rel_cols.value, cfg.max_rel_offset));
    values.push_back(&r.value);
  }
  return estimate_bias(attn_out, x_query, values);
}

}  // namespace

CtWeights CtWeights::init(const CtConfig& cfg, std::mt19937_64& rng, const std::string& prefix, double value_gain) {
  cfg.validate();
  CtWeights w;
  for (std::size_t hd = 0; hd < cfg.heads; ++hd) {
    const std::string p = prefix + ".head" + std::to_string(hd) + ".";
    HeadWeights hw{make_projection(cfg, rng, p + "id_qry"), make_projection(cfg, rng, p + "id_key"),
                   make_projection(cfg, rng, p + "id_val", value_gain), make_projection(cfg, rng, p + "ra_qry"),
                   make_projection(cfg, rng, p + "ra_key"), make_projection(cfg, rng, p + "ra_val", value_gain),
                   make_table(cfg, p + "id_rel_rows"),      make_table(cfg, p + "id_rel_cols"),
                   make_table(cfg, p + "ra_rel_rows"),      make_table(cfg, p + "ra_rel_cols")};
    w.heads.push_back(std::move(hw));
  }
  return w;
}

std::vector<Param*> CtWeights::params() {
  std::vector<Param*> out;
  for (HeadWeights& hw : heads) collect(hw, out);
  return out;
}

std::vector<const Param*> CtWeights::params() const {
  std::vector<const Param*> out;
  for (const HeadWeights& hw : heads) collect(hw, out);
  return out;
}

void CtWeights::validate(const CtConfig& cfg) const {
  if (heads.size() != cfg.heads) {
    throw ConfigError("CT weights have " + std::to_string(heads.size()) + " heads, config expects " +
                      std::to_string(cfg.heads));
  }
  for (const HeadWeights& hw : heads) {
    for (const auto* proj : {&hw.id_qry, &hw.id_key, &hw.id_val, &hw.ra_qry, &hw.ra_key, &hw.ra_val}) {
      if (proj->weight.value.shape() != Shape{cfg.d, cfg.d_head()} ||
          proj->bias.value.shape() != Shape{cfg.d_head()}) {
        throw ConfigError("CT projection " + proj->weight.name + " has shape " +
                          to_string(proj->weight.value.shape()));
      }
    }
    for (const auto* table : {&hw.id_rel_rows, &hw.id_rel_cols, &hw.ra_rel_rows, &hw.ra_rel_cols}) {
      if (table->value.shape() != Shape{cfg.table_size()}) {
        throw ConfigError("CT table " + table->name + " has shape " + to_string(table->value.shape()));
      }
      for (double v : table->value.data()) {
        if (!std::isfinite(v)) throw NumericError("CT table " + table->name + " is not finite");
      }
    }
  }
}

Tensor project(const Tensor& x, const Projection& proj) {
  const Shape& ws = proj.weight.value.shape();
  if (x.rank() < 2 || ws.size() != 2 || x.shape().back() != ws[0]) {
    throw ConfigError("project: features " + to_string(x.shape()) + " do not match weight " + to_string(ws));
  }
  if (proj.bias.value.shape() != Shape{ws[1]}) {
    throw ConfigError("project: bias " + to_string(proj.bias.value.shape()) + " for weight " + to_string(ws));
  }
  return add_broadcast(matmul(x, proj.weight.value), proj.bias.value);
}

Tensor relative_position_bias(const Tensor& rows, const Tensor& cols, std::size_t h, std::size_t w,
                              std::size_t max_rel_offset) {
  const std::size_t table = 2 * max_rel_offset + 1;
  if (rows.shape() != Shape{table} || cols.shape() != Shape{table}) {
    throw ConfigError("relative_position_bias: tables " + to_string(rows.shape()) + ", " + to_string(cols.shape()) +
                      " do not have " + std::to_string(table) + " entries");
  }
  const std::size_t n = h * w;
  std::vector<std::size_t> row_index(n * n), col_index(n * n);
  for (std::size_t i = 0; i < n; ++i) {
    const long ri = static_cast<long>(i / w), ci = static_cast<long>(i % w);
    for (std::size_t j = 0; j < n; ++j) {
      const long rj = static_cast<long>(j / w), cj = static_cast<long>(j % w);
      row_index[i * n + j] = clip_offset(rj - ri, max_rel_offset);
      col_index[i * n + j] = clip_offset(cj - ci, max_rel_offset);
    }
  }
  auto rd = rows.data();
  auto cd = cols.data();
  std::vector<double> out(n * n);
  for (std::size_t e = 0; e < n * n; ++e) out[e] = rd[row_index[e]] + cd[col_index[e]];
  return make_result({n, n}, std::move(out), {rows, cols},
                     [row_index = std::move(row_index), col_index = std::move(col_index)](Node& self) {
                       if (self.parents[0]->requires_grad) {
                         auto g = self.parents[0]->grad_buffer();
                         for (std::size_t e = 0; e < self.grad.size(); ++e) g[row_index[e]] += self.grad[e];
                       }
                       if (self.parents[1]->requires_grad) {
                         auto g = self.parents[1]->grad_buffer();
                         for (std::size_t e = 0; e < self.grad.size(); ++e) g[col_index[e]] += self.grad[e];
                       }
                     });
}

Tensor cross_attention(const Tensor& q, const Tensor& k, std::size_t h, std::size_t w, const Tensor& rel_rows,
                       const Tensor& rel_cols, std::size_t max_rel_offset) {
  if (q.shape() != k.shape()) {
    throw ConfigError("cross_attention: query " + to_string(q.shape()) + " and key " + to_string(k.shape()) +
                      " differ");
  }
  if (q.rank() != 2 && q.rank() != 3) throw ConfigError("cross_attention: expected (n, d) or (B, n, d)");
  const std::size_t n = q.shape()[q.rank() - 2];
  if (n != h * w) {
    throw ConfigError("cross_attention: " + std::to_string(n) + " positions but grid " + std::to_string(h) + "x" +
                      std::to_string(w));
  }
  const double inv_sqrt = 1.0 / std::sqrt(static_cast<double>(q.shape().back()));
  Tensor logits = scale(matmul(q, transpose(k)), inv_sqrt);
  logits = add_broadcast(logits, relative_position_bias(rel_rows, rel_cols, h, w, max_rel_offset));
  return softmax_rows(logits);
}

Tensor estimate_bias(std::span<const Tensor> attn, const Tensor& x_src, std::span<const Projection* const> values) {
  if (attn.size() != values.size() || attn.empty()) {
    throw ConfigError("estimate_bias: " + std::to_string(attn.size()) + " attention maps for " +
                      std::to_string(values.size()) + " value projections");
  }
  std::vector<Tensor> parts;
  parts.reserve(attn.size());
  for (std::size_t hd = 0; hd < attn.size(); ++hd) parts.push_back(matmul(attn[hd], project(x_src, *values[hd])));
  return concat_last(parts);
}

CtOutput ct_forward(const FeatureMap& x_id, const FeatureMap& x_ra, const CtWeights& weights, const CtConfig& cfg) {
  cfg.validate();
  weights.validate(cfg);
  x_id.validate();
  x_ra.validate();
  if (x_id.values.shape() != x_ra.values.shape() || x_id.h != x_ra.h || x_id.w != x_ra.w) {
    throw ConfigError("ct_forward: identity branch " + to_string(x_id.values.shape()) + " and race branch " +
                      to_string(x_ra.values.shape()) + " differ");
  }
  if (x_id.channels() != cfg.d) {
    throw ConfigError("ct_forward: features have " + std::to_string(x_id.channels()) + " channels, config d = " +
                      std::to_string(cfg.d));
  }

  std::vector<BlockRoles> id_roles, ra_roles;
  for (const HeadWeights& hw : weights.heads) {
    id_roles.push_back({hw.id_qry, hw.ra_key, hw.id_val, hw.id_rel_rows, hw.id_rel_cols});
    ra_roles.push_back({hw.ra_qry, hw.id_key, hw.ra_val, hw.ra_rel_rows, hw.ra_rel_cols});
  }

  CtOutput out;
  std::vector<Tensor> attn;
  out.eps_ra = run_block(x_id.values, x_ra.values, id_roles, x_id.h, x_id.w, cfg, attn);
  out.attn_id_to_ra = stack_heads(attn);
  out.eps_id = run_block(x_ra.values, x_id.values, ra_roles, x_id.h, x_id.w, cfg, attn);
  out.attn_ra_to_id = stack_heads(attn);
  out.x_id_out = FeatureMap{sub(x_id.values, out.eps_ra), x_id.h, x_id.w};
  out.x_ra_out = FeatureMap{sub(x_ra.values, out.eps_id), x_ra.h, x_ra.w};
  return out;
}

Tensor key_marginal_heatmaps(const Tensor& attn, std::size_t h, std::size_t w) {
  if (attn.rank() != 3 || attn.dim(1) != h * w || attn.dim(2) != h * w) {
    throw DimensionError("key_marginal_heatmaps: expected (heads, n, n) with n = h*w, got " +
                         to_string(attn.shape()));
  }
  const std::size_t heads = attn.dim(0), n = h * w;
  auto d = attn.data();
  std::vector<double> out(heads * n, 0.0);
  for (std::size_t hd = 0; hd < heads; ++hd) {
    for (std::size_t i = 0; i < n; ++i) {
      for (std::size_t j = 0; j < n; ++j) out[hd * n + j] += d[(hd * n + i) * n + j];
    }
  }
  return Tensor::from({heads, h, w}, std::move(out));
}

}  // namespace pct::ct
