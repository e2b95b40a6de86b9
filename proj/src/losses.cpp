#include "pct/losses.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "pct/errors.hpp"
#include "pct/ops.hpp"

namespace pct::losses {

MarginVariant parse_variant(const std::string& name) {
  if (name == "arc" || name == "arcface") return MarginVariant::arc;
  if (name == "cos" || name == "cosface") return MarginVariant::cos;
  throw ConfigError("unknown margin variant '" + name + "' (expected arc or cos)");
}

std::string to_string(MarginVariant variant) { return variant == MarginVariant::arc ? "arc" : "cos"; }

void MarginConfig::validate() const {
  if (!(s > 0.0)) throw ConfigError("margin scale s must be positive");
  if (!(m >= 0.0)) throw ConfigError("margin m must be nonnegative");
  if (variant == MarginVariant::arc && !(m < std::numbers::pi / 2)) {
    throw ConfigError("arc margin must be below pi/2");
  }
  if (num_classes == 0) throw ConfigError("num_classes must be positive");
}

ClassifierHead ClassifierHead::init(std::size_t num_classes, std::size_t embed_dim, std::mt19937_64& rng,
                                    const std::string& name) {
  return ClassifierHead{Param(name + ".weight", glorot_uniform({num_classes, embed_dim}, embed_dim, num_classes, rng))};
}

LinearHead LinearHead::init(std::size_t embed_dim, std::size_t num_classes, std::mt19937_64& rng,
                            const std::string& name) {
  return LinearHead{Param(name + ".weight", glorot_uniform({embed_dim, num_classes}, embed_dim, num_classes, rng)),
                    Param(name + ".bias", Tensor::zeros({num_classes}, true))};
}

Tensor LinearHead::operator()(const Tensor& x) const {
  return add_broadcast(matmul(x, weight.value), bias.value);
}

Tensor apply_margin(const Tensor& cosines, std::span<const int> labels, const MarginConfig& cfg) {
  cfg.validate();
  if (cosines.rank() != 2 || cosines.dim(1) != cfg.num_classes) {
    throw DimensionError("apply_margin: cosines " + pct::to_string(cosines.shape()) + " for " +
                         std::to_string(cfg.num_classes) + " classes");
  }
  const std::size_t rows = cosines.dim(0), k = cosines.dim(1);
  if (labels.size() != rows) throw ContractError("apply_margin: label count does not match batch");
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= k) {
      throw ContractError("apply_margin: label " + std::to_string(y) + " outside [0, " + std::to_string(k) + ")");
    }
  }
  const double lo = -1.0 + kCosineClamp, hi = 1.0 - kCosineClamp;
  auto cd = cosines.data();
  std::vector<double> out(cosines.size());
  // d(out)/d(cosine) per entry; zero where the clamp is active.
  std::vector<double> slope(cosines.size());
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t e = r * k + j;
      const double raw = cd[e];
      if (std::isnan(raw)) throw NumericError("apply_margin: NaN cosine");
      const double c = std::clamp(raw, lo, hi);
      const double pass = (raw == c) ? 1.0 : 0.0;
      if (static_cast<int>(j) == labels[r]) {
        if (cfg.variant == MarginVariant::arc) {
          const double theta = std::acos(c);
          out[e] = cfg.s * std::cos(theta + cfg.m);
          slope[e] = pass * cfg.s * std::sin(theta + cfg.m) / std::sqrt(1.0 - c * c);
        } else {
          out[e] = cfg.s * (c - cfg.m);
          slope[e] = pass * cfg.s;
        }
      } else {
        out[e] = cfg.s * c;
        slope[e] = pass * cfg.s;
      }
    }
  }
  return detail::make_result(cosines.shape(), std::move(out), {cosines},
                             [slope = std::move(slope)](detail::Node& self) {
                               auto g = self.parents[0]->grad_buffer();
                               for (std::size_t e = 0; e < g.size(); ++e) g[e] += slope[e] * self.grad[e];
                             });
}

Tensor margin_logits(const Tensor& embed, const ClassifierHead& head, std::span<const int> labels,
                     const MarginConfig& cfg) {
  Tensor batch = embed.rank() == 1 ? reshape(embed, {1, embed.size()}) : embed;
  if (batch.rank() != 2 || batch.dim(1) != head.weight.value.dim(1)) {
    throw DimensionError("margin_logits: embedding " + pct::to_string(embed.shape()) + " does not match head " +
                         pct::to_string(head.weight.value.shape()));
  }
  Tensor cosines = matmul(l2_normalize_rows(batch), transpose(l2_normalize_rows(head.weight.value)));
  return apply_margin(cosines, labels, cfg);
}

Tensor face_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2 || logits.dim(0) == 0) throw ContractError("face_loss: empty batch");
  return cross_entropy(logits, labels);
}

Tensor race_loss(const Tensor& race_embed, std::span<const int> labels, const LinearHead& head) {
  return cross_entropy(head(race_embed), labels);
}

Tensor total_loss(const Tensor& face, const Tensor& race, const LossWeights& weights) {
  if (!std::isfinite(weights.alpha) || weights.alpha < 0.0) throw ConfigError("alpha must be finite and >= 0");
  if (!std::isfinite(face.item()) || !std::isfinite(race.item())) throw NumericError("total_loss: non-finite term");
  return add(face, scale(race, weights.alpha));
}

}  // namespace pct::losses
