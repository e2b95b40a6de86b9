#pragma once

#include <random>
#include <span>
#include <string>

#include "pct/optim.hpp"
#include "pct/tensor.hpp"

namespace pct::losses {

enum class MarginVariant { arc, cos };

MarginVariant parse_variant(const std::string& name);
std::string to_string(MarginVariant variant);

// Cosines are clamped to this distance from +/-1 before arccos.
inline constexpr double kCosineClamp = 1e-7;

struct MarginConfig {
  MarginVariant variant = MarginVariant::arc;
  double s = 64.0;
  double m = 0.35;
  std::size_t num_classes = 2;

  void validate() const;
};

// Face classifier without bias; rows are class centres and are unit-normalised
// before every logit computation.
struct ClassifierHead {
  Param weight;  // num_classes x embed_dim

  static ClassifierHead init(std::size_t num_classes, std::size_t embed_dim, std::mt19937_64& rng,
                             const std::string& name = "face_head");
};

// Plain affine race classifier.
struct LinearHead {
  Param weight;  // embed_dim x num_classes
  Param bias;    // num_classes

  static LinearHead init(std::size_t embed_dim, std::size_t num_classes, std::mt19937_64& rng,
                         const std::string& name = "race_head");
  Tensor operator()(const Tensor& x) const;
};

struct LossWeights {
  double alpha = 1.0;
};

// Applies the margin to a (N, K) cosine matrix: target entries become
// s*cos(acos(c)+m) (arc) or s*(c-m) (cos), all others s*c. Cosines are
// clamped to [-1+1e-7, 1-1e-7] first.
Tensor apply_margin(const Tensor& cosines, std::span<const int> labels, const MarginConfig& cfg);

// Cosines between unit embeddings and unit class rows, then apply_margin.
// `embed` is (N, D) or a single (D) vector.
Tensor margin_logits(const Tensor& embed, const ClassifierHead& head, std::span<const int> labels,
                     const MarginConfig& cfg);

Tensor face_loss(const Tensor& logits, std::span<const int> labels);
Tensor race_loss(const Tensor& race_embed, std::span<const int> labels, const LinearHead& head);
Tensor total_loss(const Tensor& face, const Tensor& race, const LossWeights& weights);

}  // namespace pct::losses
