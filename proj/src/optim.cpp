#include "pct/optim.hpp"

#include <cmath>

#include "pct/errors.hpp"

namespace pct {

Param::Param(std::string name_in, Tensor value_in)
    : name(std::move(name_in)), value(std::move(value_in)), momentum(value.size(), 0.0) {
  if (!value.requires_grad()) throw ContractError("param " + name + " must require grad");
}

void OptimizerConfig::validate() const {
  if (!(learning_rate > 0.0)) throw ConfigError("learning rate must be positive");
  if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0, 1)");
  if (!(weight_decay >= 0.0)) throw ConfigError("weight decay must be nonnegative");
  for (std::size_t i = 1; i < schedule.size(); ++i) {
    if (schedule[i].first <= schedule[i - 1].first) {
      throw ConfigError("schedule epochs must be strictly increasing");
    }
  }
}

double learning_rate_at(const OptimizerConfig& cfg, int epoch) {
  double lr = cfg.learning_rate;
  for (const auto& [at, factor] : cfg.schedule) {
    if (epoch >= at) lr *= factor;
  }
  return lr;
}

void sgd_step(std::span<Param* const> params, const OptimizerConfig& cfg, int epoch) {
  for (const Param* p : params) {
    if (!p->value.has_grad()) throw ContractError("sgd_step: param " + p->name + " has no gradient");
  }
  const double lr = learning_rate_at(cfg, epoch);
  for (Param* p : params) {
    auto value = p->value.mutable_data();
    auto grad = p->value.grad();
    for (std::size_t i = 0; i < value.size(); ++i) {
      double& v = p->momentum[i];
      v = cfg.momentum * v + grad[i] + cfg.weight_decay * value[i];
      value[i] -= lr * v;
    }
    p->value.zero_grad();
  }
}

void zero_grads(std::span<Param* const> params) {
  for (Param* p : params) p->zero_grad();
}

double clip_grad_norm(std::span<Param* const> params, double max_norm) {
  if (!(max_norm > 0.0)) throw ContractError("clip_grad_norm: max_norm must be positive");
  double sq = 0.0;
  for (const Param* p : params) {
    if (!p->value.has_grad()) continue;
    for (double g : p->value.grad()) sq += g * g;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm) {
    const double factor = max_norm / norm;
    for (Param* p : params) {
      if (!p->value.has_grad()) continue;
      for (double& g : p->value.mutable_grad()) g *= factor;
    }
  }
  return norm;
}

namespace {

Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  std::vector<double> values(numel(shape));
  for (double& v : values) v = dist(rng);
  return Tensor::from(std::move(shape), std::move(values), true);
}

}  // namespace

Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng) {
  return uniform(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in + fan_out)), rng);
}

Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng) {
  return uniform(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

}  // namespace pct
