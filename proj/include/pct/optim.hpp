#pragma once

#include <random>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "pct/tensor.hpp"

namespace pct {

// A trainable tensor plus its SGD momentum buffer.
struct Param {
  std::string name;
  Tensor value;
  std::vector<double> momentum;

  Param() = default;
  Param(std::string name, Tensor value);

  void zero_grad() { value.zero_grad(); }
};

struct OptimizerConfig {
  double learning_rate = 0.1;
  double momentum = 0.9;
  double weight_decay = 5e-4;
  // (epoch, multiplier): from `epoch` on, the rate is further multiplied.
  std::vector<std::pair<int, double>> schedule;

  void validate() const;
};

// Base rate times every multiplier whose epoch has been reached.
double learning_rate_at(const OptimizerConfig& cfg, int epoch);

// v <- momentum*v + grad + weight_decay*value; value <- value - lr(epoch)*v.
// Clears the gradients afterwards. Throws ContractError if a param has no grad.
void sgd_step(std::span<Param* const> params, const OptimizerConfig& cfg, int epoch);

void zero_grads(std::span<Param* const> params);

// Rescales the gradients of `params` so that their joint L2 norm is at most
// max_norm. Params without a gradient are skipped. Returns the norm before
// rescaling.
double clip_grad_norm(std::span<Param* const> params, double max_norm);

// uniform(-sqrt(6/(fan_in+fan_out)), +sqrt(6/(fan_in+fan_out)))
Tensor glorot_uniform(Shape shape, std::size_t fan_in, std::size_t fan_out, std::mt19937_64& rng);
// uniform(-sqrt(6/fan_in), +sqrt(6/fan_in)), for ReLU convolutions.
Tensor he_uniform(Shape shape, std::size_t fan_in, std::mt19937_64& rng);

}  // namespace pct
