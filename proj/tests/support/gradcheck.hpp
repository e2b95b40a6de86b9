#pragma once

#include <functional>
#include <random>
#include <vector>

#include "pct/tensor.hpp"

namespace pct::testing {

// Leaf tensor with entries drawn uniformly from [lo, hi).
Tensor uniform(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0, bool requires_grad = true);

// Like uniform, but every magnitude lies in [lo, hi) with a random sign.
// Keeps ReLU inputs away from the kink.
Tensor signed_uniform(Shape shape, std::mt19937_64& rng, double lo, double hi, bool requires_grad = true);

// sum(y * w): a scalar that depends on every entry of y.
Tensor readout(const Tensor& y, const Tensor& w);

// Random readout weights matching y.
Tensor readout(const Tensor& y, std::mt19937_64& rng);

// Relative error between the reverse-mode gradient of `loss` and central
// finite differences with the given step, over all entries of all `leaves`.
// `loss` must rebuild its graph from the leaves on every call; leaves are
// perturbed in place and restored. Returns |a - n| / max(|a|, |n|) over the
// concatenated gradient vectors, or the absolute difference when both are
// below 1e-8.
double gradcheck(const std::function<Tensor()>& loss, const std::vector<Tensor>& leaves, double step = 1e-5);

}  // namespace pct::testing
