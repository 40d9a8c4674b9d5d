#pragma once

#include <random>

#include "master/tensor.hpp"

namespace master {

/// Fan-in-scaled uniform init for linear maps: U(+-sqrt(3/fan_in)),
/// variance 1/fan_in.
Tensor rand_uniform_fan_in(Shape shape, std::int64_t fan_in, std::mt19937_64& rng);

/// Fan-in-scaled uniform init for ReLU convs: U(+-sqrt(6/fan_in)),
/// variance 2/fan_in. Keeps signal variance through deep conv-LN-ReLU
/// stacks instead of contracting inputs toward a common fixed point.
Tensor rand_relu_fan_in(Shape shape, std::int64_t fan_in, std::mt19937_64& rng);

/// Standard normal scaled by sigma.
Tensor rand_normal(Shape shape, double sigma, std::mt19937_64& rng);

}  // namespace master
