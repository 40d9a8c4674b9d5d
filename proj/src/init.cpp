#include "master/init.hpp"

#include <cmath>

namespace master {

namespace {
Tensor uniform(Shape shape, double limit, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-limit, limit);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}
}  // namespace

Tensor rand_uniform_fan_in(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  return uniform(std::move(shape), std::sqrt(3.0 / static_cast<double>(fan_in)), rng);
}

Tensor rand_relu_fan_in(Shape shape, std::int64_t fan_in, std::mt19937_64& rng) {
  return uniform(std::move(shape), std::sqrt(6.0 / static_cast<double>(fan_in)), rng);
}

Tensor rand_normal(Shape shape, double sigma, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, sigma);
  Tensor t(std::move(shape));
  for (std::int64_t i = 0; i < t.size(); ++i) t[i] = dist(rng);
  return t;
}

}  // namespace master
