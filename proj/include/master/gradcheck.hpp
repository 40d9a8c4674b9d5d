#pragma once

#include <functional>

#include "master/tensor.hpp"

namespace master {

/// Compares the taped gradient of the scalar-valued f at x against central
/// finite differences. Returns max over coordinates of
/// |analytic - numeric| / max(1, |analytic|). Perturbs x in place and
/// restores it; f must be re-runnable.
double grad_check(const std::function<Tensor(const Tensor&)>& f, Tensor x, double eps = 1e-5);

}  // namespace master
