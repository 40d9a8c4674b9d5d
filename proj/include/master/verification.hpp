#pragma once

#include <string>
#include <vector>

#include "master/inference.hpp"

namespace master {

/// Finite-difference checks of every differentiable building block plus the
/// full micro decoder with its loss, on random small inputs.
struct GradCheckReport {
  struct Item {
    std::string name;
    double max_rel_err = 0.0;
  };
  std::vector<Item> items;
  double worst = 0.0;
  double threshold = 1e-4;

  bool passed() const { return worst < threshold; }
  std::string summary() const;
};

GradCheckReport run_gradient_checks(std::uint64_t seed);

/// Full-scale encoder pass asserting every stage output of the backbone
/// table (24x80, 12x40, 6x40, 6x40, 6x40; final 512 channels).
struct ShapeReport {
  std::vector<std::pair<std::string, std::string>> stages;  // name, actual shape
  bool passed = false;
  std::string summary() const;
};

ShapeReport run_shape_conformance();

}  // namespace master
