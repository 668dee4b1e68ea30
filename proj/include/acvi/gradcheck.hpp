#pragma once

#include <functional>
#include <string>
#include <vector>

#include "acvi/params.hpp"
#include "acvi/tape.hpp"

namespace acvi {

// Gradient checks always run in the wide (double) width; central differences
// are not trustworthy at 32 bits.

struct GradCheckEntry {
  std::string name;
  double max_rel_err = 0.0;
  bool ok = true;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed = true;
  double worst = 0.0;

  std::string to_string() const;
};

// A differentiable scalar function of the parameters: builds its graph on the
// given tape from the bound parameters and returns the (scalar) loss. Any
// noise it consumes must be frozen (fixed addresses) so that repeated
// evaluation is bit-identical; grad_check verifies this and throws
// DeterminismError otherwise.
using ScalarFn =
    std::function<Tensor<double>(Tape<double>&, BoundParams<double>&)>;

// Central-difference comparison per scalar parameter. Relative error is
// |a - b| / max(|a|, |b|, 1e-8).
GradCheckReport grad_check(const ScalarFn& fn, ParamStore<double>& params,
                           double epsilon = 1e-5, double tolerance = 1e-4);

}  // namespace acvi
