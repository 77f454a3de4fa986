#pragma once

#include <functional>
#include <string>
#include <vector>

#include "hact/tensor.hpp"

namespace hact {

struct GradCheckEntry {
  std::string tensor;  // name of the checked input (or "input<i>")
  // max_i |analytic_i - numeric_i| / max(max_i |numeric_i|, max_i |analytic_i|,
  // 1e-6 * max(1, |f|)).
  double max_relative_error = 0.0;
  bool passed = false;
};

struct GradCheckReport {
  std::vector<GradCheckEntry> entries;
  bool passed() const;
  /// Names of inputs whose gradients failed the tolerance.
  std::vector<std::string> failures() const;
};

// Compares reverse-mode gradients of the scalar `fn` with central differences
// of step `step`, perturbing each input's values in place. `fn` is evaluated
// with recording enabled. Throws DiagnosticError when two evaluations at the
// same point disagree.
GradCheckReport check_gradients(const std::function<Tensor()>& fn, std::vector<Tensor> inputs, double step = 1e-5,
                                double tolerance = 1e-4);

}  // namespace hact
