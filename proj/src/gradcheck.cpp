#include "hact/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "hact/error.hpp"

namespace hact {

bool GradCheckReport::passed() const {
  return std::all_of(entries.begin(), entries.end(), [](const GradCheckEntry& e) { return e.passed; });
}

std::vector<std::string> GradCheckReport::failures() const {
  std::vector<std::string> names;
  for (const auto& e : entries) {
    if (!e.passed) names.push_back(e.tensor);
  }
  return names;
}

namespace {

double evaluate(const std::function<Tensor()>& fn) {
  GradTape tape;
  const Tensor out = fn();
  if (out.numel() != 1) throw UsageError("check_gradients: function must return a scalar");
  return out.item();
}

}  // namespace

GradCheckReport check_gradients(const std::function<Tensor()>& fn, std::vector<Tensor> inputs, double step,
                                double tolerance) {
  for (auto& t : inputs) {
    t.set_requires_grad(true);
    t.zero_grad();
  }
  double reference = 0.0;
  {
    GradTape tape;
    const Tensor loss = fn();
    reference = loss.item();
    backward(loss);
  }
  const double repeat = evaluate(fn);
  if (repeat != reference) {
    throw DiagnosticError("check_gradients: function is not deterministic (" + std::to_string(reference) + " vs " +
                          std::to_string(repeat) + ")");
  }

  GradCheckReport report;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    auto& t = inputs[i];
    std::vector<double> analytic(t.numel(), 0.0);
    if (t.has_grad()) std::copy(t.grad().begin(), t.grad().end(), analytic.begin());

    std::vector<double> numeric(t.numel());
    auto values = t.mutable_data();
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + step;
      const double up = evaluate(fn);
      values[k] = saved - step;
      const double down = evaluate(fn);
      values[k] = saved;
      numeric[k] = (up - down) / (2.0 * step);
    }

    double max_diff = 0.0, max_numeric = 0.0, max_analytic = 0.0;
    for (std::size_t k = 0; k < numeric.size(); ++k) {
      max_diff = std::max(max_diff, std::abs(analytic[k] - numeric[k]));
      max_numeric = std::max(max_numeric, std::abs(numeric[k]));
      max_analytic = std::max(max_analytic, std::abs(analytic[k]));
    }
    // Floor keeps identically-zero gradients from being judged on
    // finite-difference round-off alone.
    const double floor = 1e-6 * std::max(1.0, std::abs(reference));
    const double denom = std::max({max_numeric, max_analytic, floor});
    GradCheckEntry entry;
    entry.tensor = t.name().empty() ? "input" + std::to_string(i) : t.name();
    entry.max_relative_error = max_diff / denom;
    entry.passed = std::isfinite(entry.max_relative_error) && entry.max_relative_error <= tolerance;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace hact
