#include "acvi/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

#include "acvi/errors.hpp"

namespace acvi {

namespace {

double eval_value(const ScalarFn& fn, ParamStore<double>& params) {
  Tape<double> tape;
  BoundParams<double> bound = bind(params, tape, /*requires_grad=*/false);
  Tensor<double> loss = fn(tape, bound);
  if (loss.size() != 1)
    throw ShapeError("grad_check: function must return a scalar");
  return loss.value()[0];
}

}  // namespace

std::string GradCheckReport::to_string() const {
  std::string out;
  char line[256];
  for (const auto& e : entries) {
    std::snprintf(line, sizeof(line), "%-28s max_rel_err=%.3e %s\n",
                  e.name.c_str(), e.max_rel_err, e.ok ? "ok" : "FAIL");
    out += line;
  }
  std::snprintf(line, sizeof(line), "gradcheck %s (worst %.3e)\n",
                passed ? "PASSED" : "FAILED", worst);
  out += line;
  return out;
}

GradCheckReport grad_check(const ScalarFn& fn, ParamStore<double>& params,
                           double epsilon, double tolerance) {
  // Determinism probe: two evaluations at the base point must agree exactly.
  const double base = eval_value(fn, params);
  const double base2 = eval_value(fn, params);
  if (base != base2)
    throw DeterminismError(
        "grad_check: function is not deterministic (two evaluations differ)");

  // Analytic gradients.
  std::map<std::string, Array<double>> analytic;
  {
    Tape<double> tape;
    BoundParams<double> bound = bind(params, tape, /*requires_grad=*/true);
    Tensor<double> loss = fn(tape, bound);
    if (loss.size() != 1)
      throw ShapeError("grad_check: function must return a scalar");
    tape.backward(loss);
    for (auto& [name, value] : params)
      analytic.emplace(name, tape.grad(bound[name]));
  }

  GradCheckReport report;
  for (auto& [name, value] : params) {
    GradCheckEntry entry;
    entry.name = name;
    const Array<double>& g = analytic.at(name);
    for (std::size_t i = 0; i < value.size(); ++i) {
      const double saved = value[i];
      value[i] = saved + epsilon;
      const double up = eval_value(fn, params);
      value[i] = saved - epsilon;
      const double down = eval_value(fn, params);
      value[i] = saved;
      const double fd = (up - down) / (2.0 * epsilon);
      const double rel = std::fabs(fd - g[i]) /
                         std::max({std::fabs(fd), std::fabs(g[i]), 1e-8});
      if (rel > entry.max_rel_err) entry.max_rel_err = rel;
    }
    entry.ok = entry.max_rel_err <= tolerance;
    report.worst = std::max(report.worst, entry.max_rel_err);
    report.passed = report.passed && entry.ok;
    report.entries.push_back(std::move(entry));
  }
  return report;
}

}  // namespace acvi
