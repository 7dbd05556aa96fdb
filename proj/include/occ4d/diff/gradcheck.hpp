#pragma once

// Central finite-difference verification of graph adjoints.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "occ4d/diff/graph.hpp"

namespace occ4d::diff {

struct GradCheckOptions {
  double step = 1e-5;
  double tolerance = 1e-4;
  double denominator_floor = 1e-8;
  /// Only entries whose name passes the filter are perturbed (all if empty).
  std::function<bool(const std::string&)> filter;
};

struct GradCheckParamResult {
  std::string name;
  std::size_t worst_index = 0;
  double max_rel_error = 0.0;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GradCheckParamResult> params;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t checked = 0;
  bool passed = true;
};

using LossBuilder = std::function<Var(Graph&, ParameterStore&)>;

inline double relative_error(double a, double b, double floor) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), floor});
}

/// Compares d(loss)/d(param) from backward() against central differences for
/// every parameter element. Leaves the store values unchanged.
inline GradCheckReport finite_diff_check(const LossBuilder& build, ParameterStore& store,
                                         const GradCheckOptions& opts = {}) {
  store.zero_grad();
  {
    Graph g;
    Var loss = build(g, store);
    g.backward(loss);
  }
  auto eval = [&]() {
    Graph g;
    return build(g, store).value().item();
  };
  GradCheckReport report;
  for (auto& e : store.entries()) {
    if (opts.filter && !opts.filter(e.name)) continue;
    GradCheckParamResult r;
    r.name = e.name;
    r.max_rel_error = -1.0;
    for (std::size_t i = 0; i < e.value.size(); ++i) {
      const double x0 = e.value[i];
      e.value[i] = x0 + opts.step;
      const double fp = eval();
      e.value[i] = x0 - opts.step;
      const double fm = eval();
      e.value[i] = x0;
      const double numeric = (fp - fm) / (2.0 * opts.step);
      const double analytic = e.grad[i];
      double err = relative_error(analytic, numeric, opts.denominator_floor);
      if (std::isnan(err)) err = INFINITY;
      ++report.checked;
      if (err > r.max_rel_error) {
        r.max_rel_error = err;
        r.worst_index = i;
        r.analytic = analytic;
        r.numeric = numeric;
      }
    }
    r.max_rel_error = std::max(r.max_rel_error, 0.0);
    if (report.worst_param.empty() || r.max_rel_error > report.max_rel_error) {
      report.max_rel_error = r.max_rel_error;
      report.worst_param = r.name;
    }
    report.params.push_back(r);
  }
  report.passed = report.max_rel_error < opts.tolerance;
  return report;
}

}  // namespace occ4d::diff
