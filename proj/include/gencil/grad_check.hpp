// SPDX-License-Identifier: Apache-2.0
// Copyright 2026 The gencil Authors

#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "gencil/graph.hpp"

namespace gencil {

/// Builds a graph whose output is a scalar loss over bound parameters.
using LossBuilder = std::function<Var(Graph&)>;

struct GradCheckReport {
  double max_relative_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t coordinates = 0;
};

/// Compares analytic gradients against central differences
/// (f(x+eps) - f(x-eps)) / 2eps for every coordinate of every trainable
/// parameter. Relative error uses max(|a|, |b|, 1e-8) as denominator.
inline GradCheckReport grad_check_report(const LossBuilder& build,
                                         std::span<Parameter* const> params, double epsilon) {
  if (!(epsilon > 0.0 && epsilon <= 1e-3))
    throw std::invalid_argument("grad_check: epsilon must lie in (0, 1e-3]");
  std::vector<Tensor> analytic;
  {
    Graph g;
    Var loss = build(g);
    if (g.value(loss).size() != 1) throw NumericsError("grad_check: loss is not scalar");
    for (Parameter* p : params) g.param(*p);
    g.backward(loss);
    for (Parameter* p : params) analytic.push_back(p->grad);
  }
  auto eval = [&build]() {
    Graph g(GradMode::kInference);
    return g.value(build(g)).item();
  };
  GradCheckReport rep;
  for (std::size_t k = 0; k < params.size(); ++k) {
    Parameter& p = *params[k];
    if (!p.trainable) continue;
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double orig = p.value[i];
      p.value[i] = orig + epsilon;
      const double fp = eval();
      p.value[i] = orig - epsilon;
      const double fm = eval();
      p.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * epsilon);
      const double a = analytic[k][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-8});
      const double rel = std::abs(a - numeric) / denom;
      ++rep.coordinates;
      if (rel > rep.max_relative_error) {
        rep.max_relative_error = rel;
        rep.worst_parameter = p.name;
        rep.worst_index = i;
      }
    }
  }
  return rep;
}

inline double grad_check(const LossBuilder& build, std::span<Parameter* const> params,
                         double epsilon) {
  return grad_check_report(build, params, epsilon).max_relative_error;
}

inline double grad_check(const LossBuilder& build, const std::vector<Parameter*>& params,
                         double epsilon) {
  return grad_check(build, std::span<Parameter* const>(params), epsilon);
}

}  // namespace gencil
