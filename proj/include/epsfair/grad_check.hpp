#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>

#include "epsfair/ops.hpp"

namespace epsfair {

/// Scalar-valued expression built on a fresh graph from one input leaf.
using ScalarFn = std::function<Var(Graph&, Var)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
};

/// Compares the reverse-mode gradient of `f` at `x` with central
/// differences. The relative error of a coordinate is
/// |analytic - numeric| / max(1, |analytic|).
inline GradCheckResult grad_check_detailed(const ScalarFn& f, const Tensor& x, double step) {
  if (!(step > 0.0)) throw std::invalid_argument("grad_check: step must be positive");
  Tensor analytic;
  {
    Graph g;
    Var leaf = g.parameter(x);
    Var out = f(g, leaf);
    g.backward(out);
    analytic = g.grad(leaf);
  }
  auto eval = [&](const Tensor& at) {
    Graph g;
    Var leaf = g.parameter(at);
    double v = f(g, leaf).item();
    if (!std::isfinite(v)) throw NonFiniteError("grad_check: non-finite value at perturbed point");
    return v;
  };
  GradCheckResult res;
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double orig = probe[i];
    probe[i] = orig + step;
    double up = eval(probe);
    probe[i] = orig - step;
    double down = eval(probe);
    probe[i] = orig;
    double numeric = (up - down) / (2.0 * step);
    double abs_err = std::abs(analytic[i] - numeric);
    double rel_err = abs_err / std::max(1.0, std::abs(analytic[i]));
    res.max_abs_error = std::max(res.max_abs_error, abs_err);
    if (rel_err > res.max_rel_error) {
      res.max_rel_error = rel_err;
      res.worst_index = i;
    }
  }
  return res;
}

inline double grad_check(const ScalarFn& f, const Tensor& x, double step = 1e-5) {
  return grad_check_detailed(f, x, step).max_rel_error;
}

}  // namespace epsfair
