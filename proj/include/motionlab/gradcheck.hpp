// gradcheck.hpp — central finite-difference verification of tape gradients.
//
// Runs at 64-bit only; float32 round-off makes the comparison meaningless.
#pragma once

#include <functional>

#include "motionlab/tape.hpp"

namespace mlab {

// Builds a scalar loss from leaf variables placed on the given tape.
using GraphBuilder =
    std::function<VarT<double>(TapeT<double>&, const std::vector<VarT<double>>&)>;

struct GradCheckReport {
  double max_rel_err = 0.0;
  double analytic_at_max = 0.0;
  double numeric_at_max = 0.0;
  size_t checked = 0;
};

// Variant over long-lived parameters: the builder reads them via tape.use(),
// so real layer code can be checked unmodified.
inline GradCheckReport grad_check_params(
    const std::function<VarT<double>(TapeT<double>&)>& f,
    const std::vector<ParamT<double>*>& params, double eps = 1e-5) {
  auto eval = [&]() {
    TapeT<double> t;
    return f(t).val().data[0];
  };
  const double v0 = eval();
  if (!(v0 == eval()))
    throw NumericError("grad_check: non-deterministic subgraph (same inputs, different loss)");

  for (auto* p : params) {
    p->value.ensure_grad();
    p->value.zero_grad();
  }
  {
    TapeT<double> t;
    VarT<double> loss = f(t);
    t.backward(loss);
  }

  GradCheckReport rep;
  for (auto* p : params) {
    auto& g = *p->value.grad;
    for (size_t i = 0; i < p->value.numel(); ++i) {
      const double orig = p->value.data[i];
      p->value.data[i] = orig + eps;
      const double fp = eval();
      p->value.data[i] = orig - eps;
      const double fm = eval();
      p->value.data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(g[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.analytic_at_max = g[i];
        rep.numeric_at_max = numeric;
      }
      ++rep.checked;
    }
  }
  return rep;
}

// max over leaves of |analytic - numeric| / max(1, |numeric|).
inline GradCheckReport grad_check(const GraphBuilder& f, std::vector<TensorT<double>> leaves,
                                  double eps = 1e-5) {
  auto eval = [&](const std::vector<TensorT<double>>& xs) {
    TapeT<double> t;
    std::vector<VarT<double>> vars;
    vars.reserve(xs.size());
    for (const auto& x : xs) vars.push_back(t.input(x, false));
    return f(t, vars).val().data[0];
  };

  // Determinism gate: two evaluations at the same point must agree exactly.
  const double v0 = eval(leaves);
  const double v1 = eval(leaves);
  if (!(v0 == v1))
    throw NumericError("grad_check: non-deterministic subgraph (same inputs, different loss)");

  TapeT<double> t;
  std::vector<VarT<double>> vars;
  for (const auto& x : leaves) vars.push_back(t.input(x, true));
  VarT<double> loss = f(t, vars);
  t.backward(loss);

  GradCheckReport rep;
  for (size_t li = 0; li < leaves.size(); ++li) {
    const auto& analytic = t.has_grad(vars[li].id)
                               ? t.node(vars[li].id).grad
                               : std::vector<double>(leaves[li].numel(), 0.0);
    for (size_t i = 0; i < leaves[li].numel(); ++i) {
      const double orig = leaves[li].data[i];
      leaves[li].data[i] = orig + eps;
      const double fp = eval(leaves);
      leaves[li].data[i] = orig - eps;
      const double fm = eval(leaves);
      leaves[li].data[i] = orig;
      const double numeric = (fp - fm) / (2.0 * eps);
      const double err = std::abs(analytic[i] - numeric) / std::max(1.0, std::abs(numeric));
      if (err > rep.max_rel_err) {
        rep.max_rel_err = err;
        rep.analytic_at_max = analytic[i];
        rep.numeric_at_max = numeric;
      }
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace mlab
