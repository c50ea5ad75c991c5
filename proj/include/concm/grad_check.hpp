#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <span>
#include <vector>

#include "concm/matrix.hpp"
#include "concm/tape.hpp"

namespace concm {

/// Builds a scalar loss on `tape` from parameter nodes (one per matrix in the
/// parameter list, same order).
using LossBuilder = std::function<ad::Var(ad::Tape& tape, std::span<const ad::Var> params)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::size_t worst_param = 0;
  std::size_t worst_index = 0;
  double analytic = 0.0;
  double numeric = 0.0;
};

inline std::vector<Matrix> analytic_gradients(const LossBuilder& build,
                                              std::span<const Matrix> params) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  ad::Var loss = build(tape, vars);
  tape.backward(loss);
  std::vector<Matrix> grads;
  for (ad::Var v : vars) grads.push_back(tape.grad(v));
  return grads;
}

inline double evaluate_loss(const LossBuilder& build, std::span<const Matrix> params) {
  ad::Tape tape;
  std::vector<ad::Var> vars;
  for (const auto& p : params) vars.push_back(tape.parameter(p));
  return tape.value(build(tape, vars))(0, 0);
}

/// Compare tape gradients with central differences of step h. Reports
/// max |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
inline GradCheckResult grad_check(const LossBuilder& build, std::vector<Matrix> params,
                                  double h = 1e-5) {
  const auto grads = analytic_gradients(build, params);
  GradCheckResult res;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].size(); ++i) {
      double& x = params[p].data()[i];
      const double saved = x;
      x = saved + h;
      const double up = evaluate_loss(build, params);
      x = saved - h;
      const double down = evaluate_loss(build, params);
      x = saved;
      const double numeric = (up - down) / (2.0 * h);
      const double analytic = grads[p].data()[i];
      const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-12});
      const double rel = std::abs(analytic - numeric) / denom;
      if (rel > res.max_rel_error || (p == 0 && i == 0)) {
        res = {rel, p, i, analytic, numeric};
      }
    }
  }
  return res;
}

}  // namespace concm
