#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include "crossdepth/autograd.hpp"

namespace crossdepth::testing {

// f maps input Vars to a scalar Var. Compares analytic gradients against
// central finite differences for every element of every checked input.
struct GradCheck {
  double max_rel_err = 0.0;
  double worst_analytic = 0.0;
  double worst_fd = 0.0;
};

// Analytic gradients from `analytic_fn`, finite differences from `fd_fn`.
// Splitting the two matters for losses with stop-gradient semantics: there
// the difference quotient must be taken with the stopped operands frozen,
// which `fd_fn` encodes explicitly.
inline GradCheck gradcheck_against(const std::function<Var(const std::vector<Var>&)>& analytic_fn,
                                   const std::function<Var(const std::vector<Var>&)>& fd_fn,
                                   const std::vector<Tensor>& inputs,
                                   const std::vector<bool>& differentiable, double h = 1e-5) {
  std::vector<Var> vars;
  for (std::size_t i = 0; i < inputs.size(); ++i)
    vars.emplace_back(inputs[i].clone(), differentiable[i]);
  Var y = analytic_fn(vars);
  y.backward();

  auto eval_at = [&](std::size_t input_idx, std::int64_t elem, double value) {
    std::vector<Var> probe;
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      Tensor t = inputs[i].clone();
      if (i == input_idx) t[elem] = value;
      probe.emplace_back(std::move(t), false);
    }
    NoGradGuard guard;
    return fd_fn(probe).value()[0];
  };

  GradCheck result;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    if (!differentiable[i]) continue;
    const Tensor& grad = vars[i].grad();
    for (std::int64_t e = 0; e < inputs[i].numel(); ++e) {
      const double x0 = inputs[i][e];
      const double fp = eval_at(i, e, x0 + h);
      const double fm = eval_at(i, e, x0 - h);
      const double fd = (fp - fm) / (2.0 * h);
      const double analytic = grad.defined() ? grad[e] : 0.0;
      const double denom = std::max({std::fabs(analytic), std::fabs(fd), 1e-6});
      const double rel = std::fabs(analytic - fd) / denom;
      if (rel > result.max_rel_err) {
        result.max_rel_err = rel;
        result.worst_analytic = analytic;
        result.worst_fd = fd;
      }
    }
  }
  return result;
}

inline GradCheck gradcheck(const std::function<Var(const std::vector<Var>&)>& f,
                           const std::vector<Tensor>& inputs,
                           const std::vector<bool>& differentiable, double h = 1e-5) {
  return gradcheck_against(f, f, inputs, differentiable, h);
}

}  // namespace crossdepth::testing
