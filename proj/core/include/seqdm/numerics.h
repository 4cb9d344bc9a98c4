#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "seqdm/autodiff.h"
#include "seqdm/tensor.h"

namespace seqdm {

// exp(v_i - max v) / sum_j exp(v_j - max v). Throws UsageError on empty input.
std::vector<double> softmax_stable(std::span<const double> v);

// log sum_i exp(v_i), max-shifted. Exact for a single element.
double logsumexp(std::span<const double> v);

// A differentiable program builds a scalar on the graph it is handed. Inputs
// other than parameters are captured by the callable.
using Program = std::function<Var(Graph&)>;

struct ValueAndGrad {
  double value = 0.0;
  ParamStore grads;
};

// Runs `program` against `params` and returns its value and the gradient with
// respect to every parameter entry. Throws UsageError for an unknown parameter
// name or a non-scalar output.
ValueAndGrad eval_with_grad(const Program& program, const ParamStore& params);

// Value only.
double eval_program(const Program& program, const ParamStore& params);

struct FdReport {
  double max_rel_err = 0.0;
  std::string worst_name;
  int worst_index = -1;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t coords_checked = 0;
};

// Compares `analytic` against central differences (f(p+h) - f(p-h)) / 2h, one
// coordinate at a time. Relative error is |a - n| / max(|a|, |n|, 1e-8).
// f is evaluated on extended-precision graphs so that rounding in f does not
// swamp small gradient coordinates at steps near 1e-5.
FdReport fd_check_against(const Program& program, const ParamStore& params,
                          const ParamStore& analytic, double step);

// fd_check_against with the analytic gradient from eval_with_grad.
FdReport fd_check(const Program& program, const ParamStore& params, double step = 1e-5);

// Numeric gradient of an arbitrary scalar function of a parameter store by
// central differences.
ParamStore numeric_gradient(const std::function<double(const ParamStore&)>& f,
                            const ParamStore& params, double step);

}  // namespace seqdm
