#include "seqdm/numerics.h"

#include <algorithm>
#include <cmath>

#include "seqdm/errors.h"

namespace seqdm {

std::vector<double> softmax_stable(std::span<const double> v) {
  if (v.empty()) throw UsageError("softmax_stable: empty input");
  const double mx = *std::max_element(v.begin(), v.end());
  std::vector<double> out(v.size());
  double s = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) {
    out[i] = std::exp(v[i] - mx);
    s += out[i];
  }
  for (double& x : out) x /= s;
  return out;
}

double logsumexp(std::span<const double> v) {
  if (v.empty()) throw UsageError("logsumexp: empty input");
  if (v.size() == 1) return v[0];
  const double mx = *std::max_element(v.begin(), v.end());
  if (std::isinf(mx)) return mx;
  double s = 0.0;
  for (double x : v) s += std::exp(x - mx);
  return mx + std::log(s);
}

ValueAndGrad eval_with_grad(const Program& program, const ParamStore& params) {
  Graph g(&params);
  Var out = program(g);
  if (g.size(out) != 1) throw UsageError("eval_with_grad: program output is not a scalar");
  g.backward(out);
  return {g.value(out), g.param_grads()};
}

namespace {

long double eval_extended(const Program& program, const ParamStore& params) {
  Graph g(&params, Precision::kExtended);
  Var out = program(g);
  if (g.size(out) != 1) throw UsageError("eval_program: program output is not a scalar");
  return g.value_extended(out);
}

}  // namespace

double eval_program(const Program& program, const ParamStore& params) {
  Graph g(&params);
  Var out = program(g);
  if (g.size(out) != 1) throw UsageError("eval_program: program output is not a scalar");
  return g.value(out);
}

FdReport fd_check_against(const Program& program, const ParamStore& params,
                          const ParamStore& analytic, double step) {
  if (!(step > 0.0)) throw UsageError("fd_check: step must be positive");
  require_shape_compatible(params, analytic, "fd_check");
  FdReport report;
  ParamStore probe = params;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    auto data = probe.entry(e).second.data();
    const auto an = analytic.entry(e).second.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double orig = data[k];
      data[k] = orig + step;
      const long double fp = eval_extended(program, probe);
      data[k] = orig - step;
      const long double fm = eval_extended(program, probe);
      data[k] = orig;
      const double numeric = static_cast<double>((fp - fm) / (2.0L * step));
      const double denom = std::max({std::abs(an[k]), std::abs(numeric), 1e-8});
      const double rel = std::abs(an[k] - numeric) / denom;
      ++report.coords_checked;
      if (rel > report.max_rel_err || report.worst_index < 0) {
        report.max_rel_err = rel;
        report.worst_name = probe.entry(e).first;
        report.worst_index = static_cast<int>(k);
        report.worst_analytic = an[k];
        report.worst_numeric = numeric;
      }
    }
  }
  return report;
}

FdReport fd_check(const Program& program, const ParamStore& params, double step) {
  const ValueAndGrad vg = eval_with_grad(program, params);
  return fd_check_against(program, params, vg.grads, step);
}

ParamStore numeric_gradient(const std::function<double(const ParamStore&)>& f,
                            const ParamStore& params, double step) {
  if (!(step > 0.0)) throw UsageError("numeric_gradient: step must be positive");
  ParamStore grads = params.zeros_like();
  ParamStore probe = params;
  for (std::size_t e = 0; e < probe.size(); ++e) {
    auto data = probe.entry(e).second.data();
    auto out = grads.entry(e).second.data();
    for (std::size_t k = 0; k < data.size(); ++k) {
      const double orig = data[k];
      data[k] = orig + step;
      const double fp = f(probe);
      data[k] = orig - step;
      const double fm = f(probe);
      data[k] = orig;
      out[k] = (fp - fm) / (2.0 * step);
    }
  }
  return grads;
}

}  // namespace seqdm
