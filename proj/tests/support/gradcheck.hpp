#pragma once

// Central finite differences against the tape's analytic gradients.

#include "medts/autograd/nn.hpp"

#include <functional>
#include <vector>

namespace medts::testing {

struct GradCheckResult {
  double relative_error = 0.0;  // ||analytic - numeric|| / (||analytic|| + ||numeric||)
  double analytic_norm = 0.0;
  Index checked = 0;
};

/// `loss` rebuilds the forward pass on a fresh tape and returns the scalar loss.
inline GradCheckResult grad_check(const std::function<ag::Var(ag::Tape&)>& loss,
                                  const std::vector<ag::Parameter*>& params, double h = 1e-5,
                                  Index max_entries_per_param = 64) {
  for (auto* p : params) p->zero_grad();
  {
    ag::Tape t;
    t.backward(loss(t));
  }
  auto eval = [&]() {
    ag::Tape t;
    t.set_grad_enabled(false);
    return loss(t).value()(0, 0);
  };
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  Index checked = 0;
  for (auto* p : params) {
    const Index n = p->value.size();
    const Index step = std::max<Index>(1, n / max_entries_per_param);
    for (Index i = 0; i < n; i += step) {
      double& x = p->value.data()[i];
      const double orig = x;
      x = orig + h;
      const double up = eval();
      x = orig - h;
      const double down = eval();
      x = orig;
      const double numeric = (up - down) / (2 * h);
      const double analytic = p->grad.data()[i];
      diff2 += (analytic - numeric) * (analytic - numeric);
      a2 += analytic * analytic;
      n2 += numeric * numeric;
      ++checked;
    }
  }
  GradCheckResult r;
  const double denom = std::sqrt(a2) + std::sqrt(n2);
  r.relative_error = denom > 0 ? std::sqrt(diff2) / denom : 0.0;
  r.analytic_norm = std::sqrt(a2);
  r.checked = checked;
  return r;
}

}  // namespace medts::testing
