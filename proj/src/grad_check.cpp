#include <algorithm>
#include <cmath>

#include "ecac/errors.hpp"
#include "ecac/grid.hpp"

namespace ecac {

double gradcheck_relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckReport grad_check(const std::string& operation, const std::function<Grid()>& loss_fn,
                           std::vector<NamedGrid> params, double step) {
  if (!(step > 0.0 && step <= 1e-3)) {
    throw ContractError("grad_check: step must lie in (0, 1e-3], got " + std::to_string(step));
  }
  for (auto& p : params) {
    if (!p.grid.requires_grad() || !p.grid.is_leaf()) {
      throw ContractError("grad_check: parameter '" + p.name + "' is not a trainable leaf");
    }
    p.grid.zero_grad();
  }

  const Grid baseline = loss_fn();
  const double f0 = baseline.item();
  if (loss_fn().item() != f0) {
    throw ContractError("grad_check: loss for '" + operation + "' is not deterministic");
  }
  backward(baseline);

  GradCheckReport report;
  report.operation = operation;
  report.step = step;
  for (auto& p : params) {
    const std::size_t n = p.grid.size();
    std::vector<double> analytic(n, 0.0);
    if (p.grid.has_grad()) {
      const auto g = p.grid.grad();
      analytic.assign(g.begin(), g.end());
    }
    double worst = 0.0;
    auto values = p.grid.mutable_values();
    for (std::size_t i = 0; i < n; ++i) {
      const double saved = values[i];
      values[i] = saved + step;
      const double fp = loss_fn().item();
      values[i] = saved - step;
      const double fm = loss_fn().item();
      values[i] = saved;
      const double numeric = (fp - fm) / (2.0 * step);
      worst = std::max(worst, gradcheck_relative_error(analytic[i], numeric));
    }
    report.per_parameter.emplace_back(p.name, worst);
    report.max_relative_error = std::max(report.max_relative_error, worst);
  }
  return report;
}

}  // namespace ecac
