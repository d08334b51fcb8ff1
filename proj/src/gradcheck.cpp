// SPDX-License-Identifier: Apache-2.0
#include "csilab/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csilab/errors.hpp"

namespace csilab {

namespace {
double checked(double v) {
  if (!std::isfinite(v)) throw NumericError("finite difference: function value is not finite");
  return v;
}
}  // namespace

std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  std::vector<double> point(x.begin(), x.end());
  std::vector<double> grad(point.size());
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + h;
    const double up = checked(f(point));
    point[i] = orig - h;
    const double down = checked(f(point));
    point[i] = orig;
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

std::vector<GradCheckReport> check_probes(const std::function<double()>& loss,
                                          std::span<const ProbePoint> probes, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite difference step must be positive");
  std::vector<GradCheckReport> reports;
  for (const auto& probe : probes) {
    const double orig = *probe.value;
    *probe.value = orig + h;
    const double up = checked(loss());
    *probe.value = orig - h;
    const double down = checked(loss());
    *probe.value = orig;
    const double numeric = (up - down) / (2.0 * h);
    const double err = relative_error(probe.analytic, numeric);

    auto it = std::find_if(reports.begin(), reports.end(),
                           [&](const GradCheckReport& r) { return r.parameter == probe.parameter; });
    if (it == reports.end()) {
      reports.push_back({probe.parameter, 0.0, 0});
      it = std::prev(reports.end());
    }
    it->max_relative_error = std::max(it->max_relative_error, err);
    ++it->pairs_sampled;
  }
  return reports;
}

}  // namespace csilab
