// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace csilab {

using ScalarFunction = std::function<double(std::span<const double>)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h for every
/// coordinate. Throws NumericError when f returns a non-finite value and
/// std::invalid_argument for h <= 0.
std::vector<double> finite_diff_gradient(const ScalarFunction& f, std::span<const double> x,
                                         double h);

struct GradCheckReport {
  std::string parameter;
  double max_relative_error = 0.0;
  std::size_t pairs_sampled = 0;
};

/// |a - n| / max(|a|, |n|, floor). The floor keeps coordinates whose true
/// gradient is zero from dividing round-off by round-off.
double relative_error(double analytic, double numeric, double floor = 1e-7);

/// One sampled coordinate: `value` points at the live parameter entry that
/// `loss()` reads, `analytic` is the gradient computed for it.
struct ProbePoint {
  std::string parameter;
  double* value = nullptr;
  double analytic = 0.0;
};

/// Compares analytic gradients with central differences at each probe and
/// aggregates one report per parameter name, in first-seen order.
std::vector<GradCheckReport> check_probes(const std::function<double()>& loss,
                                          std::span<const ProbePoint> probes, double h);

}  // namespace csilab
