// SPDX-License-Identifier: Apache-2.0
#include "csilab/routing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>

#include "csilab/errors.hpp"

namespace csilab {

std::vector<double> softmax(std::span<const double> logits) {
  if (logits.empty()) throw std::invalid_argument("softmax of an empty vector");
  double peak = logits[0];
  for (double z : logits) {
    if (!std::isfinite(z)) throw NumericError("non-finite gate logit");
    peak = std::max(peak, z);
  }
  std::vector<double> p(logits.size());
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp(logits[i] - peak);
    total += p[i];
  }
  for (double& v : p) v /= total;
  return p;
}

std::vector<std::size_t> topk_indices(std::span<const double> logits, std::size_t k) {
  if (k < 1 || k > logits.size()) {
    throw std::invalid_argument("top-k requires 1 <= k <= " + std::to_string(logits.size()));
  }
  std::vector<std::size_t> order(logits.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::partial_sort(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(k), order.end(),
                    [&](std::size_t a, std::size_t b) {
                      if (logits[a] != logits[b]) return logits[a] > logits[b];
                      return a < b;
                    });
  order.resize(k);
  return order;
}

std::vector<double> topk_softmax(std::span<const double> logits, std::size_t k) {
  const auto selected = topk_indices(logits, k);
  const auto probs = softmax(logits);
  std::vector<double> weights(logits.size(), 0.0);
  [[maybe_unused]] double kept = 0.0;
  for (std::size_t i : selected) {
    weights[i] = probs[i];
    kept += probs[i];
  }
  if constexpr (kRenormalizeTopK) {
    for (std::size_t i : selected) weights[i] /= kept;
  }
  return weights;
}

}  // namespace csilab
