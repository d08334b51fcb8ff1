// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace csilab {

/// Top-K weights keep the full-softmax probabilities of the selected experts
/// (softmax over all M logits, then truncation). Flip this only together
/// with the gate backward pass in layers.cpp.
inline constexpr bool kRenormalizeTopK = false;

/// Numerically stable softmax (max subtraction). Throws NumericError on a
/// non-finite logit.
std::vector<double> softmax(std::span<const double> logits);

/// Indices of the k largest logits in descending order; ties go to the
/// lower index.
std::vector<std::size_t> topk_indices(std::span<const double> logits, std::size_t k);

/// Sparse gate weights: exactly k nonzeros holding softmax(logits) at the k
/// largest logits, zeros elsewhere.
///
/// Throws std::invalid_argument unless 1 <= k <= logits.size(), and
/// NumericError on non-finite logits.
std::vector<double> topk_softmax(std::span<const double> logits, std::size_t k);

}  // namespace csilab
