// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/rng.hpp"
#include "csilab/tensor.hpp"

namespace csilab {

/// Per-position selector over a T x K x N sample (same indexing as CsiSample).
using Region = std::vector<std::uint8_t>;

std::size_t region_count(const Region& region);

/// Planes tensor 2 x T x K x N: plane 0 real, plane 1 imaginary.
Tensor complex_to_planes(const CsiSample& sample);
CsiSample planes_to_complex(const Tensor& planes, const GridSpec& grid,
                            const ArrayGeometry& geometry);

struct Normalized {
  CsiSample sample;
  double scale = 1.0;  ///< multiply raw values by this to normalise
};

/// Scales the sample to unit mean power. Throws DegenerateInputError on an
/// all-zero sample.
Normalized normalize(const CsiSample& sample);
/// Scale factor giving unit mean power over `region` only.
double power_scale(const CsiSample& sample, const Region& region);
CsiSample denormalize(const CsiSample& sample, double scale);

struct PatchSpec {
  std::size_t p_t = 4;
  std::size_t p_f = 4;
  std::size_t p_s = 4;

  void validate() const;
  std::size_t token_dim() const { return 2 * p_t * p_f * p_s; }
  friend bool operator==(const PatchSpec&, const PatchSpec&) = default;
};

struct TokenCoord {
  std::size_t t = 0, f = 0, s = 0;
  friend bool operator==(const TokenCoord&, const TokenCoord&) = default;
};

/// Token geometry of one sample shape: tokens are enumerated time-slab
/// major, then frequency, then space.
struct GridLayout {
  std::size_t T = 0, K = 0, N = 0;
  PatchSpec spec;
  std::size_t n_t = 0, n_f = 0, n_s = 0;

  GridLayout() = default;
  GridLayout(std::size_t T, std::size_t K, std::size_t N, const PatchSpec& spec);

  std::size_t tokens() const { return n_t * n_f * n_s; }
  TokenCoord coord(std::size_t token) const;
  std::vector<TokenCoord> coords() const;
  /// Positions (t, k, n) inside the original extent covered by a token.
  Region token_region(std::span<const std::size_t> tokens) const;
  friend bool operator==(const GridLayout&, const GridLayout&) = default;
};

struct TokenGrid {
  GridLayout layout;
  /// L x (2 p_t p_f p_s); each row flattens (plane, dt, df, ds) row-major,
  /// with zeros where a patch overhangs the sample.
  Mat tokens;
};

TokenGrid patchify(const Tensor& planes, const PatchSpec& spec);
/// Inverse of patchify; padding positions are dropped.
Tensor unpatchify(const Mat& tokens, const GridLayout& layout);
inline Tensor unpatchify(const TokenGrid& grid) { return unpatchify(grid.tokens, grid.layout); }

enum class MaskMode { Random, Time, Frequency, None };

/// Pretraining task id (1..4) naturally paired with a mask mode.
int task_for_mode(MaskMode mode);
const char* mask_mode_name(MaskMode mode);

struct MaskPlan {
  MaskMode mode = MaskMode::None;
  double ratio = 0.0;
  int task_id = 4;
  std::vector<std::size_t> visible;  ///< ascending
  std::vector<std::size_t> masked;   ///< ascending
};

/// Random: floor(ratio L) tokens masked uniformly, at least one visible.
/// Time / Frequency: every token whose slab index is >= ceil((1 - ratio) n)
/// along that axis. None: nothing masked.
///
/// Throws std::invalid_argument for ratio outside [0, 1) or an axis mode on
/// an axis with fewer than two slabs.
MaskPlan make_mask_plan(MaskMode mode, double ratio, const GridLayout& layout, SeededRng& rng);

/// Fraction of pilot positions kept per axis.
struct PilotPattern {
  double time = 1.0;
  double antenna = 1.0;
  double subcarrier = 1.0;

  void validate() const;
  friend bool operator==(const PilotPattern&, const PilotPattern&) = default;
};

/// Evenly spaced indices including 0 and len - 1; count = round(fraction len).
/// Throws std::invalid_argument when fewer than two would be kept on an
/// axis of length >= 2 that is not kept whole.
std::vector<std::size_t> keep_indices(std::size_t len, double fraction);

/// Keeps the values on the pilot grid and fills every other position by
/// separable linear interpolation (time, then frequency, then antenna).
CsiSample pilot_downsample_interpolate(const CsiSample& sample, const PilotPattern& pattern);

/// Region selecting the last `count` entries along time or frequency.
Region time_suffix_region(const GridSpec& grid, std::size_t n_antennas, std::size_t count);
Region frequency_suffix_region(const GridSpec& grid, std::size_t n_antennas, std::size_t count);

}  // namespace csilab
