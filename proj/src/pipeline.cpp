// SPDX-License-Identifier: Apache-2.0
#include "csilab/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "csilab/errors.hpp"

namespace csilab {

namespace {
std::size_t ceil_div(std::size_t a, std::size_t b) { return (a + b - 1) / b; }
}  // namespace

std::size_t region_count(const Region& region) {
  return static_cast<std::size_t>(std::count(region.begin(), region.end(), std::uint8_t{1}));
}

Tensor complex_to_planes(const CsiSample& sample) {
  Tensor planes({2, sample.T(), sample.K(), sample.N()});
  const std::size_t n = sample.values.size();
  for (std::size_t i = 0; i < n; ++i) {
    planes[i] = sample.values[i].real();
    planes[n + i] = sample.values[i].imag();
  }
  return planes;
}

CsiSample planes_to_complex(const Tensor& planes, const GridSpec& grid,
                            const ArrayGeometry& geometry) {
  CsiSample out(grid, geometry);
  const std::vector<std::size_t> expect{2, grid.t_samples, grid.subcarriers, geometry.elements()};
  if (planes.shape() != expect) throw std::invalid_argument("planes shape does not match grid");
  const std::size_t n = out.values.size();
  for (std::size_t i = 0; i < n; ++i) out.values[i] = {planes[i], planes[n + i]};
  return out;
}

Normalized normalize(const CsiSample& sample) {
  Region all(sample.values.size(), 1);
  const double scale = power_scale(sample, all);
  return {denormalize(sample, 1.0 / scale), scale};
}

double power_scale(const CsiSample& sample, const Region& region) {
  if (region.size() != sample.values.size()) throw std::invalid_argument("region size mismatch");
  double acc = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (!region[i]) continue;
    acc += std::norm(sample.values[i]);
    ++count;
  }
  if (count == 0 || !(acc > 0.0)) throw DegenerateInputError("cannot normalise a zero-power sample");
  return 1.0 / std::sqrt(acc / static_cast<double>(count));
}

CsiSample denormalize(const CsiSample& sample, double scale) {
  CsiSample out = sample;
  for (Complex& v : out.values) v /= scale;
  return out;
}

void PatchSpec::validate() const {
  if (p_t < 1 || p_f < 1 || p_s < 1) throw std::invalid_argument("patch edges must be >= 1");
}

GridLayout::GridLayout(std::size_t T_, std::size_t K_, std::size_t N_, const PatchSpec& spec_)
    : T(T_), K(K_), N(N_), spec(spec_) {
  spec.validate();
  if (T < 1 || K < 1 || N < 1) throw std::invalid_argument("sample extent must be >= 1");
  n_t = ceil_div(T, spec.p_t);
  n_f = ceil_div(K, spec.p_f);
  n_s = ceil_div(N, spec.p_s);
}

TokenCoord GridLayout::coord(std::size_t token) const {
  return {token / (n_f * n_s), (token / n_s) % n_f, token % n_s};
}

std::vector<TokenCoord> GridLayout::coords() const {
  std::vector<TokenCoord> out(tokens());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = coord(i);
  return out;
}

Region GridLayout::token_region(std::span<const std::size_t> token_ids) const {
  Region region(T * K * N, 0);
  for (std::size_t id : token_ids) {
    const TokenCoord c = coord(id);
    for (std::size_t t = c.t * spec.p_t; t < std::min(T, (c.t + 1) * spec.p_t); ++t) {
      for (std::size_t k = c.f * spec.p_f; k < std::min(K, (c.f + 1) * spec.p_f); ++k) {
        for (std::size_t n = c.s * spec.p_s; n < std::min(N, (c.s + 1) * spec.p_s); ++n) {
          region[(t * K + k) * N + n] = 1;
        }
      }
    }
  }
  return region;
}

TokenGrid patchify(const Tensor& planes, const PatchSpec& spec) {
  if (planes.rank() != 4 || planes.dim(0) != 2) throw std::invalid_argument("expected 2xTxKxN planes");
  TokenGrid grid;
  grid.layout = GridLayout(planes.dim(1), planes.dim(2), planes.dim(3), spec);
  const GridLayout& L = grid.layout;
  grid.tokens = Mat::Zero(static_cast<Eigen::Index>(L.tokens()),
                          static_cast<Eigen::Index>(spec.token_dim()));
  const std::size_t plane_size = L.T * L.K * L.N;
  for (std::size_t id = 0; id < L.tokens(); ++id) {
    const TokenCoord c = L.coord(id);
    std::size_t col = 0;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t dt = 0; dt < spec.p_t; ++dt) {
        for (std::size_t df = 0; df < spec.p_f; ++df) {
          for (std::size_t ds = 0; ds < spec.p_s; ++ds, ++col) {
            const std::size_t t = c.t * spec.p_t + dt;
            const std::size_t k = c.f * spec.p_f + df;
            const std::size_t n = c.s * spec.p_s + ds;
            if (t < L.T && k < L.K && n < L.N) {
              grid.tokens(static_cast<Eigen::Index>(id), static_cast<Eigen::Index>(col)) =
                  planes[p * plane_size + (t * L.K + k) * L.N + n];
            }
          }
        }
      }
    }
  }
  return grid;
}

Tensor unpatchify(const Mat& tokens, const GridLayout& L) {
  const PatchSpec& spec = L.spec;
  if (static_cast<std::size_t>(tokens.rows()) != L.tokens() ||
      static_cast<std::size_t>(tokens.cols()) != spec.token_dim()) {
    throw std::invalid_argument("token matrix does not match layout");
  }
  Tensor planes({2, L.T, L.K, L.N});
  const std::size_t plane_size = L.T * L.K * L.N;
  for (std::size_t id = 0; id < L.tokens(); ++id) {
    const TokenCoord c = L.coord(id);
    std::size_t col = 0;
    for (std::size_t p = 0; p < 2; ++p) {
      for (std::size_t dt = 0; dt < spec.p_t; ++dt) {
        for (std::size_t df = 0; df < spec.p_f; ++df) {
          for (std::size_t ds = 0; ds < spec.p_s; ++ds, ++col) {
            const std::size_t t = c.t * spec.p_t + dt;
            const std::size_t k = c.f * spec.p_f + df;
            const std::size_t n = c.s * spec.p_s + ds;
            if (t < L.T && k < L.K && n < L.N) {
              planes[p * plane_size + (t * L.K + k) * L.N + n] =
                  tokens(static_cast<Eigen::Index>(id), static_cast<Eigen::Index>(col));
            }
          }
        }
      }
    }
  }
  return planes;
}

int task_for_mode(MaskMode mode) {
  switch (mode) {
    case MaskMode::Random: return 1;
    case MaskMode::Time: return 2;
    case MaskMode::Frequency: return 3;
    case MaskMode::None: return 4;
  }
  return 4;
}

const char* mask_mode_name(MaskMode mode) {
  switch (mode) {
    case MaskMode::Random: return "random";
    case MaskMode::Time: return "time";
    case MaskMode::Frequency: return "frequency";
    case MaskMode::None: return "none";
  }
  return "unknown";
}

MaskPlan make_mask_plan(MaskMode mode, double ratio, const GridLayout& layout, SeededRng& rng) {
  if (!(ratio >= 0.0) || !(ratio < 1.0)) throw std::invalid_argument("mask ratio must be in [0, 1)");
  MaskPlan plan;
  plan.mode = mode;
  plan.ratio = ratio;
  plan.task_id = task_for_mode(mode);
  const std::size_t L = layout.tokens();
  std::vector<std::uint8_t> masked(L, 0);

  switch (mode) {
    case MaskMode::None:
      break;
    case MaskMode::Random: {
      std::size_t count = static_cast<std::size_t>(std::floor(ratio * static_cast<double>(L)));
      if (count >= L) count = L - 1;
      const auto perm = rng.permutation(L);
      for (std::size_t i = 0; i < count; ++i) masked[perm[i]] = 1;
      break;
    }
    case MaskMode::Time:
    case MaskMode::Frequency: {
      const std::size_t slabs = mode == MaskMode::Time ? layout.n_t : layout.n_f;
      if (slabs < 2) throw std::invalid_argument("axis masking needs at least two slabs");
      // The epsilon keeps exact products such as (1 - 0.25) * 4 from rounding up.
      const auto start = static_cast<std::size_t>(
          std::ceil((1.0 - ratio) * static_cast<double>(slabs) - 1e-9));
      for (std::size_t id = 0; id < L; ++id) {
        const TokenCoord c = layout.coord(id);
        const std::size_t pos = mode == MaskMode::Time ? c.t : c.f;
        if (pos >= start) masked[id] = 1;
      }
      break;
    }
  }
  for (std::size_t id = 0; id < L; ++id) (masked[id] ? plan.masked : plan.visible).push_back(id);
  return plan;
}

void PilotPattern::validate() const {
  for (double f : {time, antenna, subcarrier}) {
    if (!(f > 0.0) || f > 1.0) throw std::invalid_argument("pilot fractions must be in (0, 1]");
  }
}

std::vector<std::size_t> keep_indices(std::size_t len, double fraction) {
  if (!(fraction > 0.0) || fraction > 1.0) throw std::invalid_argument("pilot fraction out of (0, 1]");
  std::vector<std::size_t> idx;
  if (fraction == 1.0 || len == 1) {
    for (std::size_t i = 0; i < len; ++i) idx.push_back(i);
    return idx;
  }
  const auto count = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(len)));
  if (count < 2) {
    throw std::invalid_argument("pilot pattern keeps " + std::to_string(count) + " of " +
                                std::to_string(len) + " entries; interpolation needs >= 2");
  }
  for (std::size_t i = 0; i < count; ++i) {
    const double pos = static_cast<double>(i) * static_cast<double>(len - 1) /
                       static_cast<double>(count - 1);
    idx.push_back(static_cast<std::size_t>(std::llround(pos)));
  }
  return idx;
}

namespace {

// Linear interpolation along one axis from kept positions. `get(i)` / `set(i, v)`
// address the 1-D line being filled.
template <class Get, class Set>
void fill_line(const std::vector<std::size_t>& kept, std::size_t len, Get get, Set set) {
  if (kept.size() == len) return;
  std::size_t seg = 0;
  for (std::size_t i = 0; i < len; ++i) {
    while (seg + 1 < kept.size() && kept[seg + 1] < i) ++seg;
    const std::size_t a = kept[seg];
    const std::size_t b = kept[std::min(seg + 1, kept.size() - 1)];
    if (i == a || i == b || a == b) continue;
    const double w = static_cast<double>(i - a) / static_cast<double>(b - a);
    set(i, (1.0 - w) * get(a) + w * get(b));
  }
}

}  // namespace

CsiSample pilot_downsample_interpolate(const CsiSample& sample, const PilotPattern& pattern) {
  pattern.validate();
  const std::size_t T = sample.T(), K = sample.K(), N = sample.N();
  const auto kt = keep_indices(T, pattern.time);
  const auto kk = keep_indices(K, pattern.subcarrier);
  const auto kn = keep_indices(N, pattern.antenna);

  CsiSample out(sample.grid, sample.geometry);
  out.line_of_sight = sample.line_of_sight;
  for (std::size_t t : kt) {
    for (std::size_t k : kk) {
      for (std::size_t n : kn) out(t, k, n) = sample(t, k, n);
    }
  }
  // Time: lines at kept (k, n).
  for (std::size_t k : kk) {
    for (std::size_t n : kn) {
      fill_line(kt, T, [&](std::size_t i) { return out(i, k, n); },
                [&](std::size_t i, Complex v) { out(i, k, n) = v; });
    }
  }
  // Frequency: every t, kept n.
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t n : kn) {
      fill_line(kk, K, [&](std::size_t i) { return out(t, i, n); },
                [&](std::size_t i, Complex v) { out(t, i, n) = v; });
    }
  }
  // Antenna: every (t, k).
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      fill_line(kn, N, [&](std::size_t i) { return out(t, k, i); },
                [&](std::size_t i, Complex v) { out(t, k, i) = v; });
    }
  }
  return out;
}

Region time_suffix_region(const GridSpec& grid, std::size_t n_antennas, std::size_t count) {
  const std::size_t T = grid.t_samples, K = grid.subcarriers;
  Region r(T * K * n_antennas, 0);
  for (std::size_t t = T - std::min(count, T); t < T; ++t) {
    std::fill_n(r.begin() + static_cast<std::ptrdiff_t>(t * K * n_antennas), K * n_antennas, 1);
  }
  return r;
}

Region frequency_suffix_region(const GridSpec& grid, std::size_t n_antennas, std::size_t count) {
  const std::size_t T = grid.t_samples, K = grid.subcarriers;
  Region r(T * K * n_antennas, 0);
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = K - std::min(count, K); k < K; ++k) {
      std::fill_n(r.begin() + static_cast<std::ptrdiff_t>((t * K + k) * n_antennas), n_antennas, 1);
    }
  }
  return r;
}

}  // namespace csilab
