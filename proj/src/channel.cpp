// SPDX-License-Identifier: Apache-2.0
#include "csilab/channel.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "csilab/tensor.hpp"

namespace csilab {

namespace {
constexpr double kSpeedOfLight = 299792458.0;
constexpr double kTwoPi = 2.0 * std::numbers::pi;
}  // namespace

void ArrayGeometry::validate() const {
  if (n_horizontal < 1 || n_vertical < 1) throw std::invalid_argument("array needs >= 1 element");
  if (!(element_spacing_wavelengths > 0.0)) {
    throw std::invalid_argument("element spacing must be positive");
  }
}

void GridSpec::validate() const {
  if (t_samples < 1 || subcarriers < 1) throw std::invalid_argument("grid needs T, K >= 1");
  if (!(dt_s > 0.0) || !(df_hz > 0.0)) throw std::invalid_argument("grid spacings must be positive");
}

CsiSample::CsiSample(const GridSpec& g, const ArrayGeometry& a)
    : values(g.t_samples * g.subcarriers * a.elements()), grid(g), geometry(a) {}

double CsiSample::mean_power() const {
  if (values.empty()) return 0.0;
  double acc = 0.0;
  for (const Complex& v : values) acc += std::norm(v);
  return acc / static_cast<double>(values.size());
}

void ScenarioPreset::validate() const {
  if (min_paths < 1 || max_paths < min_paths) throw std::invalid_argument("bad path count range");
  if (min_speed_mps < 0.0 || max_speed_mps < min_speed_mps) {
    throw std::invalid_argument("bad speed range");
  }
  if (min_delay_spread_s < 0.0 || max_delay_spread_s < min_delay_spread_s) {
    throw std::invalid_argument("bad delay spread range");
  }
  if (los_probability < 0.0 || los_probability > 1.0) {
    throw std::invalid_argument("LoS probability must be in [0, 1]");
  }
  if (!(carrier_hz > 0.0) || !(power_decay_factor > 0.0) || los_k_factor < 0.0) {
    throw std::invalid_argument("bad preset constants");
  }
}

ScenarioPreset preset_by_name(const std::string& name) {
  ScenarioPreset p;
  p.name = name;
  if (name == "indoor-los") {
    p.min_paths = 2;
    p.max_paths = 4;
    p.max_speed_mps = 1.0;
    p.min_delay_spread_s = 20e-9;
    p.max_delay_spread_s = 60e-9;
    p.los_probability = 1.0;
    p.los_k_factor = 4.0;
  } else if (name == "uma-nlos") {
    p.min_paths = 4;
    p.max_paths = 8;
    p.min_speed_mps = 1.0;
    p.max_speed_mps = 10.0;
    p.min_delay_spread_s = 100e-9;
    p.max_delay_spread_s = 400e-9;
    p.los_probability = 0.0;
  } else if (name == "highspeed") {
    p.min_paths = 2;
    p.max_paths = 5;
    p.min_speed_mps = 30.0;
    p.max_speed_mps = 60.0;
    p.min_delay_spread_s = 50e-9;
    p.max_delay_spread_s = 200e-9;
    p.los_probability = 0.5;
    p.los_k_factor = 2.0;
  } else if (name == "pure-los") {
    p.min_paths = 1;
    p.max_paths = 1;
    p.max_speed_mps = 3.0;
    p.min_delay_spread_s = 0.0;
    p.max_delay_spread_s = 0.0;
    p.los_probability = 1.0;
  } else if (name == "nlos-6path") {
    p.min_paths = 6;
    p.max_paths = 6;
    p.max_speed_mps = 3.0;
    p.min_delay_spread_s = 100e-9;
    p.max_delay_spread_s = 300e-9;
    p.los_probability = 0.0;
  } else {
    throw std::invalid_argument("unknown scenario preset '" + name + "'");
  }
  return p;
}

std::vector<std::string> preset_names() {
  return {"indoor-los", "uma-nlos", "highspeed", "pure-los", "nlos-6path"};
}

std::vector<Complex> steering_vector(const ArrayGeometry& geometry, double azimuth_rad,
                                     double elevation_rad) {
  geometry.validate();
  const double u = std::sin(azimuth_rad) * std::sin(elevation_rad);
  const double v = std::cos(elevation_rad);
  std::vector<Complex> a(geometry.elements());
  for (std::size_t m = 0; m < geometry.n_horizontal; ++m) {
    for (std::size_t n = 0; n < geometry.n_vertical; ++n) {
      const double phase = kTwoPi * geometry.element_spacing_wavelengths *
                           (static_cast<double>(m) * u + static_cast<double>(n) * v);
      a[m * geometry.n_vertical + n] = std::polar(1.0, phase);
    }
  }
  return a;
}

CsiSample synth_channel(const GridSpec& grid, const ArrayGeometry& geometry,
                        const std::vector<PathParams>& paths) {
  grid.validate();
  geometry.validate();
  if (paths.empty()) throw std::invalid_argument("synth_channel needs at least one path");

  CsiSample out(grid, geometry);
  const std::size_t N = geometry.elements();
  std::vector<Complex> time_phase(grid.t_samples);
  std::vector<Complex> freq_phase(grid.subcarriers);
  for (const PathParams& p : paths) {
    if (p.delay_s < 0.0) throw std::invalid_argument("path delay must be >= 0");
    const auto a = steering_vector(geometry, p.azimuth_rad, p.elevation_rad);
    for (std::size_t i = 0; i < grid.t_samples; ++i) {
      const double t = static_cast<double>(i + 1) * grid.dt_s;
      time_phase[i] = std::polar(1.0, kTwoPi * p.doppler_hz * t);
    }
    for (std::size_t k = 0; k < grid.subcarriers; ++k) {
      const double f = grid.f1_hz + static_cast<double>(k) * grid.df_hz;
      // Reduce tau*f modulo 1 before scaling so carrier-sized frequencies keep precision.
      const double cycles = p.delay_s * f;
      freq_phase[k] = std::polar(1.0, -kTwoPi * (cycles - std::floor(cycles)));
    }
    for (std::size_t i = 0; i < grid.t_samples; ++i) {
      for (std::size_t k = 0; k < grid.subcarriers; ++k) {
        const Complex c = p.gain * time_phase[i] * freq_phase[k];
        Complex* row = &out.values[out.index(i, k, 0)];
        for (std::size_t n = 0; n < N; ++n) row[n] += c * a[n];
      }
    }
  }
  out.line_of_sight = std::any_of(paths.begin(), paths.end(),
                                  [](const PathParams& p) { return p.line_of_sight; });
  return out;
}

std::vector<PathParams> sample_scenario(const ScenarioPreset& preset, SeededRng& rng) {
  preset.validate();
  const std::size_t count = preset.min_paths + rng.uniform_index(preset.max_paths - preset.min_paths + 1);
  const bool los = rng.uniform() < preset.los_probability;
  const double spread = rng.uniform(preset.min_delay_spread_s, preset.max_delay_spread_s);
  const double speed = rng.uniform(preset.min_speed_mps, preset.max_speed_mps);
  const double max_doppler = speed * preset.carrier_hz / kSpeedOfLight;

  std::vector<PathParams> paths(count);
  std::vector<double> power(count);
  for (std::size_t p = 0; p < count; ++p) {
    PathParams& path = paths[p];
    path.line_of_sight = los && p == 0;
    // Exponentially distributed excess delays; the LoS path arrives first.
    path.delay_s = path.line_of_sight ? 0.0 : -spread * std::log(1.0 - rng.uniform());
    path.doppler_hz = max_doppler * std::cos(rng.uniform(0.0, 2.0 * std::numbers::pi));
    path.azimuth_rad = rng.uniform(-0.5 * std::numbers::pi, 0.5 * std::numbers::pi);
    path.elevation_rad = preset.azimuth_only
                             ? 0.5 * std::numbers::pi
                             : rng.uniform(0.25 * std::numbers::pi, 0.75 * std::numbers::pi);
    const double phase = rng.uniform(0.0, 2.0 * std::numbers::pi);
    path.gain = std::polar(1.0, phase);
    power[p] = spread > 0.0 ? std::exp(-path.delay_s / (preset.power_decay_factor * spread)) : 1.0;
  }

  double scattered = 0.0;
  for (std::size_t p = los ? 1 : 0; p < count; ++p) scattered += power[p];
  for (std::size_t p = 0; p < count; ++p) {
    double share;
    if (los && count == 1) {
      share = 1.0;
    } else if (los && p == 0) {
      share = preset.los_k_factor / (preset.los_k_factor + 1.0);
    } else {
      const double scatter_total = los ? 1.0 / (preset.los_k_factor + 1.0) : 1.0;
      share = scatter_total * power[p] / scattered;
    }
    paths[p].gain *= std::sqrt(share);
  }
  return paths;
}

CsiSample add_awgn(const CsiSample& sample, const NoiseSpec& noise) {
  if (sample.values.empty()) throw std::invalid_argument("add_awgn on an empty sample");
  CsiSample out = sample;
  if (std::isinf(noise.snr_db) && noise.snr_db > 0.0) return out;
  if (!std::isfinite(noise.snr_db)) throw std::invalid_argument("snr_db must be finite or +inf");
  const double variance = sample.mean_power() / std::pow(10.0, noise.snr_db / 10.0);
  const double sigma = std::sqrt(variance / 2.0);
  SeededRng rng(noise.seed);
  for (Complex& v : out.values) {
    const double re = rng.normal();
    const double im = rng.normal();
    v += Complex(sigma * re, sigma * im);
  }
  return out;
}

const char* split_name(Split s) {
  switch (s) {
    case Split::Train: return "train";
    case Split::Val: return "val";
    case Split::Test: return "test";
  }
  return "unknown";
}

const std::vector<std::size_t>& DatasetHandle::split(Split s) const {
  switch (s) {
    case Split::Train: return train;
    case Split::Val: return val;
    case Split::Test: return test;
  }
  throw std::invalid_argument("unknown split");
}

std::vector<CsiSample> DatasetHandle::split_samples(Split s) const {
  std::vector<CsiSample> out;
  for (std::size_t i : split(s)) out.push_back(samples.at(i));
  return out;
}

std::vector<DatasetHandle> build_corpus(const std::vector<CorpusEntry>& entries,
                                        const SplitCounts& counts, std::uint64_t seed) {
  if (entries.empty()) throw std::invalid_argument("corpus needs at least one entry");
  if (counts.total() == 0) throw std::invalid_argument("corpus sample count must be positive");

  std::vector<DatasetHandle> out;
  for (std::size_t e = 0; e < entries.size(); ++e) {
    const CorpusEntry& entry = entries[e];
    entry.preset.validate();
    entry.grid.validate();
    entry.geometry.validate();

    DatasetHandle ds;
    ds.preset = entry.preset.name;
    ds.grid = entry.grid;
    ds.geometry = entry.geometry;
    ds.seed = SeededRng::derive_seed(seed, e);
    ds.name = entry.preset.name + "_" + std::to_string(entry.grid.t_samples) + "x" +
              std::to_string(entry.grid.subcarriers) + "x" +
              std::to_string(entry.geometry.elements());

    const std::size_t total = counts.total();
    ds.samples.reserve(total);
    for (std::size_t s = 0; s < total; ++s) {
      SeededRng rng(SeededRng::derive_seed(ds.seed, s));
      const auto paths = sample_scenario(entry.preset, rng);
      CsiSample sample = synth_channel(entry.grid, entry.geometry, paths);
      for (Complex& v : sample.values) v = {round_to_float(v.real()), round_to_float(v.imag())};
      ds.samples.push_back(std::move(sample));
    }

    SeededRng split_rng(SeededRng::derive_seed(ds.seed, total));
    const auto perm = split_rng.permutation(total);
    ds.train.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(counts.train));
    ds.val.assign(perm.begin() + static_cast<std::ptrdiff_t>(counts.train),
                  perm.begin() + static_cast<std::ptrdiff_t>(counts.train + counts.val));
    ds.test.assign(perm.begin() + static_cast<std::ptrdiff_t>(counts.train + counts.val), perm.end());
    for (auto* idx : {&ds.train, &ds.val, &ds.test}) std::sort(idx->begin(), idx->end());
    out.push_back(std::move(ds));
  }
  // Disambiguate repeated preset/grid pairs.
  std::vector<std::string> base;
  for (const auto& ds : out) base.push_back(ds.name);
  for (std::size_t i = 0; i < out.size(); ++i) {
    const auto dup = std::count(base.begin(), base.begin() + static_cast<std::ptrdiff_t>(i), base[i]);
    if (dup > 0) out[i].name += "_" + std::to_string(dup);
  }
  return out;
}

}  // namespace csilab
