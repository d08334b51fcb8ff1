// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <complex>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "csilab/rng.hpp"

namespace csilab {

using Complex = std::complex<double>;

struct PathParams {
  Complex gain{1.0, 0.0};
  double doppler_hz = 0.0;
  double delay_s = 0.0;
  double azimuth_rad = 0.0;
  double elevation_rad = 0.0;
  bool line_of_sight = false;
};

/// Uniform planar array, N_h x N_v elements, spacing in wavelengths.
struct ArrayGeometry {
  std::size_t n_horizontal = 1;
  std::size_t n_vertical = 1;
  double element_spacing_wavelengths = 0.5;

  std::size_t elements() const { return n_horizontal * n_vertical; }
  void validate() const;
  friend bool operator==(const ArrayGeometry&, const ArrayGeometry&) = default;
};

struct GridSpec {
  std::size_t t_samples = 1;
  std::size_t subcarriers = 1;
  double dt_s = 1e-3;
  double df_hz = 30e3;
  double f1_hz = 3.5e9;

  void validate() const;
  friend bool operator==(const GridSpec&, const GridSpec&) = default;
};

/// One channel realisation H[t][k][n], stored t-major, antenna-minor.
struct CsiSample {
  std::vector<Complex> values;
  GridSpec grid;
  ArrayGeometry geometry;
  bool line_of_sight = false;

  CsiSample() = default;
  CsiSample(const GridSpec& g, const ArrayGeometry& a);

  std::size_t T() const { return grid.t_samples; }
  std::size_t K() const { return grid.subcarriers; }
  std::size_t N() const { return geometry.elements(); }
  std::size_t index(std::size_t t, std::size_t k, std::size_t n) const {
    return (t * K() + k) * N() + n;
  }
  Complex& operator()(std::size_t t, std::size_t k, std::size_t n) { return values[index(t, k, n)]; }
  Complex operator()(std::size_t t, std::size_t k, std::size_t n) const {
    return values[index(t, k, n)];
  }
  /// Mean |H|^2 over all entries.
  double mean_power() const;
};

/// Parameter ranges for one synthetic propagation scenario.
struct ScenarioPreset {
  std::string name;
  std::size_t min_paths = 1;
  std::size_t max_paths = 1;
  double carrier_hz = 3.5e9;
  double min_speed_mps = 0.0;
  double max_speed_mps = 0.0;
  double min_delay_spread_s = 10e-9;
  double max_delay_spread_s = 100e-9;
  /// Path power decays as exp(-delay / (decay_factor * delay spread)).
  double power_decay_factor = 1.0;
  double los_probability = 0.0;
  /// Ratio of LoS power to total scattered power when a LoS path exists.
  double los_k_factor = 4.0;
  /// Elevation fixed at pi/2 (azimuth-only), a linear-array simplification.
  bool azimuth_only = true;

  void validate() const;
};

/// Built-in presets: indoor-los, uma-nlos, highspeed, pure-los, nlos-6path.
ScenarioPreset preset_by_name(const std::string& name);
std::vector<std::string> preset_names();

/// Unit-modulus UPA response; element (m, n) sits at row-major index
/// m * N_v + n with phase 2 pi d (m sin(az) sin(el) + n cos(el)),
/// referenced to element (0, 0).
std::vector<Complex> steering_vector(const ArrayGeometry& geometry, double azimuth_rad,
                                     double elevation_rad);

/// Sum of plane waves: H[i,k,:] = sum_p gain_p a(az_p, el_p)
/// exp(j 2 pi (doppler_p t_i - delay_p f_k)), t_i = (i+1) dt,
/// f_k = f1 + k df (0-based storage of the 1-based sampling grid).
CsiSample synth_channel(const GridSpec& grid, const ArrayGeometry& geometry,
                        const std::vector<PathParams>& paths);

std::vector<PathParams> sample_scenario(const ScenarioPreset& preset, SeededRng& rng);

struct NoiseSpec {
  /// +infinity disables noise.
  double snr_db = std::numeric_limits<double>::infinity();
  std::uint64_t seed = 0;
};

/// Adds circularly-symmetric complex Gaussian noise with per-element
/// variance mean|H|^2 / 10^(snr_db / 10).
CsiSample add_awgn(const CsiSample& sample, const NoiseSpec& noise);

enum class Split : std::uint8_t { Train = 0, Val = 1, Test = 2 };
const char* split_name(Split s);

/// One generated dataset: a preset on one grid, partitioned into splits.
struct DatasetHandle {
  std::string name;
  std::string preset;
  GridSpec grid;
  ArrayGeometry geometry;
  std::uint64_t seed = 0;
  std::vector<CsiSample> samples;
  std::vector<std::size_t> train, val, test;

  const std::vector<std::size_t>& split(Split s) const;
  std::vector<CsiSample> split_samples(Split s) const;
};

struct SplitCounts {
  std::size_t train = 512;
  std::size_t val = 64;
  std::size_t test = 128;
  std::size_t total() const { return train + val + test; }
};

struct CorpusEntry {
  ScenarioPreset preset;
  GridSpec grid;
  ArrayGeometry geometry;
};

/// Generates every entry with per-sample child seeds; values are rounded to
/// single precision so in-memory samples equal their on-disk form.
std::vector<DatasetHandle> build_corpus(const std::vector<CorpusEntry>& entries,
                                        const SplitCounts& counts, std::uint64_t seed);

}  // namespace csilab
