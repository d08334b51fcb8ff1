// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/config.hpp"
#include "csilab/model.hpp"
#include "csilab/reconstruct.hpp"
#include "csilab/training.hpp"

namespace csilab {

inline constexpr double kNmseFloorDb = -120.0;

/// 10 log10(|pred - truth|^2 / |truth|^2) over the region, clamped below at
/// 1e-12. Throws DegenerateInputError for zero-power truth.
double nmse_db(const CsiSample& pred, const CsiSample& truth, const Region& region);

/// Per-subcarrier channel vectors h_k (N entries each).
using ChannelColumns = std::vector<std::vector<Complex>>;

/// Matched-filter precoder built from a channel estimate; each column is
/// scaled to unit norm (zero columns stay zero).
ChannelColumns matched_filter_precoder(const ChannelColumns& estimate);
/// sum_k log2(1 + |h_k^H p_k|^2 / noise_power).
double spectral_efficiency(const ChannelColumns& h, const ChannelColumns& p, double noise_power);
/// Mean over scored time slots of the per-slot SE (subcarriers in the
/// region), with the precoder built from `estimate`.
double sample_spectral_efficiency(const CsiSample& truth, const CsiSample& estimate,
                                  const Region& region, double noise_power);

/// First-order extrapolation along the task axis from the last two observed
/// samples. Observed values pass through unchanged.
CsiSample baseline_linear_extrapolate(const CsiSample& sample, const TaskSetting& setting);
/// Pilot interpolation taken as the final estimate.
CsiSample baseline_interpolate_ce(const CsiSample& sample, const PilotPattern& pattern);

/// Region scored for a setting: the predicted suffix for CP, everything for CE.
Region task_region(const CsiSample& sample, const TaskSetting& setting);

/// Settings for a ratio label: "low", "high" or a numeric prediction ratio
/// (CE then uses the low pattern).
std::vector<TaskSetting> settings_for(const std::vector<std::string>& tasks, const std::string& ratio);

struct EvalRow {
  std::string task;
  std::string dataset;
  std::string ratio;
  double snr_db = 0.0;
  double nmse_db = 0.0;
  double se_bps_hz = 0.0;
  bool has_confidence = false;
  double conf_pred_db = 0.0;
  double conf_true_db = 0.0;
  std::vector<double> sample_nmse_db;
  std::vector<double> sample_conf_db;
};

/// Row aggregate of per-sample NMSE values: "mean_db" or "db_of_mean".
double aggregate_db(const std::vector<double>& values_db, const std::string& rule);

struct RoutingRecord {
  std::size_t layer = 0;
  int task = 0;
  RoutingCounts counts;
};

struct ZeroShotOptions {
  double snr_db = 20.0;
  Split split = Split::Test;
  std::string aggregation = "mean_db";
  std::uint64_t seed = 11;
  std::size_t threads = 1;
  bool confidence = true;
  /// When set, per (layer, task) routing totals are appended here.
  std::vector<RoutingRecord>* routing = nullptr;
};

/// One row per (setting, dataset); CP settings use coarse datasets, CE
/// settings fine datasets. Noise for (dataset, setting, sample) is seeded
/// from options.seed, so baselines see identical observations.
std::vector<EvalRow> run_zero_shot(const MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                   const Catalog& catalog, const std::vector<TaskSetting>& settings,
                                   const ZeroShotOptions& options);
std::vector<EvalRow> run_baselines(const std::vector<DatasetHandle>& corpus, const Catalog& catalog,
                                   const std::vector<TaskSetting>& settings, const ZeroShotOptions& options);

/// Mean |conf_pred - nmse| over samples, per task name.
std::map<std::string, double> confidence_mae(const std::vector<EvalRow>& rows);
/// Mean |mean(nmse) - nmse| per task: the error of always predicting the
/// global mean NMSE.
std::map<std::string, double> mean_predictor_mae(const std::vector<EvalRow>& rows);
/// (error_db, cumulative_fraction) points of |conf_pred - nmse|.
std::vector<std::pair<double, double>> confidence_error_cdf(const std::vector<EvalRow>& rows);

struct FinetuneResult {
  double f1 = 0.0;
  double untrained_f1 = 0.0;
  double accuracy = 0.0;
  std::size_t train_samples = 0;
  std::size_t test_samples = 0;
  std::size_t gate = 0;
  std::uint64_t frozen_hash_before = 0;
  std::uint64_t frozen_hash_after = 0;
};

/// Adds a fresh gate per SMoE layer plus a mean-pooled linear head on the
/// encoder output and trains only those on LoS labels. `model` is modified
/// (it gains the new gate). Throws DegenerateInputError on a single-class
/// dataset and InvariantError if a frozen parameter moved.
FinetuneResult finetune_scenario_classifier(MdaeModel& model, const std::vector<CsiSample>& train,
                                            const std::vector<bool>& train_labels,
                                            const std::vector<CsiSample>& test,
                                            const std::vector<bool>& test_labels,
                                            const FinetuneConfig& config, std::size_t threads = 1);

/// Binary F1 of the positive class.
double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& truth);

}  // namespace csilab
