// SPDX-License-Identifier: Apache-2.0
#include <cmath>
#include <limits>
#include <numbers>

#include "csilab/errors.hpp"
#include "csilab/eval.hpp"
#include "csilab/report.hpp"
#include "doctest.h"
#include "helpers.hpp"

using namespace csilab;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

CsiSample filled(std::size_t T, std::size_t K, std::size_t N, auto fn) {
  CsiSample s({T, K, 1e-3, 30e3, 3.5e9}, {N, 1, 0.5});
  for (std::size_t t = 0; t < T; ++t) {
    for (std::size_t k = 0; k < K; ++k) {
      for (std::size_t n = 0; n < N; ++n) s(t, k, n) = fn(t, k, n);
    }
  }
  return s;
}

double max_rel_error(const CsiSample& a, const CsiSample& b) {
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < a.values.size(); ++i) {
    err = std::max(err, std::abs(a.values[i] - b.values[i]));
    ref = std::max(ref, std::abs(b.values[i]));
  }
  return err / ref;
}

TaskSetting cp_t(double r) { return {TaskKind::PredictTime, r, {}, "x"}; }
TaskSetting cp_f(double r) { return {TaskKind::PredictFrequency, r, {}, "x"}; }

}  // namespace

TEST_CASE("nmse") {
  const CsiSample truth = testing::tiny_sample(1);
  const Region all(truth.values.size(), 1);
  CHECK(nmse_db(truth, truth, all) == kNmseFloorDb);
  CsiSample zero = truth;
  for (Complex& v : zero.values) v = {};
  CHECK(std::abs(nmse_db(zero, truth, all)) < 1e-12);
  CsiSample twice = truth;
  for (Complex& v : twice.values) v *= 2.0;
  CHECK(std::abs(nmse_db(twice, truth, all)) < 1e-12);
  CHECK_THROWS_AS(nmse_db(truth, zero, all), DegenerateInputError);
  CHECK_THROWS_AS(nmse_db(truth, truth, Region(all.size(), 0)), std::invalid_argument);
}

TEST_CASE("spectral efficiency") {
  CHECK(spectral_efficiency({{Complex(1.0, 0.0)}}, {{Complex(1.0, 0.0)}}, 1.0) == doctest::Approx(1.0));
  CHECK(spectral_efficiency({{Complex(std::sqrt(3.0), 0.0)}}, {{Complex(1.0, 0.0)}}, 1.0) == doctest::Approx(2.0));
  CHECK(spectral_efficiency({{Complex(1.0, 2.0), Complex(0.5, 0.0)}}, {{Complex(), Complex()}}, 1.0) == 0.0);
  double last = -1.0;
  for (double g = 0.1; g < 10.0; g *= 1.5) {
    const double r = spectral_efficiency({{Complex(g, 0.0)}}, {{Complex(1.0, 0.0)}}, 0.5);
    CHECK(r > last);
    last = r;
  }
  const ChannelColumns p = matched_filter_precoder({{Complex(3.0, 0.0), Complex(0.0, 4.0)}, {Complex(), Complex()}});
  CHECK(std::norm(p[0][0]) + std::norm(p[0][1]) == doctest::Approx(1.0));
  CHECK(p[1][0] == Complex());

  // A perfect estimate maximises the matched-filter rate.
  const CsiSample h = testing::tiny_sample(2);
  const Region all(h.values.size(), 1);
  CsiSample rough = h;
  SeededRng rng(3);
  for (Complex& v : rough.values) v += Complex(rng.normal(), rng.normal());
  CHECK(sample_spectral_efficiency(h, h, all, 0.1) > sample_spectral_efficiency(h, rough, all, 0.1));
}

TEST_CASE("linear extrapolation baseline") {
  const CsiSample lin = filled(16, 4, 2, [](auto t, auto k, auto n) {
    return Complex(0.3 + 0.2 * t + k, -1.0 + 0.05 * t - 0.1 * n);
  });
  CHECK(max_rel_error(baseline_linear_extrapolate(lin, cp_t(0.25)), lin) < 1e-6);
  const CsiSample flin = filled(4, 24, 2, [](auto t, auto k, auto) { return Complex(1.0 + 0.1 * k, t - 0.3 * k); });
  CHECK(max_rel_error(baseline_linear_extrapolate(flin, cp_f(0.5)), flin) < 1e-6);
  const CsiSample flat = filled(16, 4, 2, [](auto, auto, auto) { return Complex(0.7, -0.2); });
  CHECK(max_rel_error(baseline_linear_extrapolate(flat, cp_t(0.5)), flat) < 1e-12);

  // Oscillatory single path: nu * dt * T_h = 0.5 and above.
  const double nu = 125.0, dt = 1e-3;
  const CsiSample osc = filled(16, 4, 1, [&](auto t, auto, auto) {
    return std::polar(1.0, 2.0 * std::numbers::pi * nu * dt * static_cast<double>(t + 1));
  });
  const Region target = task_region(osc, cp_t(0.25));
  CHECK(nu * dt * 4 >= 0.5);
  CHECK(nmse_db(baseline_linear_extrapolate(osc, cp_t(0.25)), osc, target) > kNmseFloorDb + 1.0);

  const CsiSample short_t = filled(4, 4, 1, [](auto t, auto, auto) { return Complex(t, 0.0); });
  CHECK_THROWS_AS(baseline_linear_extrapolate(short_t, cp_t(0.75)), std::invalid_argument);
}

TEST_CASE("interpolation baseline") {
  const CsiSample r = testing::tiny_sample(4, 16, 48, 2);
  CHECK(baseline_interpolate_ce(r, {1, 1, 1}).values == r.values);
  const CsiSample bil = filled(16, 48, 2, [](auto t, auto k, auto n) {
    return Complex(1.0 + 0.1 * t + 0.02 * k + 0.003 * t * k, -0.5 + 0.01 * t * k + n);
  });
  CHECK(max_rel_error(baseline_interpolate_ce(bil, {0.25, 1.0, 1.0 / 12.0}), bil) < 1e-6);
  CHECK(baseline_interpolate_ce(r, {0.25, 1, 1.0 / 12.0}).values ==
        pilot_downsample_interpolate(r, {0.25, 1, 1.0 / 12.0}).values);

  const CsiSample noisy = add_awgn(bil, {10.0, 5});
  const CsiSample est = baseline_interpolate_ce(noisy, {1, 1, 1});
  const Region all(bil.values.size(), 1);
  CHECK(nmse_db(est, bil, all) == doctest::Approx(nmse_db(noisy, bil, all)));
  CHECK(nmse_db(est, bil, all) > -12.0);
}

TEST_CASE("task regions") {
  const CsiSample s = testing::tiny_sample(5, 16, 8, 2);
  const Region r = task_region(s, cp_t(0.25));
  CHECK(region_count(r) == 4 * 8 * 2);
  for (std::size_t t = 0; t < 16; ++t) CHECK(static_cast<bool>(r[s.index(t, 3, 1)]) == (t >= 12));
  CHECK(region_count(task_region(s, cp_f(0.3))) == 16 * 3 * 2);
  CHECK(region_count(task_region(s, {TaskKind::Estimate, 0.0, {0.25, 1, 0.25}, "x"})) == s.values.size());

  // Only the predicted region is scored.
  CsiSample pred = s;
  for (std::size_t i = 0; i < pred.values.size(); ++i) pred.values[i] *= 0.9;
  const double before = nmse_db(pred, s, r);
  for (std::size_t i = 0; i < pred.values.size(); ++i) {
    if (!r[i]) pred.values[i] += Complex(5.0, -3.0);
  }
  CHECK(nmse_db(pred, s, r) == before);
}

TEST_CASE("settings and aggregation") {
  const auto low = settings_for({"CP-T", "CP-F", "CE"}, "low");
  REQUIRE(low.size() == 3);
  CHECK(low[0].ratio == 0.25);
  CHECK(low[2].pilots == PilotPattern{0.25, 1.0, 1.0 / 12.0});
  const auto high = settings_for({"CP-T", "CE"}, "high");
  CHECK(high[0].ratio == 0.5);
  CHECK(high[1].pilots == PilotPattern{1.0 / 8.0, 1.0, 1.0 / 24.0});
  CHECK(settings_for({"CP-F"}, "0.375")[0].ratio == 0.375);
  CHECK_THROWS_AS(settings_for({"CP-T"}, "1.5"), ConfigError);
  CHECK_THROWS_AS(settings_for({"CP-T"}, "most"), ConfigError);
  CHECK_THROWS_AS(settings_for({"XX"}, "low"), std::invalid_argument);

  CHECK(aggregate_db({-10.0, -20.0}, "mean_db") == -15.0);
  CHECK(aggregate_db({-10.0, -10.0}, "db_of_mean") == doctest::Approx(-10.0));
  CHECK(aggregate_db({0.0, -100.0}, "db_of_mean") == doctest::Approx(10.0 * std::log10(0.5)));
  CHECK_THROWS_AS(aggregate_db({1.0}, "median"), ConfigError);
}

TEST_CASE("confidence metrics") {
  EvalRow row;
  row.task = "CP-T";
  row.has_confidence = true;
  row.sample_nmse_db = {-10.0, -20.0, -5.0};
  row.sample_conf_db = row.sample_nmse_db;
  CHECK(confidence_mae({row})["CP-T"] == 0.0);
  for (double& v : row.sample_conf_db) v += 3.0;
  CHECK(confidence_mae({row})["CP-T"] == doctest::Approx(3.0));
  CHECK(mean_predictor_mae({row})["CP-T"] == doctest::Approx((1.6666666666666667 + 8.333333333333334 + 6.666666666666667) / 3.0));
  const auto cdf = confidence_error_cdf({row});
  REQUIRE(cdf.size() == 3);
  CHECK(cdf.back().second == 1.0);
  CHECK(cdf_csv(cdf).rfind("error_db,cumulative_fraction\n", 0) == 0);
}

TEST_CASE("zero-shot and baseline runs") {
  DataConfig data;
  data.coarse = {16, 8, 0.5e-3, 360e3, 3.5e9};
  data.fine = {16, 48, 1e-3, 120e3, 3.5e9};
  const auto corpus = build_corpus({{preset_by_name("indoor-los"), data.coarse, {2, 1, 0.5}},
                                    {preset_by_name("uma-nlos"), data.coarse, {2, 1, 0.5}},
                                    {preset_by_name("indoor-los"), data.fine, {2, 1, 0.5}}},
                                   {4, 2, 3}, 6);
  const Catalog cat = make_catalog(corpus, data);
  ModelConfig cfg = testing::tiny_config();
  cfg.patch = {4, 4, 2};
  const MdaeModel m(cfg, 7);

  ZeroShotOptions opt;
  std::vector<RoutingRecord> routing;
  opt.routing = &routing;
  const auto settings = settings_for({"CP-T", "CP-F", "CE"}, "low");
  const auto rows = run_zero_shot(m, corpus, cat, settings, opt);
  CHECK(rows.size() == 2 + 2 + 1);
  for (const EvalRow& r : rows) {
    CHECK(r.sample_nmse_db.size() == 3);
    CHECK(std::isfinite(r.nmse_db));
    CHECK(r.has_confidence);
  }
  CHECK(routing.size() == 3 * m.smoe_layers());
  CHECK(report_csv(rows).rfind("task,dataset,ratio,snr_db,nmse_db,se_bps_hz,conf_pred_db,conf_true_db\n", 0) == 0);
  CHECK(routing_csv(routing).rfind("layer,task,expert,D_i,P_i\n", 0) == 0);

  opt.threads = 3;
  opt.routing = nullptr;
  const auto again = run_zero_shot(m, corpus, cat, settings, opt);
  CHECK(report_csv(again) == report_csv(rows));

  const auto base = run_baselines(corpus, cat, settings, opt);
  CHECK(base.size() == rows.size());
  CHECK_FALSE(base[0].has_confidence);
  const std::string csv = report_csv(base);
  CHECK(csv.find(",,\n") != std::string::npos);

  // No noise, full pilots: the interpolation estimate is the input itself.
  ZeroShotOptions clean;
  clean.snr_db = kInf;
  const auto ident = run_baselines(corpus, cat, {{TaskKind::Estimate, 0.0, {1, 1, 1}, "full"}}, clean);
  REQUIRE(ident.size() == 1);
  CHECK(ident[0].nmse_db == kNmseFloorDb);

  CHECK_THROWS_AS(run_baselines(corpus, Catalog{cat.coarse, {}}, settings, opt), ConfigError);
}

TEST_CASE("f1") {
  CHECK(f1_score({true, true, false, false}, {true, false, true, false}) == doctest::Approx(0.5));
  CHECK(f1_score({true, false}, {true, false}) == 1.0);
  CHECK(f1_score({false, false}, {true, false}) == 0.0);
  CHECK_THROWS_AS(f1_score({true}, {true, false}), std::invalid_argument);
}

TEST_CASE("scenario classifier fine-tuning") {
  const GridSpec grid{64, 16, 0.5e-3, 360e3, 3.5e9};
  const auto corpus = build_corpus({{preset_by_name("pure-los"), grid, {4, 1, 0.5}},
                                    {preset_by_name("nlos-6path"), grid, {4, 1, 0.5}}},
                                   {128, 0, 64}, 8);
  std::vector<CsiSample> train, test;
  std::vector<bool> train_y, test_y;
  for (const auto& ds : corpus) {
    for (const auto& s : ds.split_samples(Split::Train)) {
      train.push_back(s);
      train_y.push_back(s.line_of_sight);
    }
    for (const auto& s : ds.split_samples(Split::Test)) {
      test.push_back(s);
      test_y.push_back(s.line_of_sight);
    }
  }
  ModelConfig cfg = testing::tiny_config();
  cfg.dim = 32;
  cfg.decoder_dim = 32;
  cfg.patch = {4, 4, 4};
  MdaeModel m(cfg, 9);
  std::vector<std::string> names;
  for (const Param* p : m.parameters()) names.push_back(p->name);
  const std::uint64_t before = parameter_hash(m, names);

  FinetuneConfig ft;
  ft.epochs = 30;
  ft.batch_size = 16;
  ft.lr = 1e-2;
  const FinetuneResult r = finetune_scenario_classifier(m, train, train_y, test, test_y, ft, 1);
  CHECK(parameter_hash(m, names) == before);
  CHECK(r.gate == 4);
  CHECK(r.test_samples == 128);
  CHECK(r.f1 > r.untrained_f1);
  CHECK(r.f1 > 0.7);

  MdaeModel control(cfg, 9);
  ft.shuffle_labels = true;
  const FinetuneResult c = finetune_scenario_classifier(control, train, train_y, test, test_y, ft, 1);
  CHECK(c.accuracy < r.accuracy);
  CHECK(std::abs(c.accuracy - 0.5) < 0.15);

  MdaeModel single(cfg, 9);
  const std::vector<bool> ones(train.size(), true);
  CHECK_THROWS_AS(finetune_scenario_classifier(single, train, ones, test, test_y, ft, 1), DegenerateInputError);
}
