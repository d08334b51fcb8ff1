// SPDX-License-Identifier: Apache-2.0
#include "csilab/eval.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

#include "csilab/errors.hpp"
#include "csilab/parallel.hpp"

namespace csilab {

double nmse_db(const CsiSample& pred, const CsiSample& truth, const Region& region) {
  if (pred.values.size() != truth.values.size() || region.size() != truth.values.size()) {
    throw std::invalid_argument("nmse_db: shape mismatch");
  }
  if (region_count(region) == 0) throw std::invalid_argument("nmse_db: empty region");
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < region.size(); ++i) {
    if (!region[i]) continue;
    err += std::norm(pred.values[i] - truth.values[i]);
    ref += std::norm(truth.values[i]);
  }
  if (!(ref > 0.0)) throw DegenerateInputError("nmse_db: truth has zero power over the region");
  return 10.0 * std::log10(std::max(err / ref, 1e-12));
}

ChannelColumns matched_filter_precoder(const ChannelColumns& estimate) {
  ChannelColumns p = estimate;
  for (auto& col : p) {
    double n2 = 0.0;
    for (const Complex& v : col) n2 += std::norm(v);
    if (n2 > 0.0) {
      const double s = 1.0 / std::sqrt(n2);
      for (Complex& v : col) v *= s;
    }
  }
  return p;
}

double spectral_efficiency(const ChannelColumns& h, const ChannelColumns& p, double noise_power) {
  if (h.size() != p.size()) throw std::invalid_argument("spectral_efficiency: column count mismatch");
  if (!(noise_power > 0.0)) throw std::invalid_argument("spectral_efficiency: noise power must be positive");
  double r = 0.0;
  for (std::size_t k = 0; k < h.size(); ++k) {
    if (h[k].size() != p[k].size()) throw std::invalid_argument("spectral_efficiency: antenna count mismatch");
    Complex g{0.0, 0.0};
    for (std::size_t n = 0; n < h[k].size(); ++n) g += std::conj(h[k][n]) * p[k][n];
    r += std::log2(1.0 + std::norm(g) / noise_power);
  }
  return r;
}

double sample_spectral_efficiency(const CsiSample& truth, const CsiSample& estimate, const Region& region,
                                  double noise_power) {
  double total = 0.0;
  std::size_t slots = 0;
  for (std::size_t t = 0; t < truth.T(); ++t) {
    ChannelColumns h, e;
    for (std::size_t k = 0; k < truth.K(); ++k) {
      if (!region[truth.index(t, k, 0)]) continue;
      std::vector<Complex> hc(truth.N()), ec(truth.N());
      for (std::size_t n = 0; n < truth.N(); ++n) {
        hc[n] = truth(t, k, n);
        ec[n] = estimate(t, k, n);
      }
      h.push_back(std::move(hc));
      e.push_back(std::move(ec));
    }
    if (h.empty()) continue;
    total += spectral_efficiency(h, matched_filter_precoder(e), noise_power);
    ++slots;
  }
  return slots ? total / static_cast<double>(slots) : 0.0;
}

namespace {

std::size_t predicted(double ratio, std::size_t extent) {
  if (!(ratio > 0.0) || !(ratio < 1.0)) throw std::invalid_argument("prediction ratio must be in (0, 1)");
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(extent) - 1e-9));
}

}  // namespace

Region task_region(const CsiSample& sample, const TaskSetting& setting) {
  switch (setting.kind) {
    case TaskKind::PredictTime:
      return time_suffix_region(sample.grid, sample.N(), predicted(setting.ratio, sample.T()));
    case TaskKind::PredictFrequency:
      return frequency_suffix_region(sample.grid, sample.N(), predicted(setting.ratio, sample.K()));
    case TaskKind::Estimate:
      break;
  }
  return Region(sample.values.size(), 1);
}

CsiSample baseline_linear_extrapolate(const CsiSample& sample, const TaskSetting& setting) {
  if (setting.kind == TaskKind::Estimate) throw std::invalid_argument("extrapolation needs a prediction task");
  const bool time = setting.kind == TaskKind::PredictTime;
  const std::size_t extent = time ? sample.T() : sample.K();
  const std::size_t count = predicted(setting.ratio, extent);
  if (extent < count + 2) throw std::invalid_argument("extrapolation needs at least two observed samples");
  const std::size_t last = extent - count - 1;
  CsiSample out = sample;
  const std::size_t other = time ? sample.K() : sample.T();
  for (std::size_t o = 0; o < other; ++o) {
    for (std::size_t n = 0; n < sample.N(); ++n) {
      auto at = [&](std::size_t j) -> Complex& { return time ? out(j, o, n) : out(o, j, n); };
      const Complex h1 = at(last);
      const Complex slope = h1 - at(last - 1);
      for (std::size_t j = last + 1; j < extent; ++j) at(j) = h1 + static_cast<double>(j - last) * slope;
    }
  }
  return out;
}

CsiSample baseline_interpolate_ce(const CsiSample& sample, const PilotPattern& pattern) {
  return pilot_downsample_interpolate(sample, pattern);
}

std::vector<TaskSetting> settings_for(const std::vector<std::string>& tasks, const std::string& ratio) {
  double cp = 0.25;
  PilotPattern ce{0.25, 1.0, 1.0 / 12.0};
  if (ratio == "high") {
    cp = 0.5;
    ce = {1.0 / 8.0, 1.0, 1.0 / 24.0};
  } else if (ratio != "low") {
    std::size_t used = 0;
    try {
      cp = std::stod(ratio, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != ratio.size() || !(cp > 0.0) || !(cp < 1.0)) {
      throw ConfigError("ratio must be low, high or a fraction in (0, 1), got '" + ratio + "'");
    }
  }
  std::vector<TaskSetting> out;
  for (const std::string& name : tasks) {
    TaskSetting s;
    s.kind = parse_task_kind(name);
    s.ratio = cp;
    s.pilots = ce;
    s.label = ratio;
    out.push_back(s);
  }
  return out;
}

double aggregate_db(const std::vector<double>& values_db, const std::string& rule) {
  if (values_db.empty()) return 0.0;
  double s = 0.0;
  if (rule == "mean_db") {
    for (double v : values_db) s += v;
    return s / static_cast<double>(values_db.size());
  }
  if (rule == "db_of_mean") {
    for (double v : values_db) s += std::pow(10.0, v / 10.0);
    return 10.0 * std::log10(s / static_cast<double>(values_db.size()));
  }
  throw ConfigError("unknown aggregation rule '" + rule + "'");
}

namespace {

struct Estimate {
  CsiSample csi;
  double conf = 0.0;
  std::vector<RoutingCounts> routing;
};

struct SampleOutcome {
  double nmse = 0.0;
  double se = 0.0;
  double conf = 0.0;
  std::vector<RoutingCounts> routing;
};

void add_routing(std::vector<RoutingRecord>& records, int task, const std::vector<RoutingCounts>& routing) {
  for (std::size_t l = 0; l < routing.size(); ++l) {
    auto it = std::find_if(records.begin(), records.end(),
                           [&](const RoutingRecord& r) { return r.layer == l && r.task == task; });
    if (it == records.end()) {
      records.push_back({l, task, RoutingCounts(routing[l].argmax_tokens.size())});
      it = records.end() - 1;
    }
    it->counts.add(routing[l]);
  }
}

template <typename Estimator>
std::vector<EvalRow> evaluate(const std::vector<DatasetHandle>& corpus, const Catalog& catalog,
                              const std::vector<TaskSetting>& settings, const ZeroShotOptions& opt,
                              bool has_confidence, Estimator estimator) {
  std::vector<EvalRow> rows;
  for (std::size_t s = 0; s < settings.size(); ++s) {
    const TaskSetting& setting = settings[s];
    const auto& pool = setting.kind == TaskKind::Estimate ? catalog.fine : catalog.coarse;
    if (pool.empty()) throw ConfigError(std::string("no dataset available for ") + task_kind_name(setting.kind));
    for (std::size_t d : pool) {
      const DatasetHandle& ds = corpus[d];
      const auto& idx = ds.split(opt.split);
      if (idx.empty()) {
        throw ConfigError("dataset " + ds.name + " has an empty " + split_name(opt.split) + " split");
      }
      std::vector<SampleOutcome> out(idx.size());
      const std::uint64_t base = SeededRng::derive_seed(SeededRng::derive_seed(opt.seed, d), s);
      parallel_for(idx.size(), opt.threads, [&](std::size_t i) {
        SeededRng rng(SeededRng::derive_seed(base, i));
        const CsiSample& clean = ds.samples[idx[i]];
        const CsiSample noisy = add_awgn(clean, {opt.snr_db, rng.next_u64()});
        Estimate est = estimator(noisy, setting, rng);
        const Region region = task_region(clean, setting);
        SampleOutcome& o = out[i];
        o.nmse = nmse_db(est.csi, clean, region);
        // Noise-free runs score SE at the 120 dB clamp used for NMSE.
        const double noise = clean.mean_power() * std::max(std::pow(10.0, -opt.snr_db / 10.0), 1e-12);
        o.se = sample_spectral_efficiency(clean, est.csi, region, noise);
        o.conf = est.conf;
        o.routing = std::move(est.routing);
      });

      EvalRow row;
      row.task = task_kind_name(setting.kind);
      row.dataset = ds.name;
      row.ratio = setting.label;
      row.snr_db = opt.snr_db;
      row.has_confidence = has_confidence;
      double se = 0.0;
      for (const SampleOutcome& o : out) {
        row.sample_nmse_db.push_back(o.nmse);
        if (has_confidence) row.sample_conf_db.push_back(o.conf);
        se += o.se;
        if (opt.routing) add_routing(*opt.routing, task_id_for(setting.kind), o.routing);
      }
      row.nmse_db = aggregate_db(row.sample_nmse_db, opt.aggregation);
      row.se_bps_hz = se / static_cast<double>(out.size());
      if (has_confidence) {
        double c = 0.0;
        for (double v : row.sample_conf_db) c += v;
        row.conf_pred_db = c / static_cast<double>(out.size());
        row.conf_true_db = row.nmse_db;
      }
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

}  // namespace

std::vector<EvalRow> run_zero_shot(const MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                   const Catalog& catalog, const std::vector<TaskSetting>& settings,
                                   const ZeroShotOptions& opt) {
  return evaluate(corpus, catalog, settings, opt, opt.confidence,
                  [&](const CsiSample& noisy, const TaskSetting& setting, SeededRng& rng) {
                    Reconstruction r = reconstruct(model, noisy, setting, rng, opt.confidence);
                    return Estimate{std::move(r.csi), r.confidence_db, std::move(r.routing)};
                  });
}

std::vector<EvalRow> run_baselines(const std::vector<DatasetHandle>& corpus, const Catalog& catalog,
                                   const std::vector<TaskSetting>& settings, const ZeroShotOptions& opt) {
  return evaluate(corpus, catalog, settings, opt, false,
                  [](const CsiSample& noisy, const TaskSetting& setting, SeededRng&) {
                    Estimate e;
                    e.csi = setting.kind == TaskKind::Estimate ? baseline_interpolate_ce(noisy, setting.pilots)
                                                               : baseline_linear_extrapolate(noisy, setting);
                    return e;
                  });
}

std::map<std::string, double> confidence_mae(const std::vector<EvalRow>& rows) {
  std::map<std::string, double> sum;
  std::map<std::string, std::size_t> n;
  for (const EvalRow& r : rows) {
    if (!r.has_confidence) continue;
    for (std::size_t i = 0; i < r.sample_nmse_db.size(); ++i) {
      sum[r.task] += std::abs(r.sample_conf_db.at(i) - r.sample_nmse_db[i]);
      ++n[r.task];
    }
  }
  for (auto& [task, s] : sum) s /= static_cast<double>(n[task]);
  return sum;
}

std::map<std::string, double> mean_predictor_mae(const std::vector<EvalRow>& rows) {
  std::map<std::string, std::vector<double>> values;
  for (const EvalRow& r : rows) {
    values[r.task].insert(values[r.task].end(), r.sample_nmse_db.begin(), r.sample_nmse_db.end());
  }
  std::map<std::string, double> out;
  for (const auto& [task, v] : values) {
    if (v.empty()) continue;
    double mean = 0.0;
    for (double x : v) mean += x / static_cast<double>(v.size());
    double mae = 0.0;
    for (double x : v) mae += std::abs(x - mean) / static_cast<double>(v.size());
    out[task] = mae;
  }
  return out;
}

std::vector<std::pair<double, double>> confidence_error_cdf(const std::vector<EvalRow>& rows) {
  std::vector<double> err;
  for (const EvalRow& r : rows) {
    if (!r.has_confidence) continue;
    for (std::size_t i = 0; i < r.sample_nmse_db.size(); ++i) {
      err.push_back(std::abs(r.sample_conf_db.at(i) - r.sample_nmse_db[i]));
    }
  }
  std::sort(err.begin(), err.end());
  std::vector<std::pair<double, double>> cdf;
  for (std::size_t i = 0; i < err.size(); ++i) {
    cdf.emplace_back(err[i], static_cast<double>(i + 1) / static_cast<double>(err.size()));
  }
  return cdf;
}

double f1_score(const std::vector<bool>& predicted, const std::vector<bool>& truth) {
  if (predicted.size() != truth.size()) throw std::invalid_argument("f1_score: size mismatch");
  std::size_t tp = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (predicted[i] && truth[i]) ++tp;
    else if (predicted[i]) ++fp;
    else if (truth[i]) ++fn;
  }
  if (tp == 0) return 0.0;
  return 2.0 * static_cast<double>(tp) / static_cast<double>(2 * tp + fp + fn);
}

namespace {

ModelInput classifier_input(const MdaeModel& model, const CsiSample& noisy, std::size_t gate) {
  const Region all(noisy.values.size(), 1);
  const double scale = power_scale(noisy, all);
  CsiSample scaled = noisy;
  for (Complex& v : scaled.values) v *= scale;
  TokenGrid grid = patchify(complex_to_planes(scaled), model.config().patch);
  SeededRng unused(0);
  ModelInput in;
  in.plan = make_mask_plan(MaskMode::None, 0.0, grid.layout, unused);
  in.tokens = std::move(grid.tokens);
  in.layout = grid.layout;
  in.task_id = 4;
  in.gate = gate;
  return in;
}

Mat pooled(const ForwardState& st) { return st.encoder_normed.colwise().mean(); }

std::vector<bool> predict(const MdaeModel& model, const Linear& head, const std::vector<ModelInput>& inputs,
                          std::size_t threads) {
  std::vector<bool> out(inputs.size());
  std::vector<char> tmp(inputs.size());
  parallel_for(inputs.size(), threads, [&](std::size_t i) {
    const Mat logits = head.forward(pooled(model.encode(inputs[i])));
    tmp[i] = logits(0, 1) > logits(0, 0);
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = tmp[i] != 0;
  return out;
}

std::vector<ModelInput> make_inputs(const MdaeModel& model, const std::vector<CsiSample>& samples,
                                    double snr_db, std::uint64_t seed, std::size_t gate, std::size_t threads) {
  std::vector<ModelInput> out(samples.size());
  parallel_for(samples.size(), threads, [&](std::size_t i) {
    const CsiSample noisy = add_awgn(samples[i], {snr_db, SeededRng::derive_seed(seed, i)});
    out[i] = classifier_input(model, noisy, gate);
  });
  return out;
}

}  // namespace

FinetuneResult finetune_scenario_classifier(MdaeModel& model, const std::vector<CsiSample>& train,
                                            const std::vector<bool>& train_labels,
                                            const std::vector<CsiSample>& test,
                                            const std::vector<bool>& test_labels,
                                            const FinetuneConfig& cfg, std::size_t threads) {
  if (train.size() != train_labels.size() || test.size() != test_labels.size()) {
    throw std::invalid_argument("finetune: samples and labels differ in length");
  }
  if (train.empty() || test.empty()) throw std::invalid_argument("finetune: empty split");
  const std::set<bool> classes(train_labels.begin(), train_labels.end());
  if (classes.size() < 2) throw DegenerateInputError("finetune: training labels contain a single class");
  threads = resolve_threads(threads);

  FinetuneResult res;
  const auto frozen = [&] {
    std::vector<std::string> names;
    for (const Param* p : model.parameters()) names.push_back(p->name);
    return names;
  }();
  res.frozen_hash_before = parameter_hash(model, frozen);

  SeededRng rng(cfg.seed);
  res.gate = model.add_task_gate(rng.next_u64());
  const std::string gate_tag = ".smoe.gate." + std::to_string(res.gate) + ".";
  std::vector<Param*> trainable;
  for (Param* p : model.parameters()) {
    if (p->name.find(gate_tag) != std::string::npos) trainable.push_back(p);
  }
  const std::size_t n_gate_params = trainable.size();
  Linear head = make_linear("classifier", model.config().dim, 2, rng);
  head.weight.id = 0;
  head.bias.id = 1;
  trainable.push_back(&head.weight);
  trainable.push_back(&head.bias);

  std::vector<bool> labels = train_labels;
  if (cfg.shuffle_labels) {
    const auto perm = rng.permutation(labels.size());
    for (std::size_t i = 0; i < labels.size(); ++i) labels[i] = train_labels[perm[i]];
  }
  const auto train_in = make_inputs(model, train, cfg.snr_db, rng.next_u64(), res.gate, threads);
  const auto test_in = make_inputs(model, test, cfg.snr_db, rng.next_u64(), res.gate, threads);
  res.train_samples = train.size();
  res.test_samples = test.size();
  res.untrained_f1 = f1_score(predict(model, head, test_in, threads), test_labels);

  AdamW opt(trainable, 0.0);
  const std::size_t B = std::max<std::size_t>(1, cfg.batch_size);
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    const auto order = rng.permutation(train.size());
    for (std::size_t start = 0; start < order.size(); start += B) {
      const std::size_t n = std::min(B, order.size() - start);
      std::vector<GradBuffer> g_model(n), g_head(n);
      parallel_for(n, threads, [&](std::size_t b) {
        const std::size_t i = order[start + b];
        const ModelInput& in = train_in[i];
        const ForwardState st = model.encode(in);
        const Mat feat = pooled(st);
        const Mat logits = head.forward(feat);
        const double mx = logits.maxCoeff();
        const double e0 = std::exp(logits(0, 0) - mx), e1 = std::exp(logits(0, 1) - mx);
        Mat dl(1, 2);
        dl(0, 0) = e0 / (e0 + e1) - (labels[i] ? 0.0 : 1.0);
        dl(0, 1) = e1 / (e0 + e1) - (labels[i] ? 1.0 : 0.0);
        dl /= static_cast<double>(n);
        g_head[b] = GradBuffer({&head.weight, &head.bias});
        const Mat dfeat = head.backward(feat, dl, g_head[b]);
        const Mat d_enc = dfeat.replicate(st.encoder_normed.rows(), 1) / static_cast<double>(st.encoder_normed.rows());
        g_model[b] = model.make_grad_buffer();
        model.encoder_backward(in, st, d_enc, {}, g_model[b]);
      });
      GradBuffer gm = model.make_grad_buffer();
      GradBuffer gh({&head.weight, &head.bias});
      for (std::size_t b = 0; b < n; ++b) {
        gm.add(g_model[b]);
        gh.add(g_head[b]);
      }
      std::vector<const Mat*> grads;
      for (std::size_t k = 0; k < n_gate_params; ++k) grads.push_back(&gm.at(trainable[k]->id));
      grads.push_back(&gh.at(0));
      grads.push_back(&gh.at(1));
      opt.step(grads, cfg.lr);
    }
  }

  const auto pred = predict(model, head, test_in, threads);
  res.f1 = f1_score(pred, test_labels);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == test_labels[i];
  res.accuracy = static_cast<double>(correct) / static_cast<double>(pred.size());
  res.frozen_hash_after = parameter_hash(model, frozen);
  if (res.frozen_hash_after != res.frozen_hash_before) {
    throw InvariantError("fine-tuning modified a frozen parameter");
  }
  return res;
}

}  // namespace csilab
