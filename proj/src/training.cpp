// SPDX-License-Identifier: Apache-2.0
#include "csilab/training.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <stdexcept>

#include "csilab/errors.hpp"
#include "csilab/parallel.hpp"

namespace csilab {

namespace {

void check_planes(const Tensor& recon, const Tensor& truth, const Region& omega) {
  if (recon.shape() != truth.shape() || recon.rank() != 4 || recon.dim(0) != 2) {
    throw std::invalid_argument("reconstruction and truth planes must share a 2xTxKxN shape");
  }
  if (omega.size() * 2 != recon.size()) throw std::invalid_argument("omega does not match the planes");
  if (region_count(omega) == 0) throw std::invalid_argument("omega is empty");
}

}  // namespace

double reconstruction_loss(const Tensor& recon, const Tensor& truth, const Region& omega) {
  check_planes(recon, truth, omega);
  const std::size_t half = omega.size();
  double sum = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    if (!omega[i]) continue;
    const double a = recon[i] - truth[i];
    const double b = recon[half + i] - truth[half + i];
    sum += a * a + b * b;
  }
  return sum / static_cast<double>(2 * region_count(omega));
}

Tensor reconstruction_loss_grad(const Tensor& recon, const Tensor& truth, const Region& omega) {
  check_planes(recon, truth, omega);
  const std::size_t half = omega.size();
  const double k = 2.0 / static_cast<double>(2 * region_count(omega));
  Tensor g(recon.shape());
  for (std::size_t i = 0; i < half; ++i) {
    if (!omega[i]) continue;
    g[i] = k * (recon[i] - truth[i]);
    g[half + i] = k * (recon[half + i] - truth[half + i]);
  }
  return g;
}

double planes_nmse_db(const Tensor& recon, const Tensor& truth, const Region& omega) {
  check_planes(recon, truth, omega);
  const std::size_t half = omega.size();
  double err = 0.0, ref = 0.0;
  for (std::size_t i = 0; i < half; ++i) {
    if (!omega[i]) continue;
    for (std::size_t p : {i, half + i}) {
      err += (recon[p] - truth[p]) * (recon[p] - truth[p]);
      ref += truth[p] * truth[p];
    }
  }
  if (!(ref > 0.0)) throw DegenerateInputError("truth has zero power over the scored region");
  return 10.0 * std::log10(std::max(err / ref, 1e-12));
}

double load_balance_loss(const std::vector<double>& dispatch, const std::vector<double>& probability) {
  if (dispatch.size() != probability.size() || dispatch.empty()) {
    throw std::invalid_argument("load_balance_loss: D and P must have the same non-zero length");
  }
  double s = 0.0;
  for (std::size_t i = 0; i < dispatch.size(); ++i) s += dispatch[i] * probability[i];
  return static_cast<double>(dispatch.size()) * s;
}

double load_balance_loss(const RoutingCounts& counts) {
  return load_balance_loss(counts.dispatch_fraction(), counts.mean_probability());
}

double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double base, double min_rate) {
  if (warmup >= total) throw std::invalid_argument("lr_schedule: warmup must be below total");
  if (step <= warmup) {
    return warmup == 0 ? base : base * static_cast<double>(step) / static_cast<double>(warmup);
  }
  if (step >= total) return min_rate;
  const double progress = static_cast<double>(step - warmup) / static_cast<double>(total - warmup);
  return min_rate + 0.5 * (base - min_rate) * (1.0 + std::cos(std::numbers::pi * progress));
}

AdamW::AdamW(std::vector<Param*> params, double weight_decay, double beta1, double beta2, double eps)
    : params_(std::move(params)), decay_(weight_decay), beta1_(beta1), beta2_(beta2), eps_(eps) {
  for (const Param* p : params_) {
    m_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    v_.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
  }
}

void AdamW::step(const std::vector<const Mat*>& grads, double rate) {
  if (grads.size() != params_.size()) throw std::invalid_argument("AdamW: gradient count mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (grads[i]->rows() != params_[i]->value.rows() || grads[i]->cols() != params_[i]->value.cols()) {
      throw std::invalid_argument("AdamW: gradient shape mismatch for " + params_[i]->name);
    }
    if (!grads[i]->allFinite()) throw TrainingError("non-finite gradient for parameter " + params_[i]->name);
  }
  ++t_;
  const double c1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Mat& w = params_[i]->value;
    const Mat& g = *grads[i];
    m_[i] = beta1_ * m_[i] + (1.0 - beta1_) * g;
    v_[i] = beta2_ * v_[i] + (1.0 - beta2_) * g.cwiseProduct(g);
    w *= 1.0 - rate * decay_;
    w.array() -= rate * (m_[i].array() / c1) / ((v_[i].array() / c2).sqrt() + eps_);
    w = w.unaryExpr([](double x) { return round_to_float(x); });
  }
}

double clip_global_norm(const std::vector<Mat*>& grads, double max_norm) {
  double sq = 0.0;
  for (const Mat* g : grads) sq += g->squaredNorm();
  const double norm = std::sqrt(sq);
  if (max_norm > 0.0 && norm > max_norm) {
    const double s = max_norm / norm;
    for (Mat* g : grads) *g *= s;
  }
  return norm;
}

Catalog make_catalog(const std::vector<DatasetHandle>& corpus, const DataConfig& data) {
  Catalog c;
  auto same = [](const GridSpec& a, const GridSpec& b) {
    return a.t_samples == b.t_samples && a.subcarriers == b.subcarriers;
  };
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (same(corpus[i].grid, data.coarse)) c.coarse.push_back(i);
    if (same(corpus[i].grid, data.fine)) c.fine.push_back(i);
  }
  return c;
}

TaskDraw draw_task(SeededRng& rng, const Phase1Config& cfg, const Catalog& catalog) {
  if (catalog.coarse.empty()) throw ConfigError("corpus has no coarse-grid dataset");
  if (catalog.fine.empty()) throw ConfigError("corpus has no fine-grid dataset");
  TaskDraw d;
  d.task_id = cfg.random_mask ? 1 + static_cast<int>(rng.uniform_index(4))
                              : 2 + static_cast<int>(rng.uniform_index(3));
  if (d.task_id == 1) {
    d.ratio = cfg.random_mask_ratio;
  } else if (d.task_id <= 3) {
    d.ratio = cfg.fixed_ratio ? 0.25 : rng.uniform(cfg.mask_ratio_min, cfg.mask_ratio_max);
  } else if (cfg.fixed_ratio) {
    d.pilots = {0.25, 1.0, 1.0 / 12.0};
  } else {
    d.pilots.time = rng.uniform(cfg.pilot_min.time, cfg.pilot_max.time);
    d.pilots.antenna = rng.uniform(cfg.pilot_min.antenna, cfg.pilot_max.antenna);
    d.pilots.subcarrier = rng.uniform(cfg.pilot_min.subcarrier, cfg.pilot_max.subcarrier);
  }
  d.snr_db = rng.uniform(cfg.snr_min_db, cfg.snr_max_db);
  const auto& pool = d.task_id == 4 ? catalog.fine : catalog.coarse;
  d.dataset = pool[rng.uniform_index(pool.size())];
  return d;
}

PreparedExample make_training_example(const MdaeModel& model, const CsiSample& clean,
                                      const TaskDraw& draw, SeededRng& rng) {
  const CsiSample noisy = add_awgn(clean, {draw.snr_db, rng.next_u64()});
  ExampleSpec spec;
  spec.task_id = draw.task_id;
  spec.ratio = draw.ratio;
  spec.pilots = draw.pilots;
  return prepare_example(model, noisy, &clean, spec, rng);
}

BatchResult batch_loss(const MdaeModel& model, const std::vector<PreparedExample>& batch,
                       double load_weight, GradBuffer* grads, std::size_t threads) {
  if (batch.empty()) throw std::invalid_argument("batch_loss: empty batch");
  const std::size_t B = batch.size();
  const std::size_t layers = model.smoe_layers();
  const std::size_t M = model.config().experts;

  std::vector<ForwardState> states(B);
  std::vector<Tensor> recon(B);
  std::vector<double> losses(B);
  parallel_for(B, threads, [&](std::size_t b) {
    states[b] = model.forward(batch[b].input, {});
    recon[b] = unpatchify(states[b].output_tokens, batch[b].input.layout);
    losses[b] = reconstruction_loss(recon[b], batch[b].truth_planes, batch[b].target);
  });

  BatchResult r;
  r.routing.assign(layers, RoutingCounts(M));
  for (std::size_t b = 0; b < B; ++b) {
    r.rec += losses[b] / static_cast<double>(B);
    for (std::size_t l = 0; l < layers; ++l) r.routing[l].add(states[b].routing[l]);
  }
  std::vector<std::vector<double>> coef;
  if (layers > 0) {
    for (std::size_t l = 0; l < layers; ++l) r.load += load_balance_loss(r.routing[l]);
    r.load /= static_cast<double>(layers);
    if (load_weight > 0.0) {
      coef.assign(layers, std::vector<double>(M, 0.0));
      for (std::size_t l = 0; l < layers; ++l) {
        const auto D = r.routing[l].dispatch_fraction();
        const double tb = static_cast<double>(r.routing[l].tokens);
        for (std::size_t i = 0; i < M; ++i) {
          coef[l][i] = load_weight * static_cast<double>(M) * D[i] / (tb * static_cast<double>(layers));
        }
      }
    }
  }
  if (!grads) return r;

  std::vector<GradBuffer> per(B);
  parallel_for(B, threads, [&](std::size_t b) {
    per[b] = model.make_grad_buffer();
    Tensor g = reconstruction_loss_grad(recon[b], batch[b].truth_planes, batch[b].target);
    for (double& v : g.values()) v /= static_cast<double>(B);
    const Mat d_out = patchify(g, model.config().patch).tokens;
    model.backward(batch[b].input, states[b], d_out, 0.0, coef, per[b]);
  });
  for (const GradBuffer& g : per) grads->add(g);
  return r;
}

std::vector<std::string> confidence_parameter_names(const MdaeModel& model) {
  std::vector<std::string> out;
  for (const Param* p : model.parameters()) {
    if (p->name.rfind("confidence.", 0) == 0) out.push_back(p->name);
  }
  return out;
}

std::vector<std::string> backbone_parameter_names(const MdaeModel& model) {
  std::vector<std::string> out;
  for (const Param* p : model.parameters()) {
    if (p->name.rfind("confidence.", 0) != 0) out.push_back(p->name);
  }
  return out;
}

namespace {

struct Trainable {
  std::vector<Param*> params;
  std::vector<std::size_t> ids;
};

Trainable select(MdaeModel& model, const std::vector<std::string>& names) {
  const std::set<std::string> wanted(names.begin(), names.end());
  Trainable t;
  for (Param* p : model.parameters()) {
    if (wanted.count(p->name)) {
      t.params.push_back(p);
      t.ids.push_back(p->id);
    }
  }
  return t;
}

std::size_t coarse_train_size(const std::vector<DatasetHandle>& corpus, const Catalog& catalog) {
  std::size_t n = 0;
  for (std::size_t i : catalog.coarse) n += corpus[i].train.size();
  return n;
}

std::vector<PreparedExample> draw_batch(const MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                        const TaskDraw& draw, std::size_t batch_size, SeededRng& step_rng,
                                        std::size_t threads) {
  const DatasetHandle& ds = corpus.at(draw.dataset);
  if (ds.train.empty()) throw ConfigError("dataset " + ds.name + " has no training samples");
  std::vector<std::size_t> picks(batch_size);
  for (std::size_t& p : picks) p = ds.train[step_rng.uniform_index(ds.train.size())];
  std::vector<PreparedExample> batch(batch_size);
  parallel_for(batch_size, threads, [&](std::size_t b) {
    SeededRng rng = step_rng.child(b + 1);
    batch[b] = make_training_example(model, ds.samples[picks[b]], draw, rng);
  });
  return batch;
}

// Shifts each confidence head so it starts at its task's mean NMSE. The
// output scale makes the bias walk there slowly under Adam otherwise.
void calibrate_confidence_bias(MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                               const Catalog& catalog, const Phase1Config& tasks, const Phase2Config& cfg,
                               std::size_t threads) {
  constexpr std::size_t kBatches = 4;
  constexpr std::size_t kMaxDraws = 10000;
  const SeededRng master = SeededRng(cfg.seed).child(~std::uint64_t{0});
  for (int task = 1; task <= static_cast<int>(kPretrainTasks); ++task) {
    SeededRng rng = master.child(static_cast<std::uint64_t>(task));
    double sum_err = 0.0;
    std::size_t n = 0;
    for (std::size_t b = 0; b < kBatches; ++b) {
      TaskDraw draw;
      std::size_t tries = 0;
      do {
        draw = draw_task(rng, tasks, catalog);
      } while (draw.task_id != task && ++tries < kMaxDraws);
      if (draw.task_id != task) break;
      const auto batch = draw_batch(model, corpus, draw, cfg.batch_size, rng, threads);
      std::vector<double> err(batch.size());
      parallel_for(batch.size(), threads, [&](std::size_t i) {
        const ForwardState st = model.forward(batch[i].input, {.confidence = true});
        const Tensor recon = unpatchify(st.output_tokens, batch[i].input.layout);
        err[i] = planes_nmse_db(recon, batch[i].truth_planes, batch[i].target) - st.confidence_db;
      });
      for (double e : err) sum_err += e;
      n += err.size();
    }
    if (n == 0) continue;
    Param& bias = model.confidence_heads[static_cast<std::size_t>(task - 1)].fc2.bias;
    bias.value(0, 0) = round_to_float(bias.value(0, 0) + sum_err / static_cast<double>(n) / kConfidenceScaleDb);
  }
}

}  // namespace

std::vector<LossRecord> run_phase1(MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                   const Catalog& catalog, const Phase1Config& cfg,
                                   const TrainHooks& hooks) {
  const std::size_t train = coarse_train_size(corpus, catalog);
  const std::size_t per_epoch = cfg.total_steps(train) / cfg.epochs;
  const std::size_t total = cfg.epochs * per_epoch;
  const std::size_t warmup = cfg.warmup_epochs * per_epoch;
  const std::size_t threads = resolve_threads(hooks.threads);

  Trainable tr = select(model, backbone_parameter_names(model));
  AdamW opt(tr.params, cfg.weight_decay);
  GradBuffer grads = model.make_grad_buffer();
  const SeededRng master(cfg.seed);

  std::vector<LossRecord> trace;
  for (std::size_t step = 0; step < total; ++step) {
    SeededRng step_rng = master.child(step);
    const TaskDraw draw = draw_task(step_rng, cfg, catalog);
    const auto batch = draw_batch(model, corpus, draw, cfg.batch_size, step_rng, threads);

    grads.zero();
    const BatchResult r = batch_loss(model, batch, cfg.load_weight, &grads, threads);
    const double lr = lr_schedule(step + 1, total, warmup, cfg.lr, cfg.min_lr);
    LossRecord rec{step, draw.task_id, r.rec, r.load, lr};
    trace.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (!std::isfinite(r.rec) || !std::isfinite(r.load)) {
      throw TrainingError("loss diverged at step " + std::to_string(step));
    }

    std::vector<Mat*> g;
    for (std::size_t id : tr.ids) g.push_back(&grads.at(id));
    clip_global_norm(g, cfg.clip_norm);
    opt.step(std::vector<const Mat*>(g.begin(), g.end()), lr);
    if (hooks.on_epoch && (step + 1) % per_epoch == 0) hooks.on_epoch((step + 1) / per_epoch, model);
  }
  return trace;
}

std::vector<LossRecord> run_phase2(MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                   const Catalog& catalog, const Phase1Config& tasks,
                                   const Phase2Config& cfg, const TrainHooks& hooks) {
  const std::size_t train = coarse_train_size(corpus, catalog);
  const std::size_t per_epoch = std::max<std::size_t>(1, cfg.total_steps(train) / std::max<std::size_t>(cfg.epochs, 1));
  const std::size_t total = cfg.epochs * per_epoch;
  const std::size_t warmup = cfg.warmup_epochs * per_epoch;
  const std::size_t threads = resolve_threads(hooks.threads);
  if (total == 0) return {};

  const auto backbone = backbone_parameter_names(model);
  const std::uint64_t before = parameter_hash(model, backbone);
  calibrate_confidence_bias(model, corpus, catalog, tasks, cfg, threads);
  Trainable tr = select(model, confidence_parameter_names(model));
  AdamW opt(tr.params, cfg.weight_decay);
  GradBuffer grads = model.make_grad_buffer();
  const SeededRng master(cfg.seed);

  std::vector<LossRecord> trace;
  for (std::size_t step = 0; step < total; ++step) {
    SeededRng step_rng = master.child(step);
    const TaskDraw draw = draw_task(step_rng, tasks, catalog);
    const auto batch = draw_batch(model, corpus, draw, cfg.batch_size, step_rng, threads);
    const std::size_t B = batch.size();

    std::vector<double> sq(B);
    std::vector<GradBuffer> per(B);
    parallel_for(B, threads, [&](std::size_t b) {
      const ForwardState st = model.forward(batch[b].input, {.confidence = true});
      const Tensor recon = unpatchify(st.output_tokens, batch[b].input.layout);
      const double truth_db = planes_nmse_db(recon, batch[b].truth_planes, batch[b].target);
      const double err = st.confidence_db - truth_db;
      sq[b] = err * err;
      per[b] = model.make_grad_buffer();
      const Mat zero = Mat::Zero(st.output_tokens.rows(), st.output_tokens.cols());
      model.backward(batch[b].input, st, zero, 2.0 * err / static_cast<double>(B), {}, per[b], true);
    });
    grads.zero();
    double mse = 0.0;
    for (std::size_t b = 0; b < B; ++b) {
      mse += sq[b] / static_cast<double>(B);
      grads.add(per[b]);
    }
    const double lr = lr_schedule(step + 1, total, warmup, cfg.lr, cfg.min_lr);
    LossRecord rec{step, draw.task_id, mse, 0.0, lr};
    trace.push_back(rec);
    if (hooks.on_step) hooks.on_step(rec);
    if (!std::isfinite(mse)) throw TrainingError("confidence loss diverged at step " + std::to_string(step));

    std::vector<Mat*> g;
    for (std::size_t id : tr.ids) g.push_back(&grads.at(id));
    clip_global_norm(g, cfg.clip_norm);
    opt.step(std::vector<const Mat*>(g.begin(), g.end()), lr);
    if (hooks.on_epoch && (step + 1) % per_epoch == 0) hooks.on_epoch((step + 1) / per_epoch, model);
  }
  if (parameter_hash(model, backbone) != before) {
    throw InvariantError("phase 2 modified a backbone parameter");
  }
  return trace;
}

}  // namespace csilab
