// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/config.hpp"
#include "csilab/model.hpp"
#include "csilab/reconstruct.hpp"

namespace csilab {

/// Mean squared error over the real and imaginary entries of the positions
/// in omega. `omega` indexes complex positions (T*K*N); planes are 2xTxKxN.
double reconstruction_loss(const Tensor& recon, const Tensor& truth, const Region& omega);
/// dL/d(recon) for the loss above.
Tensor reconstruction_loss_grad(const Tensor& recon, const Tensor& truth, const Region& omega);

/// M * sum_i D_i P_i.
double load_balance_loss(const std::vector<double>& dispatch, const std::vector<double>& probability);
double load_balance_loss(const RoutingCounts& counts);

/// Linear warmup from 0 to base over `warmup` steps, then cosine decay to
/// `min_rate` at `total`.
double lr_schedule(std::size_t step, std::size_t total, std::size_t warmup, double base, double min_rate);

/// AdamW over a fixed list of parameters. Values are rounded to float after
/// each update so checkpoints stay exact.
class AdamW {
 public:
  AdamW(std::vector<Param*> params, double weight_decay, double beta1 = 0.9, double beta2 = 0.999,
        double eps = 1e-8);
  /// grads[i] belongs to params[i]. Throws TrainingError naming the first
  /// parameter with a non-finite gradient.
  void step(const std::vector<const Mat*>& grads, double rate);
  std::size_t steps() const { return t_; }
  const std::vector<Param*>& params() const { return params_; }

 private:
  std::vector<Param*> params_;
  std::vector<Mat> m_, v_;
  double decay_, beta1_, beta2_, eps_;
  std::size_t t_ = 0;
};

/// Scales gradients so their joint L2 norm is at most max_norm; returns the
/// norm before clipping.
double clip_global_norm(const std::vector<Mat*>& grads, double max_norm);

/// Coarse datasets serve tasks 1-3 and prediction; fine datasets serve task
/// 4 and estimation. A dataset matching both grids is in both lists.
struct Catalog {
  std::vector<std::size_t> coarse;
  std::vector<std::size_t> fine;
};
Catalog make_catalog(const std::vector<DatasetHandle>& corpus, const DataConfig& data);

struct TaskDraw {
  int task_id = 1;
  double ratio = 0.0;
  PilotPattern pilots;
  double snr_db = 20.0;
  std::size_t dataset = 0;  ///< index into the corpus
};

TaskDraw draw_task(SeededRng& rng, const Phase1Config& config, const Catalog& catalog);

/// Builds the noisy training example for one sample.
PreparedExample make_training_example(const MdaeModel& model, const CsiSample& clean,
                                      const TaskDraw& draw, SeededRng& rng);

struct BatchResult {
  double rec = 0.0;   ///< mean reconstruction loss
  double load = 0.0;  ///< layer-averaged load-balance loss
  std::vector<RoutingCounts> routing;  ///< batch totals per SMoE layer
};

/// L_rec + load_weight * L_load over a batch of examples; accumulates the
/// gradient into `grads` when given. Per-sample gradients are merged in
/// index order, so the result does not depend on `threads`.
BatchResult batch_loss(const MdaeModel& model, const std::vector<PreparedExample>& batch,
                       double load_weight, GradBuffer* grads, std::size_t threads = 1);

struct LossRecord {
  std::size_t step = 0;
  int task = 0;
  double rec = 0.0;
  double load = 0.0;
  double lr = 0.0;
};

struct TrainHooks {
  std::size_t threads = 1;
  std::function<void(const LossRecord&)> on_step;
  /// Called after each epoch with the epoch number (1-based).
  std::function<void(std::size_t, const MdaeModel&)> on_epoch;
};

/// Names of the confidence tokens and heads.
std::vector<std::string> confidence_parameter_names(const MdaeModel& model);
/// Everything else.
std::vector<std::string> backbone_parameter_names(const MdaeModel& model);

/// Phase 1. Throws TrainingError when the loss becomes non-finite.
std::vector<LossRecord> run_phase1(MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                   const Catalog& catalog, const Phase1Config& config,
                                   const TrainHooks& hooks = {});

/// Phase 2: trains only the confidence tokens and heads against the true
/// NMSE (dB) of the frozen backbone's reconstructions. Task draws use the
/// phase-1 distributions. Before the first step each head's output bias is
/// shifted to that task's mean error over a few batches. `rec` in the
/// records holds the confidence MSE (dB^2). Throws InvariantError if any backbone parameter changed.
std::vector<LossRecord> run_phase2(MdaeModel& model, const std::vector<DatasetHandle>& corpus,
                                   const Catalog& catalog, const Phase1Config& tasks,
                                   const Phase2Config& config, const TrainHooks& hooks = {});

/// NMSE in dB of reconstructed planes against truth over omega, clamped
/// at -120 dB.
double planes_nmse_db(const Tensor& recon, const Tensor& truth, const Region& omega);

}  // namespace csilab
