// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "csilab/channel.hpp"
#include "csilab/model.hpp"
#include "csilab/pipeline.hpp"

namespace csilab {

/// Zero-shot reconstruction tasks.
enum class TaskKind { PredictTime, PredictFrequency, Estimate };

const char* task_kind_name(TaskKind kind);  ///< "CP-T", "CP-F", "CE"
TaskKind parse_task_kind(const std::string& name);
/// Pretraining task whose gate and confidence head serve this kind.
int task_id_for(TaskKind kind);

struct TaskSetting {
  TaskKind kind = TaskKind::PredictTime;
  double ratio = 0.25;  ///< predicted fraction for CP-T / CP-F
  PilotPattern pilots;  ///< CE pilot grid
  std::string label;    ///< e.g. "low", "high", "0.375"
};

/// How one example is built from a (noisy, clean) pair.
struct ExampleSpec {
  int task_id = 1;
  double ratio = 0.0;
  PilotPattern pilots;
  /// false: target = tokens masked by make_mask_plan (pretraining);
  /// true: target = the last ceil(ratio * extent) samples along the task
  /// axis, and every slab touching it is masked (prediction use).
  bool target_by_samples = false;
};

struct PreparedExample {
  ModelInput input;
  Tensor truth_planes;  ///< normalised clean planes; empty when no clean sample given
  Region target;        ///< scored positions (omega)
  Region observed;      ///< positions the network is allowed to see
  double scale = 1.0;   ///< normalisation applied to raw values
  CsiSample network_sample;  ///< raw (un-normalised) input after zero fill / interpolation
};

/// Builds the network input: optional pilot interpolation (task 4), target
/// zero fill, power normalisation over the observed region, patching and
/// the mask plan. `clean` may be null at inference time.
PreparedExample prepare_example(const MdaeModel& model, const CsiSample& noisy,
                                const CsiSample* clean, const ExampleSpec& spec, SeededRng& rng);

ExampleSpec example_for(const TaskSetting& setting);

struct Reconstruction {
  CsiSample csi;
  double confidence_db = 0.0;
  Region target;
  std::vector<RoutingCounts> routing;
};

/// End-to-end zero-shot reconstruction of a noisy observation. For the
/// prediction tasks the observed region is passed through from the input
/// and only the target region comes from the network; for estimation the
/// whole tensor is the network's output.
Reconstruction reconstruct(const MdaeModel& model, const CsiSample& noisy,
                           const TaskSetting& setting, SeededRng& rng, bool with_confidence = true);

/// Network output planes for a prepared example, mapped back to raw scale.
CsiSample output_to_csi(const PreparedExample& example, const Mat& output_tokens);

}  // namespace csilab
