// SPDX-License-Identifier: Apache-2.0
#include "csilab/reconstruct.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace csilab {

const char* task_kind_name(TaskKind kind) {
  switch (kind) {
    case TaskKind::PredictTime: return "CP-T";
    case TaskKind::PredictFrequency: return "CP-F";
    case TaskKind::Estimate: return "CE";
  }
  return "?";
}

TaskKind parse_task_kind(const std::string& name) {
  if (name == "CP-T" || name == "cp-t") return TaskKind::PredictTime;
  if (name == "CP-F" || name == "cp-f") return TaskKind::PredictFrequency;
  if (name == "CE" || name == "ce") return TaskKind::Estimate;
  throw std::invalid_argument("unknown task kind '" + name + "'");
}

int task_id_for(TaskKind kind) {
  switch (kind) {
    case TaskKind::PredictTime: return 2;
    case TaskKind::PredictFrequency: return 3;
    case TaskKind::Estimate: return 4;
  }
  return 4;
}

ExampleSpec example_for(const TaskSetting& setting) {
  ExampleSpec spec;
  spec.task_id = task_id_for(setting.kind);
  spec.ratio = setting.ratio;
  spec.pilots = setting.pilots;
  spec.target_by_samples = setting.kind != TaskKind::Estimate;
  return spec;
}

namespace {

std::size_t predicted_count(double ratio, std::size_t extent) {
  if (!(ratio > 0.0) || !(ratio < 1.0)) throw std::invalid_argument("prediction ratio must be in (0, 1)");
  return static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(extent) - 1e-9));
}

Region complement(const Region& r) {
  Region out(r.size());
  for (std::size_t i = 0; i < r.size(); ++i) out[i] = r[i] ? 0 : 1;
  return out;
}

}  // namespace

PreparedExample prepare_example(const MdaeModel& model, const CsiSample& noisy,
                                const CsiSample* clean, const ExampleSpec& spec, SeededRng& rng) {
  if (spec.task_id < 1 || spec.task_id > 4) throw std::invalid_argument("task id must be in 1..4");
  const PatchSpec& patch = model.config().patch;
  const GridLayout layout(noisy.T(), noisy.K(), noisy.N(), patch);

  PreparedExample ex;
  MaskPlan plan;
  CsiSample input = noisy;
  if (spec.task_id == 4) {
    input = pilot_downsample_interpolate(noisy, spec.pilots);
    plan = make_mask_plan(MaskMode::None, 0.0, layout, rng);
    ex.target.assign(noisy.values.size(), 1);
    ex.observed = ex.target;
  } else {
    const MaskMode mode = spec.task_id == 1   ? MaskMode::Random
                          : spec.task_id == 2 ? MaskMode::Time
                                              : MaskMode::Frequency;
    if (spec.target_by_samples && mode != MaskMode::Random) {
      const bool time = mode == MaskMode::Time;
      const std::size_t extent = time ? noisy.T() : noisy.K();
      const std::size_t edge = time ? patch.p_t : patch.p_f;
      const std::size_t slabs = time ? layout.n_t : layout.n_f;
      const std::size_t count = predicted_count(spec.ratio, extent);
      const std::size_t first_masked_slab = (extent - count) / edge;
      if (first_masked_slab == 0) {
        throw std::invalid_argument("prediction leaves no fully observed slab");
      }
      const double slab_ratio =
          1.0 - static_cast<double>(first_masked_slab) / static_cast<double>(slabs);
      plan = make_mask_plan(mode, slab_ratio, layout, rng);
      ex.target = time ? time_suffix_region(noisy.grid, noisy.N(), count)
                       : frequency_suffix_region(noisy.grid, noisy.N(), count);
      ex.observed = complement(ex.target);
    } else {
      double ratio = spec.ratio;
      if (mode != MaskMode::Random) {
        // Round the slab count up, as prediction does, so a ratio masks the
        // same slabs here as at evaluation. At least one slab stays visible.
        const std::size_t slabs = mode == MaskMode::Time ? layout.n_t : layout.n_f;
        if (slabs < 2) throw std::invalid_argument("axis masking needs at least two slabs");
        const auto want = static_cast<std::size_t>(std::ceil(ratio * static_cast<double>(slabs) - 1e-9));
        const std::size_t k = std::clamp<std::size_t>(want, 1, slabs - 1);
        ratio = static_cast<double>(k) / static_cast<double>(slabs);
      }
      plan = make_mask_plan(mode, ratio, layout, rng);
      ex.target = layout.token_region(plan.masked);
      ex.observed = layout.token_region(plan.visible);
    }
    // Zero fill what the predictor must not see.
    for (std::size_t i = 0; i < input.values.size(); ++i) {
      if (!ex.observed[i]) input.values[i] = {0.0, 0.0};
    }
  }
  if (region_count(ex.target) == 0) throw std::invalid_argument("example has an empty target region");

  ex.scale = power_scale(input, ex.observed);
  ex.network_sample = input;
  CsiSample scaled = input;
  for (Complex& v : scaled.values) v *= ex.scale;
  TokenGrid grid = patchify(complex_to_planes(scaled), patch);

  ex.input.tokens = std::move(grid.tokens);
  ex.input.layout = grid.layout;
  ex.input.plan = std::move(plan);
  ex.input.task_id = spec.task_id;
  ex.input.gate = model.gate_for_task(spec.task_id);

  if (clean) {
    CsiSample truth = *clean;
    for (Complex& v : truth.values) v *= ex.scale;
    ex.truth_planes = complex_to_planes(truth);
  }
  return ex;
}

CsiSample output_to_csi(const PreparedExample& ex, const Mat& output_tokens) {
  const Tensor planes = unpatchify(output_tokens, ex.input.layout);
  CsiSample out = planes_to_complex(planes, ex.network_sample.grid, ex.network_sample.geometry);
  for (Complex& v : out.values) v /= ex.scale;
  return out;
}

Reconstruction reconstruct(const MdaeModel& model, const CsiSample& noisy,
                           const TaskSetting& setting, SeededRng& rng, bool with_confidence) {
  const ExampleSpec spec = example_for(setting);
  const PreparedExample ex = prepare_example(model, noisy, nullptr, spec, rng);
  const ForwardState st = model.forward(ex.input, {.confidence = with_confidence, .trace = false});

  Reconstruction r;
  const CsiSample net = output_to_csi(ex, st.output_tokens);
  r.csi = noisy;
  for (std::size_t i = 0; i < r.csi.values.size(); ++i) {
    if (ex.target[i]) r.csi.values[i] = net.values[i];
  }
  r.confidence_db = st.confidence_db;
  r.target = ex.target;
  r.routing = st.routing;
  return r;
}

}  // namespace csilab
