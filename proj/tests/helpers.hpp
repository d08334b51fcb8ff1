// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <string>
#include <unistd.h>

#include "csilab/channel.hpp"
#include "csilab/gradcheck.hpp"
#include "csilab/model.hpp"
#include "csilab/reconstruct.hpp"
#include "csilab/training.hpp"

namespace testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    path_ = std::filesystem::temp_directory_path() /
            ("csilab_" + tag + "_" + std::to_string(::getpid()));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

inline csilab::ModelConfig tiny_config() {
  csilab::ModelConfig c;
  c.dim = 12;
  c.encoder_depth = 1;
  c.decoder_depth = 1;
  c.heads = 2;
  c.experts = 4;
  c.active_experts = 2;
  c.expert_dim = 8;
  c.decoder_dim = 12;
  c.confidence_hidden = 8;
  c.patch = {2, 2, 2};
  return c;
}

inline csilab::CsiSample tiny_sample(std::uint64_t seed, std::size_t T = 8, std::size_t K = 8,
                                     std::size_t N = 2) {
  csilab::SeededRng rng(seed);
  const auto paths = csilab::sample_scenario(csilab::preset_by_name("uma-nlos"), rng);
  return csilab::synth_channel({T, K, 1e-3, 120e3, 3.5e9}, {N, 1, 0.5}, paths);
}

inline csilab::PreparedExample tiny_example(const csilab::MdaeModel& model, std::uint64_t seed,
                                            int task_id = 2, double ratio = 0.25) {
  const csilab::CsiSample s = tiny_sample(seed);
  csilab::SeededRng rng(seed + 1000);
  csilab::ExampleSpec spec;
  spec.task_id = task_id;
  spec.ratio = task_id == 1 ? 0.5 : ratio;
  spec.pilots = {0.5, 1.0, 0.5};
  return csilab::prepare_example(model, s, &s, spec, rng);
}

/// One example per task id, cycling, on small synthetic samples.
inline std::vector<csilab::PreparedExample> mixed_batch(const csilab::MdaeModel& model, std::size_t count,
                                                        std::uint64_t seed) {
  std::vector<csilab::PreparedExample> batch;
  for (std::size_t i = 0; i < count; ++i) {
    batch.push_back(tiny_example(model, seed + 17 * i, static_cast<int>(1 + i % 4)));
  }
  return batch;
}

struct Certification {
  double worst = 0.0;
  std::string worst_parameter;
  std::size_t probes = 0;
};

/// Central differences of L_rec + load_weight * L_load at `count` random
/// (parameter, entry) pairs outside the confidence branch.
inline Certification certify_gradients(csilab::MdaeModel& model,
                                       const std::vector<csilab::PreparedExample>& batch,
                                       double load_weight, std::size_t count, std::uint64_t seed,
                                       double h = 1e-5) {
  csilab::GradBuffer grads = model.make_grad_buffer();
  csilab::batch_loss(model, batch, load_weight, &grads);

  std::vector<csilab::Param*> eligible;
  for (csilab::Param* p : model.parameters()) {
    if (p->name.rfind("confidence.", 0) != 0) eligible.push_back(p);
  }
  csilab::SeededRng rng(seed);
  std::vector<csilab::ProbePoint> probes;
  for (std::size_t i = 0; i < count; ++i) {
    csilab::Param* p = eligible[rng.uniform_index(eligible.size())];
    const auto entry = static_cast<Eigen::Index>(rng.uniform_index(static_cast<std::size_t>(p->value.size())));
    probes.push_back({p->name, p->value.data() + entry, grads[*p].data()[entry]});
  }
  const auto loss = [&] {
    const csilab::BatchResult r = csilab::batch_loss(model, batch, load_weight, nullptr);
    return r.rec + load_weight * r.load;
  };
  Certification c;
  for (const auto& r : csilab::check_probes(loss, probes, h)) {
    c.probes += r.pairs_sampled;
    if (r.max_relative_error >= c.worst) {
      c.worst = r.max_relative_error;
      c.worst_parameter = r.parameter;
    }
  }
  return c;
}

}  // namespace testing
