// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "csilab/layers.hpp"
#include "csilab/pipeline.hpp"

namespace csilab {

/// Number of pretraining tasks, each with its own gate and confidence token.
inline constexpr std::size_t kPretrainTasks = 4;
/// The confidence head emits NMSE in units of this many dB.
inline constexpr double kConfidenceScaleDb = 10.0;

struct ModelConfig {
  std::size_t dim = 64;
  std::size_t encoder_depth = 4;
  std::size_t decoder_depth = 2;
  std::size_t heads = 4;
  std::size_t experts = 8;
  std::size_t active_experts = 2;
  std::size_t expert_dim = 128;
  std::size_t decoder_dim = 64;
  std::size_t confidence_hidden = 64;
  PatchSpec patch;
  /// Gates appended after pretraining for downstream tasks.
  std::size_t extra_gates = 0;
  /// Ablation: every task routes through gate 0.
  bool unified_gating = false;

  /// Throws ConfigError. Depth 0 is accepted (pure embedding + positional
  /// encoding), which tests use to isolate pieces of the stack.
  void validate() const;
  std::size_t gate_count() const { return kPretrainTasks + extra_gates; }
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// Parameter-free sinusoidal space-time-frequency encoding. The dim is split
/// into three bands of sin/cos pairs (time, frequency, space; leftover pairs
/// go to the earlier bands); band a encodes coordinate a at wavelengths
/// 10000^(m / pairs_a). Throws ConfigError for odd dims or dim < 6.
Mat stf_positional_encoding(std::span<const TokenCoord> coords, std::size_t dim);

/// One sample ready for the network.
struct ModelInput {
  Mat tokens;  ///< L x token_dim; rows of masked tokens are never read
  GridLayout layout;
  MaskPlan plan;
  int task_id = 1;  ///< 1..4 selects the confidence token/head
  std::size_t gate = 0;
};

struct ForwardOptions {
  bool confidence = false;
  /// Keep every block output (for the prefix-isolation check).
  bool trace = false;
};

/// Everything the backward pass needs, plus outputs.
struct ForwardState {
  std::size_t n_prefix = 0;
  Mat embedded;  ///< visible tokens after patch embedding (before P_enc)
  std::vector<TransformerBlock::Cache> encoder_cache;
  Mat encoded;  ///< encoder block output
  LayerNorm::Cache encoder_norm_cache;
  Mat encoder_normed;
  Mat bridged;  ///< decoder-width encoder output
  Mat decoder_input;
  std::vector<TransformerBlock::Cache> decoder_cache;
  LayerNorm::Cache decoder_norm_cache;
  Mat decoder_normed;
  Mat output_tokens;  ///< L x token_dim
  FeedForward::Cache confidence_cache;
  double confidence_db = 0.0;

  std::vector<Mat> encoder_trace;
  std::vector<Mat> decoder_trace;  ///< rows exclude the prefix token
  std::vector<RoutingCounts> routing;  ///< encoder layers, then decoder layers
};

class MdaeModel {
 public:
  MdaeModel() = default;
  MdaeModel(const ModelConfig& config, std::uint64_t seed);

  MdaeModel(const MdaeModel& other);
  MdaeModel& operator=(const MdaeModel& other);
  MdaeModel(MdaeModel&& other) noexcept;
  MdaeModel& operator=(MdaeModel&& other) noexcept;

  const ModelConfig& config() const { return config_; }

  /// All parameters in id order.
  const std::vector<Param*>& parameters() { return params_; }
  std::vector<const Param*> parameters() const;
  Param* find(const std::string& name);
  const Param* find(const std::string& name) const;
  std::size_t parameter_count() const;

  /// Gate index used for pretraining task 1..4 (honours unified gating).
  std::size_t gate_for_task(int task_id) const;
  /// Appends one freshly initialised gate to every SMoE layer and returns
  /// its index.
  std::size_t add_task_gate(std::uint64_t seed);
  std::size_t smoe_layers() const { return encoder.size() + decoder.size(); }

  GradBuffer make_grad_buffer() const;

  Mat embed(const Mat& visible_tokens) const;
  /// Adds P_enc and runs the encoder blocks.
  Mat encoder_forward(const Mat& embedded, std::span<const TokenCoord> coords, std::size_t gate,
                      ForwardState& state, bool trace) const;
  ForwardState forward(const ModelInput& input, const ForwardOptions& options) const;
  /// Encoder half only: fills embedded/encoded/encoder_normed and the
  /// encoder routing counts.
  ForwardState encode(const ModelInput& input, bool trace = false) const;
  /// Accumulates parameter gradients. `d_output` is dL/d(output tokens),
  /// `d_confidence` dL/d(predicted dB); `load_coef` holds one vector per
  /// SMoE layer (or is empty).
  void backward(const ModelInput& input, const ForwardState& state, const Mat& d_output,
                double d_confidence, const std::vector<std::vector<double>>& load_coef,
                GradBuffer& grads, bool skip_encoder = false) const;
  /// Backward from dL/d(encoder_normed) through the encoder and embedding.
  void encoder_backward(const ModelInput& input, const ForwardState& state,
                        const Mat& d_encoder_normed, const std::vector<std::vector<double>>& load_coef,
                        GradBuffer& grads) const;

  Linear patch_embed;
  std::vector<TransformerBlock> encoder;
  LayerNorm encoder_norm;
  std::optional<Linear> bridge;
  Param mask_token;
  std::vector<TransformerBlock> decoder;
  LayerNorm decoder_norm;
  Linear output;
  std::vector<Param> confidence_tokens;
  std::vector<FeedForward> confidence_heads;

 private:
  void register_parameters();

  ModelConfig config_;
  std::vector<Param*> params_;
};

/// Reads the checksum-relevant parameter bytes; used to prove freezing.
std::uint64_t parameter_hash(const MdaeModel& model, const std::vector<std::string>& names);
std::uint64_t parameter_hash(const MdaeModel& model);

}  // namespace csilab
