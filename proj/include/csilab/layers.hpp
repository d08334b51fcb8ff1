// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "csilab/rng.hpp"
#include "csilab/tensor.hpp"

namespace csilab {

/// A trainable tensor. `id` indexes the matching slot of a GradBuffer.
struct Param {
  std::string name;
  Mat value;
  std::size_t id = 0;
};

/// Gradient storage for one set of parameters, indexed by Param::id.
class GradBuffer {
 public:
  GradBuffer() = default;
  explicit GradBuffer(const std::vector<const Param*>& params);

  Mat& operator[](const Param& p) { return grads_[p.id]; }
  const Mat& operator[](const Param& p) const { return grads_[p.id]; }
  Mat& at(std::size_t id) { return grads_.at(id); }
  const Mat& at(std::size_t id) const { return grads_.at(id); }
  std::size_t size() const { return grads_.size(); }

  void zero();
  /// this += other, slot by slot.
  void add(const GradBuffer& other);
  void scale(double s);
  double squared_norm() const;

 private:
  std::vector<Mat> grads_;
};

/// y = x W + b, W stored in x out.
struct Linear {
  Param weight;
  Param bias;

  Mat forward(const Mat& x) const;
  /// Accumulates dW, db and returns dx.
  Mat backward(const Mat& x, const Mat& dy, GradBuffer& g) const;
  std::size_t in_dim() const { return static_cast<std::size_t>(weight.value.rows()); }
  std::size_t out_dim() const { return static_cast<std::size_t>(weight.value.cols()); }
};

struct LayerNorm {
  Param gamma;
  Param beta;
  double eps = 1e-5;

  struct Cache {
    Mat xhat;
    Eigen::VectorXd rstd;
  };
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Mat& dy, const Cache& cache, GradBuffer& g) const;
};

double gelu(double x);
double gelu_grad(double x);

/// Two affine maps with a GELU in between.
struct FeedForward {
  Linear fc1;
  Linear fc2;

  struct Cache {
    Mat x;
    Mat pre;
    Mat act;
  };
  Mat forward(const Mat& x, Cache& cache) const;
  Mat backward(const Mat& dy, const Cache& cache, GradBuffer& g) const;
};

/// Multi-head self-attention. The first `n_prefix` rows are prefix tokens:
/// they attend to every row, while the remaining rows attend only among
/// themselves, so prefix tokens never influence the others.
struct Attention {
  Linear qkv;
  Linear out;
  std::size_t heads = 1;

  struct Cache {
    Mat x;
    Mat qkv;
    std::vector<Mat> probs;
    Mat context;
  };
  Mat forward(const Mat& x, std::size_t n_prefix, Cache& cache) const;
  Mat backward(const Mat& dy, const Cache& cache, GradBuffer& g) const;
};

/// Per-layer routing counters accumulated over a batch.
struct RoutingCounts {
  std::vector<double> argmax_tokens;  ///< tokens whose top-1 expert is i
  std::vector<double> weight_sum;     ///< sum of (top-K truncated) gate weights
  std::size_t tokens = 0;

  explicit RoutingCounts(std::size_t experts = 0)
      : argmax_tokens(experts, 0.0), weight_sum(experts, 0.0) {}
  void add(const RoutingCounts& other);
  /// D_i: fraction of tokens whose top-1 expert is i (sums to 1).
  std::vector<double> dispatch_fraction() const;
  /// P_i: mean gate weight of expert i.
  std::vector<double> mean_probability() const;
};

/// Sparse mixture of experts with one gating map per task.
struct SmoeLayer {
  std::vector<FeedForward> experts;
  std::vector<Linear> gates;
  std::size_t active = 1;

  struct Route {
    std::size_t token;
    std::size_t row;  ///< row inside the expert's gathered batch
    double weight;
  };
  struct Cache {
    Mat x;
    std::size_t gate = 0;
    std::size_t n_prefix = 0;
    Mat logits;
    Mat probs;
    std::vector<std::vector<std::size_t>> selected;  ///< per token, descending
    std::vector<std::vector<Route>> routes;          ///< per expert
    std::vector<FeedForward::Cache> expert_cache;
    std::vector<Mat> expert_out;
  };

  std::size_t expert_count() const { return experts.size(); }

  /// Rows before `n_prefix` are routed like any token but excluded from the
  /// routing counters.
  Mat forward(const Mat& x, std::size_t gate, std::size_t n_prefix, Cache& cache,
              RoutingCounts& counts) const;
  /// `weight_coef[i]` is an extra dL/dG_i applied to every non-prefix token
  /// that routes to expert i (the load-balancing term).
  Mat backward(const Mat& dy, const Cache& cache, const std::vector<double>& weight_coef,
               GradBuffer& g) const;
};

/// Pre-norm transformer block with the SMoE layer in place of the FFN.
struct TransformerBlock {
  LayerNorm norm1;
  Attention attention;
  LayerNorm norm2;
  SmoeLayer smoe;

  struct Cache {
    LayerNorm::Cache n1;
    Attention::Cache attn;
    LayerNorm::Cache n2;
    SmoeLayer::Cache moe;
  };
  Mat forward(const Mat& x, std::size_t gate, std::size_t n_prefix, Cache& cache,
              RoutingCounts& counts) const;
  Mat backward(const Mat& dy, const Cache& cache, const std::vector<double>& weight_coef,
               GradBuffer& g) const;
};

/// Helpers used by model construction.
Linear make_linear(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng);
LayerNorm make_layer_norm(const std::string& name, std::size_t dim);
FeedForward make_feed_forward(const std::string& name, std::size_t dim, std::size_t hidden,
                              SeededRng& rng);
TransformerBlock make_block(const std::string& name, std::size_t dim, std::size_t heads,
                            std::size_t experts, std::size_t active, std::size_t expert_dim,
                            std::size_t gates, SeededRng& rng);

}  // namespace csilab
