// SPDX-License-Identifier: Apache-2.0
#include "csilab/layers.hpp"

#include <cmath>
#include <limits>
#include <numbers>
#include <stdexcept>

#include "csilab/errors.hpp"
#include "csilab/routing.hpp"

namespace csilab {

GradBuffer::GradBuffer(const std::vector<const Param*>& params) {
  grads_.resize(params.size());
  for (const Param* p : params) {
    if (p->id >= grads_.size()) throw std::invalid_argument("parameter id out of range");
    grads_[p->id] = Mat::Zero(p->value.rows(), p->value.cols());
  }
}

void GradBuffer::zero() {
  for (Mat& m : grads_) m.setZero();
}

void GradBuffer::add(const GradBuffer& other) {
  if (other.grads_.size() != grads_.size()) throw std::invalid_argument("gradient buffer mismatch");
  for (std::size_t i = 0; i < grads_.size(); ++i) grads_[i] += other.grads_[i];
}

void GradBuffer::scale(double s) {
  for (Mat& m : grads_) m *= s;
}

double GradBuffer::squared_norm() const {
  double acc = 0.0;
  for (const Mat& m : grads_) acc += m.squaredNorm();
  return acc;
}

// ---------------------------------------------------------------- Linear

Mat Linear::forward(const Mat& x) const {
  Mat y = x * weight.value;
  y.rowwise() += bias.value.row(0);
  return y;
}

Mat Linear::backward(const Mat& x, const Mat& dy, GradBuffer& g) const {
  g[weight].noalias() += x.transpose() * dy;
  g[bias] += dy.colwise().sum();
  return dy * weight.value.transpose();
}

// ------------------------------------------------------------- LayerNorm

Mat LayerNorm::forward(const Mat& x, Cache& cache) const {
  const Eigen::Index n = x.rows(), d = x.cols();
  cache.xhat.resize(n, d);
  cache.rstd.resize(n);
  Mat y(n, d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().mean();
    const double rstd = 1.0 / std::sqrt(var + eps);
    cache.rstd(r) = rstd;
    cache.xhat.row(r) = (x.row(r).array() - mean) * rstd;
    y.row(r) = cache.xhat.row(r).cwiseProduct(gamma.value.row(0)) + beta.value.row(0);
  }
  return y;
}

Mat LayerNorm::backward(const Mat& dy, const Cache& cache, GradBuffer& g) const {
  const Eigen::Index n = dy.rows(), d = dy.cols();
  g[gamma] += dy.cwiseProduct(cache.xhat).colwise().sum();
  g[beta] += dy.colwise().sum();
  Mat dx(n, d);
  const double inv_d = 1.0 / static_cast<double>(d);
  for (Eigen::Index r = 0; r < n; ++r) {
    const Eigen::RowVectorXd dxhat = dy.row(r).cwiseProduct(gamma.value.row(0));
    const double sum = dxhat.sum();
    const double dot = dxhat.dot(cache.xhat.row(r));
    dx.row(r) = cache.rstd(r) * inv_d *
                (static_cast<double>(d) * dxhat.array() - sum - cache.xhat.row(r).array() * dot).matrix();
  }
  return dx;
}

// ----------------------------------------------------------- FeedForward

double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0)); }

double gelu_grad(double x) {
  const double cdf = 0.5 * (1.0 + std::erf(x * std::numbers::sqrt2 / 2.0));
  const double pdf = std::exp(-0.5 * x * x) / std::sqrt(2.0 * std::numbers::pi);
  return cdf + x * pdf;
}

Mat FeedForward::forward(const Mat& x, Cache& cache) const {
  cache.x = x;
  cache.pre = fc1.forward(x);
  cache.act = cache.pre.unaryExpr([](double v) { return gelu(v); });
  return fc2.forward(cache.act);
}

Mat FeedForward::backward(const Mat& dy, const Cache& cache, GradBuffer& g) const {
  Mat dact = fc2.backward(cache.act, dy, g);
  const Mat dpre = dact.cwiseProduct(cache.pre.unaryExpr([](double v) { return gelu_grad(v); }));
  return fc1.backward(cache.x, dpre, g);
}

// ------------------------------------------------------------- Attention

Mat Attention::forward(const Mat& x, std::size_t n_prefix, Cache& cache) const {
  const Eigen::Index n = x.rows();
  const Eigen::Index d = x.cols();
  const auto h_count = static_cast<Eigen::Index>(heads);
  if (d % h_count != 0) throw std::invalid_argument("hidden dim not divisible by heads");
  const Eigen::Index dh = d / h_count;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));
  const auto prefix = static_cast<Eigen::Index>(n_prefix);

  cache.x = x;
  cache.qkv = qkv.forward(x);
  cache.probs.assign(heads, Mat());
  cache.context.resize(n, d);
  for (Eigen::Index h = 0; h < h_count; ++h) {
    const auto q = cache.qkv.middleCols(h * dh, dh);
    const auto k = cache.qkv.middleCols(d + h * dh, dh);
    const auto v = cache.qkv.middleCols(2 * d + h * dh, dh);
    Mat s = (q * k.transpose()) * scale;
    for (Eigen::Index r = prefix; r < n; ++r) {
      for (Eigen::Index c = 0; c < prefix; ++c) s(r, c) = -std::numeric_limits<double>::infinity();
    }
    for (Eigen::Index r = 0; r < n; ++r) {
      const double peak = s.row(r).maxCoeff();
      s.row(r) = (s.row(r).array() - peak).exp();
      s.row(r) /= s.row(r).sum();
    }
    cache.context.middleCols(h * dh, dh).noalias() = s * v;
    cache.probs[static_cast<std::size_t>(h)] = std::move(s);
  }
  return out.forward(cache.context);
}

Mat Attention::backward(const Mat& dy, const Cache& cache, GradBuffer& g) const {
  const Eigen::Index n = cache.x.rows();
  const Eigen::Index d = cache.x.cols();
  const auto h_count = static_cast<Eigen::Index>(heads);
  const Eigen::Index dh = d / h_count;
  const double scale = 1.0 / std::sqrt(static_cast<double>(dh));

  const Mat dctx = out.backward(cache.context, dy, g);
  Mat dqkv = Mat::Zero(n, 3 * d);
  for (Eigen::Index h = 0; h < h_count; ++h) {
    const Mat& p = cache.probs[static_cast<std::size_t>(h)];
    const auto q = cache.qkv.middleCols(h * dh, dh);
    const auto k = cache.qkv.middleCols(d + h * dh, dh);
    const auto v = cache.qkv.middleCols(2 * d + h * dh, dh);
    const auto dc = dctx.middleCols(h * dh, dh);

    const Mat dp = dc * v.transpose();
    dqkv.middleCols(2 * d + h * dh, dh).noalias() = p.transpose() * dc;
    const Eigen::VectorXd row_dot = p.cwiseProduct(dp).rowwise().sum();
    const Mat ds = p.cwiseProduct(dp.colwise() - row_dot) * scale;
    dqkv.middleCols(h * dh, dh).noalias() = ds * k;
    dqkv.middleCols(d + h * dh, dh).noalias() = ds.transpose() * q;
  }
  return qkv.backward(cache.x, dqkv, g);
}

// ------------------------------------------------------------------ SMoE

void RoutingCounts::add(const RoutingCounts& other) {
  if (argmax_tokens.empty()) {
    *this = other;
    return;
  }
  if (other.argmax_tokens.size() != argmax_tokens.size()) {
    throw std::invalid_argument("routing counters for different expert counts");
  }
  for (std::size_t i = 0; i < argmax_tokens.size(); ++i) {
    argmax_tokens[i] += other.argmax_tokens[i];
    weight_sum[i] += other.weight_sum[i];
  }
  tokens += other.tokens;
}

std::vector<double> RoutingCounts::dispatch_fraction() const {
  std::vector<double> d(argmax_tokens.size(), 0.0);
  if (tokens == 0) return d;
  for (std::size_t i = 0; i < d.size(); ++i) d[i] = argmax_tokens[i] / static_cast<double>(tokens);
  return d;
}

std::vector<double> RoutingCounts::mean_probability() const {
  std::vector<double> p(weight_sum.size(), 0.0);
  if (tokens == 0) return p;
  for (std::size_t i = 0; i < p.size(); ++i) p[i] = weight_sum[i] / static_cast<double>(tokens);
  return p;
}

Mat SmoeLayer::forward(const Mat& x, std::size_t gate, std::size_t n_prefix, Cache& cache,
                       RoutingCounts& counts) const {
  if (gate >= gates.size()) throw std::invalid_argument("gate index out of range");
  const Eigen::Index n = x.rows();
  const std::size_t m = experts.size();
  cache.x = x;
  cache.gate = gate;
  cache.n_prefix = n_prefix;
  cache.logits = gates[gate].forward(x);
  cache.probs.resize(n, static_cast<Eigen::Index>(m));
  cache.selected.assign(static_cast<std::size_t>(n), {});
  cache.routes.assign(m, {});
  if (counts.argmax_tokens.size() != m) counts = RoutingCounts(m);

  std::vector<double> row(m);
  for (Eigen::Index t = 0; t < n; ++t) {
    for (std::size_t i = 0; i < m; ++i) row[i] = cache.logits(t, static_cast<Eigen::Index>(i));
    const auto p = softmax(row);
    for (std::size_t i = 0; i < m; ++i) cache.probs(t, static_cast<Eigen::Index>(i)) = p[i];
    auto& sel = cache.selected[static_cast<std::size_t>(t)];
    sel = topk_indices(row, active);
    for (std::size_t i : sel) {
      cache.routes[i].push_back({static_cast<std::size_t>(t), cache.routes[i].size(), p[i]});
    }
    if (static_cast<std::size_t>(t) >= n_prefix) {
      counts.argmax_tokens[sel.front()] += 1.0;
      for (std::size_t i : sel) counts.weight_sum[i] += p[i];
      ++counts.tokens;
    }
  }

  Mat y = Mat::Zero(n, x.cols());
  cache.expert_cache.assign(m, {});
  cache.expert_out.assign(m, Mat());
  for (std::size_t i = 0; i < m; ++i) {
    const auto& routes = cache.routes[i];
    if (routes.empty()) continue;
    Mat xi(static_cast<Eigen::Index>(routes.size()), x.cols());
    for (const Route& r : routes) {
      xi.row(static_cast<Eigen::Index>(r.row)) = x.row(static_cast<Eigen::Index>(r.token));
    }
    cache.expert_out[i] = experts[i].forward(xi, cache.expert_cache[i]);
    for (const Route& r : routes) {
      y.row(static_cast<Eigen::Index>(r.token)) +=
          r.weight * cache.expert_out[i].row(static_cast<Eigen::Index>(r.row));
    }
  }
  return y;
}

Mat SmoeLayer::backward(const Mat& dy, const Cache& cache, const std::vector<double>& weight_coef,
                        GradBuffer& g) const {
  const Eigen::Index n = dy.rows();
  const std::size_t m = experts.size();
  Mat dx = Mat::Zero(n, dy.cols());
  Mat dprob = Mat::Zero(n, static_cast<Eigen::Index>(m));
  for (std::size_t i = 0; i < m; ++i) {
    const auto& routes = cache.routes[i];
    if (routes.empty()) continue;
    const Mat& out = cache.expert_out[i];
    Mat dout(static_cast<Eigen::Index>(routes.size()), dy.cols());
    for (const Route& r : routes) {
      const auto t = static_cast<Eigen::Index>(r.token);
      const auto row = static_cast<Eigen::Index>(r.row);
      dout.row(row) = r.weight * dy.row(t);
      double dw = dy.row(t).dot(out.row(row));
      if (r.token >= cache.n_prefix && !weight_coef.empty()) dw += weight_coef[i];
      dprob(t, static_cast<Eigen::Index>(i)) = dw;
    }
    const Mat dxi = experts[i].backward(dout, cache.expert_cache[i], g);
    for (const Route& r : routes) {
      dx.row(static_cast<Eigen::Index>(r.token)) += dxi.row(static_cast<Eigen::Index>(r.row));
    }
  }
  // Softmax Jacobian; unselected experts carry dprob = 0.
  const Eigen::VectorXd row_dot = cache.probs.cwiseProduct(dprob).rowwise().sum();
  const Mat dlogits = cache.probs.cwiseProduct(dprob.colwise() - row_dot);
  dx += gates[cache.gate].backward(cache.x, dlogits, g);
  return dx;
}

// ------------------------------------------------------ TransformerBlock

Mat TransformerBlock::forward(const Mat& x, std::size_t gate, std::size_t n_prefix, Cache& cache,
                              RoutingCounts& counts) const {
  Mat x1 = x + attention.forward(norm1.forward(x, cache.n1), n_prefix, cache.attn);
  Mat h2 = norm2.forward(x1, cache.n2);
  return x1 + smoe.forward(h2, gate, n_prefix, cache.moe, counts);
}

Mat TransformerBlock::backward(const Mat& dy, const Cache& cache,
                               const std::vector<double>& weight_coef, GradBuffer& g) const {
  const Mat dh2 = smoe.backward(dy, cache.moe, weight_coef, g);
  const Mat dx1 = dy + norm2.backward(dh2, cache.n2, g);
  const Mat dh1 = attention.backward(dx1, cache.attn, g);
  return dx1 + norm1.backward(dh1, cache.n1, g);
}

// ---------------------------------------------------------- construction

namespace {
Mat random_matrix(std::size_t rows, std::size_t cols, double stddev, SeededRng& rng) {
  Mat m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = round_to_float(stddev * rng.normal());
  return m;
}
}  // namespace

Linear make_linear(const std::string& name, std::size_t in, std::size_t out, SeededRng& rng) {
  Linear l;
  l.weight.name = name + ".weight";
  l.weight.value = random_matrix(in, out, std::sqrt(2.0 / static_cast<double>(in + out)), rng);
  l.bias.name = name + ".bias";
  l.bias.value = Mat::Zero(1, static_cast<Eigen::Index>(out));
  return l;
}

LayerNorm make_layer_norm(const std::string& name, std::size_t dim) {
  LayerNorm ln;
  ln.gamma.name = name + ".gamma";
  ln.gamma.value = Mat::Ones(1, static_cast<Eigen::Index>(dim));
  ln.beta.name = name + ".beta";
  ln.beta.value = Mat::Zero(1, static_cast<Eigen::Index>(dim));
  return ln;
}

FeedForward make_feed_forward(const std::string& name, std::size_t dim, std::size_t hidden,
                              SeededRng& rng) {
  return {make_linear(name + ".fc1", dim, hidden, rng), make_linear(name + ".fc2", hidden, dim, rng)};
}

TransformerBlock make_block(const std::string& name, std::size_t dim, std::size_t heads,
                            std::size_t experts, std::size_t active, std::size_t expert_dim,
                            std::size_t gates, SeededRng& rng) {
  TransformerBlock b;
  b.norm1 = make_layer_norm(name + ".norm1", dim);
  b.attention.qkv = make_linear(name + ".attn.qkv", dim, 3 * dim, rng);
  b.attention.out = make_linear(name + ".attn.out", dim, dim, rng);
  b.attention.heads = heads;
  b.norm2 = make_layer_norm(name + ".norm2", dim);
  b.smoe.active = active;
  for (std::size_t i = 0; i < experts; ++i) {
    b.smoe.experts.push_back(
        make_feed_forward(name + ".smoe.expert." + std::to_string(i), dim, expert_dim, rng));
  }
  for (std::size_t j = 0; j < gates; ++j) {
    b.smoe.gates.push_back(make_linear(name + ".smoe.gate." + std::to_string(j), dim, experts, rng));
  }
  return b;
}

}  // namespace csilab
