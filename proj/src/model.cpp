// SPDX-License-Identifier: Apache-2.0
#include "csilab/model.hpp"

#include <cmath>
#include <cstring>
#include <stdexcept>

#include "csilab/errors.hpp"

namespace csilab {

void ModelConfig::validate() const {
  if (dim == 0 || decoder_dim == 0) throw ConfigError("model dims must be positive");
  if (heads == 0 || dim % heads != 0 || decoder_dim % heads != 0) {
    throw ConfigError("model.heads must divide model.dim and model.decoder_dim");
  }
  if (experts == 0) throw ConfigError("model.experts_total must be >= 1");
  if (active_experts == 0 || active_experts > experts) {
    throw ConfigError("model.experts_active must be in [1, experts_total]");
  }
  if (expert_dim == 0 || confidence_hidden == 0) throw ConfigError("hidden dims must be positive");
  if (dim % 2 != 0 || decoder_dim % 2 != 0 || dim < 6 || decoder_dim < 6) {
    throw ConfigError("model dims must be even and >= 6 for the positional encoding");
  }
  patch.validate();
}

Mat stf_positional_encoding(std::span<const TokenCoord> coords, std::size_t dim) {
  if (dim % 2 != 0 || dim < 6) {
    throw ConfigError("positional encoding dim must be even and >= 6, got " + std::to_string(dim));
  }
  const std::size_t pairs = dim / 2;
  std::size_t band_pairs[3];
  for (std::size_t a = 0; a < 3; ++a) band_pairs[a] = pairs / 3 + (a < pairs % 3 ? 1 : 0);

  Mat pe(static_cast<Eigen::Index>(coords.size()), static_cast<Eigen::Index>(dim));
  for (std::size_t r = 0; r < coords.size(); ++r) {
    const double c[3] = {static_cast<double>(coords[r].t), static_cast<double>(coords[r].f),
                         static_cast<double>(coords[r].s)};
    std::size_t col = 0;
    for (std::size_t a = 0; a < 3; ++a) {
      for (std::size_t m = 0; m < band_pairs[a]; ++m) {
        const double freq =
            std::pow(10000.0, -static_cast<double>(m) / static_cast<double>(band_pairs[a]));
        pe(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col++)) = std::sin(c[a] * freq);
        pe(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(col++)) = std::cos(c[a] * freq);
      }
    }
  }
  return pe;
}

namespace {
Param token_param(const std::string& name, std::size_t dim, SeededRng& rng) {
  Param p;
  p.name = name;
  p.value.resize(1, static_cast<Eigen::Index>(dim));
  for (Eigen::Index i = 0; i < p.value.size(); ++i) p.value(0, i) = round_to_float(0.02 * rng.normal());
  return p;
}

std::vector<Mat::Index> as_rows(const std::vector<std::size_t>& v) {
  return {v.begin(), v.end()};
}
}  // namespace

MdaeModel::MdaeModel(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  SeededRng rng(seed);
  const std::size_t D = config_.dim, Dd = config_.decoder_dim;
  const std::size_t gates = config_.gate_count();
  patch_embed = make_linear("patch_embed", config_.patch.token_dim(), D, rng);
  for (std::size_t i = 0; i < config_.encoder_depth; ++i) {
    encoder.push_back(make_block("encoder." + std::to_string(i), D, config_.heads, config_.experts,
                                 config_.active_experts, config_.expert_dim, gates, rng));
  }
  encoder_norm = make_layer_norm("encoder_norm", D);
  if (Dd != D) bridge = make_linear("bridge", D, Dd, rng);
  mask_token = token_param("mask_token", Dd, rng);
  for (std::size_t i = 0; i < config_.decoder_depth; ++i) {
    decoder.push_back(make_block("decoder." + std::to_string(i), Dd, config_.heads,
                                 config_.experts, config_.active_experts, config_.expert_dim,
                                 gates, rng));
  }
  decoder_norm = make_layer_norm("decoder_norm", Dd);
  output = make_linear("output", Dd, config_.patch.token_dim(), rng);
  for (std::size_t j = 0; j < kPretrainTasks; ++j) {
    confidence_tokens.push_back(token_param("confidence.token." + std::to_string(j), Dd, rng));
    confidence_heads.push_back(make_feed_forward("confidence.head." + std::to_string(j), Dd,
                                                 config_.confidence_hidden, rng));
  }
  // The head's last map is D_h -> 1.
  for (std::size_t j = 0; j < kPretrainTasks; ++j) {
    confidence_heads[j].fc2 = make_linear("confidence.head." + std::to_string(j) + ".fc2",
                                          config_.confidence_hidden, 1, rng);
  }
  register_parameters();
}

MdaeModel::MdaeModel(const MdaeModel& other)
    : patch_embed(other.patch_embed),
      encoder(other.encoder),
      encoder_norm(other.encoder_norm),
      bridge(other.bridge),
      mask_token(other.mask_token),
      decoder(other.decoder),
      decoder_norm(other.decoder_norm),
      output(other.output),
      confidence_tokens(other.confidence_tokens),
      confidence_heads(other.confidence_heads),
      config_(other.config_) {
  register_parameters();
}

MdaeModel& MdaeModel::operator=(const MdaeModel& other) {
  if (this != &other) {
    MdaeModel copy(other);
    *this = std::move(copy);
  }
  return *this;
}

MdaeModel::MdaeModel(MdaeModel&& other) noexcept
    : patch_embed(std::move(other.patch_embed)),
      encoder(std::move(other.encoder)),
      encoder_norm(std::move(other.encoder_norm)),
      bridge(std::move(other.bridge)),
      mask_token(std::move(other.mask_token)),
      decoder(std::move(other.decoder)),
      decoder_norm(std::move(other.decoder_norm)),
      output(std::move(other.output)),
      confidence_tokens(std::move(other.confidence_tokens)),
      confidence_heads(std::move(other.confidence_heads)),
      config_(std::move(other.config_)) {
  register_parameters();
  other.params_.clear();
}

MdaeModel& MdaeModel::operator=(MdaeModel&& other) noexcept {
  if (this != &other) {
    patch_embed = std::move(other.patch_embed);
    encoder = std::move(other.encoder);
    encoder_norm = std::move(other.encoder_norm);
    bridge = std::move(other.bridge);
    mask_token = std::move(other.mask_token);
    decoder = std::move(other.decoder);
    decoder_norm = std::move(other.decoder_norm);
    output = std::move(other.output);
    confidence_tokens = std::move(other.confidence_tokens);
    confidence_heads = std::move(other.confidence_heads);
    config_ = std::move(other.config_);
    register_parameters();
    other.params_.clear();
  }
  return *this;
}

void MdaeModel::register_parameters() {
  params_.clear();
  auto add = [&](Param& p) {
    p.id = params_.size();
    params_.push_back(&p);
  };
  auto add_linear = [&](Linear& l) {
    add(l.weight);
    add(l.bias);
  };
  auto add_norm = [&](LayerNorm& n) {
    add(n.gamma);
    add(n.beta);
  };
  auto add_block = [&](TransformerBlock& b) {
    add_norm(b.norm1);
    add_linear(b.attention.qkv);
    add_linear(b.attention.out);
    add_norm(b.norm2);
    for (auto& e : b.smoe.experts) {
      add_linear(e.fc1);
      add_linear(e.fc2);
    }
    for (auto& g : b.smoe.gates) add_linear(g);
  };
  add_linear(patch_embed);
  for (auto& b : encoder) add_block(b);
  add_norm(encoder_norm);
  if (bridge) add_linear(*bridge);
  add(mask_token);
  for (auto& b : decoder) add_block(b);
  add_norm(decoder_norm);
  add_linear(output);
  for (auto& t : confidence_tokens) add(t);
  for (auto& h : confidence_heads) {
    add_linear(h.fc1);
    add_linear(h.fc2);
  }
}

std::vector<const Param*> MdaeModel::parameters() const { return {params_.begin(), params_.end()}; }

Param* MdaeModel::find(const std::string& name) {
  for (Param* p : params_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

const Param* MdaeModel::find(const std::string& name) const {
  for (const Param* p : params_) {
    if (p->name == name) return p;
  }
  return nullptr;
}

std::size_t MdaeModel::parameter_count() const {
  std::size_t n = 0;
  for (const Param* p : params_) n += static_cast<std::size_t>(p->value.size());
  return n;
}

std::size_t MdaeModel::gate_for_task(int task_id) const {
  if (task_id < 1 || task_id > static_cast<int>(kPretrainTasks)) {
    throw std::invalid_argument("task id must be in 1..4, got " + std::to_string(task_id));
  }
  return config_.unified_gating ? 0 : static_cast<std::size_t>(task_id - 1);
}

std::size_t MdaeModel::add_task_gate(std::uint64_t seed) {
  SeededRng rng(seed);
  const std::size_t index = config_.gate_count();
  for (auto* stack : {&encoder, &decoder}) {
    for (std::size_t i = 0; i < stack->size(); ++i) {
      auto& b = (*stack)[i];
      const std::string prefix = (stack == &encoder ? "encoder." : "decoder.") + std::to_string(i);
      const auto dim = static_cast<std::size_t>(b.norm2.gamma.value.cols());
      b.smoe.gates.push_back(make_linear(prefix + ".smoe.gate." + std::to_string(index), dim,
                                         config_.experts, rng));
    }
  }
  ++config_.extra_gates;
  register_parameters();
  return index;
}

GradBuffer MdaeModel::make_grad_buffer() const { return GradBuffer(parameters()); }

Mat MdaeModel::embed(const Mat& visible_tokens) const { return patch_embed.forward(visible_tokens); }

Mat MdaeModel::encoder_forward(const Mat& embedded, std::span<const TokenCoord> coords,
                               std::size_t gate, ForwardState& state, bool trace) const {
  if (static_cast<std::size_t>(embedded.rows()) != coords.size()) {
    throw std::invalid_argument("encoder: token count does not match coordinate count");
  }
  Mat x = embedded + stf_positional_encoding(coords, config_.dim);
  state.encoder_cache.assign(encoder.size(), {});
  for (std::size_t i = 0; i < encoder.size(); ++i) {
    x = encoder[i].forward(x, gate, 0, state.encoder_cache[i], state.routing[i]);
    if (trace) state.encoder_trace.push_back(x);
  }
  return x;
}

namespace {

void check_input(const ModelInput& in, const ModelConfig& config) {
  const std::size_t L = in.layout.tokens();
  if (static_cast<std::size_t>(in.tokens.rows()) != L ||
      static_cast<std::size_t>(in.tokens.cols()) != config.patch.token_dim() ||
      !(in.layout.spec == config.patch)) {
    throw std::invalid_argument("model input does not match the patch layout");
  }
  if (in.plan.visible.size() + in.plan.masked.size() != L) {
    throw std::invalid_argument("mask plan does not cover the token grid");
  }
  if (in.plan.visible.empty()) throw std::invalid_argument("mask plan has no visible tokens");
  if (in.gate >= config.gate_count()) throw std::invalid_argument("gate index out of range");
}

}  // namespace

ForwardState MdaeModel::encode(const ModelInput& in, bool trace) const {
  check_input(in, config_);
  ForwardState st;
  st.routing.assign(smoe_layers(), RoutingCounts(config_.experts));
  const auto all_coords = in.layout.coords();
  std::vector<TokenCoord> vis_coords;
  vis_coords.reserve(in.plan.visible.size());
  for (std::size_t id : in.plan.visible) vis_coords.push_back(all_coords[id]);
  st.embedded = embed(in.tokens(as_rows(in.plan.visible), Eigen::all));
  st.encoded = encoder_forward(st.embedded, vis_coords, in.gate, st, trace);
  st.encoder_normed = encoder_norm.forward(st.encoded, st.encoder_norm_cache);
  return st;
}

ForwardState MdaeModel::forward(const ModelInput& in, const ForwardOptions& opt) const {
  if (opt.confidence && (in.task_id < 1 || in.task_id > static_cast<int>(kPretrainTasks))) {
    throw std::invalid_argument("confidence needs a task id in 1..4");
  }
  ForwardState st = encode(in, opt.trace);
  const GridLayout& layout = in.layout;
  const std::size_t L = layout.tokens();
  const auto all_coords = layout.coords();
  st.bridged = bridge ? bridge->forward(st.encoder_normed) : st.encoder_normed;

  // Decoder over the full grid, optional confidence prefix in row 0.
  const std::size_t Dd = config_.decoder_dim;
  st.n_prefix = opt.confidence ? 1 : 0;
  Mat seq(static_cast<Eigen::Index>(L), static_cast<Eigen::Index>(Dd));
  for (std::size_t r = 0; r < in.plan.visible.size(); ++r) {
    seq.row(static_cast<Eigen::Index>(in.plan.visible[r])) = st.bridged.row(static_cast<Eigen::Index>(r));
  }
  for (std::size_t id : in.plan.masked) seq.row(static_cast<Eigen::Index>(id)) = mask_token.value.row(0);
  seq += stf_positional_encoding(all_coords, Dd);

  st.decoder_input.resize(static_cast<Eigen::Index>(L + st.n_prefix), static_cast<Eigen::Index>(Dd));
  if (st.n_prefix) {
    st.decoder_input.row(0) = confidence_tokens[static_cast<std::size_t>(in.task_id - 1)].value.row(0);
  }
  st.decoder_input.bottomRows(static_cast<Eigen::Index>(L)) = seq;

  Mat x = st.decoder_input;
  st.decoder_cache.assign(decoder.size(), {});
  for (std::size_t i = 0; i < decoder.size(); ++i) {
    x = decoder[i].forward(x, in.gate, st.n_prefix, st.decoder_cache[i],
                           st.routing[encoder.size() + i]);
    if (opt.trace) st.decoder_trace.push_back(x.bottomRows(static_cast<Eigen::Index>(L)));
  }
  st.decoder_normed = decoder_norm.forward(x, st.decoder_norm_cache);
  st.output_tokens = output.forward(st.decoder_normed.bottomRows(static_cast<Eigen::Index>(L)));

  if (opt.confidence) {
    const FeedForward& head = confidence_heads[static_cast<std::size_t>(in.task_id - 1)];
    const Mat y = head.forward(st.decoder_normed.topRows(1), st.confidence_cache);
    st.confidence_db = kConfidenceScaleDb * y(0, 0);
  }
  return st;
}

void MdaeModel::backward(const ModelInput& in, const ForwardState& st, const Mat& d_output,
                         double d_confidence, const std::vector<std::vector<double>>& load_coef,
                         GradBuffer& g, bool skip_encoder) const {
  const std::size_t L = in.layout.tokens();
  const auto Lr = static_cast<Eigen::Index>(L);
  const std::vector<double> no_coef;
  auto coef = [&](std::size_t layer) -> const std::vector<double>& {
    return load_coef.empty() ? no_coef : load_coef.at(layer);
  };

  Mat d_normed = Mat::Zero(st.decoder_normed.rows(), st.decoder_normed.cols());
  d_normed.bottomRows(Lr) =
      output.backward(st.decoder_normed.bottomRows(Lr), d_output, g);
  if (st.n_prefix && d_confidence != 0.0) {
    const FeedForward& head = confidence_heads[static_cast<std::size_t>(in.task_id - 1)];
    Mat dy(1, 1);
    dy(0, 0) = kConfidenceScaleDb * d_confidence;
    d_normed.topRows(1) = head.backward(dy, st.confidence_cache, g);
  }
  Mat dx = decoder_norm.backward(d_normed, st.decoder_norm_cache, g);
  for (std::size_t i = decoder.size(); i-- > 0;) {
    dx = decoder[i].backward(dx, st.decoder_cache[i], coef(encoder.size() + i), g);
  }
  if (st.n_prefix) {
    g[confidence_tokens[static_cast<std::size_t>(in.task_id - 1)]] += dx.topRows(1);
  }
  const Mat d_seq = dx.bottomRows(Lr);
  for (std::size_t id : in.plan.masked) g[mask_token] += d_seq.row(static_cast<Eigen::Index>(id));
  Mat d_bridged(static_cast<Eigen::Index>(in.plan.visible.size()), d_seq.cols());
  for (std::size_t r = 0; r < in.plan.visible.size(); ++r) {
    d_bridged.row(static_cast<Eigen::Index>(r)) = d_seq.row(static_cast<Eigen::Index>(in.plan.visible[r]));
  }
  if (skip_encoder) return;
  const Mat d_enc_normed = bridge ? bridge->backward(st.encoder_normed, d_bridged, g) : d_bridged;
  encoder_backward(in, st, d_enc_normed, load_coef, g);
}

void MdaeModel::encoder_backward(const ModelInput& in, const ForwardState& st,
                                 const Mat& d_enc_normed,
                                 const std::vector<std::vector<double>>& load_coef,
                                 GradBuffer& g) const {
  const std::vector<double> no_coef;
  auto coef = [&](std::size_t layer) -> const std::vector<double>& {
    return load_coef.empty() ? no_coef : load_coef.at(layer);
  };
  Mat de = encoder_norm.backward(d_enc_normed, st.encoder_norm_cache, g);
  for (std::size_t i = encoder.size(); i-- > 0;) {
    de = encoder[i].backward(de, st.encoder_cache[i], coef(i), g);
  }
  patch_embed.backward(in.tokens(as_rows(in.plan.visible), Eigen::all), de, g);
}

std::uint64_t parameter_hash(const MdaeModel& model, const std::vector<std::string>& names) {
  std::uint64_t h = 1469598103934665603ULL;
  auto mix = [&](const void* data, std::size_t n) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (const std::string& name : names) {
    const Param* p = model.find(name);
    if (!p) throw std::invalid_argument("no parameter named " + name);
    mix(name.data(), name.size());
    mix(p->value.data(), static_cast<std::size_t>(p->value.size()) * sizeof(double));
  }
  return h;
}

std::uint64_t parameter_hash(const MdaeModel& model) {
  std::vector<std::string> names;
  for (const Param* p : model.parameters()) names.push_back(p->name);
  return parameter_hash(model, names);
}

}  // namespace csilab
