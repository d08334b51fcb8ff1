// SPDX-License-Identifier: Apache-2.0
#include "csilab/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <sstream>
#include <stdexcept>

#include "csilab/errors.hpp"

namespace csilab {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

double to_double(const std::string& v) {
  std::size_t used = 0;
  double out = 0.0;
  try {
    out = std::stod(v, &used);
  } catch (const std::exception&) {
    throw std::invalid_argument("expected a number, got '" + v + "'");
  }
  if (used != v.size() || !std::isfinite(out)) {
    throw std::invalid_argument("expected a finite number, got '" + v + "'");
  }
  return out;
}

std::uint64_t to_u64(const std::string& v) {
  std::uint64_t out = 0;
  const auto [ptr, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || ptr != v.data() + v.size()) {
    throw std::invalid_argument("expected a non-negative integer, got '" + v + "'");
  }
  return out;
}

bool to_bool(const std::string& v) {
  if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
  if (v == "false" || v == "0" || v == "no" || v == "off") return false;
  throw std::invalid_argument("expected a boolean, got '" + v + "'");
}

std::vector<std::string> to_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = trim(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

std::string from_list(const std::vector<std::string>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + v[i];
  return out;
}

PilotPattern to_pattern(const std::string& v) {
  const auto parts = to_list(v);
  if (parts.size() != 3) throw std::invalid_argument("expected three fractions 'time,antenna,subcarrier'");
  return {to_double(parts[0]), to_double(parts[1]), to_double(parts[2])};
}

std::string from_pattern(const PilotPattern& p) {
  return fmt_double(p.time) + "," + fmt_double(p.antenna) + "," + fmt_double(p.subcarrier);
}

struct Key {
  std::string name;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename Field>
Key size_key(std::string name, Field field) {
  return {std::move(name),
          [field](const RunConfig& c) { return std::to_string(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = static_cast<std::size_t>(to_u64(v)); }};
}

template <typename Field>
Key u64_key(std::string name, Field field) {
  return {std::move(name),
          [field](const RunConfig& c) { return std::to_string(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = to_u64(v); }};
}

template <typename Field>
Key double_key(std::string name, Field field) {
  return {std::move(name),
          [field](const RunConfig& c) { return fmt_double(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = to_double(v); }};
}

template <typename Field>
Key bool_key(std::string name, Field field) {
  return {std::move(name),
          [field](const RunConfig& c) { return std::string(field(c) ? "true" : "false"); },
          [field](RunConfig& c, const std::string& v) { field(c) = to_bool(v); }};
}

template <typename Field>
Key string_key(std::string name, Field field) {
  return {std::move(name), [field](const RunConfig& c) { return field(c); },
          [field](RunConfig& c, const std::string& v) { field(c) = v; }};
}

template <typename Field>
Key list_key(std::string name, Field field) {
  return {std::move(name), [field](const RunConfig& c) { return from_list(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = to_list(v); }};
}

template <typename Field>
Key pattern_key(std::string name, Field field) {
  return {std::move(name), [field](const RunConfig& c) { return from_pattern(field(c)); },
          [field](RunConfig& c, const std::string& v) { field(c) = to_pattern(v); }};
}

#define FIELD(expr) [](auto& c) -> auto& { return c.expr; }

const std::vector<Key>& keys() {
  static const std::vector<Key> table = {
      size_key("model.dim", FIELD(model.dim)),
      size_key("model.encoder_depth", FIELD(model.encoder_depth)),
      size_key("model.decoder_depth", FIELD(model.decoder_depth)),
      size_key("model.heads", FIELD(model.heads)),
      size_key("model.experts", FIELD(model.experts)),
      size_key("model.experts_active", FIELD(model.active_experts)),
      size_key("model.expert_dim", FIELD(model.expert_dim)),
      size_key("model.decoder_dim", FIELD(model.decoder_dim)),
      size_key("model.confidence_hidden", FIELD(model.confidence_hidden)),
      size_key("model.patch_t", FIELD(model.patch.p_t)),
      size_key("model.patch_f", FIELD(model.patch.p_f)),
      size_key("model.patch_s", FIELD(model.patch.p_s)),
      size_key("model.extra_gates", FIELD(model.extra_gates)),
      {"model.gating",
       [](const RunConfig& c) { return std::string(c.model.unified_gating ? "unified" : "task"); },
       [](RunConfig& c, const std::string& v) {
         if (v == "unified") c.model.unified_gating = true;
         else if (v == "task") c.model.unified_gating = false;
         else throw std::invalid_argument("gating must be 'task' or 'unified'");
       }},

      string_key("data.dir", FIELD(data.dir)),
      list_key("data.presets", FIELD(data.presets)),
      u64_key("data.seed", FIELD(data.seed)),
      size_key("data.train", FIELD(data.counts.train)),
      size_key("data.val", FIELD(data.counts.val)),
      size_key("data.test", FIELD(data.counts.test)),
      size_key("data.coarse_t", FIELD(data.coarse.t_samples)),
      size_key("data.coarse_k", FIELD(data.coarse.subcarriers)),
      double_key("data.coarse_dt", FIELD(data.coarse.dt_s)),
      double_key("data.coarse_df", FIELD(data.coarse.df_hz)),
      size_key("data.fine_t", FIELD(data.fine.t_samples)),
      size_key("data.fine_k", FIELD(data.fine.subcarriers)),
      double_key("data.fine_dt", FIELD(data.fine.dt_s)),
      double_key("data.fine_df", FIELD(data.fine.df_hz)),
      size_key("data.antennas_h", FIELD(data.geometry.n_horizontal)),
      size_key("data.antennas_v", FIELD(data.geometry.n_vertical)),
      double_key("data.spacing", FIELD(data.geometry.element_spacing_wavelengths)),

      size_key("training.epochs", FIELD(training.epochs)),
      size_key("training.batch_size", FIELD(training.batch_size)),
      size_key("training.steps_per_epoch", FIELD(training.steps_per_epoch)),
      double_key("training.lr", FIELD(training.lr)),
      double_key("training.min_lr", FIELD(training.min_lr)),
      size_key("training.warmup_epochs", FIELD(training.warmup_epochs)),
      double_key("training.weight_decay", FIELD(training.weight_decay)),
      double_key("training.load_weight", FIELD(training.load_weight)),
      double_key("training.clip_norm", FIELD(training.clip_norm)),
      double_key("training.mask_ratio_min", FIELD(training.mask_ratio_min)),
      double_key("training.mask_ratio_max", FIELD(training.mask_ratio_max)),
      double_key("training.random_mask_ratio", FIELD(training.random_mask_ratio)),
      pattern_key("training.pilot_min", FIELD(training.pilot_min)),
      pattern_key("training.pilot_max", FIELD(training.pilot_max)),
      double_key("training.snr_min", FIELD(training.snr_min_db)),
      double_key("training.snr_max", FIELD(training.snr_max_db)),
      bool_key("training.fixed_ratio", FIELD(training.fixed_ratio)),
      bool_key("training.random_mask", FIELD(training.random_mask)),
      u64_key("training.seed", FIELD(training.seed)),

      size_key("confidence.epochs", FIELD(confidence.epochs)),
      size_key("confidence.batch_size", FIELD(confidence.batch_size)),
      size_key("confidence.steps_per_epoch", FIELD(confidence.steps_per_epoch)),
      double_key("confidence.lr", FIELD(confidence.lr)),
      double_key("confidence.min_lr", FIELD(confidence.min_lr)),
      size_key("confidence.warmup_epochs", FIELD(confidence.warmup_epochs)),
      double_key("confidence.weight_decay", FIELD(confidence.weight_decay)),
      double_key("confidence.clip_norm", FIELD(confidence.clip_norm)),
      u64_key("confidence.seed", FIELD(confidence.seed)),

      double_key("evaluation.snr_db", FIELD(evaluation.snr_db)),
      string_key("evaluation.ratio", FIELD(evaluation.ratio)),
      list_key("evaluation.tasks", FIELD(evaluation.tasks)),
      string_key("evaluation.split", FIELD(evaluation.split)),
      string_key("evaluation.aggregation", FIELD(evaluation.aggregation)),
      u64_key("evaluation.seed", FIELD(evaluation.seed)),

      string_key("finetune.positive_preset", FIELD(finetune.positive_preset)),
      string_key("finetune.negative_preset", FIELD(finetune.negative_preset)),
      size_key("finetune.samples", FIELD(finetune.samples)),
      size_key("finetune.epochs", FIELD(finetune.epochs)),
      size_key("finetune.batch_size", FIELD(finetune.batch_size)),
      double_key("finetune.lr", FIELD(finetune.lr)),
      double_key("finetune.snr_db", FIELD(finetune.snr_db)),
      bool_key("finetune.shuffle_labels", FIELD(finetune.shuffle_labels)),
      u64_key("finetune.seed", FIELD(finetune.seed)),
  };
  return table;
}

#undef FIELD

const Key* find_key(const std::string& name) {
  for (const Key& k : keys()) {
    if (k.name == name) return &k;
  }
  return nullptr;
}

void check_range(double lo, double hi, const char* what) {
  if (!(lo <= hi)) throw ConfigError(std::string(what) + " range is not ordered");
}

std::size_t steps_for(std::size_t epochs, std::size_t per_epoch, std::size_t batch,
                      std::size_t samples) {
  if (per_epoch == 0) per_epoch = std::max<std::size_t>(1, (samples + batch - 1) / std::max<std::size_t>(batch, 1));
  return epochs * per_epoch;
}

}  // namespace

std::size_t Phase1Config::total_steps(std::size_t train_samples) const {
  return steps_for(epochs, steps_per_epoch, batch_size, train_samples);
}

std::size_t Phase2Config::total_steps(std::size_t train_samples) const {
  return steps_for(epochs, steps_per_epoch, batch_size, train_samples);
}

void RunConfig::validate() const {
  model.validate();
  data.coarse.validate();
  data.fine.validate();
  data.geometry.validate();
  if (data.presets.empty()) throw ConfigError("data.presets is empty");
  for (const auto& p : data.presets) preset_by_name(p);
  const auto& t = training;
  if (t.batch_size == 0 || confidence.batch_size == 0) throw ConfigError("batch size must be positive");
  if (t.epochs == 0) throw ConfigError("training.epochs must be positive");
  if (t.warmup_epochs >= t.epochs) throw ConfigError("training.warmup_epochs must be below training.epochs");
  if (confidence.epochs > 0 && confidence.warmup_epochs >= confidence.epochs) {
    throw ConfigError("confidence.warmup_epochs must be below confidence.epochs");
  }
  if (t.load_weight < 0.0) throw ConfigError("training.load_weight must be >= 0");
  if (!(t.lr > 0.0) || t.min_lr < 0.0 || t.min_lr > t.lr) throw ConfigError("training lr/min_lr invalid");
  check_range(t.mask_ratio_min, t.mask_ratio_max, "training.mask_ratio");
  if (!(t.mask_ratio_min > 0.0) || !(t.mask_ratio_max < 1.0)) throw ConfigError("mask ratios must be in (0, 1)");
  if (!(t.random_mask_ratio >= 0.0) || !(t.random_mask_ratio < 1.0)) {
    throw ConfigError("training.random_mask_ratio must be in [0, 1)");
  }
  t.pilot_min.validate();
  t.pilot_max.validate();
  check_range(t.pilot_min.time, t.pilot_max.time, "training.pilot time");
  check_range(t.pilot_min.antenna, t.pilot_max.antenna, "training.pilot antenna");
  check_range(t.pilot_min.subcarrier, t.pilot_max.subcarrier, "training.pilot subcarrier");
  check_range(t.snr_min_db, t.snr_max_db, "training.snr");
  if (evaluation.aggregation != "mean_db" && evaluation.aggregation != "db_of_mean") {
    throw ConfigError("evaluation.aggregation must be mean_db or db_of_mean");
  }
  if (evaluation.split != "train" && evaluation.split != "val" && evaluation.split != "test") {
    throw ConfigError("evaluation.split must be train, val or test");
  }
}

void set_value(RunConfig& config, const std::string& key, const std::string& value) {
  const Key* k = find_key(key);
  if (!k) throw ConfigError("unknown key '" + key + "'");
  try {
    k->set(config, value);
  } catch (const std::invalid_argument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

RunConfig parse_config(const std::string& text) {
  RunConfig config;
  std::istringstream in(text);
  std::string raw;
  std::string section;
  std::size_t line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ParseError(line_no, "unterminated section header");
      section = trim(line.substr(1, line.size() - 2));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key.find('.') == std::string::npos && !section.empty()) key = section + "." + key;
    const Key* k = find_key(key);
    if (!k) throw ParseError(line_no, "unknown key '" + key + "'");
    try {
      k->set(config, value);
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, key + ": " + e.what());
    }
  }
  try {
    config.validate();
  } catch (const ConfigError& e) {
    throw ConfigError(std::string("invalid config: ") + e.what());
  }
  return config;
}

RunConfig load_config(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

void apply_override(RunConfig& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override must be key=value: '" + assignment + "'");
  set_value(config, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

std::string to_text(const RunConfig& config) {
  std::string out;
  for (const Key& k : keys()) out += k.name + " = " + k.get(config) + "\n";
  return out;
}

std::vector<std::string> config_keys() {
  std::vector<std::string> out;
  for (const Key& k : keys()) out.push_back(k.name);
  return out;
}

std::string model_config_text(const ModelConfig& model) {
  RunConfig c;
  c.model = model;
  std::string out;
  for (const Key& k : keys()) {
    if (k.name.rfind("model.", 0) == 0) out += k.name + " = " + k.get(c) + "\n";
  }
  return out;
}

ModelConfig parse_model_config(const std::string& text) {
  RunConfig c;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ParseError(line_no, "expected 'key = value'");
    const std::string key = trim(line.substr(0, eq));
    if (key.rfind("model.", 0) != 0) throw ParseError(line_no, "unexpected key '" + key + "'");
    set_value(c, key, trim(line.substr(eq + 1)));
  }
  c.model.validate();
  return c.model;
}

}  // namespace csilab
