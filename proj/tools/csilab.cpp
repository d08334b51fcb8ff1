// SPDX-License-Identifier: Apache-2.0
// csilab: generate corpora, pretrain, evaluate and fine-tune from the shell.
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "csilab/config.hpp"
#include "csilab/errors.hpp"
#include "csilab/eval.hpp"
#include "csilab/io.hpp"
#include "csilab/parallel.hpp"
#include "csilab/report.hpp"
#include "csilab/training.hpp"

namespace fs = std::filesystem;
using namespace csilab;

namespace {

enum Exit { kOk = 0, kUsage = 1, kData = 2, kDiverged = 3 };

struct Common {
  std::string config;
  std::vector<std::string> overrides;
  std::string out;
  std::int64_t seed = -1;
  std::size_t threads = 0;
};

struct Flags {
  std::string checkpoint;
  std::string gating;
  bool no_load_balance = false;
  bool fixed_ratio = false;
  bool no_random_mask = false;
  double snr = 0.0;
  bool snr_set = false;
  std::string ratio;
  bool routing_stats = false;
  std::string path;
};

void log(const std::string& msg) { std::cerr << msg << '\n'; }

RunConfig resolve(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config);
  for (const std::string& o : c.overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Common& c) {
  if (c.out.empty()) throw ConfigError("--out is required");
  fs::create_directories(c.out);
  return c.out;
}

void write_resolved(const fs::path& dir, const RunConfig& cfg) {
  write_text_file(dir / "config.resolved", to_text(cfg));
}

std::vector<DatasetHandle> load_corpus(const RunConfig& cfg) {
  if (cfg.data.dir.empty()) throw ConfigError("data.dir is not set");
  auto corpus = read_corpus(cfg.data.dir);
  if (corpus.empty()) throw FormatError("no datasets found in '" + cfg.data.dir + "'");
  return corpus;
}

Split parse_split(const std::string& s) {
  if (s == "train") return Split::Train;
  if (s == "val") return Split::Val;
  return Split::Test;
}

TrainHooks progress_hooks(std::size_t threads, const std::string& tag) {
  TrainHooks h;
  h.threads = threads;
  h.on_step = [tag](const LossRecord& r) {
    if (r.step % 100 == 0) {
      char buf[160];
      std::snprintf(buf, sizeof buf, "%s step %zu task %d rec %.5f load %.4f lr %.3e", tag.c_str(), r.step,
                    r.task, r.rec, r.load, r.lr);
      log(buf);
    }
  };
  return h;
}

int cmd_gen(const Common& c) {
  RunConfig cfg = resolve(c);
  if (c.seed >= 0) cfg.data.seed = static_cast<std::uint64_t>(c.seed);
  const fs::path dir = out_dir(c);
  std::vector<CorpusEntry> entries;
  for (const std::string& name : cfg.data.presets) {
    const ScenarioPreset preset = preset_by_name(name);
    entries.push_back({preset, cfg.data.coarse, cfg.data.geometry});
    entries.push_back({preset, cfg.data.fine, cfg.data.geometry});
  }
  const auto corpus = build_corpus(entries, cfg.data.counts, cfg.data.seed);
  for (const fs::path& p : write_corpus(corpus, dir)) std::cout << p.string() << '\n';
  cfg.data.dir = dir.string();
  write_resolved(dir, cfg);
  return kOk;
}

void apply_ablations(RunConfig& cfg, const Flags& f) {
  if (!f.gating.empty()) cfg.model.unified_gating = f.gating == "unified";
  if (f.no_load_balance) cfg.training.load_weight = 0.0;
  if (f.fixed_ratio) cfg.training.fixed_ratio = true;
  if (f.no_random_mask) cfg.training.random_mask = false;
}

int cmd_pretrain(const Common& c, const Flags& f) {
  RunConfig cfg = resolve(c);
  apply_ablations(cfg, f);
  if (c.seed >= 0) cfg.training.seed = static_cast<std::uint64_t>(c.seed);
  const fs::path dir = out_dir(c);
  write_resolved(dir, cfg);
  const auto corpus = load_corpus(cfg);
  const Catalog catalog = make_catalog(corpus, cfg.data);
  const std::size_t threads = resolve_threads(c.threads);

  MdaeModel model(cfg.model, cfg.training.seed);
  log("parameters: " + std::to_string(model.parameter_count()));
  TrainHooks hooks = progress_hooks(threads, "phase1");
  hooks.on_epoch = [&](std::size_t epoch, const MdaeModel& m) {
    save_checkpoint(m, {"phase1-epoch" + std::to_string(epoch), epoch, cfg.training.seed}, dir / "phase1_last.ckpt");
  };
  const auto trace = run_phase1(model, corpus, catalog, cfg.training, hooks);
  write_text_file(dir / "loss_phase1.csv", loss_trace_csv(trace));
  save_checkpoint(model, {"phase1", trace.size(), cfg.training.seed}, dir / "phase1.ckpt");
  std::cout << (dir / "phase1.ckpt").string() << '\n';
  return kOk;
}

MdaeModel load_model(const Flags& f, CheckpointMeta* meta = nullptr) {
  if (f.checkpoint.empty()) throw ConfigError("--checkpoint is required");
  return load_checkpoint(f.checkpoint, meta);
}

int cmd_confidence(const Common& c, const Flags& f) {
  RunConfig cfg = resolve(c);
  if (c.seed >= 0) cfg.confidence.seed = static_cast<std::uint64_t>(c.seed);
  const fs::path dir = out_dir(c);
  MdaeModel model = load_model(f);
  cfg.model = model.config();
  write_resolved(dir, cfg);
  const auto corpus = load_corpus(cfg);
  const Catalog catalog = make_catalog(corpus, cfg.data);
  const std::size_t threads = resolve_threads(c.threads);
  const auto trace = run_phase2(model, corpus, catalog, cfg.training, cfg.confidence, progress_hooks(threads, "phase2"));
  write_text_file(dir / "loss_phase2.csv", loss_trace_csv(trace));
  save_checkpoint(model, {"phase2", trace.size(), cfg.confidence.seed}, dir / "phase2.ckpt");
  std::cout << (dir / "phase2.ckpt").string() << '\n';
  return kOk;
}

ZeroShotOptions eval_options(RunConfig& cfg, const Common& c, const Flags& f) {
  if (c.seed >= 0) cfg.evaluation.seed = static_cast<std::uint64_t>(c.seed);
  if (f.snr_set) cfg.evaluation.snr_db = f.snr;
  if (!f.ratio.empty()) cfg.evaluation.ratio = f.ratio;
  ZeroShotOptions opt;
  opt.snr_db = cfg.evaluation.snr_db;
  opt.split = parse_split(cfg.evaluation.split);
  opt.aggregation = cfg.evaluation.aggregation;
  opt.seed = cfg.evaluation.seed;
  opt.threads = resolve_threads(c.threads);
  return opt;
}

int cmd_eval(const Common& c, const Flags& f) {
  RunConfig cfg = resolve(c);
  ZeroShotOptions opt = eval_options(cfg, c, f);
  const fs::path dir = out_dir(c);
  const MdaeModel model = load_model(f);
  cfg.model = model.config();
  write_resolved(dir, cfg);
  const auto corpus = load_corpus(cfg);
  const Catalog catalog = make_catalog(corpus, cfg.data);
  std::vector<RoutingRecord> routing;
  if (f.routing_stats) opt.routing = &routing;
  const auto rows =
      run_zero_shot(model, corpus, catalog, settings_for(cfg.evaluation.tasks, cfg.evaluation.ratio), opt);
  write_text_file(dir / "report.csv", report_csv(rows));
  write_text_file(dir / "confidence_cdf.csv", cdf_csv(confidence_error_cdf(rows)));
  if (f.routing_stats) write_text_file(dir / "routing.csv", routing_csv(routing));
  std::cout << report_csv(rows);
  return kOk;
}

int cmd_baseline(const Common& c, const Flags& f) {
  RunConfig cfg = resolve(c);
  const ZeroShotOptions opt = eval_options(cfg, c, f);
  const fs::path dir = out_dir(c);
  write_resolved(dir, cfg);
  const auto corpus = load_corpus(cfg);
  const Catalog catalog = make_catalog(corpus, cfg.data);
  const auto rows = run_baselines(corpus, catalog, settings_for(cfg.evaluation.tasks, cfg.evaluation.ratio), opt);
  write_text_file(dir / "baseline.csv", report_csv(rows));
  std::cout << report_csv(rows);
  return kOk;
}

int cmd_finetune(const Common& c, const Flags& f) {
  RunConfig cfg = resolve(c);
  if (c.seed >= 0) cfg.finetune.seed = static_cast<std::uint64_t>(c.seed);
  if (f.snr_set) cfg.finetune.snr_db = f.snr;
  const fs::path dir = out_dir(c);
  MdaeModel model = load_model(f);
  cfg.model = model.config();
  write_resolved(dir, cfg);

  const FinetuneConfig& ft = cfg.finetune;
  const auto corpus = build_corpus({{preset_by_name(ft.positive_preset), cfg.data.coarse, cfg.data.geometry},
                                    {preset_by_name(ft.negative_preset), cfg.data.coarse, cfg.data.geometry}},
                                   {ft.samples, 0, std::max<std::size_t>(1, ft.samples / 2)}, ft.seed);
  std::vector<CsiSample> train, test;
  std::vector<bool> train_y, test_y;
  for (std::size_t d = 0; d < corpus.size(); ++d) {
    const bool positive = d == 0;
    for (const CsiSample& s : corpus[d].split_samples(Split::Train)) {
      train.push_back(s);
      train_y.push_back(positive);
    }
    for (const CsiSample& s : corpus[d].split_samples(Split::Test)) {
      test.push_back(s);
      test_y.push_back(positive);
    }
  }
  const FinetuneResult r =
      finetune_scenario_classifier(model, train, train_y, test, test_y, ft, resolve_threads(c.threads));
  nlohmann::ordered_json j;
  j["f1"] = r.f1;
  j["untrained_f1"] = r.untrained_f1;
  j["accuracy"] = r.accuracy;
  j["train_samples"] = r.train_samples;
  j["test_samples"] = r.test_samples;
  j["gate"] = r.gate;
  j["shuffle_labels"] = ft.shuffle_labels;
  j["seed"] = ft.seed;
  write_text_file(dir / "finetune.json", j.dump(2) + "\n");
  std::cout << j.dump(2) << '\n';
  return kOk;
}

int cmd_inspect(const Flags& f) {
  const std::string head = read_text_file(f.path).substr(0, 8);
  if (head == kDatasetMagic) {
    const DatasetFile d = read_dataset(f.path);
    std::cout << "dataset " << d.name << "\npreset " << d.preset << "\nsplit " << split_name(d.split)
              << "\nseed " << d.seed << "\ngrid " << d.grid.t_samples << "x" << d.grid.subcarriers << " dt "
              << d.grid.dt_s << " df " << d.grid.df_hz << " f1 " << d.grid.f1_hz << "\narray "
              << d.geometry.n_horizontal << "x" << d.geometry.n_vertical << " spacing "
              << d.geometry.element_spacing_wavelengths << "\nsamples " << d.samples.size() << '\n';
    return kOk;
  }
  if (head == kCheckpointMagic) {
    const CheckpointContents ck = read_checkpoint(f.path);
    std::cout << "phase " << ck.meta.phase << "\nstep " << ck.meta.step << "\nseed " << ck.meta.seed << '\n'
              << model_config_text(ck.config) << "parameters " << ck.manifest.size() << '\n';
    for (const ManifestEntry& e : ck.manifest) {
      std::cout << e.name << ' ' << e.rows << 'x' << e.cols << " @" << e.offset << '\n';
    }
    return kOk;
  }
  throw FormatError("'" + f.path + "' is neither a dataset nor a checkpoint");
}

void add_common(CLI::App* cmd, Common& c, bool writes) {
  cmd->add_option("--config", c.config, "Config file (key = value lines)");
  cmd->add_option("--set", c.overrides, "Override a config key: key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "Seed for this command's randomness");
  cmd->add_option("--threads", c.threads, "Worker threads (default: CSILAB_THREADS or all cores)");
  if (writes) cmd->add_option("--out", c.out, "Output directory")->required();
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"csilab: CSI foundation-model toolkit"};
  app.require_subcommand(1);
  Common common;
  Flags flags;

  auto* gen = app.add_subcommand("gen", "Generate synthetic CSI datasets");
  add_common(gen, common, true);

  auto* pretrain = app.add_subcommand("pretrain", "Phase-1 masked/denoising pretraining");
  add_common(pretrain, common, true);
  pretrain->add_option("--gating", flags.gating, "Gating mode")->check(CLI::IsMember({"task", "unified"}));
  pretrain->add_flag("--no-load-balance", flags.no_load_balance, "Drop the load-balancing loss");
  pretrain->add_flag("--fixed-ratio", flags.fixed_ratio, "Fixed mask ratio and pilot pattern");
  pretrain->add_flag("--no-random-mask", flags.no_random_mask, "Drop the random-masking task");

  auto* confidence = app.add_subcommand("confidence", "Phase-2 confidence pretraining");
  add_common(confidence, common, true);
  confidence->add_option("--checkpoint", flags.checkpoint, "Phase-1 checkpoint")->required();

  auto* eval = app.add_subcommand("eval", "Zero-shot CP-T / CP-F / CE evaluation");
  add_common(eval, common, true);
  eval->add_option("--checkpoint", flags.checkpoint, "Model checkpoint")->required();
  eval->add_option("--snr", flags.snr, "Evaluation SNR in dB");
  eval->add_option("--ratio", flags.ratio, "low, high or a prediction fraction");
  eval->add_flag("--routing-stats", flags.routing_stats, "Also write routing.csv");

  auto* baseline = app.add_subcommand("baseline", "Classical baselines on the same settings");
  add_common(baseline, common, true);
  baseline->add_option("--snr", flags.snr, "Evaluation SNR in dB");
  baseline->add_option("--ratio", flags.ratio, "low, high or a prediction fraction");

  auto* finetune = app.add_subcommand("finetune", "LoS/NLoS classification via a new gate");
  add_common(finetune, common, true);
  finetune->add_option("--checkpoint", flags.checkpoint, "Model checkpoint")->required();
  finetune->add_option("--snr", flags.snr, "Input SNR in dB");

  auto* inspect = app.add_subcommand("inspect", "Print a dataset or checkpoint header");
  inspect->add_option("path", flags.path, "File to inspect")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    std::cerr << e.what() << "\n\n" << app.help();
    return kUsage;
  }
  for (auto* cmd : {eval, baseline, finetune}) {
    if (cmd->parsed() && cmd->count("--snr") > 0) flags.snr_set = true;
  }

  try {
    if (gen->parsed()) return cmd_gen(common);
    if (pretrain->parsed()) return cmd_pretrain(common, flags);
    if (confidence->parsed()) return cmd_confidence(common, flags);
    if (eval->parsed()) return cmd_eval(common, flags);
    if (baseline->parsed()) return cmd_baseline(common, flags);
    if (finetune->parsed()) return cmd_finetune(common, flags);
    if (inspect->parsed()) return cmd_inspect(flags);
  } catch (const TrainingError& e) {
    log(std::string("training diverged: ") + e.what());
    return kDiverged;
  } catch (const ConfigError& e) {
    log(std::string("config error: ") + e.what());
    return kUsage;
  } catch (const std::invalid_argument& e) {
    log(std::string("invalid argument: ") + e.what());
    return kUsage;
  } catch (const std::exception& e) {
    log(std::string("error: ") + e.what());
    return kData;
  }
  return kUsage;
}
