#pragma once
// Subcommand implementations behind the command-line tool.
//
// Output directory layout:
//   .lock                       held while a command runs
//   config.<command>.json       effective configuration of the last run of <command>
//   dataset/                    see dataset.hpp
//   upstream.ckpt, upstream_log.csv
//   downstream.ckpt, downstream_log.csv
//   sweep_report.csv, scatter.csv, run_manifest.json

#include <cstdio>
#include <fcntl.h>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <unistd.h>

#include "json.hpp"
#include "uncprop/config.hpp"
#include "uncprop/core/errors.hpp"
#include "uncprop/dataset.hpp"
#include "uncprop/io.hpp"
#include "uncprop/pipeline.hpp"
#include "uncprop/training.hpp"

namespace uncprop {

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitConfig = 2, kExitMissing = 3, kExitNumerical = 4 };

/// Exclusive per-directory lock; released on destruction.
class OutputLock {
 public:
  explicit OutputLock(const fs::path& dir) : path_(dir / ".lock") {
    fs::create_directories(dir);
    const int fd = ::open(path_.c_str(), O_CREAT | O_EXCL | O_WRONLY, 0644);
    if (fd < 0) {
      throw ConfigError("output directory " + dir.string() + " is locked by another command (remove " +
                        path_.string() + " if it is stale)");
    }
    const std::string pid = std::to_string(::getpid()) + "\n";
    [[maybe_unused]] const auto n = ::write(fd, pid.data(), pid.size());
    ::close(fd);
  }
  ~OutputLock() {
    std::error_code ec;
    fs::remove(path_, ec);
  }
  OutputLock(const OutputLock&) = delete;
  OutputLock& operator=(const OutputLock&) = delete;

 private:
  fs::path path_;
};

struct CommandContext {
  RunConfig config;
  unsigned threads = 1;
  std::ostream* log = &std::cerr;  // progress messages

  fs::path out() const { return config.output_dir; }
  fs::path dataset_dir() const { return out() / "dataset"; }
  fs::path upstream_ckpt() const { return out() / "upstream.ckpt"; }
  fs::path downstream_ckpt() const { return out() / "downstream.ckpt"; }
};

namespace detail {

inline void archive_config(const CommandContext& ctx, const std::string& command) {
  write_file(ctx.out() / ("config." + command + ".json"), config_to_json(ctx.config).dump(2) + "\n");
}

inline std::string epoch_log_csv(const std::vector<EpochLog>& log) {
  std::string s = "epoch,train_nll,val_nll,wall_ms\n";
  for (const auto& e : log) {
    s += std::to_string(e.epoch) + "," + fmt_full(e.train_nll) + "," + fmt_full(e.val_nll) + "," + fmt_sig4(e.wall_ms) + "\n";
  }
  return s;
}

inline EpochCallback progress(std::ostream* log, const char* stage) {
  return [log, stage](const EpochLog& e) {
    if (log) {
      *log << stage << " epoch " << e.epoch << "  train_nll " << fmt_sig4(e.train_nll) << "  val_nll "
           << fmt_sig4(e.val_nll) << "  (" << fmt_sig4(e.wall_ms) << " ms)\n";
    }
  };
}

/// Loads the dataset and checks it was generated from the configured parameters.
inline Dataset load_matching_dataset(const CommandContext& ctx) {
  if (!fs::exists(ctx.dataset_dir() / "manifest.json")) {
    throw MissingArtifact("no dataset in " + ctx.dataset_dir().string() + " (run synth first)");
  }
  Dataset ds = load_dataset(ctx.dataset_dir());
  if (dataset_config_json(ds.config) != dataset_config_json(ctx.config.dataset)) {
    throw ConfigError("dataset in " + ctx.dataset_dir().string() + " was generated with " +
                      dataset_config_json(ds.config).dump() + " but the config specifies " +
                      dataset_config_json(ctx.config.dataset).dump());
  }
  return ds;
}

inline Checkpoint load_required_checkpoint(const fs::path& path, const char* hint) {
  if (!fs::exists(path)) throw MissingArtifact("checkpoint not found: " + path.string() + " (" + hint + ")");
  return load_checkpoint(path);
}

inline void check_upstream_meta(const Checkpoint& up, const RunConfig& cfg) {
  if (up.meta.value("stage", "") != "upstream") throw ConfigError("upstream.ckpt is not an upstream checkpoint");
  if (up.meta.at("dataset") != dataset_config_json(cfg.dataset)) {
    throw ConfigError("upstream checkpoint was trained on dataset " + up.meta.at("dataset").dump() +
                      ", config specifies " + dataset_config_json(cfg.dataset).dump());
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------

inline int cmd_synth(const CommandContext& ctx) {
  OutputLock lock(ctx.out());
  detail::archive_config(ctx, "synth");
  const Dataset ds = generate_dataset(ctx.config.dataset, ctx.threads);
  save_dataset(ctx.dataset_dir(), ds);
  if (ctx.log) {
    *ctx.log << "synth: wrote " << ds.examples.size() << " examples to " << ctx.dataset_dir().string()
             << " (manifest checksum " << hex64(file_checksum(ctx.dataset_dir() / "manifest.json")) << ")\n";
  }
  return kExitOk;
}

inline int cmd_train_upstream(const CommandContext& ctx) {
  OutputLock lock(ctx.out());
  const RunConfig& cfg = ctx.config;
  const Dataset ds = detail::load_matching_dataset(ctx);
  detail::archive_config(ctx, "train-upstream");
  TrainConfig tc = cfg.train_upstream;
  tc.threads = ctx.threads;
  const auto train = upstream_examples(ds, Split::upstream_train, cfg.masks, ctx.threads);
  const auto val = upstream_examples(ds, Split::upstream_val, cfg.masks, ctx.threads);
  const MlpSpec spec = make_upstream_spec(cfg.dataset.size, cfg.upstream.hidden, cfg.upstream.activation);
  const auto res = train_upstream(train, val, spec, tc, detail::progress(ctx.log, "upstream"));
  Checkpoint ck{spec, res.model.store().params,
                {{"stage", "upstream"},
                 {"dataset", dataset_config_json(cfg.dataset)},
                 {"masks", masks_json(cfg.masks)},
                 {"train", detail::train_json(tc, false)}}};
  save_checkpoint(ctx.upstream_ckpt(), ck);
  write_file(ctx.out() / "upstream_log.csv", detail::epoch_log_csv(res.log));
  if (ctx.log) *ctx.log << "train-upstream: checkpoint checksum " << hex64(file_checksum(ctx.upstream_ckpt())) << "\n";
  return kExitOk;
}

inline int cmd_train_downstream(const CommandContext& ctx) {
  OutputLock lock(ctx.out());
  const RunConfig& cfg = ctx.config;
  const Checkpoint up = detail::load_required_checkpoint(ctx.upstream_ckpt(), "run train-upstream first");
  detail::check_upstream_meta(up, cfg);
  const Dataset ds = detail::load_matching_dataset(ctx);
  detail::archive_config(ctx, "train-downstream");
  const Mlp upstream = up.model();
  TrainConfig tc = cfg.train_downstream;
  tc.threads = ctx.threads;
  const auto train = downstream_examples(ds, Split::downstream_train, cfg.masks, upstream, ctx.threads);
  const auto val = downstream_examples(ds, Split::downstream_val, cfg.masks, upstream, ctx.threads);
  double shift = 0.0, scale = 1.0;
  if (cfg.task == Task::regression) std::tie(shift, scale) = target_stats(train);
  const MlpSpec spec = make_downstream_spec(cfg.task, cfg.dataset.size, cfg.downstream.hidden,
                                            cfg.downstream.activation, shift, scale);
  const auto res = train_downstream(train, val, spec, tc, detail::progress(ctx.log, "downstream"));
  Checkpoint ck{spec, res.model.store().params,
                {{"stage", "downstream"},
                 {"task", to_string(cfg.task)},
                 {"dataset", dataset_config_json(cfg.dataset)},
                 {"upstream_checksum", hex64(file_checksum(ctx.upstream_ckpt()))},
                 {"masks", masks_json(cfg.masks)},
                 {"train", detail::train_json(tc, true)}}};
  save_checkpoint(ctx.downstream_ckpt(), ck);
  write_file(ctx.out() / "downstream_log.csv", detail::epoch_log_csv(res.log));
  if (ctx.log) *ctx.log << "train-downstream: checkpoint checksum " << hex64(file_checksum(ctx.downstream_ckpt())) << "\n";
  return kExitOk;
}

inline int cmd_evaluate(const CommandContext& ctx) {
  OutputLock lock(ctx.out());
  const RunConfig& cfg = ctx.config;
  const Checkpoint up = detail::load_required_checkpoint(ctx.upstream_ckpt(), "run train-upstream first");
  const Checkpoint down = detail::load_required_checkpoint(ctx.downstream_ckpt(), "run train-downstream first");
  detail::check_upstream_meta(up, cfg);
  const std::string up_sum = hex64(file_checksum(ctx.upstream_ckpt()));
  if (down.meta.value("stage", "") != "downstream") throw ConfigError("downstream.ckpt is not a downstream checkpoint");
  if (down.meta.value("task", "") != to_string(cfg.task)) {
    throw ConfigError("downstream checkpoint is for task '" + down.meta.value("task", "") + "', config says '" +
                      to_string(cfg.task) + "'");
  }
  if (down.meta.value("upstream_checksum", "") != up_sum) {
    throw ConfigError("downstream checkpoint was trained against a different upstream checkpoint");
  }
  const Dataset ds = detail::load_matching_dataset(ctx);
  detail::archive_config(ctx, "evaluate");

  EvalOptions opt;
  opt.mc_samples = cfg.mc_samples;
  opt.mc_seed = cfg.mc_seed;
  opt.threads = ctx.threads;
  const auto rep = run_sweep(ds, ds.subset(Split::test), cfg.masks, up.model(), down.model(), opt);
  const std::string report = sweep_report_csv(rep);
  const std::string scatter = scatter_csv(rep);
  write_file(ctx.out() / "sweep_report.csv", report);
  write_file(ctx.out() / "scatter.csv", scatter);

  const json manifest = {
      {"command", "evaluate"},
      {"config", config_to_json(cfg)},
      {"seeds",
       {{"dataset", cfg.dataset.seed},
        {"train_upstream", cfg.train_upstream.seed},
        {"train_downstream", cfg.train_downstream.seed},
        {"mc", cfg.mc_seed}}},
      {"mc_samples", cfg.mc_samples},
      {"test_examples", rep.records.size() / cfg.masks.size()},
      {"checkpoints",
       {{"upstream", {{"path", "upstream.ckpt"}, {"checksum", up_sum}}},
        {"downstream", {{"path", "downstream.ckpt"}, {"checksum", hex64(file_checksum(ctx.downstream_ckpt()))}}}}},
      {"dataset_manifest_checksum", hex64(file_checksum(ctx.dataset_dir() / "manifest.json"))},
      {"outputs",
       {{"sweep_report.csv", hex64(fnv1a64(report))}, {"scatter.csv", hex64(fnv1a64(scatter))}}},
      {"identity_max_residual", rep.max_identity_residual()}};
  write_file(ctx.out() / "run_manifest.json", manifest.dump(2) + "\n");
  if (ctx.log) *ctx.log << report;
  return kExitOk;
}

/// Recomputes the aggregate table from scatter.csv, audits the decomposition
/// identities on the raw sums, and checks sweep_report.csv against it.
inline int cmd_report(const CommandContext& ctx, std::ostream& out = std::cout) {
  OutputLock lock(ctx.out());
  const fs::path scatter = ctx.out() / "scatter.csv";
  if (!fs::exists(scatter)) throw MissingArtifact("scatter.csv not found in " + ctx.out().string() + " (run evaluate first)");
  const SweepReport rep = parse_scatter_csv(read_file(scatter));
  const std::string table = sweep_report_csv(rep);
  out << table;
  int status = kExitOk;
  for (const auto& row : rep.rows) {
    const double r = row.identity_residual(rep.task);
    const bool ok = r <= kIdentityTolerance;
    out << "identity accel=" << fmt_sig4(row.accel.R) << " c=" << fmt_sig4(row.accel.c) << ": residual "
        << fmt_sig4(r) << (ok ? " ok" : " VIOLATED") << "\n";
    if (!ok) status = kExitNumerical;
  }
  const fs::path stored = ctx.out() / "sweep_report.csv";
  if (fs::exists(stored)) {
    const bool same = read_file(stored) == table;
    out << "sweep_report.csv " << (same ? "matches" : "DIFFERS FROM") << " the recomputed table\n";
    if (!same && status == kExitOk) status = kExitFailure;
  }
  return status;
}

}  // namespace uncprop
