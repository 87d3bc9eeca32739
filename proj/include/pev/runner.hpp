#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "pev/checkpoint.hpp"
#include "pev/config.hpp"
#include "pev/errors.hpp"
#include "pev/fingerprint.hpp"
#include "pev/fl.hpp"
#include "pev/metrics.hpp"
#include "pev/sweep.hpp"
#include "pev/unlearn.hpp"

namespace pev::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitInternal = 1;
inline constexpr int kExitVerifyFailed = 2;
inline constexpr int kExitUsage = 3;

struct Command {
  enum class Kind { train, unlearn, retrain, verify, sweep, report };
  Kind kind = Kind::train;
  std::optional<std::filesystem::path> config_path;
  std::vector<std::string> overrides;
  std::optional<std::filesystem::path> run_dir;
  int target = 0;
  int jobs = 1;
  bool uniform_baseline = false;
};

// ---------------------------------------------------------------------------
// Model container: "PEVM", version, arch, binary64 tensors.
// ---------------------------------------------------------------------------

inline void save_model(const ModelParams& m, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write model file: " + path.string());
  detail::ByteWriter w(out);
  out.write("PEVM", 4);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(m.arch.size()));
  for (std::size_t width : m.arch) w.u32(static_cast<std::uint32_t>(width));
  detail::write_layers(w, m.layers, Precision::lossless);
  if (!out) throw IoError("write failed: " + path.string());
}

inline ModelParams load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open model file: " + path.string());
  detail::ByteReader r(in, path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "PEVM") {
    throw IoError("not a PEV model file: " + path.string());
  }
  if (r.u32() != 1) throw IoError("unsupported model version in " + path.string());
  const std::uint32_t arch_count = r.u32();
  if (arch_count < 2 || arch_count > 64) {
    throw IoError("corrupt arch metadata in " + path.string());
  }
  ModelParams m;
  for (std::uint32_t i = 0; i < arch_count; ++i) m.arch.push_back(r.u32());
  m.layers = detail::read_layers(r, detail::layers_for_arch(m.arch),
                                 Precision::lossless);
  return m;
}

// ---------------------------------------------------------------------------
// Deterministic run inputs derived from the resolved config.
// ---------------------------------------------------------------------------

struct RunContext {
  FullConfig cfg;
  Dataset train_data;
  Dataset eval_data;
  std::vector<Dataset> shards;
  std::vector<Fingerprint> fingerprints;  // empty when epsilon == 0
  std::vector<std::size_t> arch;
  std::size_t model_dim = 0;
};

inline RunContext build_context(const FullConfig& cfg) {
  RunContext ctx;
  ctx.cfg = cfg;
  if (!cfg.data.csv_path.empty()) {
    ctx.train_data = load_csv(cfg.data.csv_path);
    ctx.eval_data = ctx.train_data;  // CSV input evaluates on itself
  } else {
    auto [train, eval] = make_blobs_split(cfg.data.classes, cfg.data.dim,
                                          cfg.data.per_class,
                                          cfg.data.eval_per_class,
                                          cfg.data.spread, cfg.data.seed);
    ctx.train_data = std::move(train);
    ctx.eval_data = eval.size() > 0 ? std::move(eval) : ctx.train_data;
  }
  ctx.shards = partition_dirichlet(
      ctx.train_data,
      PartitionSpec{cfg.run.n_clients, cfg.data.alpha, cfg.data.seed});
  ctx.arch = make_arch(ctx.train_data.dim,
                       static_cast<std::size_t>(ctx.train_data.class_count));
  ctx.model_dim = total_dim(detail::layers_for_arch(ctx.arch));
  if (cfg.run.fingerprint_epsilon > 0.0) {
    for (int c = 0; c < cfg.run.n_clients; ++c) {
      ctx.fingerprints.push_back(fingerprint_generate(
          c, ctx.model_dim, cfg.run.master_seed, cfg.run.fingerprint_epsilon));
    }
  }
  return ctx;
}

/// Threshold from config, or calibrated from the null distribution at
/// quantile 0.999 when the config says auto.
inline double resolve_delta(const RunContext& ctx) {
  if (ctx.cfg.run.delta_threshold) return *ctx.cfg.run.delta_threshold;
  return calibrate_threshold(ctx.model_dim, 10000, 0.999,
                             derive_seed(ctx.cfg.run.master_seed, "delta"));
}

// ---------------------------------------------------------------------------
// Run directories: <out_dir>/<train_hash>-<utc stamp>. The hash covers the
// training-relevant keys, so unlearn-time overrides (sigma, thresholds)
// still find their training run.
// ---------------------------------------------------------------------------

namespace detail_fs {

inline std::string utc_stamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y%m%dT%H%M%SZ", &tm_utc);
  return buf;
}

}  // namespace detail_fs

inline std::filesystem::path create_run_dir(const FullConfig& cfg) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const std::string prefix = hash_hex(train_hash(cfg));
  const std::string stamp = detail_fs::utc_stamp();
  fs::path dir = fs::path(cfg.out_dir) / (prefix + "-" + stamp);
  for (int k = 1; fs::exists(dir); ++k) {
    dir = fs::path(cfg.out_dir) / (prefix + "-" + stamp + "-" + std::to_string(k));
  }
  fs::create_directories(dir);
  return dir;
}

inline std::optional<std::filesystem::path> find_run_dir(const FullConfig& cfg) {
  namespace fs = std::filesystem;
  if (!fs::exists(cfg.out_dir)) return std::nullopt;
  const std::string prefix = hash_hex(train_hash(cfg)) + "-";
  std::optional<fs::path> best;
  for (const auto& entry : fs::directory_iterator(cfg.out_dir)) {
    if (!entry.is_directory()) continue;
    const std::string name = entry.path().filename().string();
    if (name.rfind(prefix, 0) != 0) continue;
    if (!best || name > best->filename().string()) best = entry.path();
  }
  return best;
}

inline std::filesystem::path require_run_dir(
    const FullConfig& cfg, const std::optional<std::filesystem::path>& flag,
    const char* needed_by) {
  if (flag) {
    if (!std::filesystem::exists(*flag)) {
      throw MissingArtifactError("run directory does not exist: " +
                                 flag->string());
    }
    return *flag;
  }
  if (auto found = find_run_dir(cfg)) return *found;
  throw MissingArtifactError(std::string(needed_by) +
                             " needs a training run for this config; run "
                             "`pev train` first or pass --run <dir>");
}

inline std::string sigma_tag(double sigma) {
  std::ostringstream os;
  os << sigma;
  return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline std::string rounds_csv(const std::vector<RoundLog>& logs) {
  std::ostringstream os;
  os << "round,sampled_clients,variance,checkpointed,global_accuracy,"
        "wall_time_ms\n";
  for (const RoundLog& log : logs) {
    os << log.round << ',';
    for (std::size_t i = 0; i < log.sampled_clients.size(); ++i) {
      if (i) os << ';';
      os << log.sampled_clients[i];
    }
    os << ',';
    if (log.variance) os << pev::detail::format_double(*log.variance);
    os << ',' << (log.checkpointed ? "true" : "false") << ',';
    if (log.global_accuracy >= 0.0) {
      os << pev::detail::format_double(log.global_accuracy);
    }
    os << ',' << log.wall_time_ms << "\n";
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Subcommands. Each prints a short human line and writes its artifacts into
// the run directory.
// ---------------------------------------------------------------------------

inline int cmd_train(const FullConfig& cfg, int jobs) {
  RunContext ctx = build_context(cfg);
  const std::filesystem::path dir = create_run_dir(cfg);
  write_text(dir / "config.resolved", resolved_config_text(cfg));

  TrainResult result = run_training(cfg.run, ctx.shards, ctx.eval_data,
                                    ctx.fingerprints, std::nullopt, jobs);
  result.store.config_hash = train_hash(cfg);
  save(result.store, dir / "checkpoints.pevc");
  save_model(result.w_initial, dir / "model_init.pevm");
  save_model(result.w_final, dir / "model_final.pevm");
  write_text(dir / "rounds.csv", rounds_csv(result.logs));

  const double acc = accuracy(result.w_final, ctx.eval_data);
  std::cout << "run directory: " << dir.string() << "\n"
            << "rounds: " << cfg.run.rounds
            << ", checkpoints: " << result.store.size() << "\n"
            << "final accuracy: " << acc << "\n";
  return kExitOk;
}

inline nlohmann::json report_json(const UnlearnReport& rep) {
  return nlohmann::json{{"target", rep.target},
                        {"sigma", rep.sigma},
                        {"checkpoints_used", rep.checkpoints_used},
                        {"wall_time_ms", rep.wall_time_ms},
                        {"accuracy_before", rep.accuracy_before},
                        {"accuracy_after", rep.accuracy_after}};
}

inline CheckpointStore load_store_checked(const FullConfig& cfg,
                                          const std::filesystem::path& dir) {
  const std::filesystem::path path = dir / "checkpoints.pevc";
  if (!std::filesystem::exists(path)) {
    throw MissingArtifactError("no checkpoint store in " + dir.string() +
                               "; run `pev train` first");
  }
  CheckpointStore store = load(path);
  if (store.config_hash != train_hash(cfg)) {
    throw ConfigError("checkpoint store in " + dir.string() +
                      " was produced by a different training config");
  }
  return store;
}

inline int cmd_unlearn(const FullConfig& cfg, int target, bool uniform,
                       const std::optional<std::filesystem::path>& run_flag,
                       int jobs) {
  if (target < 0 || target >= cfg.run.n_clients) {
    throw ConfigError("target must be in [0, n_clients)");
  }
  RunContext ctx = build_context(cfg);
  const std::filesystem::path dir = require_run_dir(cfg, run_flag, "unlearn");
  const CheckpointStore store = load_store_checked(cfg, dir);

  UnlearnResult res = unlearn(
      store, cfg.run, ctx.shards, target, cfg.run.sigma, ctx.fingerprints,
      uniform ? NoiseMode::uniform : NoiseMode::layer_adaptive, jobs);
  const ModelParams w_final = load_model(dir / "model_final.pevm");
  res.report.accuracy_before = accuracy(w_final, ctx.eval_data);
  res.report.accuracy_after = accuracy(res.model, ctx.eval_data);

  const std::string suffix = std::string(uniform ? "_uniform" : "") + "_t" +
                             std::to_string(target) + "_s" +
                             sigma_tag(cfg.run.sigma);
  save_model(res.model, dir / ("model_unlearned" + suffix + ".pevm"));
  write_text(dir / ("unlearn_report" + suffix + ".json"),
             report_json(res.report).dump(2) + "\n");

  std::cout << "unlearned client " << target << " (sigma " << cfg.run.sigma
            << (uniform ? ", uniform baseline" : "") << ") using "
            << res.report.checkpoints_used << " checkpoints in "
            << res.report.wall_time_ms << " ms\n"
            << "accuracy " << res.report.accuracy_before << " -> "
            << res.report.accuracy_after << "\n"
            << "artifacts in " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_retrain(const FullConfig& cfg, int target,
                       const std::optional<std::filesystem::path>& run_flag,
                       int jobs) {
  if (target < 0 || target >= cfg.run.n_clients) {
    throw ConfigError("target must be in [0, n_clients)");
  }
  RunContext ctx = build_context(cfg);
  const std::filesystem::path dir = require_run_dir(cfg, run_flag, "retrain");

  RetrainResult res = retrain_oracle(cfg.run, ctx.shards, ctx.eval_data, target,
                                     ctx.fingerprints, jobs);
  UnlearnReport rep;
  rep.target = target;
  rep.sigma = 0.0;
  rep.checkpoints_used = 0;
  rep.wall_time_ms = res.wall_time_ms;
  const std::filesystem::path final_path = dir / "model_final.pevm";
  if (std::filesystem::exists(final_path)) {
    rep.accuracy_before = accuracy(load_model(final_path), ctx.eval_data);
  }
  rep.accuracy_after = accuracy(res.train.w_final, ctx.eval_data);

  const std::string suffix = "_t" + std::to_string(target);
  save_model(res.train.w_final, dir / ("model_retrain" + suffix + ".pevm"));
  write_text(dir / ("retrain_report" + suffix + ".json"),
             report_json(rep).dump(2) + "\n");
  std::cout << "retrained without client " << target << " in "
            << res.wall_time_ms << " ms, accuracy " << rep.accuracy_after
            << "\n"
            << "artifacts in " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_verify(const FullConfig& cfg, int target,
                      const std::optional<std::filesystem::path>& run_flag,
                      bool uniform) {
  if (target < 0 || target >= cfg.run.n_clients) {
    throw ConfigError("target must be in [0, n_clients)");
  }
  if (!(cfg.run.fingerprint_epsilon > 0.0)) {
    throw ConfigError("verify needs fingerprint_epsilon > 0");
  }
  RunContext ctx = build_context(cfg);
  const std::filesystem::path dir = require_run_dir(cfg, run_flag, "verify");
  const std::string suffix = std::string(uniform ? "_uniform" : "") + "_t" +
                             std::to_string(target) + "_s" +
                             sigma_tag(cfg.run.sigma);
  const std::filesystem::path unlearned_path =
      dir / ("model_unlearned" + suffix + ".pevm");
  if (!std::filesystem::exists(unlearned_path)) {
    throw MissingArtifactError("no unlearned model " + unlearned_path.string() +
                               "; run `pev unlearn` first");
  }
  const std::filesystem::path init_path = dir / "model_init.pevm";
  if (!std::filesystem::exists(init_path)) {
    throw MissingArtifactError("no initial model in " + dir.string() +
                               "; run `pev train` first");
  }
  const ModelParams w_hat = load_model(unlearned_path);
  const ModelParams w_ref = load_model(init_path);
  const Fingerprint fp = fingerprint_generate(
      target, w_ref.total_dim(), cfg.run.master_seed, cfg.run.fingerprint_epsilon);
  const double delta = resolve_delta(ctx);
  const Verdict verdict = verify(fp, w_hat, w_ref, delta);

  const nlohmann::json j{{"target", target},
                         {"influence", verdict.influence},
                         {"delta", verdict.delta},
                         {"outcome", verdict.outcome()}};
  write_text(dir / ("verdict" + suffix + ".json"), j.dump(2) + "\n");
  std::cout << "influence " << verdict.influence << " vs delta " << verdict.delta
            << ": " << verdict.outcome() << "\n";
  return verdict.success ? kExitOk : kExitVerifyFailed;
}

inline int cmd_sweep(const FullConfig& cfg, int target,
                     const std::optional<std::filesystem::path>& run_flag,
                     int jobs) {
  if (target < 0 || target >= cfg.run.n_clients) {
    throw ConfigError("target must be in [0, n_clients)");
  }
  RunContext ctx = build_context(cfg);
  std::filesystem::path dir;
  if (run_flag) {
    dir = require_run_dir(cfg, run_flag, "sweep");
  } else if (auto found = find_run_dir(cfg)) {
    dir = *found;
  } else {
    dir = create_run_dir(cfg);
    write_text(dir / "config.resolved", resolved_config_text(cfg));
  }

  const SweepResult res = noise_sweep(cfg, target, ctx.shards, ctx.eval_data,
                                      cfg.sweep.sigmas, cfg.sweep.seeds, jobs);
  write_text(dir / "sweep.csv", sweep_csv(res.rows));

  nlohmann::json summary;
  for (const auto& [key, drop] : res.summary.mean_drop) {
    summary["mean_drop_pct"][key.first][sigma_tag(key.second)] = drop;
  }
  for (const auto& [method, ms] : res.summary.mean_wall_ms) {
    summary["mean_wall_time_ms"][method] = ms;
  }
  write_text(dir / "sweep_summary.json", summary.dump(2) + "\n");

  std::cout << "sweep over " << cfg.sweep.seeds << " seeds, sigmas";
  for (double s : cfg.sweep.sigmas) std::cout << ' ' << s;
  std::cout << "\nmean accuracy drop (pct):\n";
  for (const auto& [key, drop] : res.summary.mean_drop) {
    std::cout << "  " << key.first << " sigma=" << key.second << ": " << drop
              << "\n";
  }
  std::cout << "artifacts in " << dir.string() << "\n";
  return kExitOk;
}

inline int cmd_report(const FullConfig& cfg,
                      const std::optional<std::filesystem::path>& run_flag) {
  namespace fs = std::filesystem;
  const fs::path dir = require_run_dir(cfg, run_flag, "report");
  std::ostringstream out;
  bool found_any = false;

  std::vector<SweepRow> timing_rows;
  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    const bool is_unlearn = name.rfind("unlearn_report", 0) == 0;
    const bool is_retrain = name.rfind("retrain_report", 0) == 0;
    if (!is_unlearn && !is_retrain) continue;
    std::ifstream in(entry.path());
    nlohmann::json j;
    in >> j;
    SweepRow row;
    row.method = is_retrain ? "retrain"
                            : (name.find("_uniform_") != std::string::npos
                                   ? "uniform_dp"
                                   : "pev");
    row.sigma = j.value("sigma", 0.0);
    row.accuracy = j.value("accuracy_after", -1.0);
    row.wall_time_ms = j.value("wall_time_ms", 0);
    timing_rows.push_back(row);
    found_any = true;
  }

  if (!timing_rows.empty()) {
    out << "wall time by method (ms):\n";
    for (const MethodTiming& t : timing_report(timing_rows)) {
      out << "  " << t.method << ": mean " << t.mean_ms << " +- " << t.std_ms
          << " over " << t.runs << " run(s)";
      if (t.method != "retrain" && t.speedup_vs_retrain > 0.0) {
        out << ", speedup vs retrain " << t.speedup_vs_retrain << "x";
      }
      out << "\n";
    }
    out << "  (" << kTimingFootnote << ")\n";
  }

  const fs::path sweep_path = dir / "sweep_summary.json";
  if (fs::exists(sweep_path)) {
    std::ifstream in(sweep_path);
    nlohmann::json j;
    in >> j;
    out << "noise sweep mean accuracy drop (pct):\n";
    if (j.contains("mean_drop_pct")) {
      for (const auto& [method, by_sigma] : j["mean_drop_pct"].items()) {
        for (const auto& [sigma, drop] : by_sigma.items()) {
          out << "  " << method << " sigma=" << sigma << ": "
              << drop.get<double>() << "\n";
        }
      }
    }
    found_any = true;
  }

  for (const auto& entry : fs::directory_iterator(dir)) {
    const std::string name = entry.path().filename().string();
    if (name.rfind("verdict", 0) != 0) continue;
    std::ifstream in(entry.path());
    nlohmann::json j;
    in >> j;
    out << "verdict for client " << j.value("target", -1) << ": "
        << j.value("outcome", "?") << " (influence "
        << j.value("influence", 0.0) << " vs delta " << j.value("delta", 0.0)
        << ")\n";
    found_any = true;
  }

  if (!found_any) {
    throw MissingArtifactError("nothing to report in " + dir.string() +
                               "; run unlearn/retrain/sweep/verify first");
  }
  write_text(dir / "report.txt", out.str());
  std::cout << out.str();
  return kExitOk;
}

inline int dispatch(const Command& cmd) {
  try {
    const FullConfig cfg = parse_config(cmd.config_path, cmd.overrides);
    switch (cmd.kind) {
      case Command::Kind::train:
        return cmd_train(cfg, cmd.jobs);
      case Command::Kind::unlearn:
        return cmd_unlearn(cfg, cmd.target, cmd.uniform_baseline, cmd.run_dir,
                           cmd.jobs);
      case Command::Kind::retrain:
        return cmd_retrain(cfg, cmd.target, cmd.run_dir, cmd.jobs);
      case Command::Kind::verify:
        return cmd_verify(cfg, cmd.target, cmd.run_dir, cmd.uniform_baseline);
      case Command::Kind::sweep:
        return cmd_sweep(cfg, cmd.target, cmd.run_dir, cmd.jobs);
      case Command::Kind::report:
        return cmd_report(cfg, cmd.run_dir);
    }
    return kExitInternal;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const MissingArtifactError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "internal error: " << e.what() << "\n";
    return kExitInternal;
  }
}

}  // namespace pev::cli
