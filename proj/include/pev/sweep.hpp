#pragma once

#include <map>
#include <string>
#include <vector>

#include "pev/config.hpp"
#include "pev/fl.hpp"
#include "pev/metrics.hpp"
#include "pev/unlearn.hpp"

namespace pev {

struct SweepSummary {
  // (method, sigma) -> mean accuracy drop in percentage points
  std::map<std::pair<std::string, double>, double> mean_drop;
  std::map<std::string, double> mean_wall_ms;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  SweepSummary summary;
};

/// Table-style noise sweep. For each seed index a fresh training run and a
/// same-seed retrain oracle are produced; every (sigma, method) cell is an
/// unlearn replay of that run. Drops are measured against the same-seed
/// retrain accuracy, so a negative drop means noise helped by chance.
inline SweepResult noise_sweep(const FullConfig& base, int target,
                               const std::vector<Dataset>& shards,
                               const Dataset& eval_data,
                               const std::vector<double>& sigmas, int seed_count,
                               int jobs = 1) {
  if (sigmas.empty()) throw ConfigError("noise_sweep: sigma list is empty");
  if (seed_count < 1) throw ConfigError("noise_sweep: need at least one seed");

  SweepResult res;
  for (int s = 0; s < seed_count; ++s) {
    RunConfig cfg = base.run;
    cfg.master_seed = derive_seed(base.run.master_seed, "sweep", s);
    cfg.eval_every = 0;

    std::vector<Fingerprint> fps;
    const std::size_t d =
        total_dim(detail::layers_for_arch(make_arch(
            eval_data.dim, static_cast<std::size_t>(eval_data.class_count))));
    if (cfg.fingerprint_epsilon > 0.0) {
      for (int c = 0; c < cfg.n_clients; ++c) {
        fps.push_back(fingerprint_generate(c, d, cfg.master_seed,
                                           cfg.fingerprint_epsilon));
      }
    }

    const TrainResult trained = run_training(cfg, shards, eval_data, fps,
                                             std::nullopt, jobs);
    const RetrainResult retr =
        retrain_oracle(cfg, shards, eval_data, target, fps, jobs);
    const double retrain_acc = accuracy(retr.train.w_final, eval_data);
    res.rows.push_back(SweepRow{"retrain", 0.0, s, retrain_acc, 0.0,
                                retr.wall_time_ms, std::nullopt});

    auto emit = [&](const std::string& method, double sigma,
                    const UnlearnResult& u) {
      const double acc = accuracy(u.model, eval_data);
      res.rows.push_back(SweepRow{method, sigma, s, acc,
                                  (retrain_acc - acc) * 100.0,
                                  u.report.wall_time_ms, std::nullopt});
    };

    emit("calibration_only", 0.0,
         unlearn(trained.store, cfg, shards, target, 0.0, fps,
                 NoiseMode::layer_adaptive, jobs));
    for (double sigma : sigmas) {
      emit("pev", sigma,
           unlearn(trained.store, cfg, shards, target, sigma, fps,
                   NoiseMode::layer_adaptive, jobs));
      emit("uniform_dp", sigma,
           uniform_dp_baseline(trained.store, cfg, shards, target, sigma, fps,
                               jobs));
    }
  }

  std::map<std::pair<std::string, double>, std::pair<double, int>> drop_acc;
  std::map<std::string, std::pair<double, int>> wall_acc;
  for (const SweepRow& r : res.rows) {
    auto& da = drop_acc[{r.method, r.sigma}];
    da.first += r.accuracy_drop_pct;
    da.second += 1;
    auto& wa = wall_acc[r.method];
    wa.first += static_cast<double>(r.wall_time_ms);
    wa.second += 1;
  }
  for (const auto& [key, val] : drop_acc) {
    res.summary.mean_drop[key] = val.first / val.second;
  }
  for (const auto& [key, val] : wall_acc) {
    res.summary.mean_wall_ms[key] = val.first / val.second;
  }
  return res;
}

}  // namespace pev
