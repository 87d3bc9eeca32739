#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <iostream>
#include <optional>
#include <vector>

#include "pev/checkpoint.hpp"
#include "pev/errors.hpp"
#include "pev/fingerprint.hpp"
#include "pev/fl.hpp"
#include "pev/model.hpp"
#include "pev/rng.hpp"
#include "pev/tensor.hpp"

namespace pev {

/// Per-layer noise scales for one checkpoint, computed after the target's
/// update has been removed.
struct SensitivityProfile {
  int round = 0;
  std::vector<double> per_layer;
};

enum class NoiseMode {
  layer_adaptive,  // sigma * S_l per layer
  uniform,         // sigma * S_global everywhere (FedRecovery-style stand-in)
};

struct UnlearnReport {
  int target = 0;
  double sigma = 0.0;
  int checkpoints_used = 0;
  std::int64_t noise_draws = 0;
  std::int64_t wall_time_ms = 0;
  double accuracy_before = -1.0;
  double accuracy_after = -1.0;
};

struct UnlearnResult {
  ModelParams model;  // the unlearned model
  UnlearnReport report;
};

namespace detail {

/// sqrt(mean per-coordinate population variance) over the given coordinate
/// range of the remaining clients' updates. Fewer than two remaining
/// updates means zero spread.
inline double spread_over(const std::vector<const LayerVec*>& remaining,
                          std::size_t layer_begin, std::size_t layer_end) {
  if (remaining.size() < 2) return 0.0;
  const double c = static_cast<double>(remaining.size());
  double total = 0.0;
  std::size_t coords = 0;
  for (std::size_t l = layer_begin; l < layer_end; ++l) {
    const std::size_t n = (*remaining[0])[l].size();
    coords += n;
    for (std::size_t j = 0; j < n; ++j) {
      double mean = 0.0;
      for (const LayerVec* u : remaining) mean += (*u)[l].data[j];
      mean /= c;
      double var = 0.0;
      for (const LayerVec* u : remaining) {
        const double d = (*u)[l].data[j] - mean;
        var += d * d;
      }
      total += var / c;
    }
  }
  return std::sqrt(total / static_cast<double>(coords));
}

inline std::vector<const LayerVec*> remaining_updates(const Checkpoint& ck,
                                                      int exclude) {
  std::vector<const LayerVec*> out;
  for (const ClientUpdate& u : ck.updates) {
    if (u.client_id != exclude) out.push_back(&u.delta);
  }
  return out;
}

}  // namespace detail

/// S_l for one layer of a checkpoint, target excluded.
inline double layer_sensitivity(const Checkpoint& ck, int exclude,
                                std::size_t layer) {
  if (ck.updates.empty()) throw ConfigError("layer_sensitivity: empty checkpoint");
  if (layer >= ck.updates[0].delta.size()) {
    throw ConfigError("layer_sensitivity: layer index out of range");
  }
  return detail::spread_over(detail::remaining_updates(ck, exclude), layer,
                             layer + 1);
}

inline SensitivityProfile sensitivity_profile(const Checkpoint& ck, int exclude) {
  if (ck.updates.empty()) throw ConfigError("sensitivity_profile: empty checkpoint");
  const auto remaining = detail::remaining_updates(ck, exclude);
  SensitivityProfile prof;
  prof.round = ck.round;
  const std::size_t layers = ck.updates[0].delta.size();
  prof.per_layer.resize(layers);
  for (std::size_t l = 0; l < layers; ++l) {
    prof.per_layer[l] = detail::spread_over(remaining, l, l + 1);
  }
  return prof;
}

/// One scale across every coordinate: sqrt of the mean per-coordinate
/// variance over all coordinates of the remaining updates.
inline double global_sensitivity(const Checkpoint& ck, int exclude) {
  if (ck.updates.empty()) throw ConfigError("global_sensitivity: empty checkpoint");
  return detail::spread_over(detail::remaining_updates(ck, exclude), 0,
                             ck.updates[0].delta.size());
}

/// Adds N(0, (sigma*S_l)^2) noise per layer-l coordinate. The per-layer
/// stream is derived from base_seed and the layer index, so draws do not
/// depend on processing order. Layers with sigma*S_l == 0 are left
/// bit-identical to the input.
inline LayerVec calibrate_update(const LayerVec& delta,
                                 const SensitivityProfile& profile, double sigma,
                                 std::uint64_t base_seed,
                                 std::int64_t* draws = nullptr) {
  if (!(sigma >= 0.0)) throw ConfigError("calibrate_update: sigma must be >= 0");
  if (profile.per_layer.size() != delta.size()) {
    throw ConfigError("calibrate_update: profile length mismatch");
  }
  LayerVec out = delta;
  for (std::size_t l = 0; l < out.size(); ++l) {
    const double sd = sigma * profile.per_layer[l];
    if (sd == 0.0) continue;
    DetRng rng(derive_sub(base_seed, l));
    for (double& v : out[l].data) v += sd * rng.next_gaussian();
    if (draws) *draws += static_cast<std::int64_t>(out[l].size());
  }
  return out;
}

/// Removes one client by replaying the checkpointed rounds: start at w_1,
/// recompute every retained participant's local update against the current
/// reconstruction with its original per-(round,client) seed, add calibrated
/// noise, and aggregate with the checkpoint's participant count minus the
/// target. Stored updates supply the participant sets and the sensitivity
/// profiles. With full checkpointing and sigma == 0 this reproduces the
/// retrain trajectory bit-exactly; with k << T it reconstructs from the
/// retained rounds only.
inline UnlearnResult unlearn(const CheckpointStore& store, const RunConfig& cfg,
                             const std::vector<Dataset>& shards, int target,
                             double sigma,
                             const std::vector<Fingerprint>& fingerprints = {},
                             NoiseMode mode = NoiseMode::layer_adaptive,
                             int jobs = 1) {
  if (store.checkpoints.empty()) throw ConfigError("unlearn: checkpoint store is empty");
  if (!(sigma >= 0.0)) throw ConfigError("unlearn: sigma must be >= 0");
  const auto t0 = std::chrono::steady_clock::now();

  UnlearnResult res;
  res.report.target = target;
  res.report.sigma = sigma;

  ModelParams w = init_model(store.arch, derive_seed(cfg.master_seed, "init"));
  for (const Checkpoint& ck : store.checkpoints) {
    std::vector<int> retained;
    for (const ClientUpdate& u : ck.updates) {
      if (u.client_id != target) retained.push_back(u.client_id);
    }
    if (retained.empty()) {
      std::cerr << "note: checkpoint round " << ck.round
                << " holds only the target's update, skipping\n";
      continue;
    }

    SensitivityProfile profile;
    if (sigma > 0.0) {
      if (mode == NoiseMode::layer_adaptive) {
        profile = sensitivity_profile(ck, target);
      } else {
        profile.round = ck.round;
        profile.per_layer.assign(ck.updates[0].delta.size(),
                                 global_sensitivity(ck, target));
      }
    }

    std::vector<std::optional<ClientUpdate>> slots(retained.size());
    auto work = [&](std::size_t k) {
      const int id = retained[k];
      std::optional<LayerVec> delta =
          local_train(w, shards[static_cast<std::size_t>(id)], cfg.local_epochs,
                      cfg.lr, cfg.batch_size,
                      derive_seed(cfg.master_seed, "train", ck.round, id));
      if (!delta) return;
      if (cfg.fingerprint_epsilon > 0.0 && !fingerprints.empty()) {
        delta = embed(*delta, fingerprints[static_cast<std::size_t>(id)]);
      }
      slots[k] = ClientUpdate{id, ck.round, std::move(*delta)};
    };
    if (jobs <= 1 || retained.size() <= 1) {
      for (std::size_t k = 0; k < retained.size(); ++k) work(k);
    } else {
      const std::size_t workers =
          std::min<std::size_t>(static_cast<std::size_t>(jobs), retained.size());
      std::vector<std::future<void>> futs;
      futs.reserve(workers);
      for (std::size_t wkr = 0; wkr < workers; ++wkr) {
        futs.push_back(std::async(std::launch::async, [&, wkr] {
          for (std::size_t k = wkr; k < retained.size(); k += workers) work(k);
        }));
      }
      for (auto& f : futs) f.get();
    }

    std::vector<ClientUpdate> updates;
    for (auto& s : slots) {
      if (!s) continue;
      if (sigma > 0.0) {
        s->delta = calibrate_update(
            s->delta, profile, sigma,
            derive_seed(cfg.master_seed, "unlearn", ck.round, s->client_id),
            &res.report.noise_draws);
      }
      updates.push_back(std::move(*s));
    }
    if (updates.empty()) continue;
    w = aggregate(w, updates,
                  cfg.aggregation == AggregationMode::global_n
                      ? static_cast<std::size_t>(cfg.n_clients)
                      : updates.size());
    ensure_finite(w.layers, "unlearned model");
    res.report.checkpoints_used += 1;
  }

  res.report.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                                std::chrono::steady_clock::now() - t0)
                                .count();
  res.model = std::move(w);
  return res;
}

/// FedRecovery-style stand-in: identical replay, but one global sensitivity
/// replaces every per-layer scale. Shares the unlearn noise streams, so a
/// sigma-for-sigma comparison against layer-adaptive noise is paired.
inline UnlearnResult uniform_dp_baseline(
    const CheckpointStore& store, const RunConfig& cfg,
    const std::vector<Dataset>& shards, int target, double sigma,
    const std::vector<Fingerprint>& fingerprints = {}, int jobs = 1) {
  return unlearn(store, cfg, shards, target, sigma, fingerprints,
                 NoiseMode::uniform, jobs);
}

struct RetrainResult {
  TrainResult train;
  std::int64_t wall_time_ms = 0;
};

/// Ground truth: full training from w_1 with the target never sampled.
/// Retained clients keep their original per-(round,client) seeds.
inline RetrainResult retrain_oracle(const RunConfig& cfg,
                                    const std::vector<Dataset>& shards,
                                    const Dataset& eval_data, int target,
                                    const std::vector<Fingerprint>& fingerprints = {},
                                    int jobs = 1) {
  const auto t0 = std::chrono::steady_clock::now();
  RetrainResult res;
  res.train = run_training(cfg, shards, eval_data, fingerprints, target, jobs);
  res.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                         std::chrono::steady_clock::now() - t0)
                         .count();
  return res;
}

}  // namespace pev
