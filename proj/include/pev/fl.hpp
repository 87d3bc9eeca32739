#pragma once

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <future>
#include <iostream>
#include <numeric>
#include <optional>
#include <vector>

#include "pev/checkpoint.hpp"
#include "pev/data.hpp"
#include "pev/errors.hpp"
#include "pev/fingerprint.hpp"
#include "pev/metrics.hpp"
#include "pev/model.hpp"
#include "pev/rng.hpp"

namespace pev {

enum class AggregationMode {
  received,  // divide by the updates received that round
  global_n,  // divide by the full client count, as Algorithm 1 writes it
};

/// Every knob of a deterministic run. Defaults follow the evaluation setup:
/// 100 clients, 10 per round, 200 rounds, lr 0.01, batch 32, tau 10,
/// theta 0.01, sigma 0.5.
struct RunConfig {
  int n_clients = 100;
  int clients_per_round = 10;
  int rounds = 200;
  int tau = 10;
  double theta = 0.01;
  double sigma = 0.5;
  std::optional<double> delta_threshold;  // nullopt: calibrate from the null
  double lr = 0.01;
  int batch_size = 32;
  int local_epochs = 1;
  double fingerprint_epsilon = 0.05;
  std::uint64_t master_seed = 42;
  Precision compression = Precision::lossless;
  AggregationMode aggregation = AggregationMode::received;
  int eval_every = 1;  // 0: evaluate only the final round
};

struct RoundLog {
  int round = 0;
  std::vector<int> sampled_clients;
  std::optional<double> variance;
  bool checkpointed = false;
  double global_accuracy = -1.0;  // -1 when the round was not evaluated
  std::int64_t wall_time_ms = 0;
};

struct TrainResult {
  ModelParams w_initial;
  ModelParams w_final;
  CheckpointStore store;
  std::vector<RoundLog> logs;
};

/// m distinct client ids for a round, ascending; deterministic in
/// (round, master_seed).
inline std::vector<int> sample_clients(int round, int n, int m,
                                       std::uint64_t master_seed) {
  if (m < 1 || n < 1) throw ConfigError("sample_clients: need n, m >= 1");
  if (m > n) {
    throw ConfigError("sample_clients: clients_per_round (" + std::to_string(m) +
                      ") exceeds n_clients (" + std::to_string(n) + ")");
  }
  DetRng rng(derive_seed(master_seed, "sample", round));
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < m; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  std::vector<int> out(pool.begin(), pool.begin() + m);
  std::sort(out.begin(), out.end());
  return out;
}

/// The round's sample with `exclude` removed; if it was drawn, its slot is
/// re-drawn from the unsampled pool using the same per-round stream, so the
/// retained composition matches the original run exactly.
inline std::vector<int> sample_clients_excluding(int round, int n, int m,
                                                 std::uint64_t master_seed,
                                                 int exclude) {
  if (m < 1 || n < 1) throw ConfigError("sample_clients: need n, m >= 1");
  if (m > n) {
    throw ConfigError("sample_clients: clients_per_round (" + std::to_string(m) +
                      ") exceeds n_clients (" + std::to_string(n) + ")");
  }
  DetRng rng(derive_seed(master_seed, "sample", round));
  std::vector<int> pool(n);
  std::iota(pool.begin(), pool.end(), 0);
  for (int i = 0; i < m; ++i) {
    const std::size_t j =
        static_cast<std::size_t>(i) +
        static_cast<std::size_t>(rng.next_below(static_cast<std::uint64_t>(n - i)));
    std::swap(pool[static_cast<std::size_t>(i)], pool[j]);
  }
  std::vector<int> out;
  bool excluded = false;
  for (int i = 0; i < m; ++i) {
    if (pool[static_cast<std::size_t>(i)] == exclude) {
      excluded = true;
    } else {
      out.push_back(pool[static_cast<std::size_t>(i)]);
    }
  }
  if (excluded) {
    std::vector<int> rest;
    for (int i = m; i < n; ++i) {
      if (pool[static_cast<std::size_t>(i)] != exclude) {
        rest.push_back(pool[static_cast<std::size_t>(i)]);
      }
    }
    if (!rest.empty()) {
      out.push_back(rest[static_cast<std::size_t>(
          rng.next_below(static_cast<std::uint64_t>(rest.size())))]);
    }
  }
  std::sort(out.begin(), out.end());
  return out;
}

/// FedAvg step: w + (1/denom) * sum of deltas, reduced in ascending
/// client-id order so serial and parallel runs agree bit-exactly.
inline ModelParams aggregate(const ModelParams& w,
                             const std::vector<ClientUpdate>& updates,
                             std::size_t denom = 0) {
  if (updates.empty()) throw ConfigError("aggregate: no updates");
  if (denom == 0) denom = updates.size();
  std::vector<std::size_t> order(updates.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });
  LayerVec sum = zeros_like(w.layers);
  for (std::size_t k : order) {
    if (!same_shape(sum, updates[k].delta)) {
      throw ConfigError("aggregate: update shape mismatch");
    }
    add_scaled(sum, updates[k].delta, 1.0);
  }
  ModelParams out = w;
  const double div = static_cast<double>(denom);
  for (std::size_t l = 0; l < out.layers.size(); ++l) {
    for (std::size_t j = 0; j < out.layers[l].size(); ++j) {
      out.layers[l].data[j] += sum[l].data[j] / div;
    }
  }
  return out;
}

namespace detail {

/// Local updates for the given clients against a fixed global model. The
/// per-client seed is derive_seed(master, "train", round, id), which is what
/// lets a later replay reproduce any client's randomness exactly.
inline std::vector<ClientUpdate> round_updates(
    const ModelParams& w, const std::vector<int>& ids,
    const std::vector<Dataset>& shards, const RunConfig& cfg, int round,
    const std::vector<Fingerprint>& fingerprints, int jobs) {
  std::vector<std::optional<ClientUpdate>> slots(ids.size());
  auto work = [&](std::size_t k) {
    const int id = ids[k];
    const Dataset& shard = shards[static_cast<std::size_t>(id)];
    std::optional<LayerVec> delta =
        local_train(w, shard, cfg.local_epochs, cfg.lr, cfg.batch_size,
                    derive_seed(cfg.master_seed, "train", round, id));
    if (!delta) return;  // empty shard: the client skips this round
    if (cfg.fingerprint_epsilon > 0.0 && !fingerprints.empty()) {
      delta = embed(*delta, fingerprints[static_cast<std::size_t>(id)]);
    }
    slots[k] = ClientUpdate{id, round, std::move(*delta)};
  };
  if (jobs <= 1 || ids.size() <= 1) {
    for (std::size_t k = 0; k < ids.size(); ++k) work(k);
  } else {
    const std::size_t workers =
        std::min<std::size_t>(static_cast<std::size_t>(jobs), ids.size());
    std::vector<std::future<void>> futs;
    futs.reserve(workers);
    for (std::size_t wkr = 0; wkr < workers; ++wkr) {
      futs.push_back(std::async(std::launch::async, [&, wkr] {
        for (std::size_t k = wkr; k < ids.size(); k += workers) work(k);
      }));
    }
    for (auto& f : futs) f.get();
  }
  std::vector<ClientUpdate> updates;  // ids are ascending, so slots are too
  for (auto& s : slots) {
    if (s) updates.push_back(std::move(*s));
  }
  return updates;
}

}  // namespace detail

/// Federated training: broadcast, local updates, FedAvg, and the
/// variance-gated checkpoint hook. When `exclude` is set the run is the
/// retrain counterfactual: that client is never sampled and its slot is
/// re-drawn, while every retained client keeps its original seeds.
inline TrainResult run_training(const RunConfig& cfg,
                                const std::vector<Dataset>& shards,
                                const Dataset& eval_data,
                                const std::vector<Fingerprint>& fingerprints = {},
                                std::optional<int> exclude = std::nullopt,
                                int jobs = 1) {
  if (shards.size() != static_cast<std::size_t>(cfg.n_clients)) {
    throw ConfigError("run_training: shard count does not match n_clients");
  }
  if (cfg.rounds < 1) throw ConfigError("run_training: rounds must be >= 1");
  if (!fingerprints.empty() &&
      fingerprints.size() != static_cast<std::size_t>(cfg.n_clients)) {
    throw ConfigError("run_training: fingerprint count does not match n_clients");
  }

  const std::vector<std::size_t> arch =
      make_arch(eval_data.dim, static_cast<std::size_t>(eval_data.class_count));
  TrainResult res;
  res.w_initial = init_model(arch, derive_seed(cfg.master_seed, "init"));
  res.store.arch = arch;

  ModelParams w = res.w_initial;
  for (int t = 1; t <= cfg.rounds; ++t) {
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<int> ids =
        exclude ? sample_clients_excluding(t, cfg.n_clients,
                                           cfg.clients_per_round,
                                           cfg.master_seed, *exclude)
                : sample_clients(t, cfg.n_clients, cfg.clients_per_round,
                                 cfg.master_seed);
    RoundLog log;
    log.round = t;
    log.sampled_clients = ids;

    std::vector<ClientUpdate> updates =
        detail::round_updates(w, ids, shards, cfg, t, fingerprints, jobs);
    if (updates.empty()) {
      std::cerr << "warning: round " << t << " received no updates, skipping\n";
    } else {
      ModelParams next = aggregate(
          w, updates,
          cfg.aggregation == AggregationMode::global_n
              ? static_cast<std::size_t>(cfg.n_clients)
              : updates.size());
      if (t % cfg.tau == 0) {
        log.variance = update_variance(updates);
        if (auto ck = maybe_checkpoint(t, cfg.tau, cfg.theta, w, updates,
                                       cfg.compression)) {
          res.store.checkpoints.push_back(std::move(*ck));
          log.checkpointed = true;
        }
      }
      w = std::move(next);
      ensure_finite(w.layers, "global model");
    }

    if ((cfg.eval_every > 0 && t % cfg.eval_every == 0) || t == cfg.rounds) {
      log.global_accuracy = accuracy(w, eval_data);
    }
    log.wall_time_ms = std::chrono::duration_cast<std::chrono::milliseconds>(
                           std::chrono::steady_clock::now() - t0)
                           .count();
    res.logs.push_back(std::move(log));
  }
  res.w_final = std::move(w);
  return res;
}

}  // namespace pev
