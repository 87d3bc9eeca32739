#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <string>
#include <vector>

#include "pev/errors.hpp"
#include "pev/model.hpp"
#include "pev/rng.hpp"
#include "pev/tensor.hpp"

namespace pev {

/// A client's parameter-space marker: a unit-norm direction plus the scale
/// at which it is added to every update the client sends.
struct Fingerprint {
  int client_id = 0;
  double epsilon = 0.0;            // embedding scale
  std::uint64_t seed = 0;          // master seed it was derived from
  std::vector<double> direction;   // unit norm, model dimension
};

struct Verdict {
  double influence = 0.0;
  double delta = 0.0;
  bool success = false;

  const char* outcome() const noexcept { return success ? "success" : "failure"; }
};

/// Deterministic unit direction for (master_seed, client_id, d).
inline Fingerprint fingerprint_generate(int client_id, std::size_t d,
                                        std::uint64_t master_seed,
                                        double epsilon = 0.0) {
  if (d == 0) throw ConfigError("fingerprint: dimension must be positive");
  Fingerprint fp;
  fp.client_id = client_id;
  fp.epsilon = epsilon;
  fp.seed = master_seed;
  fp.direction.resize(d);
  DetRng rng(derive_seed(master_seed, "fingerprint", client_id));
  double norm2 = 0.0;
  do {
    norm2 = 0.0;
    for (double& v : fp.direction) {
      v = rng.next_gaussian();
      norm2 += v * v;
    }
  } while (norm2 == 0.0);
  const double inv = 1.0 / std::sqrt(norm2);
  for (double& v : fp.direction) v *= inv;
  return fp;
}

/// delta + epsilon * F, coordinatewise over the flattened layers.
/// epsilon == 0 returns the input unchanged.
inline LayerVec embed(const LayerVec& delta, const Fingerprint& fp) {
  if (fp.epsilon == 0.0) return delta;
  if (total_dim(delta) != fp.direction.size()) {
    throw ConfigError("fingerprint: dimension does not match update");
  }
  LayerVec out = delta;
  std::size_t offset = 0;
  for (Tensor& t : out) {
    for (std::size_t j = 0; j < t.size(); ++j) {
      t.data[j] += fp.epsilon * fp.direction[offset + j];
    }
    offset += t.size();
  }
  return out;
}

/// Residual fingerprint presence: |cos(flatten(w_hat - w_ref), F)| in [0,1].
/// A zero displacement is defined as zero influence.
inline double influence(const Fingerprint& fp, const ModelParams& w_hat,
                        const ModelParams& w_ref) {
  if (!same_shape(w_hat.layers, w_ref.layers)) {
    throw ConfigError("influence: model shapes differ");
  }
  if (w_hat.total_dim() != fp.direction.size()) {
    throw ConfigError("influence: fingerprint dimension mismatch");
  }
  double dot = 0.0;
  double norm2 = 0.0;
  std::size_t offset = 0;
  for (std::size_t l = 0; l < w_hat.layers.size(); ++l) {
    const std::vector<double>& a = w_hat.layers[l].data;
    const std::vector<double>& b = w_ref.layers[l].data;
    for (std::size_t j = 0; j < a.size(); ++j) {
      const double d = a[j] - b[j];
      dot += d * fp.direction[offset + j];
      norm2 += d * d;
    }
    offset += a.size();
  }
  if (norm2 == 0.0) return 0.0;
  return std::min(1.0, std::abs(dot) / std::sqrt(norm2));
}

/// Success iff the influence is strictly below the threshold.
inline Verdict verify(const Fingerprint& fp, const ModelParams& w_hat,
                      const ModelParams& w_ref, double delta) {
  if (!(delta > 0.0)) throw ConfigError("verify: delta must be > 0");
  Verdict v;
  v.influence = influence(fp, w_hat, w_ref);
  v.delta = delta;
  v.success = v.influence < delta;
  return v;
}

/// Null-distribution threshold: the given quantile of |cos(u, F)| over
/// n_samples random unit vectors u. This is the influence a model that
/// never saw the fingerprint would show, so verdicts are dimension-aware.
inline double calibrate_threshold(std::size_t d, std::size_t n_samples,
                                  double quantile, std::uint64_t seed) {
  if (d == 0) throw ConfigError("calibrate_threshold: dimension must be positive");
  if (n_samples < 1000) {
    throw ConfigError("calibrate_threshold: need at least 1000 samples");
  }
  if (!(quantile > 0.9 && quantile < 1.0)) {
    throw ConfigError("calibrate_threshold: quantile must be in (0.9, 1)");
  }
  const Fingerprint ref = fingerprint_generate(0, d, derive_seed(seed, "ref"));
  DetRng rng(derive_seed(seed, "null-cos"));
  std::vector<double> cosines;
  cosines.reserve(n_samples);
  std::vector<double> u(d);
  for (std::size_t s = 0; s < n_samples; ++s) {
    double norm2 = 0.0;
    for (double& v : u) {
      v = rng.next_gaussian();
      norm2 += v * v;
    }
    double dot = 0.0;
    for (std::size_t j = 0; j < d; ++j) dot += u[j] * ref.direction[j];
    cosines.push_back(std::abs(dot) / std::sqrt(norm2));
  }
  std::sort(cosines.begin(), cosines.end());
  std::size_t k = static_cast<std::size_t>(quantile * static_cast<double>(n_samples));
  k = std::min(k, n_samples - 1);
  return cosines[k];
}

}  // namespace pev
