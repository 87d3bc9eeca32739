#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

#include "pev/data.hpp"
#include "pev/errors.hpp"
#include "pev/rng.hpp"
#include "pev/tensor.hpp"

namespace pev {

/// Dense feed-forward classifier: tanh hidden layers, linear output layer,
/// softmax cross-entropy loss. Parameters are stored as alternating weight
/// and bias tensors (W0, b0, W1, b1, ...).
struct ModelParams {
  std::vector<std::size_t> arch;  // layer widths, input width first
  LayerVec layers;

  std::size_t total_dim() const noexcept { return pev::total_dim(layers); }
  std::size_t input_dim() const noexcept { return arch.front(); }
  std::size_t class_count() const noexcept { return arch.back(); }
};

/// One client's per-round parameter delta.
struct ClientUpdate {
  int client_id = 0;
  int round = 0;
  LayerVec delta;
};

struct Batch {
  std::size_t rows = 0;
  std::size_t dim = 0;
  std::vector<double> inputs;  // rows x dim
  std::vector<int> labels;
};

inline Batch gather_batch(const Dataset& data, const std::vector<std::size_t>& idx) {
  Batch b;
  b.rows = idx.size();
  b.dim = data.dim;
  b.inputs.reserve(b.rows * b.dim);
  b.labels.reserve(b.rows);
  for (std::size_t i : idx) {
    b.inputs.insert(b.inputs.end(), data.row(i), data.row(i) + data.dim);
    b.labels.push_back(data.labels[i]);
  }
  return b;
}

inline Batch full_batch(const Dataset& data) {
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), 0);
  return gather_batch(data, idx);
}

/// Default architecture: two tanh hidden layers between input and classes.
inline std::vector<std::size_t> make_arch(std::size_t input_dim,
                                          std::size_t classes) {
  return {input_dim, 32, 16, classes};
}

/// Seeded init: weights ~ N(0, 1/fan_in), biases zero. Draw order is fixed
/// (layer by layer, row-major), so a (arch, seed) pair names one model.
inline ModelParams init_model(const std::vector<std::size_t>& arch,
                              std::uint64_t seed) {
  if (arch.size() < 2) throw ConfigError("model arch needs at least two widths");
  ModelParams m;
  m.arch = arch;
  DetRng rng(seed);
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    const std::size_t in = arch[l];
    const std::size_t out = arch[l + 1];
    Tensor w = Tensor::zeros(out, in);
    const double scale = 1.0 / std::sqrt(static_cast<double>(in));
    for (double& v : w.data) v = scale * rng.next_gaussian();
    m.layers.push_back(std::move(w));
    m.layers.push_back(Tensor::zeros(out, 1));
  }
  return m;
}

struct ForwardResult {
  std::size_t rows = 0;
  std::size_t classes = 0;
  std::vector<double> logits;  // rows x classes
  double loss = 0.0;
};

namespace detail {

inline void check_batch(const ModelParams& m, const Batch& b) {
  if (b.rows == 0) throw ConfigError("forward: empty batch");
  if (b.dim != m.input_dim()) {
    throw ConfigError("forward: batch dim " + std::to_string(b.dim) +
                      " does not match model input " +
                      std::to_string(m.input_dim()));
  }
  for (int y : b.labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= m.class_count()) {
      throw ConfigError("forward: label out of range");
    }
  }
}

// y = x W^T + b for one affine layer; optionally tanh.
inline std::vector<double> affine_forward(const std::vector<double>& act,
                                          std::size_t rows, const Tensor& w,
                                          const Tensor& b, bool apply_tanh) {
  const std::size_t in = w.cols;
  const std::size_t out = w.rows;
  std::vector<double> next(rows * out);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = act.data() + r * in;
    double* y = next.data() + r * out;
    for (std::size_t o = 0; o < out; ++o) {
      double s = b.data[o];
      const double* wr = w.data.data() + o * in;
      for (std::size_t i = 0; i < in; ++i) s += wr[i] * x[i];
      y[o] = apply_tanh ? std::tanh(s) : s;
    }
  }
  return next;
}

inline double softmax_xent(const std::vector<double>& logits, std::size_t rows,
                           std::size_t classes, const std::vector<int>& labels,
                           std::vector<double>* probs_out) {
  double loss = 0.0;
  if (probs_out) probs_out->resize(rows * classes);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* z = logits.data() + r * classes;
    double zmax = z[0];
    for (std::size_t c = 1; c < classes; ++c) zmax = std::max(zmax, z[c]);
    double sum = 0.0;
    for (std::size_t c = 0; c < classes; ++c) sum += std::exp(z[c] - zmax);
    const double log_sum = std::log(sum);
    loss += -(z[static_cast<std::size_t>(labels[r])] - zmax - log_sum);
    if (probs_out) {
      for (std::size_t c = 0; c < classes; ++c) {
        (*probs_out)[r * classes + c] = std::exp(z[c] - zmax) / sum;
      }
    }
  }
  return loss / static_cast<double>(rows);
}

}  // namespace detail

inline ForwardResult forward(const ModelParams& m, const Batch& batch) {
  detail::check_batch(m, batch);
  const std::size_t depth = m.arch.size() - 1;
  std::vector<double> act = batch.inputs;
  for (std::size_t l = 0; l < depth; ++l) {
    act = detail::affine_forward(act, batch.rows, m.layers[2 * l],
                                 m.layers[2 * l + 1], l + 1 < depth);
  }
  ForwardResult res;
  res.rows = batch.rows;
  res.classes = m.class_count();
  res.loss = detail::softmax_xent(act, res.rows, res.classes, batch.labels, nullptr);
  res.logits = std::move(act);
  return res;
}

/// Mean cross-entropy gradient over the batch, shaped like the model.
inline LayerVec backward(const ModelParams& m, const Batch& batch) {
  detail::check_batch(m, batch);
  const std::size_t depth = m.arch.size() - 1;
  const std::size_t rows = batch.rows;

  // Forward pass keeping every activation. acts[0] is the input.
  std::vector<std::vector<double>> acts(depth + 1);
  acts[0] = batch.inputs;
  for (std::size_t l = 0; l < depth; ++l) {
    acts[l + 1] = detail::affine_forward(acts[l], rows, m.layers[2 * l],
                                         m.layers[2 * l + 1], l + 1 < depth);
  }

  std::vector<double> probs;
  detail::softmax_xent(acts[depth], rows, m.class_count(), batch.labels, &probs);

  // dL/dlogits = (softmax - onehot) / rows
  const std::size_t classes = m.class_count();
  std::vector<double> delta = std::move(probs);
  for (std::size_t r = 0; r < rows; ++r) {
    delta[r * classes + static_cast<std::size_t>(batch.labels[r])] -= 1.0;
  }
  const double inv_rows = 1.0 / static_cast<double>(rows);
  for (double& v : delta) v *= inv_rows;

  LayerVec grad = zeros_like(m.layers);
  for (std::size_t l = depth; l-- > 0;) {
    const Tensor& w = m.layers[2 * l];
    const std::size_t in = w.cols;
    const std::size_t out = w.rows;
    Tensor& gw = grad[2 * l];
    Tensor& gb = grad[2 * l + 1];
    for (std::size_t r = 0; r < rows; ++r) {
      const double* d = delta.data() + r * out;
      const double* x = acts[l].data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        double* gwr = gw.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) gwr[i] += d[o] * x[i];
        gb.data[o] += d[o];
      }
    }
    if (l == 0) break;
    // Propagate through the affine map and the tanh of the layer below.
    std::vector<double> prev(rows * in, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double* d = delta.data() + r * out;
      const double* a = acts[l].data() + r * in;
      double* p = prev.data() + r * in;
      for (std::size_t o = 0; o < out; ++o) {
        const double* wr = w.data.data() + o * in;
        for (std::size_t i = 0; i < in; ++i) p[i] += d[o] * wr[i];
      }
      for (std::size_t i = 0; i < in; ++i) p[i] *= 1.0 - a[i] * a[i];
    }
    delta = std::move(prev);
  }
  return grad;
}

inline ModelParams apply_delta(const ModelParams& m, const LayerVec& delta) {
  ModelParams out = m;
  add_scaled(out.layers, delta, 1.0);
  return out;
}

/// Local SGD for one client. Returns the accumulated parameter delta, or
/// nullopt for an empty dataset (the client skips the round). The delta is
/// accumulated directly so a single step is exactly -lr * gradient.
///
/// Batch composition per epoch: indices are shuffled with the given seed,
/// cut into consecutive chunks, and each chunk is visited in ascending
/// sample order. Randomness decides batch membership only; summation order
/// stays canonical.
inline std::optional<LayerVec> local_train(const ModelParams& model,
                                           const Dataset& data, int epochs,
                                           double lr, int batch_size,
                                           std::uint64_t seed) {
  if (epochs < 1) throw ConfigError("local_train: epochs must be >= 1");
  if (!(lr >= 0.0)) throw ConfigError("local_train: lr must be >= 0");
  if (batch_size < 1) throw ConfigError("local_train: batch_size must be >= 1");
  if (data.size() == 0) return std::nullopt;

  LayerVec delta = zeros_like(model.layers);
  DetRng rng(seed);
  std::vector<std::size_t> order(data.size());
  std::iota(order.begin(), order.end(), 0);
  const std::size_t bs = static_cast<std::size_t>(batch_size);
  for (int e = 0; e < epochs; ++e) {
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += bs) {
      const std::size_t stop = std::min(order.size(), start + bs);
      std::vector<std::size_t> idx(order.begin() + start, order.begin() + stop);
      std::sort(idx.begin(), idx.end());
      const Batch b = gather_batch(data, idx);
      const LayerVec grad = backward(apply_delta(model, delta), b);
      add_scaled(delta, grad, -lr);
    }
  }
  return delta;
}

inline void ensure_finite(const LayerVec& layers, const char* what) {
  if (!all_finite(layers)) {
    throw std::runtime_error(std::string("non-finite values in ") + what);
  }
}

}  // namespace pev
