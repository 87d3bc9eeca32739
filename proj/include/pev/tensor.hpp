#pragma once

#include <cmath>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pev {

/// One parameter tensor: a weight matrix (rows x cols, row-major) or a bias
/// vector (cols == 1).
struct Tensor {
  std::size_t rows = 0;
  std::size_t cols = 1;
  std::vector<double> data;

  static Tensor zeros(std::size_t r, std::size_t c) {
    return Tensor{r, c, std::vector<double>(r * c, 0.0)};
  }

  std::size_t size() const noexcept { return data.size(); }

  double& at(std::size_t r, std::size_t c) noexcept { return data[r * cols + c]; }
  double at(std::size_t r, std::size_t c) const noexcept {
    return data[r * cols + c];
  }
};

/// Ordered list of parameter tensors. Every sensitivity and noise operation
/// indexes layers at this granularity: each weight matrix and each bias is
/// its own layer.
using LayerVec = std::vector<Tensor>;

inline std::size_t total_dim(const LayerVec& layers) noexcept {
  std::size_t n = 0;
  for (const Tensor& t : layers) n += t.size();
  return n;
}

inline LayerVec zeros_like(const LayerVec& layers) {
  LayerVec out;
  out.reserve(layers.size());
  for (const Tensor& t : layers) out.push_back(Tensor::zeros(t.rows, t.cols));
  return out;
}

inline bool same_shape(const LayerVec& a, const LayerVec& b) noexcept {
  if (a.size() != b.size()) return false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].rows != b[i].rows || a[i].cols != b[i].cols) return false;
  }
  return true;
}

/// dst += scale * src, coordinatewise.
inline void add_scaled(LayerVec& dst, const LayerVec& src, double scale) {
  if (!same_shape(dst, src)) throw std::invalid_argument("layer shape mismatch");
  for (std::size_t i = 0; i < dst.size(); ++i) {
    const std::vector<double>& s = src[i].data;
    std::vector<double>& d = dst[i].data;
    for (std::size_t j = 0; j < d.size(); ++j) d[j] += scale * s[j];
  }
}

inline std::vector<double> flatten(const LayerVec& layers) {
  std::vector<double> out;
  out.reserve(total_dim(layers));
  for (const Tensor& t : layers) out.insert(out.end(), t.data.begin(), t.data.end());
  return out;
}

/// Reassembles a flat vector into the shape of `like`.
inline LayerVec unflatten(const std::vector<double>& flat, const LayerVec& like) {
  if (flat.size() != total_dim(like)) {
    throw std::invalid_argument("flat size does not match layer shapes");
  }
  LayerVec out = zeros_like(like);
  std::size_t offset = 0;
  for (Tensor& t : out) {
    for (std::size_t j = 0; j < t.size(); ++j) t.data[j] = flat[offset + j];
    offset += t.size();
  }
  return out;
}

inline bool all_finite(const LayerVec& layers) noexcept {
  for (const Tensor& t : layers) {
    for (double v : t.data) {
      if (!std::isfinite(v)) return false;
    }
  }
  return true;
}

}  // namespace pev
