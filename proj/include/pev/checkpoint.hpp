#pragma once

#include <bit>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <string>
#include <vector>

#include "pev/errors.hpp"
#include "pev/model.hpp"
#include "pev/tensor.hpp"

namespace pev {

enum class Precision : std::uint8_t { lossless = 0, half = 1 };

/// One retained round: the broadcast model of that round plus every client
/// update the server received, as aggregated.
struct Checkpoint {
  int round = 0;
  double variance = 0.0;
  Precision precision = Precision::lossless;
  ModelParams w;
  std::vector<ClientUpdate> updates;  // ascending client id
};

struct CheckpointStore {
  std::vector<std::size_t> arch;
  std::uint64_t config_hash = 0;
  std::vector<Checkpoint> checkpoints;  // ascending round

  std::size_t size() const noexcept { return checkpoints.size(); }
};

/// Mean over all coordinates of the population variance of that coordinate
/// across clients. A single update has zero variance.
inline double update_variance(const std::vector<ClientUpdate>& updates) {
  if (updates.empty()) throw ConfigError("update_variance: no updates");
  const std::size_t c = updates.size();
  const std::size_t d = total_dim(updates[0].delta);
  double total = 0.0;
  const std::size_t layer_count = updates[0].delta.size();
  for (std::size_t l = 0; l < layer_count; ++l) {
    const std::size_t n = updates[0].delta[l].size();
    for (std::size_t j = 0; j < n; ++j) {
      double mean = 0.0;
      for (std::size_t i = 0; i < c; ++i) mean += updates[i].delta[l].data[j];
      mean /= static_cast<double>(c);
      double var = 0.0;
      for (std::size_t i = 0; i < c; ++i) {
        const double dv = updates[i].delta[l].data[j] - mean;
        var += dv * dv;
      }
      total += var / static_cast<double>(c);
    }
  }
  return total / static_cast<double>(d);
}

/// Algorithm gate: a checkpoint is retained iff the round hits the interval
/// and the update variance strictly exceeds theta. Off-interval rounds do
/// not even compute the variance.
inline std::optional<Checkpoint> maybe_checkpoint(
    int t, int tau, double theta, const ModelParams& w,
    const std::vector<ClientUpdate>& updates,
    Precision precision = Precision::lossless) {
  if (t < 1) throw ConfigError("maybe_checkpoint: round must be >= 1");
  if (tau < 1) throw ConfigError("maybe_checkpoint: tau must be >= 1");
  if (t % tau != 0) return std::nullopt;
  const double v = update_variance(updates);
  if (!(v > theta)) return std::nullopt;
  Checkpoint ck;
  ck.round = t;
  ck.variance = v;
  ck.precision = precision;
  ck.w = w;
  ck.updates = updates;
  return ck;
}

// ---------------------------------------------------------------------------
// Binary container. Little-endian throughout.
//
//   magic   "PEVC"
//   u32     version (1)
//   u32     arch count, then u32 per width
//   u64     config hash
//   u32     checkpoint count
//   per checkpoint:
//     u32   round
//     f64   variance
//     u16   client count, then u16 per client id (ascending)
//     u8    precision (0 = binary64, 1 = binary16)
//     tensors: w_t layers, then each client's delta layers, row-major,
//              encoded per the precision flag
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint16_t f64_to_f16(double v) noexcept {
  const std::uint64_t bits = std::bit_cast<std::uint64_t>(v);
  const std::uint16_t sign = static_cast<std::uint16_t>((bits >> 48) & 0x8000u);
  const int exp_field = static_cast<int>((bits >> 52) & 0x7ff);
  const std::uint64_t mant = bits & 0xfffffffffffffULL;
  if (exp_field == 0x7ff) {  // inf or nan
    return static_cast<std::uint16_t>(sign | 0x7c00u | (mant ? 0x200u : 0u));
  }
  if (exp_field == 0) return sign;  // zero and double subnormals round to zero
  const int e = exp_field - 1023;
  if (e > 15) return static_cast<std::uint16_t>(sign | 0x7c00u);
  const std::uint64_t sig = (1ULL << 52) | mant;  // 53-bit significand
  int shift = 42;                                 // keep 11 bits for normals
  std::uint32_t out_exp = 0;
  if (e >= -14) {
    out_exp = static_cast<std::uint32_t>(e + 15);
  } else {
    shift += -14 - e;
    if (shift > 63) return sign;
  }
  const std::uint64_t halfway = 1ULL << (shift - 1);
  const std::uint64_t dropped = sig & ((halfway << 1) - 1);
  std::uint64_t kept = sig >> shift;
  if (dropped > halfway || (dropped == halfway && (kept & 1))) kept += 1;
  if (out_exp > 0) {
    if (kept & (1ULL << 11)) {  // rounding carried into the exponent
      kept >>= 1;
      out_exp += 1;
    }
    if (out_exp >= 31) return static_cast<std::uint16_t>(sign | 0x7c00u);
    return static_cast<std::uint16_t>(sign | (out_exp << 10) | (kept & 0x3ffu));
  }
  // Subnormal result; a carry into bit 10 lands on the smallest normal.
  return static_cast<std::uint16_t>(sign | kept);
}

inline double f16_to_f64(std::uint16_t h) noexcept {
  const bool neg = (h & 0x8000u) != 0;
  const int exp_field = (h >> 10) & 0x1f;
  const int mant = h & 0x3ff;
  double v = 0.0;
  if (exp_field == 0) {
    v = std::ldexp(static_cast<double>(mant), -24);
  } else if (exp_field == 31) {
    v = mant ? std::numeric_limits<double>::quiet_NaN()
             : std::numeric_limits<double>::infinity();
  } else {
    v = std::ldexp(static_cast<double>(mant | 0x400), exp_field - 25);
  }
  return neg ? -v : v;
}

class ByteWriter {
 public:
  explicit ByteWriter(std::ostream& out) : out_(out) {}

  void u8(std::uint8_t v) { raw(&v, 1); }
  void u16(std::uint16_t v) {
    std::uint8_t b[2] = {static_cast<std::uint8_t>(v),
                         static_cast<std::uint8_t>(v >> 8)};
    raw(b, 2);
  }
  void u32(std::uint32_t v) {
    std::uint8_t b[4];
    for (int i = 0; i < 4; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    raw(b, 4);
  }
  void u64(std::uint64_t v) {
    std::uint8_t b[8];
    for (int i = 0; i < 8; ++i) b[i] = static_cast<std::uint8_t>(v >> (8 * i));
    raw(b, 8);
  }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

 private:
  void raw(const void* p, std::size_t n) {
    out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
  }
  std::ostream& out_;
};

class ByteReader {
 public:
  ByteReader(std::istream& in, std::string name)
      : in_(in), name_(std::move(name)) {}

  std::uint8_t u8() {
    std::uint8_t v = 0;
    raw(&v, 1);
    return v;
  }
  std::uint16_t u16() {
    std::uint8_t b[2];
    raw(b, 2);
    return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
  }
  std::uint32_t u32() {
    std::uint8_t b[4];
    raw(b, 4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64() {
    std::uint8_t b[8];
    raw(b, 8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  double f64() { return std::bit_cast<double>(u64()); }

  bool at_eof() {
    in_.peek();
    return in_.eof();
  }

 private:
  void raw(void* p, std::size_t n) {
    in_.read(static_cast<char*>(p), static_cast<std::streamsize>(n));
    if (in_.gcount() != static_cast<std::streamsize>(n)) {
      throw IoError("truncated checkpoint file: " + name_);
    }
  }
  std::istream& in_;
  std::string name_;
};

inline void write_layers(ByteWriter& w, const LayerVec& layers, Precision p) {
  for (const Tensor& t : layers) {
    for (double v : t.data) {
      if (p == Precision::lossless) {
        w.f64(v);
      } else {
        w.u16(f64_to_f16(v));
      }
    }
  }
}

inline LayerVec read_layers(ByteReader& r, const LayerVec& shape, Precision p) {
  LayerVec out = zeros_like(shape);
  for (Tensor& t : out) {
    for (double& v : t.data) {
      v = (p == Precision::lossless) ? r.f64() : f16_to_f64(r.u16());
    }
  }
  return out;
}

inline LayerVec layers_for_arch(const std::vector<std::size_t>& arch) {
  LayerVec shape;
  for (std::size_t l = 0; l + 1 < arch.size(); ++l) {
    shape.push_back(Tensor::zeros(arch[l + 1], arch[l]));
    shape.push_back(Tensor::zeros(arch[l + 1], 1));
  }
  return shape;
}

}  // namespace detail

inline constexpr std::uint32_t kStoreVersion = 1;

inline void save(const CheckpointStore& store, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint file: " + path.string());
  detail::ByteWriter w(out);
  out.write("PEVC", 4);
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(store.arch.size()));
  for (std::size_t width : store.arch) w.u32(static_cast<std::uint32_t>(width));
  w.u64(store.config_hash);
  w.u32(static_cast<std::uint32_t>(store.checkpoints.size()));
  for (const Checkpoint& ck : store.checkpoints) {
    w.u32(static_cast<std::uint32_t>(ck.round));
    w.f64(ck.variance);
    w.u16(static_cast<std::uint16_t>(ck.updates.size()));
    for (const ClientUpdate& u : ck.updates) {
      w.u16(static_cast<std::uint16_t>(u.client_id));
    }
    w.u8(static_cast<std::uint8_t>(ck.precision));
    detail::write_layers(w, ck.w.layers, ck.precision);
    for (const ClientUpdate& u : ck.updates) {
      detail::write_layers(w, u.delta, ck.precision);
    }
  }
  if (!out) throw IoError("write failed: " + path.string());
}

inline CheckpointStore load(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path.string());
  detail::ByteReader r(in, path.string());
  char magic[4];
  in.read(magic, 4);
  if (in.gcount() != 4 || std::string(magic, 4) != "PEVC") {
    throw IoError("not a PEV checkpoint file: " + path.string());
  }
  const std::uint32_t version = r.u32();
  if (version != kStoreVersion) {
    throw IoError("unsupported checkpoint version " + std::to_string(version) +
                  " in " + path.string());
  }
  CheckpointStore store;
  const std::uint32_t arch_count = r.u32();
  if (arch_count < 2 || arch_count > 64) {
    throw IoError("corrupt arch metadata in " + path.string());
  }
  for (std::uint32_t i = 0; i < arch_count; ++i) store.arch.push_back(r.u32());
  store.config_hash = r.u64();
  const LayerVec shape = detail::layers_for_arch(store.arch);
  const std::uint32_t count = r.u32();
  int prev_round = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    Checkpoint ck;
    ck.round = static_cast<int>(r.u32());
    if (ck.round <= prev_round) {
      throw IoError("checkpoint rounds not strictly increasing in " +
                    path.string());
    }
    prev_round = ck.round;
    ck.variance = r.f64();
    const std::uint16_t clients = r.u16();
    std::vector<int> ids(clients);
    for (std::uint16_t c = 0; c < clients; ++c) ids[c] = r.u16();
    const std::uint8_t prec = r.u8();
    if (prec > 1) throw IoError("bad precision flag in " + path.string());
    ck.precision = static_cast<Precision>(prec);
    ck.w.arch = store.arch;
    ck.w.layers = detail::read_layers(r, shape, ck.precision);
    for (std::uint16_t c = 0; c < clients; ++c) {
      ClientUpdate u;
      u.client_id = ids[c];
      u.round = ck.round;
      u.delta = detail::read_layers(r, shape, ck.precision);
      ck.updates.push_back(std::move(u));
    }
    store.checkpoints.push_back(std::move(ck));
  }
  if (!r.at_eof()) {
    throw IoError("trailing bytes after last checkpoint in " + path.string());
  }
  return store;
}

}  // namespace pev
