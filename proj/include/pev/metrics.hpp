#pragma once

#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pev/data.hpp"
#include "pev/errors.hpp"
#include "pev/model.hpp"

namespace pev {

/// Fraction of argmax-correct predictions; ties break to the lowest class.
inline double accuracy(const ModelParams& m, const Dataset& data) {
  if (data.size() == 0) throw ConfigError("accuracy: empty dataset");
  const ForwardResult res = forward(m, full_batch(data));
  std::size_t correct = 0;
  for (std::size_t r = 0; r < res.rows; ++r) {
    const double* z = res.logits.data() + r * res.classes;
    std::size_t best = 0;
    for (std::size_t c = 1; c < res.classes; ++c) {
      if (z[c] > z[best]) best = c;
    }
    if (best == static_cast<std::size_t>(data.labels[r])) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(res.rows);
}

/// One sweep measurement. Drops are percentage points against the retrain
/// oracle run with the same seed.
struct SweepRow {
  std::string method;  // pev | uniform_dp | retrain | calibration_only
  double sigma = 0.0;
  int seed = 0;
  double accuracy = 0.0;
  double accuracy_drop_pct = 0.0;
  std::int64_t wall_time_ms = 0;
  std::optional<bool> verified;
};

namespace detail {

/// Shortest decimal form that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace detail

inline constexpr const char* kSweepCsvHeader =
    "method,sigma,seed,accuracy,accuracy_drop_pct,wall_time_ms,verified";

inline std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << kSweepCsvHeader << "\n";
  for (const SweepRow& r : rows) {
    os << r.method << ',' << detail::format_double(r.sigma) << ',' << r.seed
       << ',' << detail::format_double(r.accuracy) << ','
       << detail::format_double(r.accuracy_drop_pct) << ',' << r.wall_time_ms
       << ',';
    if (r.verified.has_value()) os << (*r.verified ? "true" : "false");
    os << "\n";
  }
  return os.str();
}

struct MethodTiming {
  std::string method;
  double mean_ms = 0.0;
  double std_ms = 0.0;
  std::size_t runs = 0;
  double speedup_vs_retrain = 0.0;  // retrain mean / method mean
};

/// Per-method wall-time aggregate (mean, population std) plus the speedup
/// ratio against the retrain rows.
inline std::vector<MethodTiming> timing_report(const std::vector<SweepRow>& rows) {
  std::vector<MethodTiming> out;
  for (const SweepRow& r : rows) {
    MethodTiming* slot = nullptr;
    for (MethodTiming& t : out) {
      if (t.method == r.method) slot = &t;
    }
    if (!slot) {
      out.push_back(MethodTiming{r.method, 0.0, 0.0, 0, 0.0});
      slot = &out.back();
    }
    slot->mean_ms += static_cast<double>(r.wall_time_ms);
    slot->runs += 1;
  }
  for (MethodTiming& t : out) t.mean_ms /= static_cast<double>(t.runs);
  for (MethodTiming& t : out) {
    double ss = 0.0;
    for (const SweepRow& r : rows) {
      if (r.method != t.method) continue;
      const double d = static_cast<double>(r.wall_time_ms) - t.mean_ms;
      ss += d * d;
    }
    t.std_ms = std::sqrt(ss / static_cast<double>(t.runs));
  }
  double retrain_mean = 0.0;
  for (const MethodTiming& t : out) {
    if (t.method == "retrain") retrain_mean = t.mean_ms;
  }
  for (MethodTiming& t : out) {
    t.speedup_vs_retrain = (t.mean_ms > 0.0) ? retrain_mean / t.mean_ms : 0.0;
  }
  return out;
}

/// Paper-scale reference ratios quoted as context in reports; never asserted.
inline constexpr const char* kTimingFootnote =
    "reference: published unlearning-vs-retrain ratios at paper scale were "
    "1807/993 ~= 1.82 and 1452/475 ~= 3.06";

}  // namespace pev
