#pragma once

#include <algorithm>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "pev/errors.hpp"
#include "pev/fl.hpp"
#include "pev/rng.hpp"

namespace pev {

/// Synthetic-task parameters; data_csv overrides generation when set.
struct DataConfig {
  int classes = 4;
  int dim = 20;
  int per_class = 250;
  int eval_per_class = 50;
  double spread = 2.5;
  double alpha = 0.5;
  std::uint64_t seed = 7;
  std::string csv_path;
};

struct SweepConfig {
  std::vector<double> sigmas = {0.2, 0.5, 0.8};
  int seeds = 10;
};

struct FullConfig {
  RunConfig run;
  DataConfig data;
  SweepConfig sweep;
  std::string out_dir = "runs";
};

namespace detail {

inline std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

inline double parse_double_value(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const double out = std::strtod(begin, &end);
  if (end == begin || *end != '\0') {
    throw ConfigError("config key '" + key + "': '" + v + "' is not a number");
  }
  return out;
}

inline long long parse_int_value(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const long long out = std::strtoll(begin, &end, 10);
  if (end == begin || *end != '\0') {
    throw ConfigError("config key '" + key + "': '" + v + "' is not an integer");
  }
  return out;
}

inline std::uint64_t parse_u64_value(const std::string& key, const std::string& v) {
  const char* begin = v.c_str();
  char* end = nullptr;
  const unsigned long long out = std::strtoull(begin, &end, 10);
  if (end == begin || *end != '\0') {
    throw ConfigError("config key '" + key + "': '" + v +
                      "' is not a non-negative integer");
  }
  return out;
}

inline std::vector<double> parse_double_list(const std::string& key,
                                             const std::string& v) {
  std::vector<double> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    tok = trim(tok);
    if (!tok.empty()) out.push_back(parse_double_value(key, tok));
  }
  if (out.empty()) throw ConfigError("config key '" + key + "': empty list");
  return out;
}

inline std::string format_full(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

}  // namespace detail

/// Applies one key=value entry. Unknown keys are rejected by name.
inline void apply_config_entry(FullConfig& cfg, const std::string& key,
                               const std::string& value) {
  using detail::parse_double_value;
  using detail::parse_int_value;
  using detail::parse_u64_value;
  if (key == "n_clients") {
    cfg.run.n_clients = static_cast<int>(parse_int_value(key, value));
  } else if (key == "clients_per_round") {
    cfg.run.clients_per_round = static_cast<int>(parse_int_value(key, value));
  } else if (key == "rounds") {
    cfg.run.rounds = static_cast<int>(parse_int_value(key, value));
  } else if (key == "tau") {
    cfg.run.tau = static_cast<int>(parse_int_value(key, value));
  } else if (key == "theta") {
    cfg.run.theta = parse_double_value(key, value);
  } else if (key == "sigma") {
    cfg.run.sigma = parse_double_value(key, value);
  } else if (key == "delta_threshold") {
    if (value == "auto") {
      cfg.run.delta_threshold.reset();
    } else {
      cfg.run.delta_threshold = parse_double_value(key, value);
    }
  } else if (key == "lr") {
    cfg.run.lr = parse_double_value(key, value);
  } else if (key == "batch_size") {
    cfg.run.batch_size = static_cast<int>(parse_int_value(key, value));
  } else if (key == "local_epochs") {
    cfg.run.local_epochs = static_cast<int>(parse_int_value(key, value));
  } else if (key == "fingerprint_epsilon") {
    cfg.run.fingerprint_epsilon = parse_double_value(key, value);
  } else if (key == "master_seed") {
    cfg.run.master_seed = parse_u64_value(key, value);
  } else if (key == "compression") {
    if (value == "lossless") {
      cfg.run.compression = Precision::lossless;
    } else if (value == "half") {
      cfg.run.compression = Precision::half;
    } else {
      throw ConfigError("config key 'compression': expected lossless or half");
    }
  } else if (key == "aggregation") {
    if (value == "received") {
      cfg.run.aggregation = AggregationMode::received;
    } else if (value == "global_n") {
      cfg.run.aggregation = AggregationMode::global_n;
    } else {
      throw ConfigError("config key 'aggregation': expected received or global_n");
    }
  } else if (key == "eval_every") {
    cfg.run.eval_every = static_cast<int>(parse_int_value(key, value));
  } else if (key == "data_classes") {
    cfg.data.classes = static_cast<int>(parse_int_value(key, value));
  } else if (key == "data_dim") {
    cfg.data.dim = static_cast<int>(parse_int_value(key, value));
  } else if (key == "data_per_class") {
    cfg.data.per_class = static_cast<int>(parse_int_value(key, value));
  } else if (key == "data_eval_per_class") {
    cfg.data.eval_per_class = static_cast<int>(parse_int_value(key, value));
  } else if (key == "data_spread") {
    cfg.data.spread = parse_double_value(key, value);
  } else if (key == "data_alpha") {
    cfg.data.alpha = parse_double_value(key, value);
  } else if (key == "data_seed") {
    cfg.data.seed = parse_u64_value(key, value);
  } else if (key == "data_csv") {
    cfg.data.csv_path = value;
  } else if (key == "sweep_sigmas") {
    cfg.sweep.sigmas = detail::parse_double_list(key, value);
  } else if (key == "sweep_seeds") {
    cfg.sweep.seeds = static_cast<int>(parse_int_value(key, value));
  } else if (key == "out_dir") {
    cfg.out_dir = value;
  } else {
    throw ConfigError("unknown config key '" + key + "'");
  }
}

inline void validate_config(const FullConfig& cfg) {
  const RunConfig& r = cfg.run;
  if (r.n_clients < 2) throw ConfigError("n_clients must be >= 2");
  if (r.clients_per_round < 1) throw ConfigError("clients_per_round must be >= 1");
  if (r.clients_per_round > r.n_clients) {
    throw ConfigError("clients_per_round (" + std::to_string(r.clients_per_round) +
                      ") must not exceed n_clients (" +
                      std::to_string(r.n_clients) + ")");
  }
  if (r.rounds < 1) throw ConfigError("rounds must be >= 1");
  if (r.tau < 1) throw ConfigError("tau must be >= 1");
  if (!(r.sigma >= 0.0)) throw ConfigError("sigma must be >= 0");
  if (r.delta_threshold && !(*r.delta_threshold > 0.0)) {
    throw ConfigError("delta_threshold must be > 0 or auto");
  }
  if (!(r.lr >= 0.0)) throw ConfigError("lr must be >= 0");
  if (r.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (r.local_epochs < 1) throw ConfigError("local_epochs must be >= 1");
  if (!(r.fingerprint_epsilon >= 0.0)) {
    throw ConfigError("fingerprint_epsilon must be >= 0");
  }
  if (r.eval_every < 0) throw ConfigError("eval_every must be >= 0");
  const DataConfig& d = cfg.data;
  if (d.csv_path.empty()) {
    if (d.classes < 2) throw ConfigError("data_classes must be >= 2");
    if (d.dim < 2) throw ConfigError("data_dim must be >= 2");
    if (d.per_class < 1) throw ConfigError("data_per_class must be >= 1");
    if (d.eval_per_class < 0) throw ConfigError("data_eval_per_class must be >= 0");
    if (!(d.spread > 0.0)) throw ConfigError("data_spread must be > 0");
  }
  if (!(d.alpha > 0.0)) throw ConfigError("data_alpha must be > 0");
  if (cfg.sweep.seeds < 1) throw ConfigError("sweep_seeds must be >= 1");
  if (cfg.sweep.sigmas.empty()) throw ConfigError("sweep_sigmas must be non-empty");
  for (double s : cfg.sweep.sigmas) {
    if (!(s >= 0.0)) throw ConfigError("sweep_sigmas entries must be >= 0");
  }
}

/// Parses an optional config file plus `key=value` override strings.
/// Overrides win over file entries; everything else keeps its default.
inline FullConfig parse_config(const std::optional<std::filesystem::path>& path,
                               const std::vector<std::string>& overrides = {}) {
  FullConfig cfg;
  if (path) {
    std::ifstream in(*path);
    if (!in) throw ConfigError("cannot open config file: " + path->string());
    std::string line;
    std::size_t line_no = 0;
    std::map<std::string, std::size_t> seen;
    while (std::getline(in, line)) {
      ++line_no;
      const auto hash = line.find('#');
      if (hash != std::string::npos) line = line.substr(0, hash);
      line = detail::trim(line);
      if (line.empty()) continue;
      const auto eq = line.find('=');
      if (eq == std::string::npos) {
        throw ConfigError("config line " + std::to_string(line_no) +
                          ": expected key=value");
      }
      const std::string key = detail::trim(line.substr(0, eq));
      const std::string value = detail::trim(line.substr(eq + 1));
      if (auto it = seen.find(key); it != seen.end()) {
        throw ConfigError("config key '" + key + "' repeated on line " +
                          std::to_string(line_no) + " (first on line " +
                          std::to_string(it->second) + ")");
      }
      seen[key] = line_no;
      apply_config_entry(cfg, key, value);
    }
  }
  for (const std::string& ov : overrides) {
    const auto eq = ov.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("--set expects key=value, got '" + ov + "'");
    }
    apply_config_entry(cfg, detail::trim(ov.substr(0, eq)),
                       detail::trim(ov.substr(eq + 1)));
  }
  validate_config(cfg);
  return cfg;
}

/// Canonical resolved form: every key, sorted, one per line. Written into
/// the run directory so any output is reproducible from its directory.
inline std::string resolved_config_text(const FullConfig& cfg) {
  using detail::format_full;
  std::map<std::string, std::string> kv;
  kv["n_clients"] = std::to_string(cfg.run.n_clients);
  kv["clients_per_round"] = std::to_string(cfg.run.clients_per_round);
  kv["rounds"] = std::to_string(cfg.run.rounds);
  kv["tau"] = std::to_string(cfg.run.tau);
  kv["theta"] = format_full(cfg.run.theta);
  kv["sigma"] = format_full(cfg.run.sigma);
  kv["delta_threshold"] =
      cfg.run.delta_threshold ? format_full(*cfg.run.delta_threshold) : "auto";
  kv["lr"] = format_full(cfg.run.lr);
  kv["batch_size"] = std::to_string(cfg.run.batch_size);
  kv["local_epochs"] = std::to_string(cfg.run.local_epochs);
  kv["fingerprint_epsilon"] = format_full(cfg.run.fingerprint_epsilon);
  kv["master_seed"] = std::to_string(cfg.run.master_seed);
  kv["compression"] =
      cfg.run.compression == Precision::lossless ? "lossless" : "half";
  kv["aggregation"] =
      cfg.run.aggregation == AggregationMode::received ? "received" : "global_n";
  kv["eval_every"] = std::to_string(cfg.run.eval_every);
  kv["data_classes"] = std::to_string(cfg.data.classes);
  kv["data_dim"] = std::to_string(cfg.data.dim);
  kv["data_per_class"] = std::to_string(cfg.data.per_class);
  kv["data_eval_per_class"] = std::to_string(cfg.data.eval_per_class);
  kv["data_spread"] = format_full(cfg.data.spread);
  kv["data_alpha"] = format_full(cfg.data.alpha);
  kv["data_seed"] = std::to_string(cfg.data.seed);
  kv["data_csv"] = cfg.data.csv_path;
  std::string sig;
  for (double s : cfg.sweep.sigmas) {
    if (!sig.empty()) sig += ',';
    sig += format_full(s);
  }
  kv["sweep_sigmas"] = sig;
  kv["sweep_seeds"] = std::to_string(cfg.sweep.seeds);
  kv["out_dir"] = cfg.out_dir;

  std::string out;
  for (const auto& [k, v] : kv) out += k + "=" + v + "\n";
  return out;
}

namespace detail {

inline std::uint64_t hash_text(const std::string& text) {
  std::uint64_t h = fnv1a(text);
  return mix64(h ^ 0x9e3779b97f4a7c15ULL);
}

}  // namespace detail

/// Hash over the full resolved config.
inline std::uint64_t config_hash(const FullConfig& cfg) {
  return detail::hash_text(resolved_config_text(cfg));
}

/// Hash over only the keys that determine the training trajectory and the
/// dataset. sigma, delta_threshold, compression, eval_every, sweep_* and
/// out_dir are excluded so unlearn/verify runs with different unlearn-time
/// settings can locate and reuse the training artifacts.
inline std::uint64_t train_hash(const FullConfig& cfg) {
  using detail::format_full;
  std::string text;
  text += "n_clients=" + std::to_string(cfg.run.n_clients) + "\n";
  text += "clients_per_round=" + std::to_string(cfg.run.clients_per_round) + "\n";
  text += "rounds=" + std::to_string(cfg.run.rounds) + "\n";
  text += "tau=" + std::to_string(cfg.run.tau) + "\n";
  text += "theta=" + format_full(cfg.run.theta) + "\n";
  text += "lr=" + format_full(cfg.run.lr) + "\n";
  text += "batch_size=" + std::to_string(cfg.run.batch_size) + "\n";
  text += "local_epochs=" + std::to_string(cfg.run.local_epochs) + "\n";
  text += "fingerprint_epsilon=" + format_full(cfg.run.fingerprint_epsilon) + "\n";
  text += "master_seed=" + std::to_string(cfg.run.master_seed) + "\n";
  text += std::string("aggregation=") +
          (cfg.run.aggregation == AggregationMode::received ? "received"
                                                            : "global_n") +
          "\n";
  text += "data_classes=" + std::to_string(cfg.data.classes) + "\n";
  text += "data_dim=" + std::to_string(cfg.data.dim) + "\n";
  text += "data_per_class=" + std::to_string(cfg.data.per_class) + "\n";
  text += "data_eval_per_class=" + std::to_string(cfg.data.eval_per_class) + "\n";
  text += "data_spread=" + format_full(cfg.data.spread) + "\n";
  text += "data_alpha=" + format_full(cfg.data.alpha) + "\n";
  text += "data_seed=" + std::to_string(cfg.data.seed) + "\n";
  text += "data_csv=" + cfg.data.csv_path + "\n";
  return detail::hash_text(text);
}

inline std::string hash_hex(std::uint64_t h) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << h;
  return os.str();
}

}  // namespace pev
