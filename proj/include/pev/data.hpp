#pragma once

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "pev/errors.hpp"
#include "pev/rng.hpp"

namespace pev {

/// Labeled classification samples, row-major inputs.
struct Dataset {
  std::size_t dim = 0;
  int class_count = 0;
  std::vector<double> inputs;  // size() x dim
  std::vector<int> labels;

  std::size_t size() const noexcept { return labels.size(); }
  const double* row(std::size_t i) const noexcept { return inputs.data() + i * dim; }
};

struct PartitionSpec {
  int n_clients = 2;
  double dirichlet_alpha = 0.5;
  std::uint64_t seed = 0;
};

namespace detail {

// Gaussian class centers; the scale keeps classes separable at spread 1.
inline constexpr double kBlobCenterScale = 2.5;

}  // namespace detail

/// Isotropic Gaussian blobs around seeded class centers, plus an optional
/// held-out split drawn from the same centers. Samples are class-major.
inline std::pair<Dataset, Dataset> make_blobs_split(int classes, int dim,
                                                    int per_class_train,
                                                    int per_class_eval,
                                                    double spread,
                                                    std::uint64_t seed) {
  if (classes < 2) throw ConfigError("make_blobs: classes must be >= 2");
  if (dim < 2) throw ConfigError("make_blobs: dim must be >= 2");
  if (per_class_train < 1) throw ConfigError("make_blobs: per_class must be >= 1");
  if (per_class_eval < 0) throw ConfigError("make_blobs: eval per_class must be >= 0");
  if (!(spread > 0.0)) throw ConfigError("make_blobs: spread must be > 0");

  DetRng center_rng(derive_seed(seed, "blob-centers"));
  std::vector<double> centers(static_cast<std::size_t>(classes) * dim);
  for (double& v : centers) v = detail::kBlobCenterScale * center_rng.next_gaussian();

  Dataset train;
  train.dim = static_cast<std::size_t>(dim);
  train.class_count = classes;
  Dataset eval = train;

  DetRng sample_rng(derive_seed(seed, "blob-samples"));
  auto emit = [&](Dataset& out, int c) {
    const double* center = centers.data() + static_cast<std::size_t>(c) * dim;
    for (int k = 0; k < dim; ++k) {
      out.inputs.push_back(center[k] + spread * sample_rng.next_gaussian());
    }
    out.labels.push_back(c);
  };
  for (int c = 0; c < classes; ++c) {
    for (int i = 0; i < per_class_train; ++i) emit(train, c);
    for (int i = 0; i < per_class_eval; ++i) emit(eval, c);
  }
  return {std::move(train), std::move(eval)};
}

inline Dataset make_blobs(int classes, int dim, int per_class, double spread,
                          std::uint64_t seed) {
  return make_blobs_split(classes, dim, per_class, 0, spread, seed).first;
}

namespace detail {

// Integer quotas from proportions by largest remainder; ties to lower index.
inline std::vector<std::size_t> quota_round(const std::vector<double>& props,
                                            std::size_t total) {
  const std::size_t n = props.size();
  std::vector<std::size_t> quota(n);
  std::vector<std::pair<double, std::size_t>> rema(n);
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < n; ++i) {
    const double exact = props[i] * static_cast<double>(total);
    quota[i] = static_cast<std::size_t>(exact);
    rema[i] = {exact - static_cast<double>(quota[i]), i};
    assigned += quota[i];
  }
  std::sort(rema.begin(), rema.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first > b.first;
    return a.second < b.second;
  });
  for (std::size_t k = 0; assigned < total; ++k, ++assigned) {
    quota[rema[k % n].second] += 1;
  }
  return quota;
}

}  // namespace detail

/// Dirichlet label-skew partition: per class, client proportions are drawn
/// from Dir(alpha) and the class's samples are sliced by quota. Shards are
/// disjoint, cover the dataset, and every client gets at least one sample
/// (proportions are re-drawn a bounded number of times, then singles are
/// moved from the largest shards).
inline std::vector<Dataset> partition_dirichlet(const Dataset& data,
                                                const PartitionSpec& spec) {
  if (spec.n_clients < 2) throw ConfigError("partition: n_clients must be >= 2");
  if (!(spec.dirichlet_alpha > 0.0)) {
    throw ConfigError("partition: dirichlet_alpha must be > 0");
  }
  const std::size_t n = data.size();
  const std::size_t clients = static_cast<std::size_t>(spec.n_clients);
  if (n < clients) {
    throw ConfigError("partition: dataset smaller than n_clients (" +
                      std::to_string(n) + " < " + std::to_string(clients) + ")");
  }

  std::vector<std::vector<std::size_t>> by_class(
      static_cast<std::size_t>(data.class_count));
  for (std::size_t i = 0; i < n; ++i) {
    by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);
  }

  std::vector<std::vector<std::size_t>> assign;
  for (int attempt = 0; attempt < 20; ++attempt) {
    DetRng rng(derive_seed(spec.seed, "dirichlet", attempt));
    assign.assign(clients, {});
    for (auto& idxs : by_class) {
      std::vector<std::size_t> shuffled = idxs;
      rng.shuffle(shuffled);
      std::vector<double> props(clients);
      double sum = 0.0;
      for (double& p : props) {
        p = rng.next_gamma(spec.dirichlet_alpha);
        sum += p;
      }
      for (double& p : props) p /= sum;
      const std::vector<std::size_t> quota = detail::quota_round(props, idxs.size());
      std::size_t cursor = 0;
      for (std::size_t c = 0; c < clients; ++c) {
        for (std::size_t k = 0; k < quota[c]; ++k) {
          assign[c].push_back(shuffled[cursor++]);
        }
      }
    }
    const bool ok = std::all_of(assign.begin(), assign.end(),
                                [](const auto& a) { return !a.empty(); });
    if (ok) break;
  }

  // Bounded retries exhausted: move one sample from the largest shard to
  // each still-empty client.
  for (std::size_t c = 0; c < clients; ++c) {
    if (!assign[c].empty()) continue;
    std::size_t donor = 0;
    for (std::size_t k = 1; k < clients; ++k) {
      if (assign[k].size() > assign[donor].size()) donor = k;
    }
    assign[c].push_back(assign[donor].back());
    assign[donor].pop_back();
  }

  std::vector<Dataset> shards(clients);
  for (std::size_t c = 0; c < clients; ++c) {
    std::sort(assign[c].begin(), assign[c].end());
    Dataset& shard = shards[c];
    shard.dim = data.dim;
    shard.class_count = data.class_count;
    shard.inputs.reserve(assign[c].size() * data.dim);
    shard.labels.reserve(assign[c].size());
    for (std::size_t i : assign[c]) {
      shard.inputs.insert(shard.inputs.end(), data.row(i), data.row(i) + data.dim);
      shard.labels.push_back(data.labels[i]);
    }
  }
  return shards;
}

namespace detail {

inline bool parse_double_token(const std::string& tok, double& out) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  out = std::strtod(begin, &end);
  return end != begin && *end == '\0';
}

inline bool parse_label_token(const std::string& tok, int& out) {
  const char* begin = tok.c_str();
  char* end = nullptr;
  const long v = std::strtol(begin, &end, 10);
  if (end == begin || *end != '\0' || v < 0) return false;
  out = static_cast<int>(v);
  return true;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string cur;
  for (char ch : line) {
    if (ch == ',') {
      fields.push_back(cur);
      cur.clear();
    } else if (ch != '\r') {
      cur += ch;
    }
  }
  fields.push_back(cur);
  for (std::string& f : fields) {
    const auto b = f.find_first_not_of(" \t");
    const auto e = f.find_last_not_of(" \t");
    f = (b == std::string::npos) ? std::string() : f.substr(b, e - b + 1);
  }
  return fields;
}

}  // namespace detail

/// Reads `label,feature,...` rows of constant width. A header row is
/// detected by a non-numeric first field and skipped. Errors name the
/// offending 1-based file line.
inline Dataset load_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open dataset file: " + path.string());

  Dataset out;
  std::string line;
  std::size_t line_no = 0;
  std::size_t width = 0;  // feature count
  bool first_content_line = true;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    const std::vector<std::string> fields = detail::split_csv_line(line);
    int label = 0;
    if (first_content_line && !detail::parse_label_token(fields[0], label)) {
      first_content_line = false;  // header row
      continue;
    }
    first_content_line = false;
    if (!detail::parse_label_token(fields[0], label)) {
      throw ConfigError("csv line " + std::to_string(line_no) +
                        ": label is not a non-negative integer");
    }
    if (fields.size() < 2) {
      throw ConfigError("csv line " + std::to_string(line_no) + ": no features");
    }
    if (width == 0) {
      width = fields.size() - 1;
    } else if (fields.size() - 1 != width) {
      throw ConfigError("csv line " + std::to_string(line_no) + ": expected " +
                        std::to_string(width) + " features, got " +
                        std::to_string(fields.size() - 1));
    }
    for (std::size_t k = 1; k < fields.size(); ++k) {
      double v = 0.0;
      if (!detail::parse_double_token(fields[k], v)) {
        throw ConfigError("csv line " + std::to_string(line_no) + ": field " +
                          std::to_string(k + 1) + " is not numeric");
      }
      out.inputs.push_back(v);
    }
    out.labels.push_back(label);
    out.class_count = std::max(out.class_count, label + 1);
  }
  if (out.labels.empty()) throw ConfigError("empty dataset: " + path.string());
  out.dim = width;

  std::vector<std::size_t> per_class(static_cast<std::size_t>(out.class_count), 0);
  for (int l : out.labels) per_class[static_cast<std::size_t>(l)] += 1;
  for (std::size_t c = 0; c < per_class.size(); ++c) {
    if (per_class[c] == 0) {
      throw ConfigError("csv dataset: class " + std::to_string(c) +
                        " has no samples");
    }
  }
  return out;
}

}  // namespace pev
