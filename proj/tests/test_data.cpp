#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "pev/data.hpp"

using namespace pev;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::trunc);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("blob counts and determinism") {
  const Dataset a = make_blobs(4, 5, 250, 1.0, 99);
  REQUIRE(a.size() == 1000);
  REQUIRE(a.dim == 5);
  REQUIRE(a.class_count == 4);
  const Dataset b = make_blobs(4, 5, 250, 1.0, 99);
  REQUIRE(a.inputs == b.inputs);
  REQUIRE(a.labels == b.labels);
  const Dataset c = make_blobs(4, 5, 250, 1.0, 100);
  REQUIRE(a.inputs != c.inputs);
}

TEST_CASE("vanishing spread collapses samples onto their centroids") {
  const Dataset d = make_blobs(3, 4, 40, 1e-9, 7);
  // Centroid per class from the data itself; nearest-centroid must be exact.
  std::vector<std::vector<double>> centroid(3, std::vector<double>(4, 0.0));
  std::vector<int> count(3, 0);
  for (std::size_t i = 0; i < d.size(); ++i) {
    const int y = d.labels[i];
    count[static_cast<std::size_t>(y)] += 1;
    for (std::size_t k = 0; k < 4; ++k) {
      centroid[static_cast<std::size_t>(y)][k] += d.row(i)[k];
    }
  }
  for (int c = 0; c < 3; ++c) {
    for (std::size_t k = 0; k < 4; ++k) {
      centroid[static_cast<std::size_t>(c)][k] /= count[static_cast<std::size_t>(c)];
    }
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < d.size(); ++i) {
    int best = 0;
    double best_d2 = 1e300;
    for (int c = 0; c < 3; ++c) {
      double d2 = 0.0;
      for (std::size_t k = 0; k < 4; ++k) {
        const double diff = d.row(i)[k] - centroid[static_cast<std::size_t>(c)][k];
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = c;
      }
    }
    if (best == d.labels[i]) ++correct;
  }
  REQUIRE(correct == d.size());
}

TEST_CASE("make_blobs rejects bad arguments") {
  REQUIRE_THROWS_AS(make_blobs(1, 5, 10, 1.0, 1), ConfigError);
  REQUIRE_THROWS_AS(make_blobs(3, 1, 10, 1.0, 1), ConfigError);
  REQUIRE_THROWS_AS(make_blobs(3, 5, 0, 1.0, 1), ConfigError);
  REQUIRE_THROWS_AS(make_blobs(3, 5, 10, 0.0, 1), ConfigError);
}

TEST_CASE("split shares centers with the plain generator") {
  const auto [train, eval] = make_blobs_split(3, 4, 20, 10, 0.5, 5);
  REQUIRE(train.size() == 60);
  REQUIRE(eval.size() == 30);
  const Dataset plain = make_blobs(3, 4, 20, 0.5, 5);
  REQUIRE(train.dim == plain.dim);
}

TEST_CASE("dirichlet partition covers the dataset with disjoint shards") {
  const Dataset data = make_blobs(4, 3, 100, 1.0, 11);
  for (double alpha : {0.1, 0.5, 5.0}) {
    for (std::uint64_t seed : {1ULL, 2ULL, 3ULL}) {
      const auto shards = partition_dirichlet(data, PartitionSpec{7, alpha, seed});
      REQUIRE(shards.size() == 7);
      std::size_t total = 0;
      for (const Dataset& s : shards) {
        REQUIRE(s.size() >= 1);
        REQUIRE(s.dim == data.dim);
        REQUIRE(s.class_count == data.class_count);
        total += s.size();
      }
      REQUIRE(total == data.size());
      // Disjointness: every (inputs row, label) of the original appears
      // exactly once across shards. Rows are real-valued, so multiset of
      // first coordinates is a sufficient fingerprint.
      std::multiset<double> orig;
      std::multiset<double> got;
      for (std::size_t i = 0; i < data.size(); ++i) orig.insert(data.row(i)[0]);
      for (const Dataset& s : shards) {
        for (std::size_t i = 0; i < s.size(); ++i) got.insert(s.row(i)[0]);
      }
      REQUIRE(orig == got);
    }
  }
}

TEST_CASE("partition is deterministic in the seed") {
  const Dataset data = make_blobs(3, 3, 60, 1.0, 21);
  const auto a = partition_dirichlet(data, PartitionSpec{5, 0.5, 9});
  const auto b = partition_dirichlet(data, PartitionSpec{5, 0.5, 9});
  for (std::size_t c = 0; c < a.size(); ++c) {
    REQUIRE(a[c].inputs == b[c].inputs);
    REQUIRE(a[c].labels == b[c].labels);
  }
}

TEST_CASE("huge alpha approaches the global label proportions") {
  // Monte Carlo over 20 seeds: every client's label histogram stays within
  // 5 percentage points of the global proportions.
  const Dataset data = make_blobs(4, 3, 250, 1.0, 31);
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const auto shards = partition_dirichlet(data, PartitionSpec{5, 1e6, seed});
    for (const Dataset& s : shards) {
      std::vector<double> hist(4, 0.0);
      for (int y : s.labels) hist[static_cast<std::size_t>(y)] += 1.0;
      for (double& h : hist) h /= static_cast<double>(s.size());
      for (double h : hist) REQUIRE(std::abs(h - 0.25) <= 0.05);
    }
  }
}

TEST_CASE("partition rejects infeasible requests") {
  const Dataset data = make_blobs(2, 3, 2, 1.0, 41);  // 4 samples
  REQUIRE_THROWS_AS(partition_dirichlet(data, PartitionSpec{5, 0.5, 1}),
                    ConfigError);
  REQUIRE_THROWS_AS(partition_dirichlet(data, PartitionSpec{1, 0.5, 1}),
                    ConfigError);
  REQUIRE_THROWS_AS(partition_dirichlet(data, PartitionSpec{2, 0.0, 1}),
                    ConfigError);
}

TEST_CASE("csv round trip with header detection") {
  const auto path = write_temp("pev_ok.csv",
                               "label,f1,f2,f3\n"
                               "0,1.5,2.5,3.5\n"
                               "1,-1,0.25,2e-3\n");
  const Dataset d = load_csv(path);
  REQUIRE(d.size() == 2);
  REQUIRE(d.dim == 3);
  REQUIRE(d.class_count == 2);
  REQUIRE(d.row(1)[2] == Catch::Approx(2e-3));
}

TEST_CASE("csv error paths name the offending line") {
  REQUIRE_THROWS_AS(load_csv("/nonexistent/nope.csv"), IoError);

  const auto empty = write_temp("pev_empty.csv", "");
  REQUIRE_THROWS_WITH(load_csv(empty), Catch::Matchers::ContainsSubstring("empty dataset"));

  const auto ragged = write_temp("pev_ragged.csv",
                                 "0,1,2,3,4\n"
                                 "1,1,2,3\n");
  REQUIRE_THROWS_WITH(load_csv(ragged), Catch::Matchers::ContainsSubstring("line 2"));

  const auto bad_field = write_temp("pev_badfield.csv",
                                    "0,1,2\n"
                                    "1,x,2\n");
  REQUIRE_THROWS_WITH(load_csv(bad_field), Catch::Matchers::ContainsSubstring("line 2"));

  const auto gap = write_temp("pev_gap.csv",
                              "0,1,2\n"
                              "2,3,4\n");
  REQUIRE_THROWS_WITH(load_csv(gap), Catch::Matchers::ContainsSubstring("class 1"));
}
