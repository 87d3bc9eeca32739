#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <vector>

#include "pev/checkpoint.hpp"
#include "pev/model.hpp"
#include "pev/rng.hpp"

using namespace pev;

namespace {

ClientUpdate flat_update(int id, const std::vector<double>& values) {
  ClientUpdate u;
  u.client_id = id;
  Tensor t = Tensor::zeros(1, values.size());
  t.data = values;
  u.delta.push_back(t);
  return u;
}

CheckpointStore small_store(std::uint64_t seed, int checkpoints,
                            Precision prec = Precision::lossless) {
  const std::vector<std::size_t> arch = {3, 4, 2};
  CheckpointStore store;
  store.arch = arch;
  store.config_hash = 0xabcddcba12344321ULL;
  DetRng rng(seed);
  for (int k = 0; k < checkpoints; ++k) {
    Checkpoint ck;
    ck.round = 10 * (k + 1);
    ck.variance = 0.5 + k;
    ck.precision = prec;
    ck.w = init_model(arch, rng.next_u64());
    for (int c = 0; c < 3; ++c) {
      ClientUpdate u;
      u.client_id = c;
      u.round = ck.round;
      u.delta = zeros_like(ck.w.layers);
      for (Tensor& t : u.delta) {
        for (double& v : t.data) v = rng.next_gaussian();
      }
      ck.updates.push_back(std::move(u));
    }
    store.checkpoints.push_back(std::move(ck));
  }
  return store;
}

bool stores_equal(const CheckpointStore& a, const CheckpointStore& b) {
  if (a.arch != b.arch || a.config_hash != b.config_hash) return false;
  if (a.size() != b.size()) return false;
  for (std::size_t k = 0; k < a.size(); ++k) {
    const Checkpoint& x = a.checkpoints[k];
    const Checkpoint& y = b.checkpoints[k];
    if (x.round != y.round || x.precision != y.precision) return false;
    if (x.variance != y.variance) return false;
    if (flatten(x.w.layers) != flatten(y.w.layers)) return false;
    if (x.updates.size() != y.updates.size()) return false;
    for (std::size_t c = 0; c < x.updates.size(); ++c) {
      if (x.updates[c].client_id != y.updates[c].client_id) return false;
      if (flatten(x.updates[c].delta) != flatten(y.updates[c].delta)) return false;
    }
  }
  return true;
}

std::filesystem::path temp_file(const std::string& name) {
  return std::filesystem::temp_directory_path() / name;
}

}  // namespace

TEST_CASE("variance of identical updates is zero") {
  std::vector<ClientUpdate> ups;
  for (int c = 0; c < 4; ++c) ups.push_back(flat_update(c, {1.5, -2.0, 0.25}));
  REQUIRE(update_variance(ups) == 0.0);
}

TEST_CASE("hand-computed two-client variance") {
  // Deltas [0,0] and [2,2]: each coordinate has mean 1 and population
  // variance ((0-1)^2 + (2-1)^2)/2 = 1, so the mean over coordinates is 1.
  std::vector<ClientUpdate> ups;
  ups.push_back(flat_update(0, {0.0, 0.0}));
  ups.push_back(flat_update(1, {2.0, 2.0}));
  REQUIRE(update_variance(ups) == 1.0);
}

TEST_CASE("variance scales quadratically") {
  DetRng rng(5);
  std::vector<ClientUpdate> ups;
  for (int c = 0; c < 5; ++c) {
    std::vector<double> v(6);
    for (double& x : v) x = rng.next_gaussian();
    ups.push_back(flat_update(c, v));
  }
  const double base = update_variance(ups);
  const double c = 3.5;
  for (ClientUpdate& u : ups) {
    for (double& x : u.delta[0].data) x *= c;
  }
  REQUIRE(update_variance(ups) == Catch::Approx(c * c * base).epsilon(1e-12));
}

TEST_CASE("single update has zero variance") {
  std::vector<ClientUpdate> ups;
  ups.push_back(flat_update(0, {1.0, 2.0}));
  REQUIRE(update_variance(ups) == 0.0);
}

TEST_CASE("checkpoint gate: interval and strict threshold") {
  const ModelParams w = init_model({2, 2}, 1);
  std::vector<ClientUpdate> ups;
  ups.push_back(flat_update(0, {0.0, 0.0}));
  ups.push_back(flat_update(1, {2.0, 2.0}));  // variance exactly 1.0

  SECTION("stored when on-interval and above theta") {
    const auto ck = maybe_checkpoint(10, 10, 0.01, w, ups);
    REQUIRE(ck.has_value());
    REQUIRE(ck->round == 10);
    REQUIRE(ck->variance == 1.0);
    REQUIRE(ck->updates.size() == 2);
  }

  SECTION("off-interval rounds store nothing") {
    REQUIRE_FALSE(maybe_checkpoint(5, 10, -1e300, w, ups).has_value());
  }

  SECTION("variance equal to theta is not enough") {
    REQUIRE_FALSE(maybe_checkpoint(10, 10, 1.0, w, ups).has_value());
  }

  SECTION("theta of negative infinity always passes on-interval") {
    const double ninf = -std::numeric_limits<double>::infinity();
    REQUIRE(maybe_checkpoint(10, 10, ninf, w, ups).has_value());
  }
}

TEST_CASE("lossless save/load round-trips bit-exactly") {
  const CheckpointStore store = small_store(42, 3);
  const auto path = temp_file("pev_store_roundtrip.pevc");
  save(store, path);
  const CheckpointStore loaded = load(path);
  REQUIRE(stores_equal(store, loaded));

  // Saving the loaded store again yields byte-identical files.
  const auto path2 = temp_file("pev_store_roundtrip2.pevc");
  save(loaded, path2);
  std::ifstream a(path, std::ios::binary);
  std::ifstream b(path2, std::ios::binary);
  const std::string bytes_a((std::istreambuf_iterator<char>(a)),
                            std::istreambuf_iterator<char>());
  const std::string bytes_b((std::istreambuf_iterator<char>(b)),
                            std::istreambuf_iterator<char>());
  REQUIRE(bytes_a == bytes_b);
}

TEST_CASE("corrupt magic bytes are reported as not a PEV file") {
  const auto path = temp_file("pev_store_magic.pevc");
  save(small_store(1, 1), path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.write("NOPE", 4);
  }
  REQUIRE_THROWS_WITH(load(path),
                      Catch::Matchers::ContainsSubstring("not a PEV checkpoint file"));
}

TEST_CASE("version mismatch is a distinct error") {
  const auto path = temp_file("pev_store_version.pevc");
  save(small_store(2, 1), path);
  {
    std::fstream f(path, std::ios::binary | std::ios::in | std::ios::out);
    f.seekp(4);
    const char v2[4] = {2, 0, 0, 0};
    f.write(v2, 4);
  }
  REQUIRE_THROWS_WITH(load(path),
                      Catch::Matchers::ContainsSubstring("unsupported checkpoint version"));
}

TEST_CASE("truncated files are detected") {
  const auto path = temp_file("pev_store_trunc.pevc");
  save(small_store(3, 2), path);
  const auto size = std::filesystem::file_size(path);
  std::filesystem::resize_file(path, size - 37);
  REQUIRE_THROWS_WITH(load(path), Catch::Matchers::ContainsSubstring("truncated"));
}

TEST_CASE("trailing bytes are detected") {
  const auto path = temp_file("pev_store_trail.pevc");
  save(small_store(4, 1), path);
  {
    std::ofstream f(path, std::ios::binary | std::ios::app);
    f.write("xx", 2);
  }
  REQUIRE_THROWS_WITH(load(path), Catch::Matchers::ContainsSubstring("trailing"));
}

TEST_CASE("half precision round trip stays within the quantization bound") {
  // Oracle: binary16 has 10 mantissa bits, so for |v| <= 1 the round-trip
  // error is at most 2^-11 = 4.88e-4. Checked on 1e5 seeded values.
  DetRng rng(314159);
  double worst = 0.0;
  for (int i = 0; i < 100000; ++i) {
    const double v = 2.0 * rng.next_unit() - 1.0;
    const double back = detail::f16_to_f64(detail::f64_to_f16(v));
    worst = std::max(worst, std::abs(back - v));
  }
  REQUIRE(worst <= 4.9e-4);
}

TEST_CASE("half codec handles exact and edge values") {
  auto roundtrip = [](double v) {
    return detail::f16_to_f64(detail::f64_to_f16(v));
  };
  REQUIRE(roundtrip(0.0) == 0.0);
  REQUIRE(roundtrip(1.0) == 1.0);
  REQUIRE(roundtrip(-1.0) == -1.0);
  REQUIRE(roundtrip(0.5) == 0.5);
  REQUIRE(roundtrip(65504.0) == 65504.0);          // largest finite half
  REQUIRE(std::isinf(roundtrip(70000.0)));         // overflow to inf
  REQUIRE(roundtrip(1e-30) == 0.0);                // underflow to zero
  REQUIRE(roundtrip(std::ldexp(1.0, -24)) == std::ldexp(1.0, -24));  // min subnormal
  REQUIRE(roundtrip(std::ldexp(1.0, -14)) == std::ldexp(1.0, -14));  // min normal
}

TEST_CASE("half store round trip stays within per-tensor bound") {
  const CheckpointStore store = small_store(77, 2, Precision::half);
  const auto path = temp_file("pev_store_half.pevc");
  save(store, path);
  const CheckpointStore loaded = load(path);
  REQUIRE(loaded.size() == store.size());
  for (std::size_t k = 0; k < store.size(); ++k) {
    const std::vector<double> orig = flatten(store.checkpoints[k].w.layers);
    const std::vector<double> back = flatten(loaded.checkpoints[k].w.layers);
    double max_abs = 0.0;
    for (double v : orig) max_abs = std::max(max_abs, std::abs(v));
    for (std::size_t j = 0; j < orig.size(); ++j) {
      REQUIRE(std::abs(orig[j] - back[j]) <= std::ldexp(max_abs, -11) + 1e-12);
    }
  }
}

TEST_CASE("file size scales linearly with stored scalars") {
  // Payload is (1 + clients) * model_dim doubles per checkpoint; header and
  // per-record metadata must stay within 15% + a fixed 4 KiB budget.
  for (int k : {1, 3, 6}) {
    const CheckpointStore store = small_store(50 + k, k);
    const auto path = temp_file("pev_store_size.pevc");
    save(store, path);
    const double model_dim = static_cast<double>(
        total_dim(store.checkpoints[0].w.layers));
    double payload = 0.0;
    for (const Checkpoint& ck : store.checkpoints) {
      payload += (1.0 + static_cast<double>(ck.updates.size())) * model_dim * 8.0;
    }
    const double actual = static_cast<double>(std::filesystem::file_size(path));
    REQUIRE(actual >= payload);
    REQUIRE(actual <= 1.15 * payload + 4096.0);
  }
}
