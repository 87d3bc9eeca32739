#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <filesystem>
#include <fstream>

#include "pev/config.hpp"

using namespace pev;

namespace {

std::filesystem::path write_temp(const std::string& name, const std::string& body) {
  const auto path = std::filesystem::temp_directory_path() / name;
  std::ofstream out(path, std::ios::trunc);
  out << body;
  return path;
}

}  // namespace

TEST_CASE("an empty file resolves to the documented defaults") {
  const auto path = write_temp("pev_cfg_empty.conf", "");
  const FullConfig cfg = parse_config(path);
  REQUIRE(cfg.run.n_clients == 100);
  REQUIRE(cfg.run.clients_per_round == 10);
  REQUIRE(cfg.run.rounds == 200);
  REQUIRE(cfg.run.lr == 0.01);
  REQUIRE(cfg.run.batch_size == 32);
  REQUIRE(cfg.run.tau == 10);
  REQUIRE(cfg.run.theta == 0.01);
  REQUIRE(cfg.run.sigma == 0.5);
  REQUIRE(cfg.run.local_epochs == 1);
  REQUIRE_FALSE(cfg.run.delta_threshold.has_value());
  REQUIRE(cfg.run.compression == Precision::lossless);
  REQUIRE(cfg.data.classes == 4);
  REQUIRE(cfg.data.dim == 20);
  REQUIRE(cfg.data.per_class == 250);
  REQUIRE(cfg.data.alpha == 0.5);
}

TEST_CASE("no config path at all also gives defaults") {
  const FullConfig cfg = parse_config(std::nullopt);
  REQUIRE(cfg.run.rounds == 200);
}

TEST_CASE("file entries, comments and overrides compose") {
  const auto path = write_temp("pev_cfg_mix.conf",
                               "# experiment configuration\n"
                               "sigma = 0.8   # file value\n"
                               "rounds=50\n"
                               "\n"
                               "theta=-inf\n");
  const FullConfig cfg = parse_config(path, {"sigma=0.2", "tau=1"});
  REQUIRE(cfg.run.sigma == 0.2);  // override wins over the file
  REQUIRE(cfg.run.rounds == 50);
  REQUIRE(cfg.run.tau == 1);
  REQUIRE(std::isinf(cfg.run.theta));
  REQUIRE(cfg.run.theta < 0);
}

TEST_CASE("unknown keys are rejected by name") {
  const auto path = write_temp("pev_cfg_unknown.conf", "n_cleints=5\n");
  REQUIRE_THROWS_WITH(parse_config(path),
                      Catch::Matchers::ContainsSubstring("n_cleints"));
}

TEST_CASE("type errors name the key") {
  const auto path = write_temp("pev_cfg_type.conf", "rounds=ten\n");
  REQUIRE_THROWS_WITH(parse_config(path),
                      Catch::Matchers::ContainsSubstring("rounds"));
}

TEST_CASE("constraint violations name both keys") {
  REQUIRE_THROWS_WITH(
      parse_config(std::nullopt, {"clients_per_round=200"}),
      Catch::Matchers::ContainsSubstring("clients_per_round") &&
          Catch::Matchers::ContainsSubstring("n_clients"));
}

TEST_CASE("duplicate keys in the file are rejected") {
  const auto path = write_temp("pev_cfg_dup.conf", "sigma=0.1\nsigma=0.2\n");
  REQUIRE_THROWS_WITH(parse_config(path),
                      Catch::Matchers::ContainsSubstring("repeated"));
}

TEST_CASE("delta_threshold accepts auto and positive numbers only") {
  REQUIRE_FALSE(parse_config(std::nullopt, {"delta_threshold=auto"})
                    .run.delta_threshold.has_value());
  REQUIRE(parse_config(std::nullopt, {"delta_threshold=0.07"})
              .run.delta_threshold.value() == 0.07);
  REQUIRE_THROWS_AS(parse_config(std::nullopt, {"delta_threshold=-1"}),
                    ConfigError);
}

TEST_CASE("resolved text is canonical and hash-stable") {
  const FullConfig a = parse_config(std::nullopt, {"sigma=0.2"});
  const FullConfig b = parse_config(std::nullopt, {"sigma=0.2"});
  REQUIRE(resolved_config_text(a) == resolved_config_text(b));
  REQUIRE(config_hash(a) == config_hash(b));
  const FullConfig c = parse_config(std::nullopt, {"sigma=0.3"});
  REQUIRE(config_hash(a) != config_hash(c));
  // Every key appears in the resolved text.
  const std::string text = resolved_config_text(a);
  for (const char* key : {"n_clients", "sigma", "data_spread", "sweep_sigmas"}) {
    REQUIRE(text.find(std::string(key) + "=") != std::string::npos);
  }
}

TEST_CASE("train hash ignores unlearn-time knobs but tracks training ones") {
  const FullConfig base = parse_config(std::nullopt);
  const FullConfig sigma_changed = parse_config(std::nullopt, {"sigma=0.9"});
  const FullConfig delta_changed =
      parse_config(std::nullopt, {"delta_threshold=0.5"});
  const FullConfig lr_changed = parse_config(std::nullopt, {"lr=0.02"});
  const FullConfig data_changed = parse_config(std::nullopt, {"data_seed=8"});
  REQUIRE(train_hash(base) == train_hash(sigma_changed));
  REQUIRE(train_hash(base) == train_hash(delta_changed));
  REQUIRE(train_hash(base) != train_hash(lr_changed));
  REQUIRE(train_hash(base) != train_hash(data_changed));
}

TEST_CASE("sweep list parsing") {
  const FullConfig cfg = parse_config(std::nullopt, {"sweep_sigmas=0.1, 0.4 ,0.9"});
  REQUIRE(cfg.sweep.sigmas == std::vector<double>{0.1, 0.4, 0.9});
  REQUIRE_THROWS_AS(parse_config(std::nullopt, {"sweep_sigmas=,"}), ConfigError);
}

TEST_CASE("missing config file is an error") {
  REQUIRE_THROWS_AS(parse_config(std::filesystem::path("/nope/missing.conf")),
                    ConfigError);
}
