#include "doctest.h"

#include "sslseg/config.hpp"
#include "sslseg/errors.hpp"

using namespace sslseg;

TEST_CASE("defaults validate and round-trip") {
  for (const auto& cfg : {ExperimentConfig{}, desk_config()}) {
    CHECK_NOTHROW(cfg.validate());
    const auto text = to_json(cfg);
    CHECK(to_json(parse_config(text)) == text);
  }
}

TEST_CASE("desk config matches the end-to-end experiment") {
  const auto c = desk_config();
  CHECK(c.dataset.n_pre == 20);
  CHECK(c.dataset.phantom.shape == Shape3{12, 32, 32});
  CHECK(c.dataset.phantom.num_classes == 3);
  CHECK(c.iterations == 2000);
  CHECK(c.finetune_iterations == 2000);
  CHECK(c.dataset.n_tr == 1);
  CHECK(c.seeds.size() == 3);
  REQUIRE(c.arms.size() == 4);
  CHECK(c.arms[3] == Arm{"GD+LR", GlobalStrategy::GD, LocalStrategy::LR});
}

TEST_CASE("partial files keep defaults") {
  const auto c = parse_config(R"({"tau": 0.5, "network": {"enc_blocks": 3, "base_channels": 8}})");
  CHECK(c.tau == 0.5);
  CHECK(c.network.enc_blocks == 3);
  CHECK(c.learning_rate == ExperimentConfig{}.learning_rate);
  CHECK(c.partitions == 4);
  CHECK(parse_config("{}").region_count == 13);
}

TEST_CASE("unknown keys are rejected with their path") {
  try {
    parse_config(R"({"network": {"enc_blockz": 3}})");
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("network.enc_blockz") != std::string::npos);
  }
  CHECK_THROWS_AS(parse_config(R"({"bogus": 1})"), ConfigError);
}

TEST_CASE("invalid values") {
  CHECK_THROWS_AS(parse_config("{"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"tau": 0})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"tau": "x"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"global_strategy": "GX"})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"seeds": []})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"dataset": {"n_tr": 20}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"transforms": {"local": {"flip_h": true}}})"), ConfigError);
  CHECK_THROWS_AS(parse_config(R"({"region_options": {"exclusion": "diag"}})"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/config.json"), ConfigError);
}

TEST_CASE("strategy names") {
  for (auto g : {GlobalStrategy::none, GlobalStrategy::GR, GlobalStrategy::GDminus, GlobalStrategy::GD})
    CHECK(parse_global_strategy(to_string(g)) == g);
  for (auto l : {LocalStrategy::none, LocalStrategy::LR, LocalStrategy::LD})
    CHECK(parse_local_strategy(to_string(l)) == l);
}
