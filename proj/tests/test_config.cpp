#include <doctest.h>

#include "trips/config.hpp"

using namespace trips;

TEST_CASE("config: fully-defaulted document is valid and round-trips") {
  const config::ExperimentConfig def = config::defaults();
  const std::string text = config::serialize(def);
  const config::ExperimentConfig back = config::parse_string(text);
  CHECK(config::serialize(back) == text);
  CHECK(config::fingerprint(back) == config::fingerprint(def));
}

TEST_CASE("config: parse, serialize, parse is the identity") {
  const std::string doc = R"(
# comment survives nothing, values do
[scenario]
steps = 3
classes_per_step = 2
seeds = 4,5,6

[train]
lr = 0.001
optimizer = momentum
hidden = 32,16

[losses]
lambda_prime = 15
)";
  const config::ExperimentConfig a = config::parse_string(doc);
  CHECK(a.scenario.steps == 3);
  CHECK(a.scenario.seeds == std::vector<std::uint64_t>{4, 5, 6});
  CHECK(a.train.lr == 0.001);
  CHECK(a.train.rule == trainer::OptimizerRule::momentum);
  CHECK(a.train.arch.hidden == std::vector<int>{32, 16});
  CHECK(a.train.loss.lambda_prime == 15.0);

  const std::string text = config::serialize(a);
  const config::ExperimentConfig b = config::parse_string(text);
  CHECK(config::serialize(b) == text);
}

TEST_CASE("config: unknown keys and sections rejected") {
  CHECK_THROWS_AS(config::parse_string("[scenario]\nbogus = 1\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_string("[made_up]\nsteps = 1\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_string("steps = 1\n"), ConfigError);  // outside a section
}

TEST_CASE("config: value validation") {
  CHECK_THROWS_AS(config::parse_string("[train]\nmax_iters = lots\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_string("[train]\noptimizer = adagrad\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_string("[drift]\neta = 1.5\n"), ConfigError);
  CHECK_THROWS_AS(config::parse_string("[eval]\nprotocol = sometimes\n"), ConfigError);
}

TEST_CASE("config: dotted overrides") {
  config::ExperimentConfig cfg = config::defaults();
  config::apply_override(cfg, "train.max_iters=10");
  CHECK(cfg.train.max_iters == 10);
  config::apply_override(cfg, "scenario.seeds", "9,10");
  CHECK(cfg.scenario.seeds == std::vector<std::uint64_t>{9, 10});
  CHECK_THROWS_AS(config::apply_override(cfg, "nope.nope=1"), ConfigError);
  CHECK_THROWS_AS(config::apply_override(cfg, "train.max_iters"), ConfigError);
}

TEST_CASE("config: fingerprint tracks content") {
  config::ExperimentConfig a = config::defaults();
  config::ExperimentConfig b = config::defaults();
  CHECK(config::fingerprint(a) == config::fingerprint(b));
  config::apply_override(b, "train.lr=0.01");
  CHECK(config::fingerprint(a) != config::fingerprint(b));
}
