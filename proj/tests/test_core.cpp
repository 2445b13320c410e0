#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "srpo/core.hpp"
#include "srpo/rng.hpp"

using namespace srpo;

TEST_CASE("table-4 defaults are accepted") {
  TrainConfig cfg;  // defaults mirror the SRPO column
  CHECK(cfg.group_size == 8);
  CHECK(cfg.question_batch_size == 32);
  CHECK(cfg.mini_batch_size == 32);
  CHECK(cfg.learning_rate == doctest::Approx(5e-6));
  CHECK(cfg.warmup_steps == 10);
  CHECK(cfg.weight_decay == doctest::Approx(0.01));
  CHECK(cfg.grad_clip_norm == doctest::Approx(1.0));
  CHECK(cfg.eps_high == doctest::Approx(0.28));
  CHECK(cfg.is_clip_rho == doctest::Approx(2.0));
  CHECK(cfg.divergence == Divergence::JS);
  CHECK(cfg.top_k == 100);
  CHECK(cfg.ema_rate == doctest::Approx(0.05));
  CHECK(cfg.dw_beta == doctest::Approx(1.0));
  CHECK(cfg.mix_lambda == doctest::Approx(0.9));
  CHECK(cfg.rollout_temperature == doctest::Approx(1.0));
  CHECK(cfg.eval_temperature == doctest::Approx(0.6));
  CHECK(cfg.eval_top_p == doctest::Approx(0.95));
  CHECK(cfg.eval_rollouts == 16);
  CHECK_NOTHROW(validate_config(cfg));
}

TEST_CASE("validate_config names the violated field") {
  TrainConfig cfg;
  SUBCASE("degenerate group") {
    cfg.group_size = 1;
    CHECK_THROWS_WITH_AS(validate_config(cfg),
                         doctest::Contains("group_size must be >= 2"),
                         std::runtime_error);
  }
  SUBCASE("mix lambda range") {
    cfg.mix_lambda = 1.5;
    CHECK_THROWS_WITH_AS(validate_config(cfg),
                         doctest::Contains("mix_lambda out of [0,1]"),
                         std::runtime_error);
  }
  SUBCASE("mini batch divisibility") {
    cfg.question_batch_size = 10;
    cfg.mini_batch_size = 4;
    CHECK_THROWS_AS(validate_config(cfg), std::runtime_error);
  }
  SUBCASE("is_clip_rho lower bound") {
    cfg.is_clip_rho = 0.5;
    CHECK_THROWS_AS(validate_config(cfg), std::runtime_error);
  }
  SUBCASE("ema range") {
    cfg.ema_rate = 1.5;
    CHECK_THROWS_AS(validate_config(cfg), std::runtime_error);
  }
  SUBCASE("negative beta") {
    cfg.dw_beta = -1.0;
    CHECK_THROWS_AS(validate_config(cfg), std::runtime_error);
  }
  SUBCASE("top_k lower bound") {
    cfg.top_k = 0;
    CHECK_THROWS_AS(validate_config(cfg), std::runtime_error);
  }
  SUBCASE("eps positivity") {
    cfg.eps_low = 0.0;
    CHECK_THROWS_AS(validate_config(cfg), std::runtime_error);
  }
}

TEST_CASE("config json round-trip is the identity") {
  TrainConfig cfg;
  cfg.algorithm = Algorithm::ADV_MIX;
  cfg.divergence = Divergence::RKL;
  cfg.seed = 1234567;
  cfg.env.kind = EnvKind::ModArith;
  const TrainConfig back = config_from_json(to_json(cfg));
  CHECK(to_json(back) == to_json(cfg));
}

TEST_CASE("unknown config keys are rejected") {
  nlohmann::json j = to_json(TrainConfig{});
  j["learning_rte"] = 1e-3;
  CHECK_THROWS_WITH_AS(config_from_json(j),
                       doctest::Contains("learning_rte"), std::runtime_error);
  nlohmann::json j2 = to_json(TrainConfig{});
  j2["model"]["n_layers"] = 3;
  CHECK_THROWS_AS(config_from_json(j2), std::runtime_error);
}

TEST_CASE("enum string round-trips") {
  for (auto a : {Algorithm::GRPO, Algorithm::SDPO, Algorithm::SRPO,
                 Algorithm::SRPO_NO_DW, Algorithm::ADV_MIX})
    CHECK(algorithm_from_string(to_string(a)) == a);
  for (auto d : {Divergence::FKL, Divergence::RKL, Divergence::JS})
    CHECK(divergence_from_string(to_string(d)) == d);
  for (auto k : {EnvKind::CopySort, EnvKind::ModArith})
    CHECK(env_kind_from_string(to_string(k)) == k);
  CHECK_THROWS_AS(algorithm_from_string("PPO"), std::runtime_error);
}

TEST_CASE("rollout and group json round-trip") {
  Rollout r;
  r.prompt = {3, 1, 2, 10};
  r.response = {1, 2, 3, 11};
  r.behavior_logprobs = {-0.1, -0.5, -2.0, -0.25};
  r.reward = 1.0;
  CHECK(to_json(rollout_from_json(to_json(r))) == to_json(r));

  RolloutGroup g;
  g.prompt = r.prompt;
  g.group_id = 7;
  g.rollouts = {r, r};
  CHECK(to_json(group_from_json(to_json(g))) == to_json(g));
}

TEST_CASE("routing decision json round-trip keeps optional teacher index") {
  RoutingDecision d;
  d.correct = false;
  d.teacher_available = true;
  d.branch = Branch::SDPO;
  d.teacher_index = 5;
  const RoutingDecision back = routing_decision_from_json(to_json(d));
  CHECK(back.correct == d.correct);
  CHECK(back.teacher_available == d.teacher_available);
  CHECK(back.branch == d.branch);
  REQUIRE(back.teacher_index.has_value());
  CHECK(*back.teacher_index == 5);

  d.teacher_available = false;
  d.branch = Branch::GRPO;
  d.teacher_index.reset();
  CHECK_FALSE(routing_decision_from_json(to_json(d)).teacher_index.has_value());
}

TEST_CASE("deterministic rng streams") {
  Rng a = derive_rng(42, 1, 2, stream::kSample);
  Rng b = derive_rng(42, 1, 2, stream::kSample);
  for (int i = 0; i < 100; ++i) CHECK(a.next_u64() == b.next_u64());
  Rng c = derive_rng(42, 1, 2, stream::kTask);
  CHECK(derive_rng(42, 1, 2, stream::kSample).next_u64() != c.next_u64());
}

TEST_CASE("rng uniform and normal sanity") {
  Rng rng(7);
  double sum = 0.0, sumsq = 0.0;
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const double u = rng.uniform();
    CHECK(u >= 0.0);
    CHECK(u < 1.0);
    sum += u;
  }
  CHECK(sum / n == doctest::Approx(0.5).epsilon(0.01));
  sum = 0.0;
  for (int i = 0; i < n; ++i) {
    const double z = rng.normal();
    sum += z;
    sumsq += z * z;
  }
  CHECK(sum / n == doctest::Approx(0.0).epsilon(0.02));
  CHECK(sumsq / n == doctest::Approx(1.0).epsilon(0.02));
}
