#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "srpo/env.hpp"
#include "srpo/router.hpp"

using namespace srpo;

TEST_CASE("routing decision matrix, all four rows") {
  CHECK(route_rollout(false, true) == Branch::SDPO);
  CHECK(route_rollout(true, true) == Branch::GRPO);
  CHECK(route_rollout(true, false) == Branch::GRPO);
  CHECK(route_rollout(false, false) == Branch::GRPO);  // fallback
}

TEST_CASE("branch is a pure function of (correct, available)") {
  for (bool c : {false, true})
    for (bool m : {false, true})
      for (int rep = 0; rep < 3; ++rep)
        CHECK(route_rollout(c, m) == ((!c && m) ? Branch::SDPO : Branch::GRPO));
}

namespace {

RolloutGroup group_with_rewards(const std::vector<double>& rewards) {
  RolloutGroup g;
  g.prompt = {3, 1, 2, tok::kSep};
  g.group_id = 0;
  for (std::size_t i = 0; i < rewards.size(); ++i) {
    Rollout r;
    r.prompt = g.prompt;
    r.response = {static_cast<TokenId>(i % 10), tok::kEos};
    r.behavior_logprobs = {-1.0, -1.0};
    r.reward = rewards[i];
    g.rollouts.push_back(r);
  }
  return g;
}

std::vector<std::optional<TeacherContext>> contexts_for(
    const RolloutGroup& g, std::uint64_t seed = 11) {
  std::vector<std::optional<TeacherContext>> out;
  for (int i = 0; i < static_cast<int>(g.rollouts.size()); ++i) {
    Rng rng = derive_rng(seed, 0, i, stream::kTeacherPick);
    out.push_back(build_teacher_context(g, i, rng));
  }
  return out;
}

}  // namespace

TEST_CASE("worked example: rollouts 2 and 5 correct of 8") {
  RolloutGroup g = group_with_rewards({0, 0, 1, 0, 0, 1, 0, 0});
  const auto decisions = route_group(g, contexts_for(g));
  int n_grpo = 0, n_sdpo = 0;
  for (int i = 0; i < 8; ++i) {
    const RoutingDecision& d = decisions[i];
    if (d.branch == Branch::GRPO)
      ++n_grpo;
    else
      ++n_sdpo;
    if (i == 2 || i == 5) {
      CHECK(d.correct);
      CHECK(d.branch == Branch::GRPO);
    } else {
      CHECK_FALSE(d.correct);
      CHECK(d.teacher_available);
      CHECK(d.branch == Branch::SDPO);
      REQUIRE(d.teacher_index.has_value());
      CHECK((*d.teacher_index == 2 || *d.teacher_index == 5));
      CHECK(*d.teacher_index != i);
    }
  }
  CHECK(n_grpo == 2);
  CHECK(n_sdpo == 6);
  const RoutingStats s = routing_stats(decisions);
  CHECK(s.grpo_fraction == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.sdpo_fraction == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.teacher_avail_fraction == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("all correct routes everything to GRPO") {
  RolloutGroup g = group_with_rewards({1, 1, 1, 1});
  const auto decisions = route_group(g, contexts_for(g));
  for (const auto& d : decisions) CHECK(d.branch == Branch::GRPO);
  const RoutingStats s = routing_stats(decisions);
  CHECK(s.grpo_fraction == 1.0);
  CHECK(s.sdpo_fraction == 0.0);
}

TEST_CASE("all incorrect falls back to GRPO") {
  RolloutGroup g = group_with_rewards({0, 0, 0, 0, 0, 0, 0, 0});
  const auto decisions = route_group(g, contexts_for(g));
  for (const auto& d : decisions) {
    CHECK_FALSE(d.correct);
    CHECK_FALSE(d.teacher_available);
    CHECK(d.branch == Branch::GRPO);
    CHECK_FALSE(d.teacher_index.has_value());
  }
  const RoutingStats s = routing_stats(decisions);
  CHECK(s.teacher_avail_fraction == 0.0);
}

TEST_CASE("routing masks z_sdpo and z_grpo partition the group") {
  RolloutGroup g = group_with_rewards({1, 0, 0, 1, 0, 0, 0, 0});
  const auto decisions = route_group(g, contexts_for(g));
  for (const auto& d : decisions) {
    const int z_sdpo = (!d.correct && d.teacher_available) ? 1 : 0;
    const int z_grpo = 1 - z_sdpo;
    CHECK((d.branch == Branch::SDPO ? 1 : 0) == z_sdpo);
    CHECK((d.branch == Branch::GRPO ? 1 : 0) == z_grpo);
  }
}

TEST_CASE("routing_stats counts fractions") {
  std::vector<RoutingDecision> batch;
  for (int i = 0; i < 8; ++i) {
    RoutingDecision d;
    d.correct = i < 2;
    d.teacher_available = true;
    d.branch = i < 2 ? Branch::GRPO : Branch::SDPO;
    if (d.branch == Branch::SDPO) d.teacher_index = 0;
    batch.push_back(d);
  }
  const RoutingStats s = routing_stats(batch);
  CHECK(s.sdpo_fraction == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.grpo_fraction == doctest::Approx(0.25).epsilon(1e-12));
  CHECK(s.grpo_fraction + s.sdpo_fraction == doctest::Approx(1.0));
  CHECK_THROWS_AS(routing_stats({}), std::runtime_error);
}

TEST_CASE("route_group rejects misaligned contexts") {
  RolloutGroup g = group_with_rewards({1, 0});
  std::vector<std::optional<TeacherContext>> ctx;  // wrong length
  CHECK_THROWS_AS(route_group(g, ctx), std::runtime_error);
}
