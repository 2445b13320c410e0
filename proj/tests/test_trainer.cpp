#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <filesystem>

#include "doctest.h"
#include "srpo/report.hpp"
#include "srpo/run.hpp"
#include "srpo/trainer.hpp"

using namespace srpo;

namespace {

// small-but-full-vocabulary model for fast trainer tests
TrainConfig small_config(Algorithm alg = Algorithm::SRPO) {
  TrainConfig cfg;
  cfg.algorithm = alg;
  cfg.model.embed_dim = 8;
  cfg.model.num_layers = 1;
  cfg.model.context_len = 40;
  cfg.question_batch_size = 4;
  cfg.mini_batch_size = 4;
  cfg.group_size = 4;
  cfg.total_steps = 4;
  cfg.eval_interval = 2;
  cfg.eval_prompts = 2;
  cfg.eval_rollouts = 2;
  cfg.learning_rate = 1e-3;
  cfg.env.kind = EnvKind::ModArith;
  cfg.env.min_len = 2;
  cfg.env.max_len = 2;
  return cfg;
}

// overwrite a sampled batch so rollout i of each group is correct iff
// mask[i]; behavior logprobs are rescored under the current student
std::vector<RolloutGroup> crafted_batch(const Trainer& trainer,
                                        const std::vector<bool>& mask) {
  std::vector<RolloutGroup> batch;
  const TrainConfig& cfg = trainer.config();
  for (int g = 0; g < cfg.question_batch_size; ++g) {
    Rng task_rng = derive_rng(cfg.seed, 0, g, stream::kTask);
    const Task task = gen_task(trainer.env(), task_rng);
    RolloutGroup group;
    group.prompt = task.prompt;
    group.group_id = g;
    for (int i = 0; i < cfg.group_size; ++i) {
      Rollout r;
      r.prompt = task.prompt;
      if (mask[i]) {
        r.response = task.hidden_solution;
      } else {
        r.response = task.hidden_solution;
        r.response[0] = static_cast<TokenId>((r.response[0] + 1) % 10);
      }
      const auto dists =
          score_trajectory(trainer.state().student, task.prompt, r.response);
      for (std::size_t t = 0; t < r.response.size(); ++t)
        r.behavior_logprobs.push_back(dists[t].logprobs[r.response[t]]);
      r.reward = 0.0;  // train_step re-verifies
      group.rollouts.push_back(std::move(r));
    }
    batch.push_back(std::move(group));
  }
  return batch;
}

}  // namespace

TEST_CASE("lr schedule ramps linearly over warmup") {
  CHECK(lr_schedule(0, 1e-3, 10) == doctest::Approx(1e-4).epsilon(1e-12));
  CHECK(lr_schedule(4, 1e-3, 10) == doctest::Approx(5e-4).epsilon(1e-12));
  CHECK(lr_schedule(9, 1e-3, 10) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_schedule(100, 1e-3, 10) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_schedule(0, 1e-3, 1) == doctest::Approx(1e-3).epsilon(1e-12));
}

TEST_CASE("optimizer_update") {
  const ModelConfig mcfg = small_config().model;
  SUBCASE("zero gradient and zero weight decay leave params unchanged") {
    PolicyParams p = init_params(mcfg, 0);
    const PolicyParams before = p;
    AdamMoments mom;
    optimizer_update(p, std::vector<double>(p.flat.size(), 0.0), mom, 1e-3,
                     0.0, 1.0);
    CHECK(p.flat == before.flat);
  }
  SUBCASE("global norm clipping rescales the gradient") {
    PolicyParams p = init_params(mcfg, 0);
    std::vector<double> g(p.flat.size(), 0.0);
    g[0] = 3.0;
    g[1] = 4.0;  // norm 5
    AdamMoments mom;
    const double norm = optimizer_update(p, g, mom, 1e-3, 0.0, 1.0);
    CHECK(norm == doctest::Approx(1.0).epsilon(1e-12));
    // first step: m-hat/(sqrt(v-hat)+eps) ~ sign(g), independent of scale,
    // so clipping is visible through the moments, not the step size
    CHECK(mom.m[0] == doctest::Approx(0.1 * 3.0 * 0.2).epsilon(1e-12));
    CHECK(mom.m[1] == doctest::Approx(0.1 * 4.0 * 0.2).epsilon(1e-12));
  }
  SUBCASE("deterministic given identical state") {
    PolicyParams a = init_params(mcfg, 1), b = init_params(mcfg, 1);
    std::vector<double> g(a.flat.size());
    Rng rng(3);
    for (auto& x : g) x = rng.normal();
    AdamMoments ma, mb;
    optimizer_update(a, g, ma, 1e-3, 0.01, 1.0);
    optimizer_update(b, g, mb, 1e-3, 0.01, 1.0);
    CHECK(a.flat == b.flat);
    CHECK(ma.m == mb.m);
    CHECK(ma.v == mb.v);
  }
  SUBCASE("weight decay is decoupled") {
    PolicyParams p = init_params(mcfg, 0);
    const double w0 = p.flat[0];
    AdamMoments mom;
    optimizer_update(p, std::vector<double>(p.flat.size(), 0.0), mom, 0.1,
                     0.5, 1.0);
    CHECK(p.flat[0] == doctest::Approx(w0 * (1.0 - 0.1 * 0.5)).epsilon(1e-12));
  }
  SUBCASE("non-finite gradients are rejected") {
    PolicyParams p = init_params(mcfg, 0);
    std::vector<double> g(p.flat.size(), 0.0);
    g[0] = std::numeric_limits<double>::quiet_NaN();
    AdamMoments mom;
    CHECK_THROWS_AS(optimizer_update(p, g, mom, 1e-3, 0.0, 1.0),
                    std::runtime_error);
  }
}

TEST_CASE("evaluate with stub policies") {
  const EnvSpec env{EnvKind::ModArith, 2, 2};
  SUBCASE("always-correct policy scores 1.0") {
    auto oracle = [&](const TokenSeq& prompt, Rng&) {
      return solution_for_prompt(env, prompt);
    };
    CHECK(evaluate_with(oracle, env, 8, 4, 3, 0) == doctest::Approx(1.0));
  }
  SUBCASE("garbage policy scores 0.0") {
    auto garbage = [&](const TokenSeq&, Rng&) { return TokenSeq{0}; };
    CHECK(evaluate_with(garbage, env, 8, 4, 3, 0) == doctest::Approx(0.0));
  }
  SUBCASE("coin-flip policy scores 0.5 within 3 sigma") {
    auto coin = [&](const TokenSeq& prompt, Rng& rng) {
      return rng.uniform() < 0.5 ? solution_for_prompt(env, prompt)
                                 : TokenSeq{0};
    };
    const int n_prompts = 500, k = 4;  // 2000 rollouts
    const double avg = evaluate_with(coin, env, n_prompts, k, 3, 0);
    const double sigma = std::sqrt(0.25 / (n_prompts * k));
    CHECK(std::abs(avg - 0.5) <= 3.0 * sigma);
  }
  SUBCASE("real policy evaluation is deterministic") {
    const TrainConfig cfg = small_config();
    Trainer t1(cfg), t2(cfg);
    CHECK(t1.evaluate_now() == t2.evaluate_now());
  }
}

TEST_CASE("one mini-batch per partition: 4 inner updates for 8/2") {
  TrainConfig cfg = small_config(Algorithm::GRPO);
  cfg.question_batch_size = 8;
  cfg.mini_batch_size = 2;
  Trainer trainer(cfg);
  trainer.train_step(trainer.generate_batch());
  CHECK(trainer.state().moments.t == 4);
  trainer.train_step(trainer.generate_batch());
  CHECK(trainer.state().moments.t == 8);
}

TEST_CASE("step metrics satisfy their invariants") {
  TrainConfig cfg = small_config();
  Trainer trainer(cfg);
  long prev_step = 0;
  for (int s = 0; s < 4; ++s) {
    const StepResult res = trainer.train_step(trainer.generate_batch());
    const StepMetrics& m = res.metrics;
    CHECK(m.step == prev_step + 1);
    prev_step = m.step;
    CHECK(m.wall_seconds > 0.0);
    CHECK(m.grpo_frac >= 0.0);
    CHECK(m.sdpo_frac >= 0.0);
    CHECK(m.grpo_frac + m.sdpo_frac == doctest::Approx(1.0).epsilon(1e-12));
    CHECK(m.teacher_avail_frac >= m.sdpo_frac - 1e-12);
    CHECK(m.mean_response_length > 0.0);
    CHECK(m.train_accuracy >= 0.0);
    CHECK(m.train_accuracy <= 1.0);
    CHECK(m.grad_norm <= cfg.grad_clip_norm + 1e-9);
    CHECK(m.dropped_token_count >= 0);
    CHECK(std::isfinite(m.mean_loss));
  }
}

TEST_CASE("teacher moves only through the EMA") {
  TrainConfig cfg = small_config();
  Trainer trainer(cfg);
  const PolicyParams teacher0 = trainer.state().teacher;
  const PolicyParams student0 = trainer.state().student;
  CHECK(teacher0.flat == student0.flat);  // initialized as a copy

  trainer.train_step(trainer.generate_batch());
  const PolicyParams& student1 = trainer.state().student;
  const PolicyParams& teacher1 = trainer.state().teacher;
  CHECK(student1.flat != student0.flat);
  // theta_T after one step = 0.95 theta_T0 + 0.05 theta_S1, exactly
  const PolicyParams expect = ema_update(teacher0, student1, cfg.ema_rate);
  CHECK(teacher1.flat == expect.flat);

  // optimizer_update alone never touches the teacher
  PolicyParams t_copy = teacher1;
  PolicyParams s_copy = student1;
  AdamMoments mom;
  std::vector<double> g(s_copy.flat.size(), 0.1);
  optimizer_update(s_copy, g, mom, 1e-3, 0.01, 1.0);
  CHECK(t_copy.flat == teacher1.flat);
}

TEST_CASE("all-correct batch: SRPO is bitwise GRPO") {
  const std::vector<bool> all_correct = {true, true, true, true};
  Trainer srpo(small_config(Algorithm::SRPO));
  Trainer grpo(small_config(Algorithm::GRPO));
  CHECK(srpo.state().student.flat == grpo.state().student.flat);
  const auto batch = crafted_batch(srpo, all_correct);
  const StepResult rs = srpo.train_step(batch);
  const StepResult rg = grpo.train_step(batch);
  CHECK(srpo.state().student.flat == grpo.state().student.flat);
  CHECK(srpo.state().teacher.flat == grpo.state().teacher.flat);
  CHECK(rs.metrics.sdpo_frac == 0.0);
  CHECK(rg.metrics.sdpo_frac == 0.0);
  CHECK(rs.metrics.mean_loss == rg.metrics.mean_loss);
  CHECK(rs.metrics.grad_norm == rg.metrics.grad_norm);
}

TEST_CASE("beta 0 SRPO is bitwise SRPO_NO_DW") {
  TrainConfig a = small_config(Algorithm::SRPO);
  a.dw_beta = 0.0;
  const TrainConfig b = small_config(Algorithm::SRPO_NO_DW);
  Trainer ta(a), tb(b);
  const std::vector<bool> mixed = {true, false, false, true};
  const auto batch = crafted_batch(ta, mixed);
  const StepResult ra = ta.train_step(batch);
  const StepResult rb = tb.train_step(batch);
  CHECK(ra.metrics.sdpo_frac > 0.0);  // the SDPO branch actually fired
  CHECK(ta.state().student.flat == tb.state().student.flat);
  CHECK(ra.metrics.mean_loss == rb.metrics.mean_loss);
}

TEST_CASE("probe rollouts carry SDPO losses with teacher telemetry") {
  Trainer trainer(small_config(Algorithm::SRPO));
  // every group: rollouts 0 and 3 correct, 1 and 2 incorrect probes
  const auto batch = crafted_batch(trainer, {true, false, false, true});
  const StepResult res = trainer.train_step(batch);
  CHECK(res.metrics.sdpo_frac == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(res.metrics.teacher_avail_frac == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(res.metrics.mean_teacher_entropy > 0.0);
  for (const auto& group : res.decisions)
    for (std::size_t i = 0; i < group.size(); ++i) {
      const RoutingDecision& d = group[i];
      if (i == 1 || i == 2) {
        CHECK(d.branch == Branch::SDPO);
        REQUIRE(d.teacher_index.has_value());
        CHECK((*d.teacher_index == 0 || *d.teacher_index == 3));
      } else {
        CHECK(d.branch == Branch::GRPO);
      }
    }
}

TEST_CASE("every algorithm variant completes a step") {
  const std::vector<bool> mixed = {true, false, false, true};
  for (Algorithm alg : {Algorithm::GRPO, Algorithm::SDPO, Algorithm::SRPO,
                        Algorithm::SRPO_NO_DW, Algorithm::ADV_MIX}) {
    Trainer trainer(small_config(alg));
    const auto batch = crafted_batch(trainer, mixed);
    const StepResult res = trainer.train_step(batch);
    CHECK(std::isfinite(res.metrics.mean_loss));
    CHECK(res.metrics.grad_norm > 0.0);
    if (alg == Algorithm::GRPO) CHECK(res.metrics.sdpo_frac == 0.0);
    if (alg == Algorithm::SDPO || alg == Algorithm::ADV_MIX)
      CHECK(res.metrics.sdpo_frac == doctest::Approx(1.0).epsilon(1e-12));
  }
}

TEST_CASE("run_training writes metrics, logs and checkpoints; resume matches") {
  namespace fs = std::filesystem;
  const std::string base = fs::temp_directory_path() / "srpo_trainer_test";
  fs::remove_all(base);
  TrainConfig cfg = small_config();
  cfg.total_steps = 4;

  const RunResult straight = run_training(cfg, base + "/straight");

  TrainConfig half = cfg;
  half.total_steps = 2;
  run_training(half, base + "/resumed");
  const RunResult resumed = run_training(cfg, base + "/resumed", true);

  CHECK(straight.history.size() == 4);
  CHECK(resumed.final_state.student.flat == straight.final_state.student.flat);
  CHECK(resumed.final_state.teacher.flat == straight.final_state.teacher.flat);
  CHECK(resumed.final_state.moments.m == straight.final_state.moments.m);
  // identical metrics up to wall time
  CHECK(metrics_checksum(base + "/straight/metrics.csv") ==
        metrics_checksum(base + "/resumed/metrics.csv"));

  const auto rows = parse_metrics_csv(base + "/straight/metrics.csv");
  REQUIRE(rows.size() == 4);
  for (std::size_t i = 1; i < rows.size(); ++i)
    CHECK(rows[i].step > rows[i - 1].step);

  // checkpoint state round-trips
  const TrainerState st = load_checkpoint(base + "/straight/checkpoint.bin");
  CHECK(st.step == 4);
  CHECK(st.student.flat == straight.final_state.student.flat);
  CHECK(st.moments.t == straight.final_state.moments.t);
  fs::remove_all(base);
}

TEST_CASE("identical seeds give identical runs") {
  namespace fs = std::filesystem;
  const std::string base = fs::temp_directory_path() / "srpo_det_test";
  fs::remove_all(base);
  TrainConfig cfg = small_config();
  cfg.total_steps = 3;
  run_training(cfg, base + "/a");
  run_training(cfg, base + "/b");
  CHECK(metrics_checksum(base + "/a/metrics.csv") ==
        metrics_checksum(base + "/b/metrics.csv"));
  CHECK(fnv1a64(read_file_bytes(base + "/a/rollouts.jsonl")) ==
        fnv1a64(read_file_bytes(base + "/b/rollouts.jsonl")));
  fs::remove_all(base);
}
