#ifndef SRPO_TRAINER_HPP_
#define SRPO_TRAINER_HPP_

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <optional>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "srpo/core.hpp"
#include "srpo/env.hpp"
#include "srpo/loss_graph.hpp"
#include "srpo/model.hpp"
#include "srpo/objective.hpp"
#include "srpo/router.hpp"

// The full training loop: rollout generation, reward evaluation, teacher
// construction, routing, loss assembly, AdamW updates with warmup and global
// gradient clipping, EMA teacher maintenance, evaluation, and metrics.

namespace srpo {

struct StepMetrics {
  long step = 0;
  double wall_seconds = 0.0;
  double mean_loss = 0.0;
  double grpo_frac = 0.0;
  double sdpo_frac = 0.0;
  double teacher_avail_frac = 0.0;
  double mean_teacher_entropy = 0.0;
  double mean_response_length = 0.0;
  double train_accuracy = 0.0;
  double eval_avg_at_k = 0.0;
  double grad_norm = 0.0;
  long dropped_token_count = 0;
};

struct AdamMoments {
  std::vector<double> m;
  std::vector<double> v;
  long t = 0;
};

struct TrainerState {
  PolicyParams student;
  PolicyParams teacher;
  AdamMoments moments;
  long step = 0;           // completed outer steps
  double last_eval = 0.0;  // most recent eval_avg_at_k
};

// linear ramp to base_lr over warmup_steps, constant afterward
inline double lr_schedule(long step, double base_lr, int warmup_steps) {
  if (step < 0) throw std::runtime_error("lr_schedule: negative step");
  const double ramp =
      static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  return base_lr * std::min(1.0, ramp);
}

// Global-norm clipping followed by a decoupled-weight-decay adaptive-moment
// update (beta1 0.9, beta2 0.999, eps 1e-8, bias-corrected). Returns the
// gradient norm after clipping.
inline double optimizer_update(PolicyParams& params,
                               const std::vector<double>& grad,
                               AdamMoments& mom, double lr,
                               double weight_decay, double clip_norm) {
  const std::size_t n = params.flat.size();
  if (grad.size() != n) throw std::runtime_error("optimizer_update: shape mismatch");
  if (mom.m.empty()) mom.m.assign(n, 0.0);
  if (mom.v.empty()) mom.v.assign(n, 0.0);
  if (mom.m.size() != n || mom.v.size() != n)
    throw std::runtime_error("optimizer_update: moment shape mismatch");
  double sq = 0.0;
  for (double g : grad) sq += g * g;
  if (!std::isfinite(sq))
    throw std::runtime_error("optimizer_update: non-finite gradient");
  const double norm = std::sqrt(sq);
  const double scale = norm > clip_norm ? clip_norm / norm : 1.0;
  constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
  mom.t += 1;
  const double bc1 = 1.0 - std::pow(b1, static_cast<double>(mom.t));
  const double bc2 = 1.0 - std::pow(b2, static_cast<double>(mom.t));
  for (std::size_t i = 0; i < n; ++i) {
    const double g = grad[i] * scale;
    mom.m[i] = b1 * mom.m[i] + (1.0 - b1) * g;
    mom.v[i] = b2 * mom.v[i] + (1.0 - b2) * g * g;
    const double mhat = mom.m[i] / bc1;
    const double vhat = mom.v[i] / bc2;
    params.flat[i] -=
        lr * weight_decay * params.flat[i] + lr * mhat / (std::sqrt(vhat) + eps);
  }
  return std::min(norm, clip_norm);
}

// mean over prompts of (mean over k rollouts of reward); the sampler draws a
// response for a given prompt and rng stream.
inline double evaluate_with(
    const std::function<TokenSeq(const TokenSeq&, Rng&)>& sampler,
    const EnvSpec& env, int n_prompts, int k, std::uint64_t seed, long step) {
  double total = 0.0;
  for (int p = 0; p < n_prompts; ++p) {
    Rng rng = derive_rng(seed, static_cast<std::uint64_t>(step), p, stream::kEval);
    const Task task = gen_task(env, rng);
    double acc = 0.0;
    for (int i = 0; i < k; ++i)
      acc += verify(env, task.prompt, sampler(task.prompt, rng));
    total += acc / k;
  }
  return total / n_prompts;
}

inline double evaluate(const PolicyParams& params, const EnvSpec& env,
                       int n_prompts, int k, double temperature, double top_p,
                       int max_response_len, std::uint64_t seed, long step) {
  if (k < 1) throw std::runtime_error("evaluate: k must be >= 1");
  auto sampler = [&](const TokenSeq& prompt, Rng& rng) {
    return sample_rollout(params, prompt, max_response_len, temperature, top_p,
                          rng, tok::kEos)
        .response;
  };
  return evaluate_with(sampler, env, n_prompts, k, seed, step);
}

struct StepResult {
  StepMetrics metrics;
  // per group, per rollout, aligned with the batch (for rollout logging)
  std::vector<std::vector<RoutingDecision>> decisions;
};

class Trainer {
 public:
  explicit Trainer(const TrainConfig& cfg)
      : cfg_(validate_config(cfg)), env_(make_env(cfg.env)) {
    state_.student = init_params(cfg_.model, cfg_.seed);
    state_.teacher = state_.student;
  }

  const TrainConfig& config() const { return cfg_; }
  const EnvSpec& env() const { return env_; }
  TrainerState& state() { return state_; }
  const TrainerState& state() const { return state_; }

  // Samples question_batch_size prompts x G on-policy rollouts for the
  // current step. Training-time sampling uses rollout_temperature and full
  // nucleus (top_p = 1) so importance ratios are exact.
  std::vector<RolloutGroup> generate_batch() const {
    std::vector<RolloutGroup> batch;
    batch.reserve(cfg_.question_batch_size);
    for (int g = 0; g < cfg_.question_batch_size; ++g) {
      Rng task_rng = derive_rng(cfg_.seed, state_.step, g, stream::kTask);
      const Task task = gen_task(env_, task_rng);
      RolloutGroup group;
      group.prompt = task.prompt;
      group.group_id = g;
      for (int i = 0; i < cfg_.group_size; ++i) {
        Rng rng = derive_rng(cfg_.seed, state_.step,
                             static_cast<std::uint64_t>(g) * cfg_.group_size + i,
                             stream::kSample);
        Rollout r = sample_rollout(state_.student, task.prompt,
                                   cfg_.max_response_len,
                                   cfg_.rollout_temperature, 1.0, rng, tok::kEos);
        group.rollouts.push_back(std::move(r));
      }
      batch.push_back(std::move(group));
    }
    return batch;
  }

  // One outer optimization step over a batch of rollout groups
  // (Algorithm-1 lines 2-15 plus the per-mini-batch optimizer updates and the
  // post-step EMA refresh of the teacher).
  StepResult train_step(std::vector<RolloutGroup> batch) {
    const auto t0 = std::chrono::steady_clock::now();
    if (static_cast<int>(batch.size()) != cfg_.question_batch_size)
      throw std::runtime_error("train_step: batch size mismatch");

    std::vector<Prepared> prepared;
    prepared.reserve(batch.size());
    for (auto& group : batch) prepared.push_back(prepare_group(std::move(group)));

    StepMetrics met;
    met.step = state_.step + 1;

    // routing telemetry over the whole batch
    {
      std::vector<RoutingDecision> all;
      double resp_len = 0.0, acc = 0.0;
      double entropy_sum = 0.0;
      long entropy_count = 0;
      for (const auto& p : prepared) {
        for (const auto& d : p.decisions) all.push_back(d);
        for (const auto& r : p.group.rollouts) {
          resp_len += static_cast<double>(r.response.size());
          acc += r.reward;
        }
        for (const auto& per_rollout : p.teacher)
          for (const auto& tt : per_rollout) {
            if (tt.dropped) {
              ++met.dropped_token_count;
              continue;
            }
            entropy_sum += tt.entropy;
            ++entropy_count;
          }
      }
      const RoutingStats rs = routing_stats(all);
      met.grpo_frac = rs.grpo_fraction;
      met.sdpo_frac = rs.sdpo_fraction;
      met.teacher_avail_frac = rs.teacher_avail_fraction;
      const double n_rollouts = static_cast<double>(all.size());
      met.mean_response_length = resp_len / n_rollouts;
      met.train_accuracy = acc / n_rollouts;
      met.mean_teacher_entropy =
          entropy_count > 0 ? entropy_sum / entropy_count : 0.0;
    }

    // inner optimizer updates over mini-batch partitions of the questions
    const int num_minibatches = cfg_.question_batch_size / cfg_.mini_batch_size;
    const double lr = lr_schedule(state_.step, cfg_.learning_rate,
                                  cfg_.warmup_steps);
    double loss_sum = 0.0, grad_norm_sum = 0.0;
    for (int mb = 0; mb < num_minibatches; ++mb) {
      const int lo = mb * cfg_.mini_batch_size;
      const int hi = lo + cfg_.mini_batch_size;
      const MiniBatchLoss mbl = minibatch_loss(prepared, lo, hi);
      loss_sum += mbl.loss;
      grad_norm_sum += optimizer_update(state_.student, mbl.grad, state_.moments,
                                        lr, cfg_.weight_decay,
                                        cfg_.grad_clip_norm);
    }
    met.mean_loss = loss_sum / num_minibatches;
    met.grad_norm = grad_norm_sum / num_minibatches;

    // teacher snapshot moves toward the student once per outer step
    state_.teacher = ema_update(state_.teacher, state_.student, cfg_.ema_rate);
    state_.step += 1;

    met.wall_seconds =
        std::max(1e-9, std::chrono::duration<double>(
                           std::chrono::steady_clock::now() - t0)
                           .count());
    met.eval_avg_at_k = state_.last_eval;

    StepResult res;
    res.metrics = met;
    for (const auto& p : prepared) res.decisions.push_back(p.decisions);
    return res;
  }

  double evaluate_now() const {
    return evaluate(state_.student, env_, cfg_.eval_prompts, cfg_.eval_rollouts,
                    cfg_.eval_temperature, cfg_.eval_top_p,
                    cfg_.max_response_len, cfg_.seed, state_.step);
  }

 private:
  // Per-token teacher data, fixed for the whole outer step (the EMA snapshot
  // does not move during inner updates).
  struct TokenTeacher {
    std::vector<int> indices;
    std::vector<double> teacher_probs;  // renormalized over indices
    std::vector<double> teacher_logprobs_full;  // full-vocab, for ADV_MIX
    double entropy = 0.0;  // over the renormalized support
    bool dropped = false;
  };

  struct Prepared {
    RolloutGroup group;
    std::vector<std::optional<TeacherContext>> contexts;
    std::vector<RoutingDecision> decisions;
    AdvantageVector advantages;
    // teacher[i] is nonempty iff rollout i carries distillation tokens
    std::vector<std::vector<TokenTeacher>> teacher;
  };

  struct MiniBatchLoss {
    double loss = 0.0;
    std::vector<double> grad;
  };

  bool needs_teacher_info() const {
    return cfg_.algorithm != Algorithm::GRPO;
  }

  // Whether a rollout with flags (c, m) carries distillation tokens under the
  // configured algorithm.
  bool distills(bool correct, bool avail) const {
    switch (cfg_.algorithm) {
      case Algorithm::GRPO: return false;
      case Algorithm::SDPO: return avail;           // no correctness routing
      case Algorithm::ADV_MIX: return avail;        // mixing instead of routing
      default: return !correct && avail;            // SRPO / SRPO_NO_DW
    }
  }

  Prepared prepare_group(RolloutGroup group) {
    const int G = static_cast<int>(group.rollouts.size());
    Prepared p;
    // rewards via the exact verifier
    for (auto& r : group.rollouts)
      r.reward = verify(env_, group.prompt, r.response);
    p.group = std::move(group);

    p.contexts.resize(G);
    if (needs_teacher_info()) {
      for (int i = 0; i < G; ++i) {
        Rng rng = derive_rng(cfg_.seed, state_.step,
                             static_cast<std::uint64_t>(p.group.group_id) *
                                     cfg_.group_size +
                                 i,
                             stream::kTeacherPick);
        p.contexts[i] = build_teacher_context(p.group, i, rng);
      }
    }

    // decisions: the SRPO rule, with branch overridden for the SDPO and
    // ADV_MIX baselines (their distillation set ignores correctness)
    p.decisions.resize(G);
    for (int i = 0; i < G; ++i) {
      RoutingDecision& d = p.decisions[i];
      d.correct = is_correct(p.group.rollouts[i].reward);
      d.teacher_available = needs_teacher_info()
                                ? p.contexts[i].has_value()
                                : !correct_siblings(p.group, i).empty();
      d.branch = distills(d.correct, d.teacher_available) ? Branch::SDPO
                                                          : Branch::GRPO;
      if (p.contexts[i] && d.branch == Branch::SDPO)
        d.teacher_index = p.contexts[i]->source_rollout;
    }

    std::vector<double> rewards;
    for (const auto& r : p.group.rollouts) rewards.push_back(r.reward);
    p.advantages = group_relative_advantages(rewards, cfg_.adv_eps);

    // teacher distributions for distillation tokens, scored with the EMA
    // snapshot on the enriched context
    p.teacher.resize(G);
    for (int i = 0; i < G; ++i) {
      if (p.decisions[i].branch != Branch::SDPO) continue;
      const TokenSeq& response = p.group.rollouts[i].response;
      const auto dists =
          score_trajectory(state_.teacher, p.contexts[i]->tokens, response);
      auto& per_tok = p.teacher[i];
      per_tok.resize(dists.size());
      for (std::size_t t = 0; t < dists.size(); ++t) {
        TokenTeacher& tt = per_tok[t];
        const std::vector<double>& lp = dists[t].logprobs;
        // top-K by teacher probability, ties to the lower index
        std::vector<int> order(lp.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](int a, int b) { return lp[a] > lp[b]; });
        const int kk = std::min<int>(cfg_.top_k, static_cast<int>(lp.size()));
        tt.indices.assign(order.begin(), order.begin() + kk);
        std::sort(tt.indices.begin(), tt.indices.end());
        double sum = 0.0;
        for (int idx : tt.indices) sum += std::exp(lp[idx]);
        for (int idx : tt.indices)
          tt.teacher_probs.push_back(std::exp(lp[idx]) / sum);
        // a zero teacher probability on the support would make the
        // divergence infinite; flag and drop the token instead
        for (double q : tt.teacher_probs)
          if (!(q > 0.0)) tt.dropped = true;
        tt.entropy = teacher_entropy(tt.teacher_probs);
        if (cfg_.algorithm == Algorithm::ADV_MIX)
          tt.teacher_logprobs_full = lp;
      }
    }
    return p;
  }

  MiniBatchLoss minibatch_loss(const std::vector<Prepared>& prepared, int lo,
                               int hi) {
    // dynamic weights over the Omega_sdpo of this mini-batch
    const bool dw_applies = cfg_.algorithm == Algorithm::SRPO ||
                            cfg_.algorithm == Algorithm::SRPO_NO_DW;
    const double beta =
        cfg_.algorithm == Algorithm::SRPO ? cfg_.dw_beta : 0.0;
    std::vector<double> entropies;
    for (int g = lo; g < hi; ++g)
      for (const auto& per_rollout : prepared[g].teacher)
        for (const auto& tt : per_rollout)
          if (!tt.dropped) entropies.push_back(tt.entropy);
    std::vector<double> weights;
    if (dw_applies && !entropies.empty())
      weights = dynamic_weights(entropies, beta);

    // detached current-policy log-probs for truncated IS weights (and for the
    // ADV_MIX advantage), recomputed each inner update
    ad::Tape tape;
    const TapeModel tm = tape_model(tape, state_.student);
    std::vector<int> token_losses;
    long token_count = 0;
    std::size_t omega_pos = 0;
    for (int g = lo; g < hi; ++g) {
      const Prepared& p = prepared[g];
      for (int i = 0; i < static_cast<int>(p.group.rollouts.size()); ++i) {
        const Rollout& r = p.group.rollouts[i];
        const auto current = score_trajectory(state_.student, p.group.prompt,
                                              r.response);
        const auto logits = tape_score_logits(tm, p.group.prompt, r.response);
        const bool sdpo_branch = p.decisions[i].branch == Branch::SDPO;
        for (std::size_t t = 0; t < r.response.size(); ++t) {
          const double lp_cur = current[t].logprobs[r.response[t]];
          const double isw =
              is_weight(lp_cur, r.behavior_logprobs[t], cfg_.is_clip_rho);
          if (!sdpo_branch) {
            const int lp_new = tape.pick(tape.log_softmax(logits[t]),
                                         r.response[t]);
            const int l = graph::grpo_token_loss(
                tape, lp_new, r.behavior_logprobs[t], p.advantages.values[i],
                cfg_.eps_low, cfg_.eps_high);
            token_losses.push_back(tape.scale(l, isw));
            ++token_count;
            continue;
          }
          const TokenTeacher& tt = p.teacher[i][t];
          if (tt.dropped) continue;
          const int student_probs =
              graph::support_student_probs(tape, logits[t], tt.indices);
          if (cfg_.algorithm == Algorithm::ADV_MIX) {
            SupportSet supp = topk_support(tt.teacher_logprobs_full,
                                           current[t].logprobs, cfg_.top_k);
            const std::vector<double> mixed = advantage_mix(
                p.advantages.values[i], sdpo_logit_advantage(supp),
                cfg_.mix_lambda);
            token_losses.push_back(graph::advantage_mix_token_loss(
                tape, student_probs, mixed, isw));
          } else {
            const double w = dw_applies ? weights[omega_pos] : 1.0;
            token_losses.push_back(graph::sdpo_token_loss(
                tape, cfg_.divergence, student_probs, tt.teacher_probs, w,
                isw));
          }
          ++omega_pos;
          ++token_count;
        }
      }
    }
    if (token_count == 0)
      throw std::runtime_error("minibatch_loss: zero valid tokens");
    const int root = tape.scale(tape.sum_scalars(token_losses),
                                1.0 / static_cast<double>(token_count));
    MiniBatchLoss out;
    out.loss = tape.val(root)[0];
    if (!std::isfinite(out.loss))
      throw std::runtime_error("train_step: non-finite loss at step " +
                               std::to_string(state_.step + 1));
    tape.backward(root);
    out.grad = collect_flat_grad(tm);
    return out;
  }

  TrainConfig cfg_;
  EnvSpec env_;
  TrainerState state_;
};

}  // namespace srpo

#endif  // SRPO_TRAINER_HPP_
