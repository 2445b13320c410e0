#ifndef SRPO_OBJECTIVE_HPP_
#define SRPO_OBJECTIVE_HPP_

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "srpo/core.hpp"

// Loss mathematics: group-relative advantages, clipped surrogate, truncated
// importance weights, top-K divergences, teacher entropy, dynamic weights,
// combined objective, and the advantage-mix ablation. Everything here is a
// pure function over plain doubles; the differentiable counterparts used in
// training live in loss_graph.hpp and must agree with these (tested).

namespace srpo {

struct AdvantageVector {
  std::vector<double> values;  // sum is 0 within 1e-9 by construction
};

// Top-K restriction: indices are the K largest teacher probabilities, both
// distributions renormalized over them.
struct SupportSet {
  std::vector<int> indices;
  std::vector<double> teacher_probs;
  std::vector<double> student_probs;
};

// A_i = (r_i - mean) / (population_std + adv_eps)
inline AdvantageVector group_relative_advantages(
    const std::vector<double>& rewards, double adv_eps) {
  if (rewards.size() < 2)
    throw std::runtime_error("group_relative_advantages: need >= 2 rewards");
  const double n = static_cast<double>(rewards.size());
  const double mean =
      std::accumulate(rewards.begin(), rewards.end(), 0.0) / n;
  double var = 0.0;
  for (double r : rewards) var += (r - mean) * (r - mean);
  var /= n;
  const double denom = std::sqrt(var) + adv_eps;
  AdvantageVector a;
  a.values.reserve(rewards.size());
  for (double r : rewards) a.values.push_back((r - mean) / denom);
  return a;
}

// Truncated importance weight: min(exp(lp_current - lp_behavior), rho).
inline double is_weight(double logprob_current, double logprob_behavior,
                        double rho) {
  if (rho < 1.0) throw std::runtime_error("is_weight: rho must be >= 1");
  return std::min(std::exp(logprob_current - logprob_behavior), rho);
}

// Clipped surrogate, per-token:
//   -min(ratio * A, clip(ratio, 1-eps_low, 1+eps_high) * A)
inline double grpo_token_loss(double logprob_new, double logprob_old,
                              double advantage, double eps_low,
                              double eps_high) {
  const double ratio = std::exp(logprob_new - logprob_old);
  const double clipped =
      std::clamp(ratio, 1.0 - eps_low, 1.0 + eps_high);
  return -std::min(ratio * advantage, clipped * advantage);
}

// Selects the K largest teacher probabilities (ties broken by lower index)
// and renormalizes both distributions over the selection. Inputs are
// log-probability vectors over the full vocabulary.
inline SupportSet topk_support(const std::vector<double>& teacher_logprobs,
                               const std::vector<double>& student_logprobs,
                               int k) {
  if (k < 1) throw std::runtime_error("topk_support: K must be >= 1");
  if (teacher_logprobs.size() != student_logprobs.size())
    throw std::runtime_error("topk_support: vocab size mismatch");
  const int v = static_cast<int>(teacher_logprobs.size());
  const int kk = std::min(k, v);
  std::vector<int> order(v);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return teacher_logprobs[a] > teacher_logprobs[b];
  });
  SupportSet s;
  s.indices.assign(order.begin(), order.begin() + kk);
  std::sort(s.indices.begin(), s.indices.end());
  double tsum = 0.0, psum = 0.0;
  for (int idx : s.indices) {
    tsum += std::exp(teacher_logprobs[idx]);
    psum += std::exp(student_logprobs[idx]);
  }
  for (int idx : s.indices) {
    s.teacher_probs.push_back(std::exp(teacher_logprobs[idx]) / tsum);
    s.student_probs.push_back(std::exp(student_logprobs[idx]) / psum);
  }
  return s;
}

namespace detail {
inline double xlogy_ratio(double x, double num, double den) {
  // x * log(num/den) with the 0*log0 := 0 convention; +inf when den == 0 and
  // x > 0 (callers flag and drop such tokens, never silently).
  if (x == 0.0) return 0.0;
  if (den == 0.0) return std::numeric_limits<double>::infinity();
  return x * (std::log(num) - std::log(den));
}
}  // namespace detail

// KL(p_student || q_teacher) on the renormalized support.
inline double forward_kl(const SupportSet& s) {
  double out = 0.0;
  for (std::size_t i = 0; i < s.indices.size(); ++i)
    out += detail::xlogy_ratio(s.student_probs[i], s.student_probs[i],
                               s.teacher_probs[i]);
  return out;
}

// KL(q_teacher || p_student) on the renormalized support.
inline double reverse_kl(const SupportSet& s) {
  double out = 0.0;
  for (std::size_t i = 0; i < s.indices.size(); ++i)
    out += detail::xlogy_ratio(s.teacher_probs[i], s.teacher_probs[i],
                               s.student_probs[i]);
  return out;
}

// JS = 0.5 KL(p||m) + 0.5 KL(q||m), m = 0.5 (p + q), natural log.
inline double js_divergence(const SupportSet& s) {
  double out = 0.0;
  for (std::size_t i = 0; i < s.indices.size(); ++i) {
    const double p = s.student_probs[i];
    const double q = s.teacher_probs[i];
    const double m = 0.5 * (p + q);
    out += 0.5 * detail::xlogy_ratio(p, p, m);
    out += 0.5 * detail::xlogy_ratio(q, q, m);
  }
  return out;
}

inline double divergence_value(const SupportSet& s, Divergence kind) {
  switch (kind) {
    case Divergence::FKL: return forward_kl(s);
    case Divergence::RKL: return reverse_kl(s);
    default: return js_divergence(s);
  }
}

// H = -sum q log q, natural log, 0 log 0 := 0.
inline double teacher_entropy(const std::vector<double>& q) {
  double h = 0.0;
  for (double p : q)
    if (p > 0.0) h -= p * std::log(p);
  return h;
}

inline double teacher_entropy(const SupportSet& s) {
  return teacher_entropy(s.teacher_probs);
}

// w~ = exp(-beta H); w = w~ / mean(w~). Output mean is exactly 1 by
// construction. The caller scopes the entropy list to the Omega_sdpo of the
// current optimizer mini-batch.
inline std::vector<double> dynamic_weights(const std::vector<double>& entropies,
                                           double beta) {
  if (entropies.empty())
    throw std::runtime_error("dynamic_weights: empty Omega_sdpo");
  if (beta < 0) throw std::runtime_error("dynamic_weights: beta must be >= 0");
  std::vector<double> w(entropies.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < entropies.size(); ++i) {
    w[i] = std::exp(-beta * entropies[i]);
    sum += w[i];
  }
  const double mean = sum / static_cast<double>(w.size());
  for (auto& x : w) x /= mean;
  return w;
}

// l_dw-sdpo = w * is_w * divergence(support). Infinite divergences propagate
// for the caller to flag and drop.
inline double sdpo_token_loss(const SupportSet& s, Divergence kind,
                              double weight, double is_w) {
  if (!(weight > 0)) throw std::runtime_error("sdpo_token_loss: weight <= 0");
  return weight * is_w * divergence_value(s, kind);
}

// Per-index logit advantage of the forward-KL loss with a stopgrad teacher:
// A(v) = -p(v) (log p(v) - log q(v)), so that grad L = sum_v grad log p(v) *
// (-A(v)). Test oracle for the gradient decomposition.
inline std::vector<double> sdpo_logit_advantage(const SupportSet& s) {
  std::vector<double> a(s.indices.size(), 0.0);
  for (std::size_t i = 0; i < s.indices.size(); ++i)
    a[i] = -detail::xlogy_ratio(s.student_probs[i], s.student_probs[i],
                                s.teacher_probs[i]);
  return a;
}

// (sum z_grpo l_grpo + sum z_sdpo l_dw-sdpo) / (valid GRPO + valid SDPO
// token count). Both branches normalize by the same total.
inline double combined_loss(const std::vector<TokenObjective>& tokens) {
  double total = 0.0;
  long count = 0;
  for (const auto& t : tokens) {
    if (!t.valid) continue;
    total += t.loss;
    ++count;
  }
  if (count == 0) throw std::runtime_error("combined_loss: zero valid tokens");
  return total / static_cast<double>(count);
}

// lambda * A_grpo broadcast over support indices + (1-lambda) * A_sdpo(v).
// Used only by the ADV_MIX ablation.
inline std::vector<double> advantage_mix(double a_grpo,
                                         const std::vector<double>& a_sdpo,
                                         double lambda) {
  if (lambda < 0 || lambda > 1)
    throw std::runtime_error("advantage_mix: lambda out of [0,1]");
  std::vector<double> out(a_sdpo.size());
  for (std::size_t i = 0; i < a_sdpo.size(); ++i)
    out[i] = lambda * a_grpo + (1.0 - lambda) * a_sdpo[i];
  return out;
}

}  // namespace srpo

#endif  // SRPO_OBJECTIVE_HPP_
