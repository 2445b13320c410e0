#ifndef SRPO_LOSS_GRAPH_HPP_
#define SRPO_LOSS_GRAPH_HPP_

#include <cmath>
#include <vector>

#include "srpo/autodiff.hpp"
#include "srpo/core.hpp"
#include "srpo/objective.hpp"

// Differentiable counterparts of the objective-module formulas, built on the
// autodiff tape. The teacher side is always a plain constant (stopgrad); only
// student log-probabilities carry gradient. Scalar agreement with
// objective.hpp is property-tested.

namespace srpo::graph {

// -min(ratio * A, clip(ratio, 1-eps_low, 1+eps_high) * A) where
// ratio = exp(lp_new - lp_old); lp_old and advantage are constants.
inline int grpo_token_loss(ad::Tape& t, int lp_new, double lp_old,
                           double advantage, double eps_low, double eps_high) {
  const int ratio = t.s_exp(t.s_addc(lp_new, -lp_old));
  const int unclipped = t.scale(ratio, advantage);
  const int clipped = t.scale(t.s_clip(ratio, 1.0 - eps_low, 1.0 + eps_high),
                              advantage);
  return t.s_neg(t.s_min(unclipped, clipped));
}

// Student probabilities renormalized over the support indices: softmax of the
// gathered logits (renormalization of exp(logprob) over a subset equals the
// softmax of the corresponding logits).
inline int support_student_probs(ad::Tape& t, int logits,
                                 const std::vector<int>& indices) {
  return t.softmax(t.gather(logits, indices));
}

// KL(p || q_const) = sum p log p - sum p log q
inline int forward_kl(ad::Tape& t, int p, const std::vector<double>& q) {
  ad::Vec logq(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) logq[i] = std::log(q[i]);
  const int plogp = t.dot(p, t.vlog(p));
  const int plogq = t.dot_const(p, logq);
  return t.add(plogp, t.s_neg(plogq));
}

// KL(q_const || p) = -H(q) - sum q log p
inline int reverse_kl(ad::Tape& t, int p, const std::vector<double>& q) {
  double neg_h = 0.0;
  for (double x : q)
    if (x > 0.0) neg_h += x * std::log(x);
  const int qlogp = t.dot_const(t.vlog(p), ad::Vec(q));
  return t.s_addc(t.s_neg(qlogp), neg_h);
}

// JS = 0.5 [sum p log p - sum p log m] + 0.5 [sum q log q - sum q log m],
// m = 0.5 (p + q)
inline int js_divergence(ad::Tape& t, int p, const std::vector<double>& q) {
  ad::Vec half_q(q.size());
  for (std::size_t i = 0; i < q.size(); ++i) half_q[i] = 0.5 * q[i];
  const int m = t.add_const(t.scale(p, 0.5), half_q);
  const int logm = t.vlog(m);
  double qlogq = 0.0;
  for (double x : q)
    if (x > 0.0) qlogq += x * std::log(x);
  const int plogp = t.dot(p, t.vlog(p));
  const int plogm = t.dot(p, logm);
  const int qlogm = t.dot_const(logm, ad::Vec(q));
  // 0.5 (plogp - plogm) + 0.5 (qlogq - qlogm)
  const int a = t.scale(t.add(plogp, t.s_neg(plogm)), 0.5);
  const int b = t.s_addc(t.scale(t.s_neg(qlogm), 0.5), 0.5 * qlogq);
  return t.add(a, b);
}

inline int divergence(ad::Tape& t, Divergence kind, int p,
                      const std::vector<double>& q) {
  switch (kind) {
    case Divergence::FKL: return forward_kl(t, p, q);
    case Divergence::RKL: return reverse_kl(t, p, q);
    default: return js_divergence(t, p, q);
  }
}

// weight * is_w * divergence; weight and is_w are detached constants.
inline int sdpo_token_loss(ad::Tape& t, Divergence kind, int student_probs,
                           const std::vector<double>& teacher_probs,
                           double weight, double is_w) {
  return t.scale(divergence(t, kind, student_probs, teacher_probs),
                 weight * is_w);
}

// Advantage-mix token loss: -sum_v A_mix(v) log p(v) with A_mix detached, so
// that grad = -sum_v A_mix(v) grad log p(v).
inline int advantage_mix_token_loss(ad::Tape& t, int student_probs,
                                    const std::vector<double>& mixed_advantage,
                                    double is_w) {
  ad::Vec neg_a(mixed_advantage.size());
  for (std::size_t i = 0; i < neg_a.size(); ++i) neg_a[i] = -mixed_advantage[i];
  return t.scale(t.dot_const(t.vlog(student_probs), std::move(neg_a)), is_w);
}

}  // namespace srpo::graph

#endif  // SRPO_LOSS_GRAPH_HPP_
