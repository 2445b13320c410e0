#ifndef SRPO_ROUTER_HPP_
#define SRPO_ROUTER_HPP_

#include <optional>
#include <stdexcept>
#include <vector>

#include "srpo/core.hpp"
#include "srpo/env.hpp"

// Sample-level routing: z_sdpo = (1 - c) * m, z_grpo = 1 - z_sdpo.

namespace srpo {

inline Branch route_rollout(bool correct, bool teacher_available) {
  return (!correct && teacher_available) ? Branch::SDPO : Branch::GRPO;
}

inline std::vector<RoutingDecision> route_group(
    const RolloutGroup& group,
    const std::vector<std::optional<TeacherContext>>& contexts) {
  if (contexts.size() != group.rollouts.size())
    throw std::runtime_error("route_group: contexts misaligned with rollouts");
  std::vector<RoutingDecision> out(group.rollouts.size());
  for (int i = 0; i < static_cast<int>(group.rollouts.size()); ++i) {
    RoutingDecision& d = out[i];
    d.correct = is_correct(group.rollouts[i].reward);
    d.teacher_available = contexts[i].has_value();
    d.branch = route_rollout(d.correct, d.teacher_available);
    if (contexts[i]) d.teacher_index = contexts[i]->source_rollout;
  }
  return out;
}

struct RoutingStats {
  double grpo_fraction = 0.0;
  double sdpo_fraction = 0.0;
  double teacher_avail_fraction = 0.0;
};

inline RoutingStats routing_stats(const std::vector<RoutingDecision>& batch) {
  if (batch.empty()) throw std::runtime_error("routing_stats: empty batch");
  RoutingStats s;
  for (const auto& d : batch) {
    if (d.branch == Branch::SDPO) s.sdpo_fraction += 1.0;
    if (d.teacher_available) s.teacher_avail_fraction += 1.0;
  }
  const double n = static_cast<double>(batch.size());
  s.sdpo_fraction /= n;
  s.teacher_avail_fraction /= n;
  s.grpo_fraction = 1.0 - s.sdpo_fraction;
  return s;
}

}  // namespace srpo

#endif  // SRPO_ROUTER_HPP_
