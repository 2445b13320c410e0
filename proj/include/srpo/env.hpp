#ifndef SRPO_ENV_HPP_
#define SRPO_ENV_HPP_

#include <algorithm>
#include <optional>
#include <stdexcept>
#include <vector>

#include "srpo/core.hpp"
#include "srpo/rng.hpp"

// Toy verifiable environments: prompt generation, exact binary verifiers, and
// teacher-information contexts built from correct sibling rollouts.

namespace srpo {

// Vocabulary layout shared by both environments: digits 0-9 plus four control
// tokens, V = 14.
namespace tok {
inline constexpr TokenId kSep = 10;
inline constexpr TokenId kEos = 11;
inline constexpr TokenId kPad = 12;
inline constexpr TokenId kTeach = 13;
inline constexpr int kVocab = 14;
}  // namespace tok

struct EnvSpec {
  EnvKind kind = EnvKind::CopySort;
  int min_len = 3;
  int max_len = 5;
};

inline EnvSpec make_env(const EnvConfig& c) {
  return EnvSpec{c.kind, c.min_len, c.max_len};
}

struct Task {
  TokenSeq prompt;
  TokenSeq hidden_solution;
};

// Enriched prefix for the self-teacher:
//   prompt  TEACH  sibling-response  SEP
// the token-level analogue of the "prompt + correct solution + resolve"
// template.
struct TeacherContext {
  TokenSeq tokens;
  int source_rollout = -1;
};

inline Task gen_task(const EnvSpec& env, Rng& rng) {
  Task t;
  if (env.kind == EnvKind::CopySort) {
    const int len =
        env.min_len +
        static_cast<int>(rng.uniform_int(
            static_cast<std::uint64_t>(env.max_len - env.min_len + 1)));
    TokenSeq digits(len);
    for (auto& d : digits) d = static_cast<TokenId>(rng.uniform_int(10));
    t.prompt = digits;
    t.prompt.push_back(tok::kSep);
    std::sort(digits.begin(), digits.end());
    t.hidden_solution = digits;
    t.hidden_solution.push_back(tok::kEos);
  } else {  // ModArith
    const TokenId d1 = static_cast<TokenId>(rng.uniform_int(10));
    const TokenId d2 = static_cast<TokenId>(rng.uniform_int(10));
    t.prompt = {d1, d2, tok::kSep};
    t.hidden_solution = {static_cast<TokenId>((d1 + d2) % 10), tok::kEos};
  }
  return t;
}

// Recomputes the hidden solution from the prompt. Prompts end with SEP.
inline TokenSeq solution_for_prompt(const EnvSpec& env, const TokenSeq& prompt) {
  if (prompt.empty() || prompt.back() != tok::kSep)
    throw std::runtime_error("malformed prompt: missing SEP terminator");
  TokenSeq digits(prompt.begin(), prompt.end() - 1);
  if (digits.empty())
    throw std::runtime_error("malformed prompt: no digits before SEP");
  for (TokenId d : digits)
    if (d < 0 || d > 9)
      throw std::runtime_error("malformed prompt: non-digit token");
  TokenSeq sol;
  if (env.kind == EnvKind::CopySort) {
    std::sort(digits.begin(), digits.end());
    sol = digits;
  } else {
    if (digits.size() != 2)
      throw std::runtime_error("malformed ModArith prompt");
    sol = {static_cast<TokenId>((digits[0] + digits[1]) % 10)};
  }
  sol.push_back(tok::kEos);
  return sol;
}

// 1.0 iff the response equals the hidden solution exactly, including the EOS
// position; 0.0 otherwise.
inline double verify(const EnvSpec& env, const TokenSeq& prompt,
                     const TokenSeq& response) {
  return response == solution_for_prompt(env, prompt) ? 1.0 : 0.0;
}

inline bool is_correct(double reward) { return reward >= 0.5; }

// Indices j != i whose reward clears the correctness threshold.
inline std::vector<int> correct_siblings(const RolloutGroup& group, int i) {
  std::vector<int> out;
  for (int j = 0; j < static_cast<int>(group.rollouts.size()); ++j)
    if (j != i && is_correct(group.rollouts[j].reward)) out.push_back(j);
  return out;
}

// Picks one correct sibling uniformly at random and builds the enriched
// prefix. Returns nullopt when no correct sibling exists (a rollout never
// serves as its own teacher).
inline std::optional<TeacherContext> build_teacher_context(
    const RolloutGroup& group, int i, Rng& rng) {
  if (i < 0 || i >= static_cast<int>(group.rollouts.size()))
    throw std::runtime_error("build_teacher_context: rollout index out of range");
  const std::vector<int> candidates = correct_siblings(group, i);
  if (candidates.empty()) return std::nullopt;
  const int j = candidates[rng.uniform_int(candidates.size())];
  TeacherContext ctx;
  ctx.tokens = group.prompt;
  ctx.tokens.push_back(tok::kTeach);
  const TokenSeq& resp = group.rollouts[j].response;
  ctx.tokens.insert(ctx.tokens.end(), resp.begin(), resp.end());
  ctx.tokens.push_back(tok::kSep);
  ctx.source_rollout = j;
  return ctx;
}

}  // namespace srpo

#endif  // SRPO_ENV_HPP_
