#ifndef SRPO_CORE_HPP_
#define SRPO_CORE_HPP_

#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

// Domain types shared by every module. All values are immutable once built;
// validation happens at construction / load time.

namespace srpo {

using TokenId = std::int32_t;
using TokenSeq = std::vector<TokenId>;

enum class Branch { GRPO, SDPO };
enum class Divergence { FKL, RKL, JS };
enum class Algorithm { GRPO, SDPO, SRPO, SRPO_NO_DW, ADV_MIX };

inline std::string to_string(Branch b) {
  return b == Branch::GRPO ? "GRPO" : "SDPO";
}

inline std::string to_string(Divergence d) {
  switch (d) {
    case Divergence::FKL: return "FKL";
    case Divergence::RKL: return "RKL";
    default: return "JS";
  }
}

inline Divergence divergence_from_string(const std::string& s) {
  if (s == "FKL") return Divergence::FKL;
  if (s == "RKL") return Divergence::RKL;
  if (s == "JS") return Divergence::JS;
  throw std::runtime_error("unknown divergence: " + s);
}

inline std::string to_string(Algorithm a) {
  switch (a) {
    case Algorithm::GRPO: return "GRPO";
    case Algorithm::SDPO: return "SDPO";
    case Algorithm::SRPO: return "SRPO";
    case Algorithm::SRPO_NO_DW: return "SRPO_NO_DW";
    default: return "ADV_MIX";
  }
}

inline Algorithm algorithm_from_string(const std::string& s) {
  if (s == "GRPO") return Algorithm::GRPO;
  if (s == "SDPO") return Algorithm::SDPO;
  if (s == "SRPO") return Algorithm::SRPO;
  if (s == "SRPO_NO_DW") return Algorithm::SRPO_NO_DW;
  if (s == "ADV_MIX") return Algorithm::ADV_MIX;
  throw std::runtime_error("unknown algorithm: " + s);
}

// One sampled trajectory. behavior_logprobs are natural-log probabilities of
// each response token under the untruncated temperature-1 policy, recorded at
// sampling time.
struct Rollout {
  TokenSeq prompt;
  TokenSeq response;
  std::vector<double> behavior_logprobs;
  double reward = 0.0;
};

// A prompt plus its G sibling rollouts: the unit of advantage normalization
// and of teacher construction.
struct RolloutGroup {
  TokenSeq prompt;
  std::vector<Rollout> rollouts;
  int group_id = 0;
};

// Per-rollout routing outcome.
struct RoutingDecision {
  bool correct = false;            // c_i
  bool teacher_available = false;  // m_i
  Branch branch = Branch::GRPO;
  std::optional<int> teacher_index;
};

// The unit the combined objective aggregates.
struct TokenObjective {
  int rollout_index = 0;
  int position = 0;
  Branch branch = Branch::GRPO;
  double loss = 0.0;
  double weight = 1.0;  // dynamic weight; always 1.0 on the GRPO branch
  bool valid = true;
};

struct ModelConfig {
  int vocab_size = 14;
  int context_len = 64;
  int embed_dim = 32;
  int num_layers = 2;
  int num_heads = 2;
  int mlp_expansion = 4;

  bool operator==(const ModelConfig&) const = default;
};

enum class EnvKind { CopySort, ModArith };

inline std::string to_string(EnvKind k) {
  return k == EnvKind::CopySort ? "CopySort" : "ModArith";
}

inline EnvKind env_kind_from_string(const std::string& s) {
  if (s == "CopySort") return EnvKind::CopySort;
  if (s == "ModArith") return EnvKind::ModArith;
  throw std::runtime_error("unknown env kind: " + s);
}

struct EnvConfig {
  EnvKind kind = EnvKind::CopySort;
  int min_len = 3;
  int max_len = 5;
};

// All hyperparameters. Defaults are the Table-4 SRPO column plus desk-scale
// model/environment settings; the desk presets under configs/ override the
// batching and learning-rate rows for the tiny model.
struct TrainConfig {
  int group_size = 8;             // G
  int question_batch_size = 32;
  int mini_batch_size = 32;
  double learning_rate = 5e-6;
  int warmup_steps = 10;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  double eps_high = 0.28;
  double eps_low = 0.2;
  double is_clip_rho = 2.0;
  Divergence divergence = Divergence::JS;
  int top_k = 100;
  double ema_rate = 0.05;   // alpha
  double dw_beta = 1.0;     // beta
  double adv_eps = 1e-4;
  Algorithm algorithm = Algorithm::SRPO;
  double mix_lambda = 0.9;  // lambda, ADV_MIX only
  double rollout_temperature = 1.0;
  double eval_temperature = 0.6;
  double eval_top_p = 0.95;
  int eval_rollouts = 16;
  std::uint64_t seed = 0;
  int max_prompt_len = 8;
  int max_response_len = 8;
  int total_steps = 300;
  int eval_interval = 20;
  int eval_prompts = 16;
  ModelConfig model;
  EnvConfig env;
};

inline nlohmann::json to_json(const ModelConfig& m) {
  return {{"vocab_size", m.vocab_size},   {"context_len", m.context_len},
          {"embed_dim", m.embed_dim},     {"num_layers", m.num_layers},
          {"num_heads", m.num_heads},     {"mlp_expansion", m.mlp_expansion}};
}

inline nlohmann::json to_json(const EnvConfig& e) {
  return {{"kind", to_string(e.kind)},
          {"min_len", e.min_len},
          {"max_len", e.max_len}};
}

inline nlohmann::json to_json(const TrainConfig& c) {
  return {{"group_size", c.group_size},
          {"question_batch_size", c.question_batch_size},
          {"mini_batch_size", c.mini_batch_size},
          {"learning_rate", c.learning_rate},
          {"warmup_steps", c.warmup_steps},
          {"weight_decay", c.weight_decay},
          {"grad_clip_norm", c.grad_clip_norm},
          {"eps_high", c.eps_high},
          {"eps_low", c.eps_low},
          {"is_clip_rho", c.is_clip_rho},
          {"divergence", to_string(c.divergence)},
          {"top_k", c.top_k},
          {"ema_rate", c.ema_rate},
          {"dw_beta", c.dw_beta},
          {"adv_eps", c.adv_eps},
          {"algorithm", to_string(c.algorithm)},
          {"mix_lambda", c.mix_lambda},
          {"rollout_temperature", c.rollout_temperature},
          {"eval_temperature", c.eval_temperature},
          {"eval_top_p", c.eval_top_p},
          {"eval_rollouts", c.eval_rollouts},
          {"seed", c.seed},
          {"max_prompt_len", c.max_prompt_len},
          {"max_response_len", c.max_response_len},
          {"total_steps", c.total_steps},
          {"eval_interval", c.eval_interval},
          {"eval_prompts", c.eval_prompts},
          {"model", to_json(c.model)},
          {"env", to_json(c.env)}};
}

namespace detail {

// Unknown keys are an error: catches typos in ablation sweeps.
inline void check_keys(const nlohmann::json& j,
                       const std::set<std::string>& allowed,
                       const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (!allowed.count(it.key())) {
      throw std::runtime_error("unknown config key '" + it.key() + "' in " +
                               where);
    }
  }
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace detail

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j,
                     {"vocab_size", "context_len", "embed_dim", "num_layers",
                      "num_heads", "mlp_expansion"},
                     "model");
  ModelConfig m;
  detail::maybe(j, "vocab_size", m.vocab_size);
  detail::maybe(j, "context_len", m.context_len);
  detail::maybe(j, "embed_dim", m.embed_dim);
  detail::maybe(j, "num_layers", m.num_layers);
  detail::maybe(j, "num_heads", m.num_heads);
  detail::maybe(j, "mlp_expansion", m.mlp_expansion);
  return m;
}

inline EnvConfig env_config_from_json(const nlohmann::json& j) {
  detail::check_keys(j, {"kind", "min_len", "max_len"}, "env");
  EnvConfig e;
  if (j.contains("kind")) e.kind = env_kind_from_string(j.at("kind"));
  detail::maybe(j, "min_len", e.min_len);
  detail::maybe(j, "max_len", e.max_len);
  return e;
}

inline TrainConfig config_from_json(const nlohmann::json& j) {
  detail::check_keys(
      j, {"group_size",       "question_batch_size", "mini_batch_size",
          "learning_rate",    "warmup_steps",        "weight_decay",
          "grad_clip_norm",   "eps_high",            "eps_low",
          "is_clip_rho",      "divergence",          "top_k",
          "ema_rate",         "dw_beta",             "adv_eps",
          "algorithm",        "mix_lambda",          "rollout_temperature",
          "eval_temperature", "eval_top_p",          "eval_rollouts",
          "seed",             "max_prompt_len",      "max_response_len",
          "total_steps",      "eval_interval",       "eval_prompts",
          "model",            "env"},
      "config");
  TrainConfig c;
  detail::maybe(j, "group_size", c.group_size);
  detail::maybe(j, "question_batch_size", c.question_batch_size);
  detail::maybe(j, "mini_batch_size", c.mini_batch_size);
  detail::maybe(j, "learning_rate", c.learning_rate);
  detail::maybe(j, "warmup_steps", c.warmup_steps);
  detail::maybe(j, "weight_decay", c.weight_decay);
  detail::maybe(j, "grad_clip_norm", c.grad_clip_norm);
  detail::maybe(j, "eps_high", c.eps_high);
  detail::maybe(j, "eps_low", c.eps_low);
  detail::maybe(j, "is_clip_rho", c.is_clip_rho);
  if (j.contains("divergence"))
    c.divergence = divergence_from_string(j.at("divergence"));
  detail::maybe(j, "top_k", c.top_k);
  detail::maybe(j, "ema_rate", c.ema_rate);
  detail::maybe(j, "dw_beta", c.dw_beta);
  detail::maybe(j, "adv_eps", c.adv_eps);
  if (j.contains("algorithm"))
    c.algorithm = algorithm_from_string(j.at("algorithm"));
  detail::maybe(j, "mix_lambda", c.mix_lambda);
  detail::maybe(j, "rollout_temperature", c.rollout_temperature);
  detail::maybe(j, "eval_temperature", c.eval_temperature);
  detail::maybe(j, "eval_top_p", c.eval_top_p);
  detail::maybe(j, "eval_rollouts", c.eval_rollouts);
  detail::maybe(j, "seed", c.seed);
  detail::maybe(j, "max_prompt_len", c.max_prompt_len);
  detail::maybe(j, "max_response_len", c.max_response_len);
  detail::maybe(j, "total_steps", c.total_steps);
  detail::maybe(j, "eval_interval", c.eval_interval);
  detail::maybe(j, "eval_prompts", c.eval_prompts);
  if (j.contains("model")) c.model = model_config_from_json(j.at("model"));
  if (j.contains("env")) c.env = env_config_from_json(j.at("env"));
  return c;
}

// Returns cfg unchanged if every invariant holds; otherwise throws naming the
// first violated field.
inline const TrainConfig& validate_config(const TrainConfig& cfg) {
  auto fail = [](const std::string& msg) {
    throw std::runtime_error("invalid config: " + msg);
  };
  if (cfg.group_size < 2) fail("group_size must be >= 2");
  if (cfg.question_batch_size < 1) fail("question_batch_size must be >= 1");
  if (cfg.mini_batch_size < 1) fail("mini_batch_size must be >= 1");
  if (cfg.question_batch_size % cfg.mini_batch_size != 0)
    fail("question_batch_size not divisible by mini_batch_size");
  if (!(cfg.learning_rate > 0)) fail("learning_rate must be > 0");
  if (cfg.warmup_steps < 1) fail("warmup_steps must be >= 1");
  if (cfg.weight_decay < 0) fail("weight_decay must be >= 0");
  if (!(cfg.grad_clip_norm > 0)) fail("grad_clip_norm must be > 0");
  if (!(cfg.eps_low > 0)) fail("eps_low must be > 0");
  if (!(cfg.eps_high > 0)) fail("eps_high must be > 0");
  if (cfg.eps_low >= 1.0) fail("eps_low must be < 1");
  if (cfg.is_clip_rho < 1.0) fail("is_clip_rho must be >= 1");
  if (cfg.top_k < 1) fail("top_k must be >= 1");
  if (cfg.ema_rate < 0 || cfg.ema_rate > 1) fail("ema_rate out of [0,1]");
  if (cfg.dw_beta < 0) fail("dw_beta must be >= 0");
  if (!(cfg.adv_eps >= 0)) fail("adv_eps must be >= 0");
  if (cfg.mix_lambda < 0 || cfg.mix_lambda > 1) fail("mix_lambda out of [0,1]");
  if (!(cfg.rollout_temperature > 0)) fail("rollout_temperature must be > 0");
  if (!(cfg.eval_temperature > 0)) fail("eval_temperature must be > 0");
  if (!(cfg.eval_top_p > 0 && cfg.eval_top_p <= 1))
    fail("eval_top_p out of (0,1]");
  if (cfg.eval_rollouts < 1) fail("eval_rollouts must be >= 1");
  if (cfg.max_prompt_len < 1) fail("max_prompt_len must be >= 1");
  if (cfg.max_response_len < 1) fail("max_response_len must be >= 1");
  if (cfg.total_steps < 1) fail("total_steps must be >= 1");
  if (cfg.eval_interval < 1) fail("eval_interval must be >= 1");
  if (cfg.eval_prompts < 1) fail("eval_prompts must be >= 1");
  const ModelConfig& m = cfg.model;
  if (m.vocab_size < 2) fail("model.vocab_size must be >= 2");
  if (m.embed_dim < 1) fail("model.embed_dim must be >= 1");
  if (m.num_layers < 1) fail("model.num_layers must be >= 1");
  if (m.num_heads < 1) fail("model.num_heads must be >= 1");
  if (m.embed_dim % m.num_heads != 0)
    fail("model.embed_dim not divisible by num_heads");
  if (m.mlp_expansion < 1) fail("model.mlp_expansion must be >= 1");
  if (m.context_len < cfg.max_prompt_len + cfg.max_response_len)
    fail("model.context_len shorter than max_prompt_len + max_response_len");
  // Longest teacher context: prompt + TEACH + sibling response + SEP, then the
  // scored response on top.
  if (m.context_len <
      cfg.max_prompt_len + 2 + 2 * cfg.max_response_len)
    fail("model.context_len shorter than the longest teacher context");
  if (cfg.env.min_len < 1) fail("env.min_len must be >= 1");
  if (cfg.env.max_len < cfg.env.min_len) fail("env.max_len < env.min_len");
  if (cfg.env.max_len + 1 > cfg.max_prompt_len)
    fail("env.max_len + 1 exceeds max_prompt_len");
  if (cfg.env.max_len + 1 > cfg.max_response_len)
    fail("env.max_len + 1 exceeds max_response_len");
  return cfg;
}

// JSON serialization for the remaining value types (round-trip identity is a
// tested property).

inline nlohmann::json to_json(const Rollout& r) {
  return {{"prompt", r.prompt},
          {"response", r.response},
          {"behavior_logprobs", r.behavior_logprobs},
          {"reward", r.reward}};
}

inline Rollout rollout_from_json(const nlohmann::json& j) {
  Rollout r;
  r.prompt = j.at("prompt").get<TokenSeq>();
  r.response = j.at("response").get<TokenSeq>();
  r.behavior_logprobs = j.at("behavior_logprobs").get<std::vector<double>>();
  r.reward = j.at("reward").get<double>();
  return r;
}

inline nlohmann::json to_json(const RolloutGroup& g) {
  nlohmann::json rollouts = nlohmann::json::array();
  for (const auto& r : g.rollouts) rollouts.push_back(to_json(r));
  return {{"prompt", g.prompt},
          {"rollouts", rollouts},
          {"group_id", g.group_id}};
}

inline RolloutGroup group_from_json(const nlohmann::json& j) {
  RolloutGroup g;
  g.prompt = j.at("prompt").get<TokenSeq>();
  for (const auto& r : j.at("rollouts")) g.rollouts.push_back(rollout_from_json(r));
  g.group_id = j.at("group_id").get<int>();
  return g;
}

inline nlohmann::json to_json(const RoutingDecision& d) {
  nlohmann::json j = {{"correct", d.correct},
                      {"teacher_available", d.teacher_available},
                      {"branch", to_string(d.branch)}};
  if (d.teacher_index)
    j["teacher_index"] = *d.teacher_index;
  else
    j["teacher_index"] = nullptr;
  return j;
}

inline RoutingDecision routing_decision_from_json(const nlohmann::json& j) {
  RoutingDecision d;
  d.correct = j.at("correct").get<bool>();
  d.teacher_available = j.at("teacher_available").get<bool>();
  d.branch = j.at("branch").get<std::string>() == "SDPO" ? Branch::SDPO
                                                         : Branch::GRPO;
  if (!j.at("teacher_index").is_null())
    d.teacher_index = j.at("teacher_index").get<int>();
  return d;
}

}  // namespace srpo

#endif  // SRPO_CORE_HPP_
