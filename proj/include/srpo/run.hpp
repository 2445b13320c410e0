#ifndef SRPO_RUN_HPP_
#define SRPO_RUN_HPP_

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "srpo/trainer.hpp"

// Run orchestration: drives the trainer for a fixed step budget and emits
// metrics.csv, rollouts.jsonl, and checkpoints into an output directory.

namespace srpo {

inline constexpr const char* kMetricsHeader =
    "step, wall_seconds, mean_loss, grpo_frac, sdpo_frac, teacher_avail_frac, "
    "mean_teacher_entropy, mean_response_length, train_accuracy, "
    "eval_avg_at_k, grad_norm, dropped_token_count";

inline std::string format_metrics_row(const StepMetrics& m) {
  std::ostringstream os;
  os.precision(17);
  os << m.step << ", " << m.wall_seconds << ", " << m.mean_loss << ", "
     << m.grpo_frac << ", " << m.sdpo_frac << ", " << m.teacher_avail_frac
     << ", " << m.mean_teacher_entropy << ", " << m.mean_response_length
     << ", " << m.train_accuracy << ", " << m.eval_avg_at_k << ", "
     << m.grad_norm << ", " << m.dropped_token_count;
  return os.str();
}

// Checkpoint layout: four param records (student, teacher, and the two
// optimizer moment vectors reuse the same record format), then one JSON line
// with scalar run state.
inline void save_checkpoint(const std::string& path, const TrainConfig& cfg,
                            const TrainerState& st) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
  write_param_record(os, st.student, "student", st.step, cfg.seed);
  write_param_record(os, st.teacher, "teacher", st.step, cfg.seed);
  PolicyParams mom;
  mom.cfg = st.student.cfg;
  mom.flat = st.moments.m;
  if (mom.flat.empty()) mom.flat.assign(st.student.flat.size(), 0.0);
  write_param_record(os, mom, "adam_m", st.step, cfg.seed);
  mom.flat = st.moments.v;
  if (mom.flat.empty()) mom.flat.assign(st.student.flat.size(), 0.0);
  write_param_record(os, mom, "adam_v", st.step, cfg.seed);
  nlohmann::json state = {{"role", "state"},
                          {"step", st.step},
                          {"adam_t", st.moments.t},
                          {"last_eval", st.last_eval}};
  os << state.dump() << "\n";
}

inline TrainerState load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot read checkpoint: " + path);
  TrainerState st;
  ParamRecord rec = read_param_record(is);
  if (rec.header.at("role") != "student")
    throw std::runtime_error("checkpoint: expected student record first");
  st.student = std::move(rec.params);
  rec = read_param_record(is);
  if (rec.header.at("role") != "teacher")
    throw std::runtime_error("checkpoint: expected teacher record");
  st.teacher = std::move(rec.params);
  st.moments.m = read_param_record(is).params.flat;
  st.moments.v = read_param_record(is).params.flat;
  std::string line;
  if (!std::getline(is, line))
    throw std::runtime_error("checkpoint: missing state line");
  const nlohmann::json state = nlohmann::json::parse(line);
  st.step = state.at("step").get<long>();
  st.moments.t = state.at("adam_t").get<long>();
  st.last_eval = state.at("last_eval").get<double>();
  return st;
}

inline void append_rollout_log(std::ostream& os, long step,
                               const std::vector<RolloutGroup>& batch,
                               const StepResult& res) {
  for (std::size_t g = 0; g < batch.size(); ++g) {
    const RolloutGroup& group = batch[g];
    for (std::size_t i = 0; i < group.rollouts.size(); ++i) {
      const RoutingDecision& d = res.decisions[g][i];
      nlohmann::json rec = {
          {"step", step},
          {"group_id", group.group_id},
          {"rollout_index", i},
          {"prompt", group.prompt},
          {"response", group.rollouts[i].response},
          {"reward", group.rollouts[i].reward},
          {"branch", to_string(d.branch)},
          {"teacher_index",
           d.teacher_index ? nlohmann::json(*d.teacher_index)
                           : nlohmann::json(nullptr)}};
      os << rec.dump() << "\n";
    }
  }
}

struct RunResult {
  std::vector<StepMetrics> history;
  TrainerState final_state;
};

// Fixed-budget training run. With resume=true, picks up from
// out_dir/checkpoint.bin and appends to the existing logs; otherwise starts
// fresh (existing logs are truncated).
inline RunResult run_training(const TrainConfig& cfg, const std::string& out_dir,
                              bool resume = false) {
  namespace fs = std::filesystem;
  fs::create_directories(out_dir);
  const std::string metrics_path = out_dir + "/metrics.csv";
  const std::string rollouts_path = out_dir + "/rollouts.jsonl";
  const std::string ckpt_path = out_dir + "/checkpoint.bin";

  Trainer trainer(cfg);
  if (resume) {
    TrainerState st = load_checkpoint(ckpt_path);
    if (st.student.cfg != cfg.model)
      throw std::runtime_error("resume: checkpoint model config mismatch");
    trainer.state() = std::move(st);
  }

  const auto mode = resume ? std::ios::app : std::ios::trunc;
  std::ofstream metrics(metrics_path, mode);
  std::ofstream rollouts(rollouts_path, mode);
  if (!metrics || !rollouts)
    throw std::runtime_error("cannot open run outputs in " + out_dir);
  if (!resume) metrics << kMetricsHeader << "\n";

  RunResult out;
  while (trainer.state().step < cfg.total_steps) {
    std::vector<RolloutGroup> batch = trainer.generate_batch();
    StepResult res = trainer.train_step(batch);
    const long step = res.metrics.step;
    const bool eval_due =
        step % cfg.eval_interval == 0 || step == cfg.total_steps;
    if (eval_due) {
      trainer.state().last_eval = trainer.evaluate_now();
      res.metrics.eval_avg_at_k = trainer.state().last_eval;
      save_checkpoint(ckpt_path, cfg, trainer.state());
    }
    metrics << format_metrics_row(res.metrics) << "\n";
    metrics.flush();
    append_rollout_log(rollouts, step, batch, res);
    rollouts.flush();
    out.history.push_back(res.metrics);
  }
  save_checkpoint(ckpt_path, cfg, trainer.state());
  out.final_state = trainer.state();
  return out;
}

}  // namespace srpo

#endif  // SRPO_RUN_HPP_
