// Command-line surface: train / ablate / stats / plot / golden / dump-tasks.
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "srpo/report.hpp"
#include "srpo/run.hpp"

namespace fs = std::filesystem;

namespace {

srpo::TrainConfig load_config(const std::string& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config file: " + path);
  return srpo::config_from_json(nlohmann::json::parse(is));
}

// key=value overrides applied on top of the JSON config, reusing the strict
// loader so typos in keys are rejected the same way
srpo::TrainConfig apply_overrides(const srpo::TrainConfig& base,
                                  const std::vector<std::string>& sets) {
  nlohmann::json j = srpo::to_json(base);
  for (const auto& kv : sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("--set expects key=value, got: " + kv);
    const std::string key = kv.substr(0, eq);
    const std::string val = kv.substr(eq + 1);
    nlohmann::json* slot = &j;
    std::string leaf = key;
    if (const auto dot = key.find('.'); dot != std::string::npos) {
      slot = &j.at(key.substr(0, dot));
      leaf = key.substr(dot + 1);
    }
    if (!slot->contains(leaf))
      throw std::runtime_error("--set: unknown config key: " + key);
    nlohmann::json& cur = (*slot)[leaf];
    if (cur.is_string())
      cur = val;
    else if (cur.is_boolean())
      cur = (val == "true" || val == "1");
    else if (cur.is_number_integer() || cur.is_number_unsigned())
      cur = std::stoll(val);
    else
      cur = std::stod(val);
  }
  return srpo::config_from_json(j);
}

void apply_env_seed(srpo::TrainConfig& cfg) {
  if (const char* s = std::getenv("SRPO_SEED"))
    cfg.seed = std::stoull(s);
}

int cmd_train(const std::string& config_path,
              const std::vector<std::string>& sets, std::uint64_t* seed_flag,
              const std::string& out_dir, bool resume) {
  srpo::TrainConfig cfg = apply_overrides(load_config(config_path), sets);
  if (seed_flag) cfg.seed = *seed_flag;
  apply_env_seed(cfg);
  srpo::validate_config(cfg);
  srpo::run_training(cfg, out_dir, resume);
  srpo::write_manifest(out_dir, cfg,
                       {"metrics.csv", "rollouts.jsonl", "checkpoint.bin"});
  std::cout << "run complete: " << out_dir << "\n";
  return 0;
}

int cmd_ablate(const std::string& config_path, const std::string& out_dir,
               const std::vector<std::uint64_t>& seeds) {
  const srpo::TrainConfig base = load_config(config_path);
  const std::vector<srpo::Algorithm> variants = {
      srpo::Algorithm::GRPO, srpo::Algorithm::SDPO, srpo::Algorithm::SRPO,
      srpo::Algorithm::SRPO_NO_DW, srpo::Algorithm::ADV_MIX};
  // eval_avg_at_k per (variant, checkpoint step), across seeds
  std::map<std::pair<std::string, long>, std::vector<double>> table;
  for (const auto v : variants) {
    for (const auto seed : seeds) {
      srpo::TrainConfig cfg = base;
      cfg.algorithm = v;
      cfg.seed = seed;
      srpo::validate_config(cfg);
      const std::string dir = out_dir + "/" + srpo::to_string(v) + "_seed" +
                              std::to_string(seed);
      const srpo::RunResult res = srpo::run_training(cfg, dir);
      for (const auto& m : res.history)
        if (m.step % cfg.eval_interval == 0 || m.step == cfg.total_steps)
          table[{srpo::to_string(v), m.step}].push_back(m.eval_avg_at_k);
    }
  }
  const std::string summary_path = out_dir + "/summary.csv";
  std::ofstream os(summary_path);
  os.precision(17);
  os << "variant, step, mean_eval_avg_at_k, std_eval_avg_at_k, n_seeds\n";
  for (const auto& [key, vals] : table) {
    double mean = 0.0;
    for (double x : vals) mean += x;
    mean /= vals.size();
    double sq = 0.0;
    for (double x : vals) sq += (x - mean) * (x - mean);
    os << key.first << ", " << key.second << ", " << mean << ", "
       << std::sqrt(sq / vals.size()) << ", " << vals.size() << "\n";
  }
  std::cout << "ablation summary: " << summary_path << "\n";
  return 0;
}

int cmd_stats(const std::string& rollouts_path,
              const std::string& metrics_path) {
  std::ifstream is(rollouts_path);
  if (!is) throw std::runtime_error("cannot read rollouts file: " + rollouts_path);
  struct Counts {
    long total = 0, sdpo = 0, avail = 0;
  };
  std::map<long, Counts> per_step;
  std::string line;
  long lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json rec;
    try {
      rec = nlohmann::json::parse(line);
      const long step = rec.at("step").get<long>();
      const std::string branch = rec.at("branch").get<std::string>();
      if (branch != "GRPO" && branch != "SDPO")
        throw std::runtime_error("unknown branch: " + branch);
      rec.at("group_id").get<long>();
      rec.at("rollout_index").get<long>();
      rec.at("prompt").get<srpo::TokenSeq>();
      rec.at("response").get<srpo::TokenSeq>();
      rec.at("reward").get<double>();
      if (branch == "SDPO" && rec.at("teacher_index").is_null())
        throw std::runtime_error("SDPO rollout without teacher_index");
      Counts& c = per_step[step];
      ++c.total;
      if (branch == "SDPO") ++c.sdpo;
      if (!rec.at("teacher_index").is_null() || branch == "SDPO") ++c.avail;
    } catch (const std::exception& e) {
      throw std::runtime_error(rollouts_path + ":" + std::to_string(lineno) +
                               ": " + e.what());
    }
  }
  if (per_step.empty())
    throw std::runtime_error("rollouts file has no records: " + rollouts_path);
  std::cout << "step, sdpo_frac, grpo_frac, n_rollouts\n";
  std::cout.precision(17);
  std::map<long, double> sdpo_by_step;
  for (const auto& [step, c] : per_step) {
    const double frac = static_cast<double>(c.sdpo) / c.total;
    sdpo_by_step[step] = frac;
    std::cout << step << ", " << frac << ", " << 1.0 - frac << ", " << c.total
              << "\n";
  }
  if (!metrics_path.empty()) {
    for (const auto& m : srpo::parse_metrics_csv(metrics_path)) {
      const auto it = sdpo_by_step.find(m.step);
      if (it == sdpo_by_step.end()) continue;
      if (std::abs(it->second - m.sdpo_frac) > 1e-12)
        throw std::runtime_error(
            "sdpo_frac mismatch at step " + std::to_string(m.step) +
            ": log says " + std::to_string(it->second) + ", metrics say " +
            std::to_string(m.sdpo_frac));
    }
    std::cout << "# cross-check against " << metrics_path << ": ok\n";
  }
  return 0;
}

// Dumps worked numeric fixtures for the objective primitives, so the golden
// values in the test suite can be regenerated and audited by hand.
int cmd_golden(const std::string& out_path) {
  nlohmann::json out;
  {
    const std::vector<double> rewards = {1, 0, 0, 0, 1, 0, 0, 0};
    out["group_relative_advantages"] = {
        {"rewards", rewards},
        {"adv_eps", 1e-4},
        {"values", srpo::group_relative_advantages(rewards, 1e-4).values}};
  }
  {
    const std::vector<double> tl = {std::log(0.7), std::log(0.2),
                                    std::log(0.1)};
    const std::vector<double> sl = {std::log(0.1), std::log(0.2),
                                    std::log(0.7)};
    const srpo::SupportSet s = srpo::topk_support(tl, sl, 2);
    out["topk_support"] = {{"teacher_logprobs", tl},
                           {"student_logprobs", sl},
                           {"k", 2},
                           {"indices", s.indices},
                           {"teacher_probs", s.teacher_probs},
                           {"student_probs", s.student_probs}};
    out["divergences"] = {{"fkl", srpo::forward_kl(s)},
                          {"rkl", srpo::reverse_kl(s)},
                          {"js", srpo::js_divergence(s)},
                          {"teacher_entropy", srpo::teacher_entropy(s)}};
    out["sdpo_logit_advantage"] = srpo::sdpo_logit_advantage(s);
  }
  {
    const std::vector<double> ent = {0.5, 1.0, 2.0};
    out["dynamic_weights"] = {{"entropies", ent},
                              {"beta", 1.0},
                              {"weights", srpo::dynamic_weights(ent, 1.0)}};
  }
  out["grpo_token_loss"] = {
      {"lp_new", -0.5},       {"lp_old", -1.0},
      {"advantage", 2.0},     {"eps_low", 0.2},
      {"eps_high", 0.28},     {"loss", srpo::grpo_token_loss(-0.5, -1.0, 2.0,
                                                             0.2, 0.28)}};
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write: " + out_path);
  os << out.dump(2) << "\n";
  std::cout << "golden fixtures: " << out_path << "\n";
  return 0;
}

int cmd_dump_tasks(const std::string& config_path, int count,
                   std::uint64_t seed, const std::string& out_path) {
  srpo::TrainConfig cfg = load_config(config_path);
  const srpo::EnvSpec env = srpo::make_env(cfg.env);
  std::ofstream os(out_path);
  if (!os) throw std::runtime_error("cannot write: " + out_path);
  for (int i = 0; i < count; ++i) {
    srpo::Rng rng = srpo::derive_rng(seed, 0, i, srpo::stream::kTask);
    const srpo::Task t = srpo::gen_task(env, rng);
    const nlohmann::json rec = {{"prompt", t.prompt},
                                {"solution", t.hidden_solution}};
    os << rec.dump() << "\n";
  }
  std::cout << "wrote " << count << " tasks to " << out_path << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"SRPO desk-scale laboratory"};
  app.require_subcommand(1);

  std::string config_path, out_dir = "runs/out", metrics_path, out_path;
  std::vector<std::string> sets;
  std::vector<std::string> metrics_files;
  std::vector<std::uint64_t> seeds = {0, 1, 2};
  std::uint64_t seed = 0;
  bool resume = false;
  bool seed_given = false;
  int count = 16;

  auto* train = app.add_subcommand("train", "run one training job");
  train->add_option("--config", config_path, "JSON config")->required();
  train->add_option("--set", sets, "key=value config override");
  train->add_option("--seed", seed, "seed override")
      ->each([&](const std::string&) { seed_given = true; });
  train->add_option("--out", out_dir, "output directory");
  train->add_flag("--resume", resume, "resume from out/checkpoint.bin");

  auto* ablate = app.add_subcommand("ablate", "run the 5-variant ablation");
  ablate->add_option("--config", config_path, "JSON config")->required();
  ablate->add_option("--out", out_dir, "output directory");
  ablate->add_option("--seeds", seeds, "seeds to run per variant");

  auto* stats = app.add_subcommand("stats", "routing report from rollouts log");
  stats->add_option("--rollouts", config_path, "rollouts.jsonl path")
      ->required();
  stats->add_option("--metrics", metrics_path, "metrics.csv to cross-check");

  auto* plot = app.add_subcommand("plot", "emit SVG charts from metrics files");
  plot->add_option("--metrics", metrics_files, "metrics.csv paths (per seed)")
      ->required();
  plot->add_option("--out", out_dir, "output directory");

  auto* golden = app.add_subcommand("golden", "dump objective golden fixtures");
  golden->add_option("--out", out_path, "output JSON path")->required();

  auto* dump = app.add_subcommand("dump-tasks", "sample tasks as JSONL");
  dump->add_option("--config", config_path, "JSON config")->required();
  dump->add_option("--count", count, "number of tasks");
  dump->add_option("--seed", seed, "task stream seed");
  dump->add_option("--out", out_path, "output JSONL path")->required();

  CLI11_PARSE(app, argc, argv);
  try {
    if (train->parsed())
      return cmd_train(config_path, sets, seed_given ? &seed : nullptr,
                       out_dir, resume);
    if (ablate->parsed()) return cmd_ablate(config_path, out_dir, seeds);
    if (stats->parsed()) return cmd_stats(config_path, metrics_path);
    if (plot->parsed()) {
      for (const auto& p : srpo::write_plots(metrics_files, out_dir))
        std::cout << "wrote " << p << "\n";
      return 0;
    }
    if (golden->parsed()) return cmd_golden(out_path);
    if (dump->parsed()) return cmd_dump_tasks(config_path, count, seed, out_path);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
