#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "sasr/trainer.hpp"

namespace {

using nlohmann::ordered_json;
using namespace sasr;

std::string fmt_real(double v) { return ordered_json(v).dump(); }

std::string quote(const std::string& s) { return ordered_json(s).dump(); }

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path);
  out << text;
  if (!out) throw IoError("write failed: " + path);
}

int cmd_train(const std::string& config_path) {
  RunConfig rc = load_config_file(config_path);
  Trainer trainer(rc);
  RunSummary s = trainer.run();
  std::cout << run_summary_json(s) << "\n";
  if (!s.error.empty()) {
    std::cerr << "sasr: run '" << s.label << "' failed: " << s.error << "\n";
    return 1;
  }
  return 0;
}

int cmd_eval(const std::string& config_path, const std::string& ckpt_path) {
  RunConfig rc = load_config_file(config_path);
  Trainer trainer(rc, ckpt_path);
  EvalResult r = trainer.evaluate();
  ordered_json j;
  j["accuracy"] = r.accuracy;
  j["correct"] = r.correct;
  j["total"] = r.total;
  std::cout << j.dump() << "\n";
  return 0;
}

int cmd_compare(const std::string& config_path, int seeds,
                const std::string& out_path) {
  const RunConfig base = load_config_file(config_path);
  const ScheduleKind::Tag tags[] = {
      ScheduleKind::Tag::PureSft,      ScheduleKind::Tag::PureGrpo,
      ScheduleKind::Tag::StaticHybrid, ScheduleKind::Tag::Ssr,
      ScheduleKind::Tag::SsrCosine,    ScheduleKind::Tag::Sasr,
  };

  // Every run finishes before any row is aggregated.
  std::vector<std::vector<RunSummary>> results;
  for (ScheduleKind::Tag tag : tags) {
    std::vector<RunSummary> per_seed;
    for (int k = 0; k < seeds; ++k) {
      RunConfig rc = base;
      rc.train.schedule.tag = tag;
      rc.train.seed = base.train.seed + k;
      rc.label = base.label + "_" + schedule_name(tag) + "_s" +
                 std::to_string(rc.train.seed);
      Trainer trainer(rc);
      RunSummary s = trainer.run();
      if (!s.error.empty())
        throw StateError("run '" + s.label + "' failed: " + s.error);
      per_seed.push_back(std::move(s));
    }
    results.push_back(std::move(per_seed));
  }

  std::ostringstream csv;
  csv << "schedule,mean_acc,std_acc,total_wall_ms\n";
  for (size_t i = 0; i < results.size(); ++i) {
    double mean = 0.0, wall = 0.0;
    for (const RunSummary& s : results[i]) {
      mean += s.final_accuracy;
      wall += s.total_wall_ms;
    }
    mean /= (double)seeds;
    double var = 0.0;
    for (const RunSummary& s : results[i]) {
      const double d = s.final_accuracy - mean;
      var += d * d;
    }
    const double stddev = std::sqrt(var / (double)seeds);
    csv << schedule_name(tags[i]) << "," << fmt_real(mean) << ","
        << fmt_real(stddev) << "," << fmt_real(wall) << "\n";
  }
  std::cout << csv.str();
  if (!out_path.empty()) write_text(out_path, csv.str());
  return 0;
}

int cmd_smooth(const std::string& input, int window, const std::string& kind,
               const std::string& out_path) {
  std::vector<StepRecord> log = read_step_log(input);
  const std::string text =
      emit_plot_data(log, plot_kind_from_name(kind), window);
  if (out_path.empty())
    std::cout << text;
  else
    write_text(out_path, text);
  return 0;
}

// Rewrites one fixture line, recomputing the frozen reward; layout matches
// the checked-in files byte for byte.
std::string refresh_arith_line(const ordered_json& j, bool math_task) {
  const std::string response = j.at("response").get<std::string>();
  const std::string gold = j.at("gold").get<std::string>();
  const double reward =
      math_task ? reward_math(response, gold) : reward_gsm8k(response, gold);
  return "{\"response\": " + quote(response) + ", \"gold\": " + quote(gold) +
         ", \"reward\": " + fmt_real(reward) + "}";
}

std::string refresh_kk_line(const ordered_json& j) {
  KKPuzzle puzzle;
  puzzle.n = j.at("n").get<int>();
  std::string solution;
  for (const auto& role : j.at("solution")) {
    if (!solution.empty()) solution += ", ";
    solution += quote(role.get<std::string>());
    puzzle.solution.push_back(role.get<std::string>() == "knight");
  }
  const std::string response = j.at("response").get<std::string>();
  return "{\"n\": " + std::to_string(puzzle.n) + ", \"solution\": [" +
         solution + "], \"response\": " + quote(response) +
         ", \"reward\": " + fmt_real(reward_kk(response, puzzle)) + "}";
}

int cmd_fixtures(const std::string& src, const std::string& dir,
                 const std::string& config_out) {
  std::filesystem::create_directories(dir);
  const char* names[] = {"gsm8k_rewards.jsonl", "math_rewards.jsonl",
                         "kk_rewards.jsonl"};
  for (const char* name : names) {
    std::istringstream in(read_text(src + "/" + name));
    std::ostringstream out;
    std::string line;
    int ln = 0;
    while (std::getline(in, line)) {
      ++ln;
      if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
      ordered_json j = ordered_json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object())
        throw IoError(std::string(name) + ":" + std::to_string(ln) +
                      ": invalid fixture line");
      if (j.contains("n"))
        out << refresh_kk_line(j) << "\n";
      else
        out << refresh_arith_line(
                   j, std::string(name).rfind("math", 0) == 0)
            << "\n";
    }
    write_text(dir + "/" + name, out.str());
  }
  if (!config_out.empty()) write_text(config_out, emit_config(default_run_config()));
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hybrid SFT/GRPO training on synthetic reasoning tasks"};
  app.require_subcommand(1);

  std::string config_path;
  std::string ckpt_path;
  std::string out_path;
  std::string smooth_input;
  std::string smooth_kind = "grad_norm";
  std::string fixtures_src = "fixtures";
  std::string fixtures_dir;
  std::string fixtures_config_out;
  int seeds = 3;
  int window = 50;

  CLI::App* train = app.add_subcommand("train", "Run one training config");
  train->add_option("--config", config_path, "run configuration file")
      ->required();

  CLI::App* eval_cmd = app.add_subcommand(
      "eval", "Score a checkpoint on the config's evaluation set");
  eval_cmd->add_option("--config", config_path, "run configuration file")
      ->required();
  eval_cmd->add_option("--checkpoint", ckpt_path, "checkpoint to score")
      ->required();

  CLI::App* compare = app.add_subcommand(
      "compare",
      "Train every schedule over shared seeds and emit a CSV summary "
      "(columns: schedule, mean_acc, std_acc, total_wall_ms)");
  compare->add_option("--config", config_path, "base configuration file")
      ->required();
  compare->add_option("--seeds", seeds, "seeds per schedule")
      ->check(CLI::PositiveNumber);
  compare->add_option("--out", out_path, "also write the CSV here");

  CLI::App* smooth_cmd = app.add_subcommand(
      "smooth", "Block-average a step log into two-column plot data");
  smooth_cmd->add_option("input", smooth_input, "step log (JSONL)")
      ->required();
  smooth_cmd->add_option("--window", window, "block length")
      ->check(CLI::PositiveNumber);
  smooth_cmd
      ->add_option("--kind", smooth_kind,
                   "series to emit: grad_norm, time_cost, or p_trace")
      ->check(CLI::IsMember({"grad_norm", "time_cost", "p_trace"}));
  smooth_cmd->add_option("--out", out_path, "output file (default stdout)");

  CLI::App* fixtures = app.add_subcommand(
      "fixtures",
      "Recompute the frozen reward fixtures and emit the full-default config");
  fixtures->add_option("--src", fixtures_src, "fixture corpus directory");
  fixtures->add_option("--dir", fixtures_dir,
                       "output directory (default: same as --src)");
  fixtures->add_option("--config-out", fixtures_config_out,
                       "where to write the full-default config");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(config_path);
    if (eval_cmd->parsed()) return cmd_eval(config_path, ckpt_path);
    if (compare->parsed()) return cmd_compare(config_path, seeds, out_path);
    if (smooth_cmd->parsed())
      return cmd_smooth(smooth_input, window, smooth_kind, out_path);
    if (fixtures->parsed())
      return cmd_fixtures(fixtures_src,
                          fixtures_dir.empty() ? fixtures_src : fixtures_dir,
                          fixtures_config_out);
  } catch (const std::exception& e) {
    std::cerr << "sasr: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
