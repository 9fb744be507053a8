#include "sasr/config.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>

#include "json.hpp"

namespace sasr {
namespace {

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void fail(const std::string& source, int line,
                       const std::string& msg) {
  throw ConfigError(source + ":" + std::to_string(line) + ": " + msg);
}

long long parse_int(const std::string& v, const std::string& source,
                    int line) {
  errno = 0;
  char* end = nullptr;
  long long x = std::strtoll(v.c_str(), &end, 10);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    fail(source, line, "expected an integer, got '" + v + "'");
  return x;
}

double parse_real(const std::string& v, const std::string& source, int line) {
  errno = 0;
  char* end = nullptr;
  double x = std::strtod(v.c_str(), &end);
  if (errno != 0 || end == v.c_str() || *end != '\0')
    fail(source, line, "expected a number, got '" + v + "'");
  return x;
}

bool parse_bool(const std::string& v, const std::string& source, int line) {
  if (v == "true") return true;
  if (v == "false") return false;
  fail(source, line, "expected true or false, got '" + v + "'");
}

std::string parse_string(const std::string& v, const std::string& source,
                         int line) {
  if (v.size() < 2 || v.front() != '"' || v.back() != '"')
    fail(source, line, "expected a double-quoted string, got '" + v + "'");
  std::string inner = v.substr(1, v.size() - 2);
  if (inner.find('"') != std::string::npos)
    fail(source, line, "string value contains an embedded quote");
  return inner;
}

// Strips a trailing comment, honoring quotes so '#' inside a string stays.
std::string strip_comment(const std::string& line) {
  bool in_string = false;
  for (size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') in_string = !in_string;
    if (line[i] == '#' && !in_string) return line.substr(0, i);
  }
  return line;
}

std::string fmt_real(double v) { return nlohmann::json(v).dump(); }

struct Setter {
  std::function<void(RunConfig&, const std::string& value,
                     const std::string& source, int line)>
      apply;
};

std::map<std::string, Setter> build_setters() {
  std::map<std::string, Setter> m;
  auto set_i = [&](const std::string& key,
                   std::function<void(RunConfig&, long long)> f) {
    m[key] = {[f](RunConfig& c, const std::string& v, const std::string& s,
                  int ln) { f(c, parse_int(v, s, ln)); }};
  };
  auto set_r = [&](const std::string& key,
                   std::function<void(RunConfig&, double)> f) {
    m[key] = {[f](RunConfig& c, const std::string& v, const std::string& s,
                  int ln) { f(c, parse_real(v, s, ln)); }};
  };
  auto set_b = [&](const std::string& key,
                   std::function<void(RunConfig&, bool)> f) {
    m[key] = {[f](RunConfig& c, const std::string& v, const std::string& s,
                  int ln) { f(c, parse_bool(v, s, ln)); }};
  };
  auto set_s = [&](const std::string& key,
                   std::function<void(RunConfig&, const std::string&)> f) {
    m[key] = {[f](RunConfig& c, const std::string& v, const std::string& s,
                  int ln) { f(c, parse_string(v, s, ln)); }};
  };

  set_s("label", [](RunConfig& c, const std::string& v) { c.label = v; });
  set_s("out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; });
  set_i("seed", [](RunConfig& c, long long v) { c.train.seed = (int)v; });

  m["task"] = {[](RunConfig& c, const std::string& v, const std::string& s,
                  int ln) {
    std::string name = parse_string(v, s, ln);
    try {
      c.train.task = task_from_name(name);
    } catch (const ConfigError& e) {
      fail(s, ln, e.what());
    }
  }};
  set_i("difficulty",
        [](RunConfig& c, long long v) { c.train.difficulty = (int)v; });
  set_i("kk_n", [](RunConfig& c, long long v) { c.train.kk_n = (int)v; });

  m["schedule"] = {[](RunConfig& c, const std::string& v, const std::string& s,
                      int ln) {
    std::string name = parse_string(v, s, ln);
    try {
      c.train.schedule.tag = schedule_tag_from_name(name);
    } catch (const ConfigError& e) {
      fail(s, ln, e.what());
    }
  }};
  set_i("hybrid_sft_epochs",
        [](RunConfig& c, long long v) { c.train.schedule.sft_epochs = (int)v; });
  set_i("hybrid_grpo_epochs", [](RunConfig& c, long long v) {
    c.train.schedule.grpo_epochs = (int)v;
  });
  set_r("cosine_upper",
        [](RunConfig& c, double v) { c.train.schedule.upper = v; });
  set_r("cosine_lower",
        [](RunConfig& c, double v) { c.train.schedule.lower = v; });
  set_r("gamma", [](RunConfig& c, double v) { c.train.schedule.gamma = v; });
  set_i("dataset_size",
        [](RunConfig& c, long long v) { c.train.dataset_size = (int)v; });

  set_i("warmup_steps",
        [](RunConfig& c, long long v) { c.train.warmup_steps = (int)v; });
  set_i("total_steps",
        [](RunConfig& c, long long v) { c.train.total_steps = (int)v; });
  set_i("batch_size",
        [](RunConfig& c, long long v) { c.train.batch_size = (int)v; });
  set_r("learning_rate",
        [](RunConfig& c, double v) { c.train.learning_rate = v; });
  set_i("group_size",
        [](RunConfig& c, long long v) { c.train.group_size = (int)v; });
  set_r("epsilon", [](RunConfig& c, double v) { c.train.grpo.epsilon = v; });
  set_r("beta", [](RunConfig& c, double v) { c.train.grpo.beta = v; });
  set_i("inner_updates",
        [](RunConfig& c, long long v) { c.train.grpo.inner_updates = (int)v; });
  set_i("max_rollout_len",
        [](RunConfig& c, long long v) { c.train.max_rollout_len = (int)v; });

  set_r("max_grad_norm",
        [](RunConfig& c, double v) { c.train.max_grad_norm = v; });
  set_r("weight_decay",
        [](RunConfig& c, double v) { c.train.weight_decay = v; });
  set_r("adam_beta1", [](RunConfig& c, double v) { c.train.adam_beta1 = v; });
  set_r("adam_beta2", [](RunConfig& c, double v) { c.train.adam_beta2 = v; });
  set_r("adam_eps", [](RunConfig& c, double v) { c.train.adam_eps = v; });

  set_i("eval_every",
        [](RunConfig& c, long long v) { c.train.eval_every = (int)v; });
  set_i("eval_size",
        [](RunConfig& c, long long v) { c.train.eval_size = (int)v; });
  set_b("check_eq10", [](RunConfig& c, bool v) { c.train.check_eq10 = v; });

  set_i("d_model",
        [](RunConfig& c, long long v) { c.train.policy.d_model = (int)v; });
  set_i("n_layers",
        [](RunConfig& c, long long v) { c.train.policy.n_layers = (int)v; });
  set_i("n_heads",
        [](RunConfig& c, long long v) { c.train.policy.n_heads = (int)v; });
  set_i("context_len",
        [](RunConfig& c, long long v) { c.train.policy.context_len = (int)v; });

  return m;
}

void check(bool ok, const std::string& source, const std::string& msg) {
  if (!ok) throw ConfigError(source + ": " + msg);
}

}  // namespace

RunConfig default_run_config() { return RunConfig{}; }

RunConfig parse_config_text(const std::string& text,
                            const std::string& source_name) {
  static const std::map<std::string, Setter> setters = build_setters();

  RunConfig config;
  std::map<std::string, int> seen;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    std::string line = trim(strip_comment(raw));
    if (line.empty()) continue;
    size_t eq = line.find('=');
    if (eq == std::string::npos)
      fail(source_name, line_no, "expected 'key = value'");
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    if (key.empty()) fail(source_name, line_no, "empty key");
    auto it = setters.find(key);
    if (it == setters.end())
      fail(source_name, line_no, "unknown key '" + key + "'");
    auto prev = seen.find(key);
    if (prev != seen.end())
      fail(source_name, line_no,
           "duplicate key '" + key + "' (first set on line " +
               std::to_string(prev->second) + ")");
    seen[key] = line_no;
    if (value.empty()) fail(source_name, line_no, "missing value");
    it->second.apply(config, value, source_name, line_no);
  }
  validate_config(config, source_name);
  return config;
}

RunConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config_text(buf.str(), path);
}

void validate_config(const RunConfig& c, const std::string& source_name) {
  const TrainConfig& t = c.train;
  auto ok = [&](bool cond, const std::string& msg) {
    check(cond, source_name, msg);
  };

  ok(t.warmup_steps >= 0, "warmup_steps must be >= 0");
  ok(t.total_steps >= 1, "total_steps must be >= 1");
  ok(t.batch_size >= 1, "batch_size must be >= 1");
  ok(std::isfinite(t.learning_rate) && t.learning_rate > 0.0,
     "learning_rate must be positive");
  ok(t.group_size >= 2, "group_size must be >= 2");
  ok(t.grpo.epsilon > 0.0 && t.grpo.epsilon < 1.0,
     "epsilon must be in (0, 1)");
  ok(t.grpo.beta >= 0.0, "beta must be >= 0");
  ok(t.grpo.inner_updates >= 1, "inner_updates must be >= 1");
  ok(t.max_rollout_len >= 1, "max_rollout_len must be >= 1");
  ok(t.max_grad_norm > 0.0, "max_grad_norm must be positive");
  ok(t.weight_decay >= 0.0, "weight_decay must be >= 0");
  ok(t.adam_beta1 >= 0.0 && t.adam_beta1 < 1.0,
     "adam_beta1 must be in [0, 1)");
  ok(t.adam_beta2 >= 0.0 && t.adam_beta2 < 1.0,
     "adam_beta2 must be in [0, 1)");
  ok(t.adam_eps > 0.0, "adam_eps must be positive");
  ok(t.eval_every >= 0, "eval_every must be >= 0");
  ok(t.eval_size >= 1, "eval_size must be >= 1");
  ok(t.dataset_size >= 1, "dataset_size must be >= 1");
  ok(t.difficulty >= 1 && t.difficulty <= 3, "difficulty must be 1, 2, or 3");
  ok(t.kk_n >= 2 && t.kk_n <= 8, "kk_n must be in 2..8");
  ok(t.policy.d_model >= 1, "d_model must be >= 1");
  ok(t.policy.n_layers >= 1, "n_layers must be >= 1");
  ok(t.policy.n_heads >= 1, "n_heads must be >= 1");
  ok(t.policy.d_model % t.policy.n_heads == 0,
     "d_model must be divisible by n_heads");
  ok(t.policy.context_len >= 8, "context_len must be >= 8");
  ok(!c.label.empty(), "label must not be empty");
  ok(!c.out_dir.empty(), "out_dir must not be empty");

  // Rebuilding through the factories applies each kind's own parameter
  // checks (epoch positivity, cosine bound ordering, gamma positivity).
  try {
    switch (t.schedule.tag) {
      case ScheduleKind::Tag::PureSft:
      case ScheduleKind::Tag::PureGrpo:
      case ScheduleKind::Tag::Ssr:
        break;
      case ScheduleKind::Tag::StaticHybrid:
        ScheduleKind::static_hybrid(t.schedule.sft_epochs,
                                    t.schedule.grpo_epochs);
        break;
      case ScheduleKind::Tag::SsrCosine:
        ScheduleKind::ssr_cosine(t.schedule.upper, t.schedule.lower);
        break;
      case ScheduleKind::Tag::Sasr:
        ScheduleKind::sasr(t.schedule.gamma);
        break;
    }
  } catch (const ConfigError& e) {
    throw ConfigError(source_name + ": " + e.what());
  }

  bool uses_grpo = t.schedule.tag != ScheduleKind::Tag::PureSft;
  if (uses_grpo)
    ok(t.batch_size % t.group_size == 0,
       "batch_size must be a multiple of group_size for schedules that "
       "take grpo steps");
  if (t.schedule.tag == ScheduleKind::Tag::Sasr)
    ok(t.warmup_steps >= 1,
       "the adaptive schedule needs a warm-up stage (warmup_steps >= 1)");
}

std::string emit_config(const RunConfig& c) {
  const TrainConfig& t = c.train;
  std::ostringstream o;
  o << "# Training run configuration. Every key is optional; the values\n"
       "# below are the defaults for any key left out.\n"
       "\n"
       "label = \"" << c.label << "\"\n"
       "out_dir = \"" << c.out_dir << "\"\n"
       "seed = " << t.seed << "\n"
       "\n"
       "# Task: gsm8k (arithmetic, terminal answer sentence), math (same\n"
       "# problems, tagged rationale), kk (role-deduction puzzles).\n"
       "task = \"" << task_name(t.task) << "\"\n"
       "difficulty = " << t.difficulty << "  # operand digits, 1..3\n"
       "kk_n = " << t.kk_n << "  # puzzle persons, 2..8\n"
       "\n"
       "# Step-kind schedule for the adaptive stage.\n"
       "schedule = \"" << schedule_name(t.schedule.tag) << "\"\n"
       "hybrid_sft_epochs = " << t.schedule.sft_epochs << "\n"
       "hybrid_grpo_epochs = " << t.schedule.grpo_epochs << "\n"
       "cosine_upper = " << fmt_real(t.schedule.upper) << "\n"
       "cosine_lower = " << fmt_real(t.schedule.lower) << "\n"
       "gamma = " << fmt_real(t.schedule.gamma) << "\n"
       "dataset_size = " << t.dataset_size
    << "  # nominal epoch size for epoch-based schedules\n"
       "\n"
       "warmup_steps = " << t.warmup_steps << "\n"
       "total_steps = " << t.total_steps << "\n"
       "batch_size = " << t.batch_size << "\n"
       "learning_rate = " << fmt_real(t.learning_rate) << "\n"
       "group_size = " << t.group_size << "\n"
       "epsilon = " << fmt_real(t.grpo.epsilon) << "  # ratio clip half-width\n"
       "beta = " << fmt_real(t.grpo.beta) << "  # KL penalty coefficient\n"
       "inner_updates = " << t.grpo.inner_updates << "\n"
       "max_rollout_len = " << t.max_rollout_len << "\n"
       "\n"
       "max_grad_norm = " << fmt_real(t.max_grad_norm) << "\n"
       "weight_decay = " << fmt_real(t.weight_decay) << "\n"
       "adam_beta1 = " << fmt_real(t.adam_beta1) << "\n"
       "adam_beta2 = " << fmt_real(t.adam_beta2) << "\n"
       "adam_eps = " << fmt_real(t.adam_eps) << "\n"
       "\n"
       "eval_every = " << t.eval_every << "  # 0 = final evaluation only\n"
       "eval_size = " << t.eval_size << "\n"
       "check_eq10 = " << (t.check_eq10 ? "true" : "false")
    << "  # verify SFT grad norms against the one-hot KL path\n"
       "\n"
       "d_model = " << t.policy.d_model << "\n"
       "n_layers = " << t.policy.n_layers << "\n"
       "n_heads = " << t.policy.n_heads << "\n"
       "context_len = " << t.policy.context_len << "\n";
  return o.str();
}

}  // namespace sasr
