#pragma once

#include <string>

#include "sasr/losses.hpp"
#include "sasr/policy.hpp"
#include "sasr/scheduler.hpp"
#include "sasr/tasks.hpp"

namespace sasr {

// Everything a single training run needs. Field defaults are the reference
// hyperparameters; the desk-scale configs override model size, step counts,
// and learning rate.
struct TrainConfig {
  ScheduleKind schedule;
  TaskKind task = TaskKind::Gsm8k;
  int difficulty = 1;  // arithmetic operand digits, 1..3
  int kk_n = 2;        // puzzle persons, 2..8

  int warmup_steps = 500;  // 0 skips warm-up; adaptive schedules need >= 1
  int total_steps = 1000;
  int batch_size = 16;
  double learning_rate = 2e-5;
  int group_size = 4;
  GrpoParams grpo;  // group_size is mirrored into this at load time
  int max_rollout_len = 32;

  double max_grad_norm = 1.0;
  double weight_decay = 0.0;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_eps = 1e-8;

  int eval_every = 100;  // 0 disables periodic evaluation
  int eval_size = 128;
  int dataset_size = 4096;  // nominal epoch size for epoch-based schedules
  bool check_eq10 = false;  // cross-check SFT grad norms against the one-hot
                            // KL path on every step
  int seed = 0;

  PolicyConfig policy;
};

struct RunConfig {
  TrainConfig train;
  std::string label = "run";
  std::string out_dir = "runs";
};

RunConfig default_run_config();

// Flat key = value text, one pair per line. `#` starts a comment, strings
// are double-quoted, every key has a default so the empty document is valid.
// Unknown and duplicate keys are rejected with source:line positions.
RunConfig parse_config_text(const std::string& text,
                            const std::string& source_name);
RunConfig load_config_file(const std::string& path);

// Full key set with current values, grouped and commented; emit -> parse is
// the identity. The default document doubles as the format reference.
std::string emit_config(const RunConfig& config);

// Semantic range checks; parse_config_text runs this before returning.
void validate_config(const RunConfig& config, const std::string& source_name);

}  // namespace sasr
