#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "sasr/config.hpp"
#include "sasr/losses.hpp"
#include "sasr/metrics.hpp"
#include "sasr/policy.hpp"
#include "sasr/scheduler.hpp"
#include "sasr/tasks.hpp"

namespace sasr {

// Deterministic seed for one of a run's independent random streams. Streams
// with the same base seed never collide across indices.
uint64_t stream_seed(int base_seed, uint64_t stream);

// One training or evaluation instance. The puzzle is populated for the
// role-deduction task only; the other tasks score against sample.answer.
struct TaskItem {
  Sample sample;
  KKPuzzle puzzle;
};

// Infinite generator-backed sample stream with its own rng.
class TaskStream {
 public:
  TaskStream(TaskKind task, int difficulty, int kk_n, uint64_t seed);

  TaskItem next();

  std::string rng_state() const { return rng_.serialize(); }
  void restore_rng(const std::string& state) { rng_.deserialize(state); }

 private:
  TaskKind task_;
  int difficulty_;
  int kk_n_;
  RandomSource rng_;
};

double task_reward(TaskKind task, const std::string& response,
                   const TaskItem& item);

// Task correctness rule: numeric equality of the extracted answer for the
// arithmetic families, full role-assignment match for the puzzles.
bool response_correct(TaskKind task, const std::string& response,
                      const TaskItem& item);

// Decoupled-weight-decay adaptive-moment optimizer with bias correction,
// global-norm clipping, and a linear learning-rate decay to zero over the
// configured horizon.
class AdamW {
 public:
  AdamW(const Policy& policy, const TrainConfig& config);

  // Consumes the gradients on the policy parameters: records the pre-clip
  // global norm, clips, updates in place, zeroes the gradients, and returns
  // that norm.
  double apply(Policy& policy);

  long long steps_taken() const { return steps_; }
  // Learning rate the next apply will use.
  double next_lr() const;

  const std::vector<std::vector<double>>& m() const { return m_; }
  const std::vector<std::vector<double>>& v() const { return v_; }
  void restore(std::vector<std::vector<double>> m,
               std::vector<std::vector<double>> v, long long steps_taken);

 private:
  double lr_;
  double beta1_, beta2_, eps_, weight_decay_;
  double max_grad_norm_;
  long long horizon_;
  long long steps_ = 0;
  std::vector<std::vector<double>> m_, v_;
};

// Backward plus one optimizer update; returns the pre-clip gradient norm.
// A non-finite loss or gradient aborts with NumericError before any
// parameter changes.
double optimization_step(Policy& policy, Tape& tape, const Tensor& loss,
                         AdamW& opt);

struct EvalResult {
  double accuracy = 0.0;
  int correct = 0;
  int total = 0;
};

struct RunSummary {
  std::string label;
  std::string schedule;
  std::string task;
  int seed = 0;
  int warmup_steps = 0;  // executed counts, not configured ones
  int sft_steps = 0;
  int grpo_steps = 0;
  double g_warmup = 0.0;
  double final_accuracy = 0.0;
  double total_wall_ms = 0.0;
  int degenerate_fallbacks = 0;
  std::vector<std::pair<int, double>> eval_trace;  // (step, accuracy)
  std::string error;  // empty on success
};

std::string run_summary_json(const RunSummary& s);
RunSummary run_summary_from_json(const std::string& text);

// Owns one run end to end: policy, optimizer, scheduler, data streams, and
// telemetry. Nothing is shared between instances, so independent runs may
// proceed in parallel processes.
class Trainer {
 public:
  explicit Trainer(const RunConfig& config);
  // Resumes the state written by save_checkpoint; the remaining steps replay
  // bit-identically (wall-clock fields aside).
  Trainer(const RunConfig& config, const std::string& checkpoint_path);

  // Full pipeline: warm-up, reference snapshot, adaptive stage, periodic and
  // final evaluation, logs and checkpoints under run_dir(). Stage errors are
  // captured in the summary; completed records and files are kept.
  RunSummary run();

  // Runs the configured warm-up steps, snapshots the reference policy, and
  // hands the step-W gradient norm to the scheduler. Returns that norm.
  // With warm-up disabled the reference is the initial policy and no norm
  // is recorded.
  double warmup_stage();
  // Adaptive steps t_done+1 .. T; requires warmup_stage first.
  void adaptive_stage();
  // Greedy-decoding accuracy on the fixed evaluation set.
  EvalResult evaluate();

  void save_checkpoint(const std::string& path) const;

  const Policy& policy() const { return policy_; }
  const Policy& ref_policy() const;
  const Scheduler& scheduler() const { return scheduler_; }
  const std::vector<StepRecord>& records() const { return records_; }

  int adaptive_steps_done() const { return t_done_; }
  int warmup_steps_done() const { return warmup_records_; }
  int sft_steps() const { return sft_steps_; }
  int grpo_steps() const { return grpo_steps_; }
  double warmup_norm() const { return g_warmup_; }
  bool warmup_done() const { return warmup_done_; }

  // <output root>/<out_dir>/<label>; the root comes from SASR_OUT_ROOT when
  // set, else the working directory.
  std::string run_dir() const;

 private:
  SftBatch next_sft_batch();
  StepRecord sft_step(int t, Stage stage, const StepDecision* decision);
  StepRecord grpo_step(int t, const StepDecision& decision);
  void append_record(const StepRecord& r);

  RunConfig config_;
  Policy policy_;
  std::unique_ptr<AdamW> opt_;
  Scheduler scheduler_;
  PolicySnapshot ref_;
  bool has_ref_ = false;
  TaskStream data_;
  RandomSource rollout_rng_;
  std::vector<TaskItem> eval_set_;
  Tape tape_;

  double g_warmup_ = 0.0;
  bool warmup_done_ = false;
  int t_done_ = 0;
  int warmup_records_ = 0;
  int sft_steps_ = 0;
  int grpo_steps_ = 0;
  int degenerate_events_ = 0;
  std::vector<StepRecord> records_;
  std::vector<std::pair<int, double>> eval_trace_;
  StepLogWriter* writer_ = nullptr;
};

}  // namespace sasr
