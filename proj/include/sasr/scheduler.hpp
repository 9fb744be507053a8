#pragma once

#include <string>

#include "sasr/errors.hpp"
#include "sasr/rng.hpp"

namespace sasr {

enum class StepKind { Sft, Grpo };

inline const char* step_kind_name(StepKind k) {
  return k == StepKind::Sft ? "sft" : "grpo";
}

// Which training paradigm drives each adaptive step.
struct ScheduleKind {
  enum class Tag { PureSft, PureGrpo, StaticHybrid, Ssr, SsrCosine, Sasr };

  Tag tag = Tag::Sasr;
  int sft_epochs = 2;   // StaticHybrid block layout
  int grpo_epochs = 1;
  double upper = 0.9;   // SsrCosine probability bounds
  double lower = 0.1;
  double gamma = 1.0;   // Sasr mixing weight on the warm-up norm

  static ScheduleKind pure_sft();
  static ScheduleKind pure_grpo();
  static ScheduleKind static_hybrid(int sft_epochs, int grpo_epochs);
  static ScheduleKind ssr();
  static ScheduleKind ssr_cosine(double upper, double lower);
  static ScheduleKind sasr(double gamma);
};

const char* schedule_name(ScheduleKind::Tag tag);
ScheduleKind::Tag schedule_tag_from_name(const std::string& name);

// Probability that the next step is SFT: g_last / (g_last + gamma * g_warm).
// Both norms zero means the signal carries no information; the caller is
// expected to fall back to 0.5 and log the event.
double compute_p(double g_last_sft, double g_warmup, double gamma);

// 0.5 * (1 + cos(pi * s / S)) * (U - L) + L, pinned to U at s=0 and L at
// s=S so the endpoints are exact.
double cosine_ratio(int s, int S, double upper, double lower);

struct StepDecision {
  StepKind kind;
  bool probabilistic = false;  // p and the rng draw were involved
  double p = 0.0;              // SFT probability used, when probabilistic
  bool degenerate = false;     // signal carried no information; used p = 0.5
};

// Owns the adaptive-stage step counter, the two gradient-norm signals, and
// the decision rng. One instance per training run.
class Scheduler {
 public:
  Scheduler(ScheduleKind kind, int total_steps, int steps_per_epoch,
            uint64_t seed);

  // Fixes the warm-up benchmark norm and seeds the last-SFT norm with it.
  // Callable exactly once.
  void set_warmup_norm(double g);
  // Updates the last-SFT norm; called only after SFT steps, so the value
  // intentionally goes stale across GRPO steps.
  void record_sft_grad_norm(double g);

  // Decides the paradigm for the current step and advances the counter.
  // Probabilistic kinds consume exactly one rng draw; the rest consume none.
  StepDecision decide_step();

  const ScheduleKind& kind() const { return kind_; }
  int t() const { return t_; }
  int total_steps() const { return total_steps_; }
  bool has_warmup_norm() const { return has_warmup_; }
  double warmup_norm() const { return g_warmup_; }
  double last_sft_norm() const { return g_last_sft_; }
  std::string rng_state() const { return rng_.serialize(); }

  // Checkpoint restore; counters and rng stream resume mid-run.
  void restore(int t, bool has_warmup, double g_warmup, double g_last_sft,
               const std::string& rng_state);

 private:
  ScheduleKind kind_;
  int total_steps_;
  int steps_per_epoch_;
  int t_ = 0;
  bool has_warmup_ = false;
  double g_warmup_ = 0.0;
  double g_last_sft_ = 0.0;
  RandomSource rng_;
};

}  // namespace sasr
