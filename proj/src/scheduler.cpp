#include "sasr/scheduler.hpp"

#include <cmath>

namespace sasr {

ScheduleKind ScheduleKind::pure_sft() {
  ScheduleKind k;
  k.tag = Tag::PureSft;
  return k;
}

ScheduleKind ScheduleKind::pure_grpo() {
  ScheduleKind k;
  k.tag = Tag::PureGrpo;
  return k;
}

ScheduleKind ScheduleKind::static_hybrid(int sft_epochs, int grpo_epochs) {
  if (sft_epochs < 1 || grpo_epochs < 1) {
    throw ConfigError("hybrid epoch counts must be at least 1");
  }
  ScheduleKind k;
  k.tag = Tag::StaticHybrid;
  k.sft_epochs = sft_epochs;
  k.grpo_epochs = grpo_epochs;
  return k;
}

ScheduleKind ScheduleKind::ssr() {
  ScheduleKind k;
  k.tag = Tag::Ssr;
  return k;
}

ScheduleKind ScheduleKind::ssr_cosine(double upper, double lower) {
  if (!(0.0 <= lower && lower < upper && upper <= 1.0)) {
    throw ConfigError("cosine bounds need 0 <= lower < upper <= 1");
  }
  ScheduleKind k;
  k.tag = Tag::SsrCosine;
  k.upper = upper;
  k.lower = lower;
  return k;
}

ScheduleKind ScheduleKind::sasr(double gamma) {
  if (!(gamma > 0.0)) throw ConfigError("gamma must be positive");
  ScheduleKind k;
  k.tag = Tag::Sasr;
  k.gamma = gamma;
  return k;
}

const char* schedule_name(ScheduleKind::Tag tag) {
  switch (tag) {
    case ScheduleKind::Tag::PureSft: return "pure_sft";
    case ScheduleKind::Tag::PureGrpo: return "pure_grpo";
    case ScheduleKind::Tag::StaticHybrid: return "static_hybrid";
    case ScheduleKind::Tag::Ssr: return "ssr";
    case ScheduleKind::Tag::SsrCosine: return "ssr_cosine";
    case ScheduleKind::Tag::Sasr: return "sasr";
  }
  return "?";
}

ScheduleKind::Tag schedule_tag_from_name(const std::string& name) {
  for (auto tag :
       {ScheduleKind::Tag::PureSft, ScheduleKind::Tag::PureGrpo,
        ScheduleKind::Tag::StaticHybrid, ScheduleKind::Tag::Ssr,
        ScheduleKind::Tag::SsrCosine, ScheduleKind::Tag::Sasr}) {
    if (name == schedule_name(tag)) return tag;
  }
  throw ConfigError("unknown schedule: " + name);
}

double compute_p(double g_last_sft, double g_warmup, double gamma) {
  if (!(gamma > 0.0)) throw ContractError("gamma must be positive");
  if (!std::isfinite(g_last_sft) || !std::isfinite(g_warmup)) {
    throw NumericError("non-finite gradient norm");
  }
  if (g_last_sft < 0.0 || g_warmup < 0.0) {
    throw ContractError("gradient norms cannot be negative");
  }
  const double denom = g_last_sft + gamma * g_warmup;
  if (denom == 0.0) {
    throw DegenerateSignalError(
        "both gradient norms are zero; the ratio carries no signal");
  }
  return g_last_sft / denom;
}

double cosine_ratio(int s, int S, double upper, double lower) {
  if (S < 1) throw ContractError("total steps must be at least 1");
  if (s < 0 || s > S) {
    throw ContractError("step " + std::to_string(s) + " outside [0, " +
                        std::to_string(S) + "]");
  }
  if (!(0.0 <= lower && lower < upper && upper <= 1.0)) {
    throw ContractError("cosine bounds need 0 <= lower < upper <= 1");
  }
  if (s == 0) return upper;
  if (s == S) return lower;
  const double frac =
      static_cast<double>(s) / static_cast<double>(S);
  return 0.5 * (1.0 + std::cos(M_PI * frac)) * (upper - lower) + lower;
}

Scheduler::Scheduler(ScheduleKind kind, int total_steps, int steps_per_epoch,
                     uint64_t seed)
    : kind_(kind),
      total_steps_(total_steps),
      steps_per_epoch_(steps_per_epoch),
      rng_(seed) {
  if (total_steps < 1) throw ConfigError("total steps must be at least 1");
  if (steps_per_epoch < 1) {
    throw ConfigError("steps per epoch must be at least 1");
  }
}

void Scheduler::set_warmup_norm(double g) {
  if (has_warmup_) throw StateError("warm-up norm already set");
  if (!std::isfinite(g)) throw NumericError("non-finite warm-up norm");
  if (g < 0.0) throw ContractError("warm-up norm cannot be negative");
  g_warmup_ = g;
  g_last_sft_ = g;
  has_warmup_ = true;
}

void Scheduler::record_sft_grad_norm(double g) {
  if (!std::isfinite(g)) throw NumericError("non-finite gradient norm");
  if (g < 0.0) throw ContractError("gradient norm cannot be negative");
  g_last_sft_ = g;
}

StepDecision Scheduler::decide_step() {
  if (t_ >= total_steps_) {
    throw StateError("all " + std::to_string(total_steps_) +
                     " steps already decided");
  }
  StepDecision d{StepKind::Sft};
  switch (kind_.tag) {
    case ScheduleKind::Tag::PureSft:
      d.kind = StepKind::Sft;
      break;
    case ScheduleKind::Tag::PureGrpo:
      d.kind = StepKind::Grpo;
      break;
    case ScheduleKind::Tag::StaticHybrid: {
      const int epoch = t_ / steps_per_epoch_;
      const int cycle = kind_.sft_epochs + kind_.grpo_epochs;
      d.kind = (epoch % cycle) < kind_.sft_epochs ? StepKind::Sft
                                                  : StepKind::Grpo;
      break;
    }
    case ScheduleKind::Tag::Ssr:
      d.kind = (t_ % 2 == 0) ? StepKind::Sft : StepKind::Grpo;
      break;
    case ScheduleKind::Tag::SsrCosine: {
      d.probabilistic = true;
      d.p = cosine_ratio(t_, total_steps_, kind_.upper, kind_.lower);
      d.kind = rng_.uniform() < d.p ? StepKind::Sft : StepKind::Grpo;
      break;
    }
    case ScheduleKind::Tag::Sasr: {
      if (!has_warmup_) {
        throw StateError("adaptive decisions need the warm-up norm");
      }
      d.probabilistic = true;
      try {
        d.p = compute_p(g_last_sft_, g_warmup_, kind_.gamma);
      } catch (const DegenerateSignalError&) {
        d.p = 0.5;
        d.degenerate = true;
      }
      d.kind = rng_.uniform() < d.p ? StepKind::Sft : StepKind::Grpo;
      break;
    }
  }
  ++t_;
  return d;
}

void Scheduler::restore(int t, bool has_warmup, double g_warmup,
                        double g_last_sft, const std::string& rng_state) {
  if (t < 0 || t > total_steps_) throw StateError("step counter out of range");
  t_ = t;
  has_warmup_ = has_warmup;
  g_warmup_ = g_warmup;
  g_last_sft_ = g_last_sft;
  rng_.deserialize(rng_state);
}

}  // namespace sasr
