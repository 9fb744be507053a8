#pragma once

#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "sasr/errors.hpp"
#include "sasr/scheduler.hpp"

namespace sasr {

enum class Stage { Warmup, Adaptive };

const char* stage_name(Stage s);
Stage stage_from_name(const std::string& name);
StepKind step_kind_from_name(const std::string& name);

// One executed training step. `p` is present only when the schedule drew a
// step-kind probability; `reward_mean` only on rollout steps.
struct StepRecord {
  int t = 0;
  Stage stage = Stage::Warmup;
  StepKind kind = StepKind::Sft;
  double loss = 0.0;
  double grad_norm = 0.0;
  std::optional<double> p;
  std::optional<double> reward_mean;
  double duration_ms = 0.0;
};

// Single JSON object, fixed field order, absent optionals omitted. With the
// same field values the emitted bytes are identical, which is what the
// determinism checks compare.
std::string step_record_json(const StepRecord& r);
StepRecord step_record_from_json(const std::string& line);

// Append-only writer, one line per record, flushed per append so a crashed
// run keeps every completed step.
class StepLogWriter {
 public:
  explicit StepLogWriter(const std::string& path);

  void append(const StepRecord& r);
  const std::string& path() const { return path_; }

 private:
  std::string path_;
  std::ofstream out_;
};

std::vector<StepRecord> read_step_log(const std::string& path);

// The same line minus the duration field, re-serialized canonically. Two
// runs agree on these bytes exactly when they agree modulo wall-clock time.
std::string strip_duration(const std::string& json_line);

// Non-overlapping block means: output[i] covers series[i*window ..
// min((i+1)*window, n)), the final block averaged over its actual length.
// A constant block yields exactly that constant.
std::vector<double> smooth(const std::vector<double>& series, int window);

enum class PlotKind { GradNorm, TimeCost, PTrace };

const char* plot_kind_name(PlotKind k);
PlotKind plot_kind_from_name(const std::string& name);

// Two-column "step value" text after block smoothing; the step column is the
// first step of each block. The probability trace draws from the records
// that carry p, so a run that never drew one yields just the header.
std::string emit_plot_data(const std::vector<StepRecord>& log, PlotKind kind,
                           int window);

}  // namespace sasr
