#include "sasr/metrics.hpp"

#include <cmath>
#include <numeric>

#include "json.hpp"

namespace sasr {
namespace {

using ordered_json = nlohmann::ordered_json;

double require_number(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end())
    throw IoError(std::string("step record missing field '") + key + "'");
  // Non-finite values serialize as null; diagnostic records from aborted
  // steps must survive a round trip.
  if (it->is_null()) return std::nan("");
  if (!it->is_number())
    throw IoError(std::string("step record field '") + key +
                  "' is not a number");
  return it->get<double>();
}

std::string require_string(const ordered_json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end())
    throw IoError(std::string("step record missing field '") + key + "'");
  if (!it->is_string())
    throw IoError(std::string("step record field '") + key +
                  "' is not a string");
  return it->get<std::string>();
}

std::string fmt_real(double v) { return nlohmann::json(v).dump(); }

}  // namespace

const char* stage_name(Stage s) {
  return s == Stage::Warmup ? "warmup" : "adaptive";
}

Stage stage_from_name(const std::string& name) {
  if (name == "warmup") return Stage::Warmup;
  if (name == "adaptive") return Stage::Adaptive;
  throw IoError("unknown stage: " + name);
}

StepKind step_kind_from_name(const std::string& name) {
  if (name == "sft") return StepKind::Sft;
  if (name == "grpo") return StepKind::Grpo;
  throw IoError("unknown step kind: " + name);
}

std::string step_record_json(const StepRecord& r) {
  ordered_json j;
  j["t"] = r.t;
  j["stage"] = stage_name(r.stage);
  j["kind"] = step_kind_name(r.kind);
  j["loss"] = r.loss;
  j["grad_norm"] = r.grad_norm;
  if (r.p) j["p"] = *r.p;
  if (r.reward_mean) j["reward_mean"] = *r.reward_mean;
  j["duration_ms"] = r.duration_ms;
  return j.dump();
}

StepRecord step_record_from_json(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("invalid step record: ") + e.what());
  }
  if (!j.is_object()) throw IoError("step record is not an object");
  for (auto it = j.begin(); it != j.end(); ++it) {
    const std::string& k = it.key();
    if (k != "t" && k != "stage" && k != "kind" && k != "loss" &&
        k != "grad_norm" && k != "p" && k != "reward_mean" &&
        k != "duration_ms")
      throw IoError("step record has unknown field '" + k + "'");
  }
  StepRecord r;
  r.t = (int)require_number(j, "t");
  r.stage = stage_from_name(require_string(j, "stage"));
  r.kind = step_kind_from_name(require_string(j, "kind"));
  r.loss = require_number(j, "loss");
  r.grad_norm = require_number(j, "grad_norm");
  if (j.contains("p")) r.p = require_number(j, "p");
  if (j.contains("reward_mean")) r.reward_mean = require_number(j, "reward_mean");
  r.duration_ms = require_number(j, "duration_ms");
  return r;
}

StepLogWriter::StepLogWriter(const std::string& path) : path_(path) {
  out_.open(path, std::ios::binary | std::ios::trunc);
  if (!out_) throw IoError("cannot open step log for writing: " + path);
}

void StepLogWriter::append(const StepRecord& r) {
  out_ << step_record_json(r) << '\n';
  out_.flush();
  if (!out_) throw IoError("write failed on step log: " + path_);
}

std::vector<StepRecord> read_step_log(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open step log: " + path);
  std::vector<StepRecord> records;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      records.push_back(step_record_from_json(line));
    } catch (const IoError& e) {
      throw IoError(path + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  return records;
}

std::string strip_duration(const std::string& json_line) {
  ordered_json j;
  try {
    j = ordered_json::parse(json_line);
  } catch (const nlohmann::json::parse_error& e) {
    throw IoError(std::string("invalid step record: ") + e.what());
  }
  j.erase("duration_ms");
  return j.dump();
}

std::vector<double> smooth(const std::vector<double>& series, int window) {
  if (window < 1) throw ContractError("smoothing window must be >= 1");
  std::vector<double> out;
  size_t n = series.size();
  out.reserve((n + window - 1) / window);
  for (size_t start = 0; start < n; start += window) {
    size_t end = std::min(n, start + (size_t)window);
    bool constant = true;
    for (size_t i = start + 1; i < end && constant; ++i)
      constant = series[i] == series[start];
    if (constant) {
      // A constant block must average to exactly that constant; summation
      // would smear the low bits.
      out.push_back(series[start]);
      continue;
    }
    double sum = std::accumulate(series.begin() + start, series.begin() + end,
                                 0.0);
    out.push_back(sum / (double)(end - start));
  }
  return out;
}

const char* plot_kind_name(PlotKind k) {
  switch (k) {
    case PlotKind::GradNorm: return "grad_norm";
    case PlotKind::TimeCost: return "time_cost";
    case PlotKind::PTrace: return "p_trace";
  }
  return "?";
}

PlotKind plot_kind_from_name(const std::string& name) {
  if (name == "grad_norm") return PlotKind::GradNorm;
  if (name == "time_cost") return PlotKind::TimeCost;
  if (name == "p_trace") return PlotKind::PTrace;
  throw ConfigError("unknown plot kind: " + name +
                    " (expected grad_norm, time_cost, or p_trace)");
}

std::string emit_plot_data(const std::vector<StepRecord>& log, PlotKind kind,
                           int window) {
  if (log.empty()) throw ContractError("plot data needs a nonempty log");

  const char* column = nullptr;
  std::vector<int> steps;
  std::vector<double> series;
  switch (kind) {
    case PlotKind::GradNorm:
      column = "grad_norm";
      for (const StepRecord& r : log) {
        steps.push_back(r.t);
        series.push_back(r.grad_norm);
      }
      break;
    case PlotKind::TimeCost:
      column = "duration_ms";
      for (const StepRecord& r : log) {
        steps.push_back(r.t);
        series.push_back(r.duration_ms);
      }
      break;
    case PlotKind::PTrace:
      column = "p";
      for (const StepRecord& r : log) {
        if (!r.p) continue;
        steps.push_back(r.t);
        series.push_back(*r.p);
      }
      break;
  }

  std::string out = std::string("# step ") + column + "\n";
  std::vector<double> blocks = smooth(series, window);
  for (size_t i = 0; i < blocks.size(); ++i) {
    int step = steps[i * (size_t)window];
    out += std::to_string(step) + " " + fmt_real(blocks[i]) + "\n";
  }
  return out;
}

}  // namespace sasr
