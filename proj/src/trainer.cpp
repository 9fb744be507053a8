#include "sasr/trainer.hpp"

#include <cerrno>
#include <chrono>
#include <cmath>
#include <cstdlib>
#include <cstring>
#include <filesystem>
#include <fstream>

#include "json.hpp"

namespace sasr {
namespace {

using ordered_json = nlohmann::ordered_json;
using Clock = std::chrono::steady_clock;

double elapsed_ms(Clock::time_point start) {
  return std::chrono::duration<double, std::milli>(Clock::now() - start)
      .count();
}

std::string trim(const std::string& s) {
  size_t b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return "";
  size_t e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

// Full-consumption finite parse; the arithmetic correctness rule is numeric
// equality of the parsed values.
bool parse_number(const std::string& s, double* out) {
  std::string t = trim(s);
  if (t.empty()) return false;
  errno = 0;
  char* end = nullptr;
  double v = std::strtod(t.c_str(), &end);
  if (end != t.c_str() + t.size() || errno == ERANGE || !std::isfinite(v))
    return false;
  *out = v;
  return true;
}

// Checkpoint payloads are raw IEEE doubles in native (little-endian) order.
void write_doubles(std::ostream& o, const std::vector<double>& v) {
  o.write(reinterpret_cast<const char*>(v.data()),
          (std::streamsize)(v.size() * sizeof(double)));
}

void read_doubles(std::istream& i, std::vector<double>& v) {
  i.read(reinterpret_cast<char*>(v.data()),
         (std::streamsize)(v.size() * sizeof(double)));
}

RunConfig validated(RunConfig c) {
  validate_config(c, "config");
  return c;
}

int steps_per_epoch(const TrainConfig& c) {
  return (c.dataset_size + c.batch_size - 1) / c.batch_size;
}

PolicyConfig seeded_policy_config(const RunConfig& c) {
  PolicyConfig pc = c.train.policy;
  pc.seed = stream_seed(c.train.seed, 0);
  return pc;
}

constexpr char kCheckpointMagic[8] = {'S', 'A', 'S', 'R',
                                      'C', 'K', 'P', 'T'};

}  // namespace

uint64_t stream_seed(int base_seed, uint64_t stream) {
  // splitmix64 over (seed, stream index); distinct streams decorrelate even
  // for adjacent run seeds.
  uint64_t z =
      (uint64_t)(int64_t)base_seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z ^= z >> 30;
  z *= 0xBF58476D1CE4E5B9ULL;
  z ^= z >> 27;
  z *= 0x94D049BB133111EBULL;
  z ^= z >> 31;
  return z;
}

TaskStream::TaskStream(TaskKind task, int difficulty, int kk_n, uint64_t seed)
    : task_(task), difficulty_(difficulty), kk_n_(kk_n), rng_(seed) {}

TaskItem TaskStream::next() {
  switch (task_) {
    case TaskKind::Gsm8k:
      return {gen_arithmetic(rng_, difficulty_), {}};
    case TaskKind::Math:
      return {gen_math_style(rng_, difficulty_), {}};
    case TaskKind::Kk: {
      KKGenerated g = gen_kk(rng_, kk_n_);
      return {std::move(g.sample), std::move(g.puzzle)};
    }
  }
  throw ContractError("unhandled task kind");
}

double task_reward(TaskKind task, const std::string& response,
                   const TaskItem& item) {
  switch (task) {
    case TaskKind::Gsm8k:
      return reward_gsm8k(response, item.sample.answer);
    case TaskKind::Math:
      return reward_math(response, item.sample.answer);
    case TaskKind::Kk:
      return reward_kk(response, item.puzzle);
  }
  throw ContractError("unhandled task kind");
}

bool response_correct(TaskKind task, const std::string& response,
                      const TaskItem& item) {
  std::optional<std::string> extracted = extract_answer(response, task);
  if (!extracted) return false;
  switch (task) {
    case TaskKind::Gsm8k: {
      double a = 0.0, b = 0.0;
      return parse_number(*extracted, &a) &&
             parse_number(item.sample.answer, &b) && a == b;
    }
    case TaskKind::Math:
      return math_equivalent(*extracted, item.sample.answer);
    case TaskKind::Kk: {
      std::optional<std::vector<bool>> roles =
          parse_kk_assignment(*extracted, item.puzzle.n);
      return roles && *roles == item.puzzle.solution;
    }
  }
  return false;
}

AdamW::AdamW(const Policy& policy, const TrainConfig& config)
    : lr_(config.learning_rate),
      beta1_(config.adam_beta1),
      beta2_(config.adam_beta2),
      eps_(config.adam_eps),
      weight_decay_(config.weight_decay),
      max_grad_norm_(config.max_grad_norm),
      horizon_((long long)config.warmup_steps + config.total_steps) {
  for (const Tensor& p : policy.params()) {
    m_.emplace_back((size_t)p.numel(), 0.0);
    v_.emplace_back((size_t)p.numel(), 0.0);
  }
}

double AdamW::next_lr() const {
  long long remaining = horizon_ - steps_;
  if (remaining < 0) remaining = 0;  // extra inner updates past the horizon
  return lr_ * (double)remaining / (double)horizon_;
}

double AdamW::apply(Policy& policy) {
  std::vector<Tensor>& params = policy.params();
  if (params.size() != m_.size())
    throw ShapeError("optimizer state does not match the parameter list");
  // A parameter the loss never touched has no gradient buffer; it
  // contributes zero to the norm and receives only the decay term.
  for (Tensor& p : params)
    if (!p.has_grad()) p.grad();
  const double norm = global_grad_norm(params);
  if (!std::isfinite(norm)) throw NumericError("non-finite gradient norm");
  const double clip = norm > max_grad_norm_ ? max_grad_norm_ / norm : 1.0;
  const double lr = next_lr();
  ++steps_;
  const double bc1 = 1.0 - std::pow(beta1_, (double)steps_);
  const double bc2 = 1.0 - std::pow(beta2_, (double)steps_);
  for (size_t i = 0; i < params.size(); ++i) {
    std::vector<double>& value = params[i].values();
    const double* g = params[i].grad().data();
    std::vector<double>& m = m_[i];
    std::vector<double>& v = v_[i];
    for (size_t j = 0; j < value.size(); ++j) {
      const double gj = g[j] * clip;
      m[j] = beta1_ * m[j] + (1.0 - beta1_) * gj;
      v[j] = beta2_ * v[j] + (1.0 - beta2_) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      value[j] -=
          lr * (mhat / (std::sqrt(vhat) + eps_) + weight_decay_ * value[j]);
    }
  }
  zero_grads(params);
  return norm;
}

void AdamW::restore(std::vector<std::vector<double>> m,
                    std::vector<std::vector<double>> v,
                    long long steps_taken) {
  if (m.size() != m_.size() || v.size() != v_.size())
    throw ShapeError("optimizer restore does not match the parameter list");
  for (size_t i = 0; i < m.size(); ++i)
    if (m[i].size() != m_[i].size() || v[i].size() != v_[i].size())
      throw ShapeError("optimizer restore does not match parameter shapes");
  if (steps_taken < 0) throw ContractError("negative optimizer step count");
  m_ = std::move(m);
  v_ = std::move(v);
  steps_ = steps_taken;
}

double optimization_step(Policy& policy, Tape& tape, const Tensor& loss,
                         AdamW& opt) {
  if (!loss.defined() || !loss.is_scalar())
    throw ContractError("loss must be a defined scalar");
  if (!std::isfinite(loss.item())) throw NumericError("non-finite loss");
  tape.backward(loss);
  return opt.apply(policy);
}

std::string run_summary_json(const RunSummary& s) {
  ordered_json j;
  j["label"] = s.label;
  j["schedule"] = s.schedule;
  j["task"] = s.task;
  j["seed"] = s.seed;
  j["warmup_steps"] = s.warmup_steps;
  j["sft_steps"] = s.sft_steps;
  j["grpo_steps"] = s.grpo_steps;
  j["g_warmup"] = s.g_warmup;
  j["final_accuracy"] = s.final_accuracy;
  j["total_wall_ms"] = s.total_wall_ms;
  j["degenerate_fallbacks"] = s.degenerate_fallbacks;
  j["eval_trace"] = s.eval_trace;
  j["error"] = s.error;
  return j.dump(2);
}

RunSummary run_summary_from_json(const std::string& text) {
  ordered_json j = ordered_json::parse(text, nullptr, false);
  if (j.is_discarded() || !j.is_object())
    throw IoError("invalid run summary document");
  try {
    RunSummary s;
    s.label = j.at("label").get<std::string>();
    s.schedule = j.at("schedule").get<std::string>();
    s.task = j.at("task").get<std::string>();
    s.seed = j.at("seed").get<int>();
    s.warmup_steps = j.at("warmup_steps").get<int>();
    s.sft_steps = j.at("sft_steps").get<int>();
    s.grpo_steps = j.at("grpo_steps").get<int>();
    s.g_warmup = j.at("g_warmup").get<double>();
    s.final_accuracy = j.at("final_accuracy").get<double>();
    s.total_wall_ms = j.at("total_wall_ms").get<double>();
    s.degenerate_fallbacks = j.at("degenerate_fallbacks").get<int>();
    s.eval_trace =
        j.at("eval_trace").get<std::vector<std::pair<int, double>>>();
    s.error = j.at("error").get<std::string>();
    return s;
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("invalid run summary: ") + e.what());
  }
}

Trainer::Trainer(const RunConfig& config)
    : config_(validated(config)),
      policy_(seeded_policy_config(config_)),
      opt_(std::make_unique<AdamW>(policy_, config_.train)),
      scheduler_(config_.train.schedule, config_.train.total_steps,
                 steps_per_epoch(config_.train),
                 stream_seed(config_.train.seed, 3)),
      data_(config_.train.task, config_.train.difficulty, config_.train.kk_n,
            stream_seed(config_.train.seed, 1)),
      rollout_rng_(stream_seed(config_.train.seed, 2)) {
  TaskStream eval_stream(config_.train.task, config_.train.difficulty,
                         config_.train.kk_n,
                         stream_seed(config_.train.seed, 4));
  eval_set_.reserve((size_t)config_.train.eval_size);
  for (int i = 0; i < config_.train.eval_size; ++i)
    eval_set_.push_back(eval_stream.next());
}

Trainer::Trainer(const RunConfig& config, const std::string& checkpoint_path)
    : Trainer(config) {
  std::ifstream in(checkpoint_path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint: " + checkpoint_path);
  char magic[8] = {};
  in.read(magic, 8);
  if (!in || std::memcmp(magic, kCheckpointMagic, 8) != 0)
    throw IoError("not a checkpoint file: " + checkpoint_path);
  uint32_t header_len = 0;
  in.read(reinterpret_cast<char*>(&header_len), 4);
  std::string header(header_len, '\0');
  in.read(header.data(), header_len);
  if (!in) throw IoError("truncated checkpoint header: " + checkpoint_path);
  ordered_json h = ordered_json::parse(header, nullptr, false);
  if (h.is_discarded() || !h.is_object())
    throw IoError("corrupt checkpoint header: " + checkpoint_path);

  try {
    if (h.at("param_count").get<int64_t>() != policy_.param_count())
      throw IoError(
          "checkpoint does not match the configured policy parameter count");

    auto load_params = [&in](Policy& p) {
      for (Tensor& t : p.params()) read_doubles(in, t.values());
    };
    load_params(policy_);
    std::vector<std::vector<double>> m, v;
    for (const Tensor& t : policy_.params())
      m.emplace_back((size_t)t.numel(), 0.0);
    v = m;
    for (std::vector<double>& mi : m) read_doubles(in, mi);
    for (std::vector<double>& vi : v) read_doubles(in, vi);
    opt_->restore(std::move(m), std::move(v),
                  h.at("opt_steps").get<long long>());
    if (h.at("has_ref").get<bool>()) {
      Policy ref_src(policy_.config());
      load_params(ref_src);
      ref_ = ref_src.snapshot();
      has_ref_ = true;
    }
    if (!in) throw IoError("truncated checkpoint payload: " + checkpoint_path);

    scheduler_.restore(h.at("sched_t").get<int>(),
                       h.at("sched_has_warmup").get<bool>(),
                       h.at("sched_g_warmup").get<double>(),
                       h.at("sched_g_last_sft").get<double>(),
                       h.at("sched_rng").get<std::string>());
    data_.restore_rng(h.at("data_rng").get<std::string>());
    rollout_rng_.deserialize(h.at("rollout_rng").get<std::string>());
    t_done_ = h.at("t_done").get<int>();
    warmup_done_ = h.at("warmup_done").get<bool>();
    warmup_records_ = h.at("warmup_records").get<int>();
    g_warmup_ = h.at("g_warmup").get<double>();
    sft_steps_ = h.at("sft_steps").get<int>();
    grpo_steps_ = h.at("grpo_steps").get<int>();
    degenerate_events_ = h.at("degenerate_events").get<int>();
    eval_trace_ =
        h.at("eval_trace").get<std::vector<std::pair<int, double>>>();
  } catch (const nlohmann::json::exception& e) {
    throw IoError(std::string("invalid checkpoint header field: ") + e.what());
  }
}

const Policy& Trainer::ref_policy() const {
  if (!has_ref_) throw StateError("reference policy not yet snapshotted");
  return ref_.as_policy();
}

std::string Trainer::run_dir() const {
  const char* root = std::getenv("SASR_OUT_ROOT");
  std::string base = (root && *root) ? std::string(root) : std::string(".");
  return base + "/" + config_.out_dir + "/" + config_.label;
}

void Trainer::append_record(const StepRecord& r) {
  records_.push_back(r);
  if (writer_) writer_->append(r);
}

SftBatch Trainer::next_sft_batch() {
  SftBatch batch;
  batch.examples.reserve((size_t)config_.train.batch_size);
  for (int i = 0; i < config_.train.batch_size; ++i) {
    TaskItem item = data_.next();
    SftExample ex;
    ex.prompt = Tokenizer::encode(item.sample.question);
    ex.target = Tokenizer::encode(item.sample.cot);
    ex.target.push_back(Tokenizer::eos_id);
    batch.examples.push_back(std::move(ex));
  }
  return batch;
}

StepRecord Trainer::sft_step(int t, Stage stage,
                             const StepDecision* decision) {
  const auto start = Clock::now();
  StepRecord r;
  r.t = t;
  r.stage = stage;
  r.kind = StepKind::Sft;
  r.loss = std::nan("");
  r.grad_norm = std::nan("");
  if (decision && decision->probabilistic) r.p = decision->p;
  try {
    SftBatch batch = next_sft_batch();
    double kl_norm = 0.0;
    if (config_.train.check_eq10)
      kl_norm = kl_onehot_gradnorm(policy_, tape_, batch);
    Tensor loss = sft_loss(policy_, tape_, batch);
    r.loss = loss.item();
    r.grad_norm = optimization_step(policy_, tape_, loss, *opt_);
    if (config_.train.check_eq10 &&
        std::abs(kl_norm - r.grad_norm) > 1e-10)
      throw NumericError(
          "sft gradient norm diverged from the one-hot KL path: " +
          std::to_string(kl_norm) + " vs " + std::to_string(r.grad_norm));
  } catch (const NumericError&) {
    // Abort, but leave a diagnostic record describing the failed step.
    r.duration_ms = elapsed_ms(start);
    append_record(r);
    throw;
  }
  r.duration_ms = elapsed_ms(start);
  return r;
}

StepRecord Trainer::grpo_step(int t, const StepDecision& decision) {
  const auto start = Clock::now();
  const TrainConfig& tc = config_.train;
  StepRecord r;
  r.t = t;
  r.stage = Stage::Adaptive;
  r.kind = StepKind::Grpo;
  r.loss = std::nan("");
  r.grad_norm = std::nan("");
  if (decision.probabilistic) r.p = decision.p;
  try {
    const int prompts = tc.batch_size / tc.group_size;
    GrpoParams gp = tc.grpo;
    gp.group_size = tc.group_size;
    std::vector<RolloutGroup> groups;
    groups.reserve((size_t)prompts);
    double reward_sum = 0.0;
    for (int p = 0; p < prompts; ++p) {
      TaskItem item = data_.next();
      RolloutGroup g;
      g.prompt = Tokenizer::encode(item.sample.question);
      // The sampling distribution is the pre-update policy, so the sampler's
      // own log-probs are exactly the old-policy log-probs the clipped ratio
      // needs; no separate snapshot pass is required.
      g.completions =
          sample_group(policy_, tape_, g.prompt, tc.group_size,
                       tc.max_rollout_len, 1.0, rollout_rng_);
      for (const Completion& c : g.completions) {
        const double reward = task_reward(tc.task, c.text, item);
        g.rewards.push_back(reward);
        reward_sum += reward;
        g.old_logprobs.push_back(c.logprobs);
        g.ref_logprobs.push_back(
            completion_logprobs(ref_policy(), tape_, g.prompt, c.tokens));
      }
      g.advantages = group_advantages(g.rewards);
      groups.push_back(std::move(g));
    }
    r.reward_mean = reward_sum / (double)(prompts * tc.group_size);
    for (int u = 0; u < tc.grpo.inner_updates; ++u) {
      Tensor total;
      for (const RolloutGroup& g : groups) {
        Tensor objective = grpo_loss(policy_, tape_, g, gp);
        total = total.defined() ? tape_.add(total, objective) : objective;
      }
      // Mean objective over prompts, negated for the minimizer.
      Tensor loss = tape_.scale(total, -1.0 / (double)prompts);
      r.loss = loss.item();
      r.grad_norm = optimization_step(policy_, tape_, loss, *opt_);
    }
  } catch (const NumericError&) {
    r.duration_ms = elapsed_ms(start);
    append_record(r);
    throw;
  }
  r.duration_ms = elapsed_ms(start);
  return r;
}

double Trainer::warmup_stage() {
  if (warmup_done_) throw StateError("warm-up already ran");
  const int W = config_.train.warmup_steps;
  for (int i = 1; i <= W; ++i) {
    StepRecord r = sft_step(i, Stage::Warmup, nullptr);
    append_record(r);
    ++warmup_records_;
    if (i == W) g_warmup_ = r.grad_norm;
  }
  ref_ = policy_.snapshot();
  has_ref_ = true;
  if (W >= 1) scheduler_.set_warmup_norm(g_warmup_);
  warmup_done_ = true;
  return g_warmup_;
}

void Trainer::adaptive_stage() {
  if (!warmup_done_)
    throw StateError("the adaptive stage needs warmup_stage first");
  const TrainConfig& tc = config_.train;
  for (int t = t_done_ + 1; t <= tc.total_steps; ++t) {
    StepDecision decision = scheduler_.decide_step();
    StepRecord r;
    if (decision.kind == StepKind::Sft) {
      r = sft_step(t, Stage::Adaptive, &decision);
      scheduler_.record_sft_grad_norm(r.grad_norm);
      ++sft_steps_;
    } else {
      r = grpo_step(t, decision);
      ++grpo_steps_;
    }
    if (decision.degenerate) ++degenerate_events_;
    append_record(r);
    t_done_ = t;
    if (tc.eval_every > 0 && t % tc.eval_every == 0)
      eval_trace_.emplace_back(t, evaluate().accuracy);
    if (writer_ && tc.total_steps >= 2 && t == tc.total_steps / 2)
      save_checkpoint(run_dir() + "/checkpoint_mid.bin");
  }
}

EvalResult Trainer::evaluate() {
  EvalResult res;
  res.total = (int)eval_set_.size();
  for (const TaskItem& item : eval_set_) {
    std::vector<int> prompt = Tokenizer::encode(item.sample.question);
    Completion c =
        greedy_decode(policy_, tape_, prompt, config_.train.max_rollout_len);
    if (response_correct(config_.train.task, c.text, item)) ++res.correct;
  }
  res.accuracy = res.total > 0 ? (double)res.correct / res.total : 0.0;
  return res;
}

RunSummary Trainer::run() {
  const std::string dir = run_dir();
  std::filesystem::create_directories(dir);
  {
    std::ofstream cfg(dir + "/config.toml", std::ios::binary);
    if (!cfg) throw IoError("cannot write config echo under " + dir);
    cfg << emit_config(config_);
  }
  StepLogWriter writer(dir + "/steps.jsonl");
  writer_ = &writer;

  const auto start = Clock::now();
  RunSummary s;
  s.label = config_.label;
  s.schedule = schedule_name(config_.train.schedule.tag);
  s.task = task_name(config_.train.task);
  s.seed = config_.train.seed;
  try {
    if (!warmup_done_) warmup_stage();
    adaptive_stage();
    s.final_accuracy = evaluate().accuracy;
  } catch (const std::exception& e) {
    s.error = e.what();
  }
  writer_ = nullptr;

  s.warmup_steps = warmup_records_;
  s.sft_steps = sft_steps_;
  s.grpo_steps = grpo_steps_;
  s.g_warmup = g_warmup_;
  s.degenerate_fallbacks = degenerate_events_;
  s.eval_trace = eval_trace_;
  s.total_wall_ms = elapsed_ms(start);

  save_checkpoint(dir + "/checkpoint_final.bin");
  std::ofstream out(dir + "/summary.json", std::ios::binary);
  if (!out) throw IoError("cannot write summary under " + dir);
  out << run_summary_json(s) << "\n";
  return s;
}

void Trainer::save_checkpoint(const std::string& path) const {
  ordered_json h;
  h["version"] = 1;
  h["param_count"] = policy_.param_count();
  h["t_done"] = t_done_;
  h["warmup_done"] = warmup_done_;
  h["warmup_records"] = warmup_records_;
  h["g_warmup"] = g_warmup_;
  h["sft_steps"] = sft_steps_;
  h["grpo_steps"] = grpo_steps_;
  h["degenerate_events"] = degenerate_events_;
  h["opt_steps"] = opt_->steps_taken();
  h["sched_t"] = scheduler_.t();
  h["sched_has_warmup"] = scheduler_.has_warmup_norm();
  h["sched_g_warmup"] = scheduler_.warmup_norm();
  h["sched_g_last_sft"] = scheduler_.last_sft_norm();
  h["sched_rng"] = scheduler_.rng_state();
  h["data_rng"] = data_.rng_state();
  h["rollout_rng"] = rollout_rng_.serialize();
  h["has_ref"] = has_ref_;
  h["eval_trace"] = eval_trace_;
  const std::string header = h.dump();

  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write checkpoint: " + path);
  out.write(kCheckpointMagic, 8);
  const uint32_t header_len = (uint32_t)header.size();
  out.write(reinterpret_cast<const char*>(&header_len), 4);
  out.write(header.data(), (std::streamsize)header.size());
  for (const Tensor& t : policy_.params()) write_doubles(out, t.values());
  for (const std::vector<double>& mi : opt_->m()) write_doubles(out, mi);
  for (const std::vector<double>& vi : opt_->v()) write_doubles(out, vi);
  if (has_ref_)
    for (const Tensor& t : ref_.as_policy().params())
      write_doubles(out, t.values());
  if (!out) throw IoError("checkpoint write failed: " + path);
}

}  // namespace sasr
