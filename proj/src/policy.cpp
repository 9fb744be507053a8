#include "sasr/policy.hpp"

#include <algorithm>
#include <cmath>

namespace sasr {

std::vector<int> Tokenizer::encode(const std::string& text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int>(c));
  return out;
}

std::string Tokenizer::decode(const std::vector<int>& tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    if (t == eos_id) break;
    if (t < 0 || t >= vocab_size) {
      throw ContractError("decode: token id " + std::to_string(t) +
                          " outside the alphabet");
    }
    out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

namespace {

constexpr double kInitStd = 0.02;
constexpr double kMaskValue = -1e30;

Tensor init_normal(Shape shape, RandomSource& rng) {
  Tensor t = Tensor::zeros(std::move(shape), true);
  for (auto& v : t.values()) v = rng.normal(0.0, kInitStd);
  return t;
}

}  // namespace

Policy::Policy(PolicyConfig config) : config_(config) {
  if (config_.d_model <= 0 || config_.n_layers <= 0 || config_.n_heads <= 0 ||
      config_.context_len <= 0) {
    throw ConfigError("policy dimensions must be positive");
  }
  if (config_.d_model % config_.n_heads != 0) {
    throw ConfigError("d_model " + std::to_string(config_.d_model) +
                      " not divisible by n_heads " +
                      std::to_string(config_.n_heads));
  }
  RandomSource rng(config_.seed);
  const int d = config_.d_model;
  const int hd = d / config_.n_heads;
  auto add = [&](const std::string& name, Tensor t) {
    names_.push_back(name);
    params_.push_back(std::move(t));
  };
  add("tok_emb", init_normal({Tokenizer::vocab_size, d}, rng));
  add("pos_emb", init_normal({config_.context_len, d}, rng));
  for (int l = 0; l < config_.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    add(p + "ln1.g", Tensor::full({d}, 1.0, true));
    add(p + "ln1.b", Tensor::zeros({d}, true));
    for (int h = 0; h < config_.n_heads; ++h) {
      const std::string hp = p + "h" + std::to_string(h) + ".";
      add(hp + "wq", init_normal({d, hd}, rng));
      add(hp + "wk", init_normal({d, hd}, rng));
      add(hp + "wv", init_normal({d, hd}, rng));
    }
    add(p + "attn.wo", init_normal({d, d}, rng));
    add(p + "attn.bo", Tensor::zeros({d}, true));
    add(p + "ln2.g", Tensor::full({d}, 1.0, true));
    add(p + "ln2.b", Tensor::zeros({d}, true));
    add(p + "mlp.w1", init_normal({d, 4 * d}, rng));
    add(p + "mlp.b1", Tensor::zeros({4 * d}, true));
    add(p + "mlp.w2", init_normal({4 * d, d}, rng));
    add(p + "mlp.b2", Tensor::zeros({d}, true));
  }
  add("lnf.g", Tensor::full({d}, 1.0, true));
  add("lnf.b", Tensor::zeros({d}, true));
  add("out.w", init_normal({d, Tokenizer::vocab_size}, rng));
  add("out.b", Tensor::zeros({Tokenizer::vocab_size}, true));
}

Tensor Policy::param(const std::string& name) const {
  for (size_t i = 0; i < names_.size(); ++i) {
    if (names_[i] == name) return params_[i];
  }
  throw ContractError("no parameter named " + name);
}

int64_t Policy::param_count() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.numel();
  return n;
}

Tensor Policy::forward_logprobs(Tape& tape,
                                const std::vector<int>& tokens) const {
  const int T = static_cast<int>(tokens.size());
  if (T == 0) throw ContractError("forward on an empty sequence");
  if (T > config_.context_len) {
    throw ContextError("sequence of " + std::to_string(T) +
                       " tokens exceeds context_len " +
                       std::to_string(config_.context_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= Tokenizer::vocab_size) {
      throw ContractError("token id " + std::to_string(t) +
                          " outside the alphabet");
    }
  }
  const int d = config_.d_model;
  const int hd = d / config_.n_heads;

  Tensor tok_onehot = Tensor::zeros({T, Tokenizer::vocab_size});
  Tensor pos_onehot = Tensor::zeros({T, config_.context_len});
  for (int t = 0; t < T; ++t) {
    tok_onehot.values()[static_cast<size_t>(t) * Tokenizer::vocab_size +
                        tokens[t]] = 1.0;
    pos_onehot.values()[static_cast<size_t>(t) * config_.context_len + t] = 1.0;
  }
  // Strict upper triangle: position i never attends to j > i.
  std::vector<uint8_t> causal(static_cast<size_t>(T) * T);
  for (int i = 0; i < T; ++i) {
    for (int j = i + 1; j < T; ++j) causal[static_cast<size_t>(i) * T + j] = 1;
  }

  size_t pi = 0;
  auto next = [&]() -> const Tensor& { return params_[pi++]; };

  const Tensor& tok_emb = next();
  const Tensor& pos_emb = next();
  Tensor x = tape.add(tape.matmul(tok_onehot, tok_emb),
                      tape.matmul(pos_onehot, pos_emb));
  const double att_scale = 1.0 / std::sqrt(static_cast<double>(hd));
  for (int l = 0; l < config_.n_layers; ++l) {
    const Tensor& ln1g = next();
    const Tensor& ln1b = next();
    Tensor h = tape.layer_norm(x, ln1g, ln1b);
    std::vector<Tensor> heads;
    heads.reserve(config_.n_heads);
    for (int hh = 0; hh < config_.n_heads; ++hh) {
      Tensor q = tape.matmul(h, next());
      Tensor k = tape.matmul(h, next());
      Tensor v = tape.matmul(h, next());
      Tensor scores = tape.scale(tape.matmul(q, k, false, true), att_scale);
      Tensor att = tape.softmax(tape.mask_fill(scores, causal, kMaskValue));
      heads.push_back(tape.matmul(att, v));
    }
    Tensor merged = tape.concat(heads);
    const Tensor& wo = next();
    const Tensor& bo = next();
    x = tape.add(x, tape.add(tape.matmul(merged, wo), bo));
    const Tensor& ln2g = next();
    const Tensor& ln2b = next();
    Tensor h2 = tape.layer_norm(x, ln2g, ln2b);
    const Tensor& w1 = next();
    const Tensor& b1 = next();
    const Tensor& w2 = next();
    const Tensor& b2 = next();
    Tensor m = tape.matmul(tape.gelu(tape.add(tape.matmul(h2, w1), b1)), w2);
    x = tape.add(x, tape.add(m, b2));
  }
  const Tensor& lnfg = next();
  const Tensor& lnfb = next();
  x = tape.layer_norm(x, lnfg, lnfb);
  const Tensor& out_w = next();
  const Tensor& out_b = next();
  Tensor logits = tape.add(tape.matmul(x, out_w), out_b);
  return tape.log_softmax(logits);
}

PolicySnapshot Policy::snapshot() const {
  auto frozen = std::shared_ptr<Policy>(new Policy());
  frozen->config_ = config_;
  frozen->names_ = names_;
  frozen->params_.reserve(params_.size());
  for (const auto& p : params_) frozen->params_.push_back(p.detached_copy());
  PolicySnapshot snap;
  snap.frozen_ = std::move(frozen);
  return snap;
}

void Policy::load_values(const Policy& other) {
  if (other.params_.size() != params_.size()) {
    throw ContractError("parameter lists differ in length");
  }
  for (size_t i = 0; i < params_.size(); ++i) {
    if (other.params_[i].shape() != params_[i].shape()) {
      throw ContractError("parameter " + names_[i] + " differs in shape");
    }
    params_[i].values() = other.params_[i].values();
  }
}

namespace {

// Renormalized log-probabilities of the last row at the given temperature.
std::vector<double> temper_row(const std::vector<double>& row, double tau) {
  if (tau == 1.0) return row;
  std::vector<double> q(row.size());
  double mx = -1e300;
  for (size_t i = 0; i < row.size(); ++i) {
    q[i] = row[i] / tau;
    mx = std::max(mx, q[i]);
  }
  double z = 0.0;
  for (double v : q) z += std::exp(v - mx);
  const double lz = std::log(z) + mx;
  for (auto& v : q) v -= lz;
  return q;
}

int sample_index(const std::vector<double>& logprobs, RandomSource& rng) {
  const double u = rng.uniform();
  double acc = 0.0;
  int last_positive = 0;
  for (size_t i = 0; i < logprobs.size(); ++i) {
    const double p = std::exp(logprobs[i]);
    if (p > 0.0) last_positive = static_cast<int>(i);
    acc += p;
    if (u < acc) return static_cast<int>(i);
  }
  return last_positive;  // cumulative rounding left u unreached
}

Completion roll_one(const Policy& policy, Tape& tape,
                    const std::vector<int>& prompt, int max_len,
                    double temperature, RandomSource* rng) {
  const int room = policy.config().context_len - static_cast<int>(prompt.size());
  if (room <= 0) {
    throw GenerationError("prompt of " + std::to_string(prompt.size()) +
                          " tokens leaves no room to generate");
  }
  const int budget = std::min(max_len, room);
  std::vector<int> seq = prompt;
  Completion c;
  NoGradGuard guard(tape);
  for (int step = 0; step < budget; ++step) {
    Tensor lp = policy.forward_logprobs(tape, seq);
    const size_t vocab = Tokenizer::vocab_size;
    std::vector<double> row(lp.values().end() - vocab, lp.values().end());
    int tok;
    double tok_lp;
    if (rng != nullptr) {
      const std::vector<double> q = temper_row(row, temperature);
      tok = sample_index(q, *rng);
      tok_lp = q[tok];
    } else {
      tok = static_cast<int>(
          std::max_element(row.begin(), row.end()) - row.begin());
      tok_lp = row[tok];
    }
    seq.push_back(tok);
    c.tokens.push_back(tok);
    c.logprobs.push_back(tok_lp);
    if (tok == Tokenizer::eos_id) {
      c.text = Tokenizer::decode(c.tokens);
      return c;
    }
  }
  c.truncated = true;
  c.text = Tokenizer::decode(c.tokens);
  return c;
}

}  // namespace

std::vector<Completion> sample_group(const Policy& policy, Tape& tape,
                                     const std::vector<int>& prompt, int G,
                                     int max_len, double temperature,
                                     RandomSource& rng) {
  if (G < 2) {
    throw ContractError("group statistics need at least 2 completions, got " +
                        std::to_string(G));
  }
  if (temperature <= 0.0) {
    throw ContractError("temperature must be positive");
  }
  if (max_len <= 0) throw ContractError("max_len must be positive");
  std::vector<Completion> group;
  group.reserve(G);
  for (int i = 0; i < G; ++i) {
    group.push_back(roll_one(policy, tape, prompt, max_len, temperature, &rng));
  }
  return group;
}

Completion greedy_decode(const Policy& policy, Tape& tape,
                         const std::vector<int>& prompt, int max_len) {
  if (max_len <= 0) throw ContractError("max_len must be positive");
  return roll_one(policy, tape, prompt, max_len, 1.0, nullptr);
}

double softmax_entropy(const std::vector<double>& logits, double temperature) {
  if (temperature <= 0.0) {
    throw ContractError("temperature must be positive");
  }
  double mx = -1e300;
  for (double z : logits) mx = std::max(mx, z / temperature);
  double zsum = 0.0;
  for (double z : logits) zsum += std::exp(z / temperature - mx);
  const double lz = std::log(zsum) + mx;
  double h = 0.0;
  for (double z : logits) {
    const double lp = z / temperature - lz;
    h -= std::exp(lp) * lp;
  }
  return h;
}

}  // namespace sasr
