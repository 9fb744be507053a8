#pragma once

#include <string>
#include <vector>

#include "sasr/tensor.hpp"

namespace sasr {

// Byte-level alphabet: ids 0..255 are raw bytes, 256 is the end-of-sequence
// sentinel. encode never emits the sentinel, so decode(encode(s)) == s.
struct Tokenizer {
  static constexpr int vocab_size = 257;
  static constexpr int eos_id = 256;

  static std::vector<int> encode(const std::string& text);
  // Stops at the first end-of-sequence id; rejects ids outside the alphabet.
  static std::string decode(const std::vector<int>& tokens);
};

struct PolicyConfig {
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int context_len = 256;
  uint64_t seed = 0;
};

class Policy;

// Frozen parameter copy. Exposes the same forward pass as the source policy
// at snapshot time; the copy tracks no gradients and nothing updates it.
class PolicySnapshot {
 public:
  const Policy& as_policy() const { return *frozen_; }

 private:
  friend class Policy;
  std::shared_ptr<const Policy> frozen_;
};

struct Completion {
  std::vector<int> tokens;       // sampled ids, sentinel included when it fired
  std::vector<double> logprobs;  // log-prob of each token under the sampler
  std::string text;              // decoded bytes, sentinel stripped
  bool truncated = false;        // hit the length cap before the sentinel
};

// Decoder-only autoregressive model over the byte alphabet: learned token
// and absolute position embeddings, pre-norm attention/MLP blocks, tied to
// nothing. Embedding lookups are one-hot matmuls and the causal structure is
// a strict upper-triangular mask filled with -1e30, so the whole forward
// pass stays inside the differentiable primitive set.
class Policy {
 public:
  explicit Policy(PolicyConfig config);

  const PolicyConfig& config() const { return config_; }

  // Flat parameter list in a fixed documented order; shared with names().
  std::vector<Tensor>& params() { return params_; }
  const std::vector<Tensor>& params() const { return params_; }
  const std::vector<std::string>& names() const { return names_; }
  // Lookup by name; contract error when absent.
  Tensor param(const std::string& name) const;

  // Row t is log pi(. | tokens[0..t]); shape [len, vocab]. Differentiable
  // with respect to the parameters while the tape is recording.
  Tensor forward_logprobs(Tape& tape, const std::vector<int>& tokens) const;

  PolicySnapshot snapshot() const;
  // Overwrites parameter values from another policy of identical shape.
  void load_values(const Policy& other);

  int64_t param_count() const;

 private:
  Policy() = default;

  PolicyConfig config_;
  std::vector<Tensor> params_;
  std::vector<std::string> names_;
};

// Draws G completions from softmax(logits / temperature), recording each
// sampled token's log-probability under that same distribution. Generation
// stops at the end-of-sequence id, at max_len tokens, or at the context
// limit, whichever comes first.
std::vector<Completion> sample_group(const Policy& policy, Tape& tape,
                                     const std::vector<int>& prompt, int G,
                                     int max_len, double temperature,
                                     RandomSource& rng);

// Argmax decoding; deterministic companion to sample_group for evaluation.
Completion greedy_decode(const Policy& policy, Tape& tape,
                         const std::vector<int>& prompt, int max_len);

// Shannon entropy (nats) of softmax(logits / temperature).
double softmax_entropy(const std::vector<double>& logits, double temperature);

}  // namespace sasr
