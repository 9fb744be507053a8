#pragma once

#include <utility>
#include <vector>

#include "sasr/policy.hpp"

namespace sasr {

struct SftExample {
  std::vector<int> prompt;  // conditioning tokens, never scored
  std::vector<int> target;  // scored tokens, must end with the sentinel
};

struct SftBatch {
  std::vector<SftExample> examples;
};

// One prompt's sampled group plus everything the clipped surrogate needs.
// old/ref log-probs are plain numbers: only the live policy builds a graph.
struct RolloutGroup {
  std::vector<int> prompt;
  std::vector<Completion> completions;
  std::vector<double> rewards;
  std::vector<std::vector<double>> old_logprobs;
  std::vector<std::vector<double>> ref_logprobs;
  std::vector<double> advantages;  // constant across a completion's tokens
};

struct GrpoParams {
  double epsilon = 0.2;  // clip half-width
  double beta = 0.04;    // KL penalty coefficient
  int group_size = 4;
  int inner_updates = 1;
};

// Mean over examples of the summed negative log-likelihood of the target
// tokens given everything before them. Differentiable w.r.t. the policy.
Tensor sft_loss(const Policy& policy, Tape& tape, const SftBatch& batch);

// Group-standardized rewards: (r - mean) / (population std + 1e-8). A
// zero-variance group yields all zeros rather than dividing by zero.
std::vector<double> group_advantages(const std::vector<double>& rewards);

// Clipped-ratio surrogate with a per-token KL penalty toward the reference,
// averaged over tokens within a completion and then over the group. Returned
// as the objective to MAXIMIZE; callers negate for the minimizer. The KL term
// is exp(d) - d - 1 with d = ref - current at each sampled token, which is
// non-negative for every token.
Tensor grpo_loss(const Policy& policy, Tape& tape, const RolloutGroup& group,
                 const GrpoParams& params);

// Per-token log-probabilities of a fixed completion under a policy; no
// gradient graph is built.
std::vector<double> completion_logprobs(const Policy& policy, Tape& tape,
                                        const std::vector<int>& prompt,
                                        const std::vector<int>& completion);

// Gradient norm of the KL divergence from the one-hot target distribution to
// the policy, built through a different primitive chain than sft_loss. The
// two losses differ by a constant in the parameters, so this must equal the
// sft_loss gradient norm on the same batch.
double kl_onehot_gradnorm(const Policy& policy, Tape& tape,
                          const SftBatch& batch);

// First-order descent probe: returns (eta * ||grad||^2, loss(theta) -
// loss(theta - eta * grad)). Parameters are restored before returning.
std::pair<double, double> kl_descent_check(Policy& policy, Tape& tape,
                                           const SftBatch& batch, double eta);

}  // namespace sasr
