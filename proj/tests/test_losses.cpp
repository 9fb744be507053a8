#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>

#include "sasr/losses.hpp"

using namespace sasr;

namespace {

PolicyConfig tiny_config(uint64_t seed) {
  PolicyConfig cfg;
  cfg.d_model = 16;
  cfg.n_layers = 2;
  cfg.n_heads = 2;
  cfg.context_len = 32;
  cfg.seed = seed;
  return cfg;
}

SftExample example_from(const std::string& prompt, const std::string& target) {
  SftExample ex;
  ex.prompt = Tokenizer::encode(prompt);
  ex.target = Tokenizer::encode(target);
  ex.target.push_back(Tokenizer::eos_id);
  return ex;
}

void zero_param(Policy& pol, const std::string& name) {
  Tensor t = pol.param(name);
  std::fill(t.values().begin(), t.values().end(), 0.0);
}

// A sampled group with old/ref log-probs taken from the given policies.
RolloutGroup make_group(const Policy& live, const Policy& old_pol,
                        const Policy& ref_pol, Tape& tape,
                        const std::vector<int>& prompt,
                        const std::vector<double>& rewards, int max_len,
                        uint64_t seed) {
  RolloutGroup g;
  g.prompt = prompt;
  RandomSource rng(seed);
  g.completions = sample_group(live, tape, prompt,
                               static_cast<int>(rewards.size()), max_len, 1.0,
                               rng);
  g.rewards = rewards;
  g.advantages = group_advantages(rewards);
  for (const auto& c : g.completions) {
    g.old_logprobs.push_back(
        completion_logprobs(old_pol, tape, prompt, c.tokens));
    g.ref_logprobs.push_back(
        completion_logprobs(ref_pol, tape, prompt, c.tokens));
  }
  return g;
}

}  // namespace

TEST_CASE("uniform policy charges ln(vocab) per target token") {
  Policy pol(tiny_config(1));
  zero_param(pol, "out.w");
  Tape tape;
  SftExample ex;
  ex.prompt = Tokenizer::encode("x");
  ex.target = {'a', 'b', Tokenizer::eos_id};
  Tensor loss = sft_loss(pol, tape, {{ex}});
  CHECK(loss.item() == doctest::Approx(3.0 * std::log(257.0)).epsilon(1e-12));
}

TEST_CASE("a policy that is certain of every target token has zero loss") {
  Policy pol(tiny_config(2));
  for (const char* name :
       {"tok_emb", "pos_emb", "out.w", "l0.attn.wo", "l1.attn.wo",
        "l0.mlp.w2", "l1.mlp.w2"}) {
    zero_param(pol, name);
  }
  // Two-step lookup chain: 'p' predicts 'a', 'a' predicts the sentinel.
  const int d = pol.config().d_model;
  Tensor tok = pol.param("tok_emb");
  tok.values()[static_cast<size_t>('p') * d + 0] = 1.0;
  tok.values()[static_cast<size_t>('a') * d + 1] = 1.0;
  Tensor out = pol.param("out.w");
  const double big = 1e4;
  out.values()[0 * Tokenizer::vocab_size + 'a'] = big;
  out.values()[1 * Tokenizer::vocab_size + Tokenizer::eos_id] = big;

  Tape tape;
  SftExample ex;
  ex.prompt = {'p'};
  ex.target = {'a', Tokenizer::eos_id};
  Tensor loss = sft_loss(pol, tape, {{ex}});
  CHECK(loss.item() == 0.0);
}

TEST_CASE("sft gradients survive a finite-difference check") {
  Policy pol(tiny_config(3));
  Tape tape;
  SftBatch batch{{example_from("2+2=", "4"), example_from("9-5=", "4")}};
  auto f = [&] { return sft_loss(pol, tape, batch); };
  CHECK(finite_difference_check(tape, f, pol.params(), 1e-5, 4) < 1e-5);
}

TEST_CASE("sft batch contracts are enforced") {
  Policy pol(tiny_config(4));
  Tape tape;
  CHECK_THROWS_AS(sft_loss(pol, tape, {}), ContractError);
  SftExample no_target;
  no_target.prompt = {'x'};
  CHECK_THROWS_AS(sft_loss(pol, tape, {{no_target}}), ContractError);
  SftExample no_eos;
  no_eos.prompt = {'x'};
  no_eos.target = {'y'};
  CHECK_THROWS_AS(sft_loss(pol, tape, {{no_eos}}), ContractError);
}

TEST_CASE("symmetric rewards standardize to unit advantages") {
  const auto adv = group_advantages({2.0, 0.0, 0.0, 2.0});
  REQUIRE(adv.size() == 4);
  CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(adv[1] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(adv[2] == doctest::Approx(-1.0).epsilon(1e-7));
  CHECK(adv[3] == doctest::Approx(1.0).epsilon(1e-7));
}

TEST_CASE("identical rewards give zero advantages") {
  for (double v : group_advantages({1.5, 1.5, 1.5})) CHECK(v == 0.0);
}

TEST_CASE("a two-member group standardizes to plus and minus one") {
  const auto adv = group_advantages({3.0, 1.0});
  CHECK(adv[0] == doctest::Approx(1.0).epsilon(1e-7));
  CHECK(adv[1] == doctest::Approx(-1.0).epsilon(1e-7));
}

TEST_CASE("advantages have zero mean and unit variance") {
  RandomSource rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> rewards;
    for (int i = 0; i < 6; ++i) rewards.push_back(3.5 * rng.uniform());
    const auto adv = group_advantages(rewards);
    double mean = 0.0;
    for (double a : adv) mean += a;
    mean /= static_cast<double>(adv.size());
    CHECK(std::abs(mean) < 1e-9);
    double var = 0.0;
    for (double a : adv) var += (a - mean) * (a - mean);
    var /= static_cast<double>(adv.size());
    CHECK(var == doctest::Approx(1.0).epsilon(1e-6));
  }
}

TEST_CASE("objective vanishes when policy, old and ref coincide") {
  Policy pol(tiny_config(6));
  Tape tape;
  const auto prompt = Tokenizer::encode("7*7=");
  RolloutGroup g =
      make_group(pol, pol, pol, tape, prompt, {2.0, 0.0, 0.0, 2.0}, 8, 9);
  Tensor obj = grpo_loss(pol, tape, g, GrpoParams{});
  CHECK(obj.item() == doctest::Approx(0.0).epsilon(1e-9));
}

TEST_CASE("fully saturated clipping stops every surrogate gradient") {
  Policy pol(tiny_config(7));
  Tape tape;
  const auto prompt = Tokenizer::encode("q:");
  GrpoParams params;
  params.beta = 0.0;
  RolloutGroup g = make_group(pol, pol, pol, tape, prompt, {1.0, 0.0}, 6, 10);
  // Positive-advantage tokens pushed above the clip window, negative ones
  // below it: both branches select the constant clipped value.
  const double up = std::log(1.0 + 2.0 * params.epsilon);
  const double down = std::log(1.0 - 2.0 * params.epsilon);
  for (size_t t = 0; t < g.old_logprobs[0].size(); ++t) {
    g.old_logprobs[0][t] -= up;
  }
  for (size_t t = 0; t < g.old_logprobs[1].size(); ++t) {
    g.old_logprobs[1][t] -= down;
  }
  auto lparams = pol.params();
  zero_grads(lparams);
  Tensor obj = grpo_loss(pol, tape, g, params);
  tape.backward(obj);
  CHECK(global_grad_norm(lparams) <= 1e-12);
}

TEST_CASE("grpo gradients survive a finite-difference check") {
  Policy live(tiny_config(8));
  Policy old_pol(tiny_config(88));   // distinct so the ratios are not 1
  Policy ref_pol(tiny_config(888));
  Tape tape;
  const auto prompt = Tokenizer::encode("3+4=");
  RolloutGroup g =
      make_group(live, old_pol, ref_pol, tape, prompt, {2.0, 0.5, 0.0}, 6, 11);
  GrpoParams params;
  params.epsilon = 1e6;  // keep every token off the clip boundary kink
  auto f = [&] { return grpo_loss(live, tape, g, params); };
  CHECK(finite_difference_check(tape, f, live.params(), 1e-5, 4) < 1e-5);
}

TEST_CASE("a stronger KL penalty strictly lowers the objective") {
  Policy live(tiny_config(9));
  Policy ref_pol(tiny_config(99));
  Tape tape;
  const auto prompt = Tokenizer::encode("ab");
  RolloutGroup g =
      make_group(live, live, ref_pol, tape, prompt, {1.0, 0.0}, 6, 12);
  double prev = 1e300;
  for (double beta : {0.0, 0.04, 0.4}) {
    GrpoParams params;
    params.beta = beta;
    const double obj = grpo_loss(live, tape, g, params).item();
    CHECK(obj < prev);
    prev = obj;
  }
}

TEST_CASE("the per-token KL estimate is never negative") {
  RandomSource rng(13);
  for (int i = 0; i < 1000; ++i) {
    const double delta = 10.0 * (rng.uniform() - 0.5);
    CHECK(std::exp(delta) - delta - 1.0 >= 0.0);
  }
}

TEST_CASE("group contracts are enforced") {
  Policy pol(tiny_config(14));
  Tape tape;
  const auto prompt = Tokenizer::encode("z");
  RolloutGroup g = make_group(pol, pol, pol, tape, prompt, {1.0, 0.0}, 4, 15);
  RolloutGroup bad = g;
  bad.rewards.pop_back();
  CHECK_THROWS_AS(grpo_loss(pol, tape, bad, GrpoParams{}), ContractError);
  bad = g;
  bad.old_logprobs[0].pop_back();
  CHECK_THROWS_AS(grpo_loss(pol, tape, bad, GrpoParams{}), ContractError);
  GrpoParams neg;
  neg.beta = -0.1;
  CHECK_THROWS_AS(grpo_loss(pol, tape, g, neg), ContractError);
}

TEST_CASE("sft and one-hot KL gradient norms coincide") {
  for (uint64_t seed : {20, 21, 22, 23, 24}) {
    Policy pol(tiny_config(seed));
    Tape tape;
    SftBatch batch{{example_from("8/2=", "4"), example_from("ab", "cd")}};
    auto params = pol.params();
    zero_grads(params);
    tape.backward(sft_loss(pol, tape, batch));
    const double sft_norm = global_grad_norm(params);
    zero_grads(params);
    const double kl_norm = kl_onehot_gradnorm(pol, tape, batch);
    CHECK(std::abs(sft_norm - kl_norm) <= 1e-10);
  }
}

TEST_CASE("a single-token target matches the independent norm path") {
  Policy pol(tiny_config(25));
  zero_param(pol, "out.w");
  Tape tape;
  SftExample ex;
  ex.prompt = {'k'};
  ex.target = {Tokenizer::eos_id};
  auto params = pol.params();
  zero_grads(params);
  tape.backward(sft_loss(pol, tape, {{ex}}));
  const double sft_norm = global_grad_norm(params);
  zero_grads(params);
  CHECK(std::abs(sft_norm - kl_onehot_gradnorm(pol, tape, {{ex}})) <= 1e-10);
}

TEST_CASE("a gradient step drops the loss by the predicted amount") {
  Policy pol(tiny_config(26));
  Tape tape;
  SftBatch batch{{example_from("5*6=", "30"), example_from("1+1=", "2")}};
  for (double eta : {1e-5, 1e-4}) {
    const auto [predicted, actual] = kl_descent_check(pol, tape, batch, eta);
    CHECK(predicted >= 0.0);
    CHECK(std::abs(actual - predicted) / predicted <= 0.1);
  }
}

TEST_CASE("a zero step size drops nothing") {
  Policy pol(tiny_config(27));
  Tape tape;
  SftBatch batch{{example_from("a", "b")}};
  const auto [predicted, actual] = kl_descent_check(pol, tape, batch, 0.0);
  CHECK(predicted == 0.0);
  CHECK(actual == 0.0);
}

TEST_CASE("descent probe leaves the parameters untouched") {
  Policy pol(tiny_config(28));
  Tape tape;
  SftBatch batch{{example_from("m", "n")}};
  std::vector<std::vector<double>> before;
  for (const auto& p : pol.params()) before.push_back(p.values());
  kl_descent_check(pol, tape, batch, 1e-4);
  for (size_t i = 0; i < before.size(); ++i) {
    CHECK(pol.params()[i].values() == before[i]);
  }
}
