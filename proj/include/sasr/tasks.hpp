#pragma once

#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "sasr/errors.hpp"
#include "sasr/rng.hpp"

namespace sasr {

enum class TaskKind { Gsm8k, Math, Kk };

const char* task_name(TaskKind k);
TaskKind task_from_name(const std::string& name);

// One supervised example: a question, a worked rationale, and the gold answer.
// The rationale ends with the task's answer sentinel so the gold answer is
// recoverable from the rationale alone by extract_answer.
struct Sample {
  std::string question;
  std::string cot;
  std::string answer;
};

// Boolean formula over "person i is a knight" atoms. The generator keeps
// formulas to depth 2 (a connective over literals) so puzzles stay auditable;
// eval and render handle arbitrary nesting.
struct KKFormula {
  enum class Kind { Atom, Not, And, Or, Iff };
  Kind kind = Kind::Atom;
  int person = -1;               // Atom only
  std::vector<KKFormula> child;  // Not: one entry; And/Or/Iff: two

  bool eval(const std::vector<bool>& knight) const;
  // English rendering from the speaker's point of view ("I am a knight").
  std::string render(int speaker) const;
};

KKFormula kk_atom(int person);
KKFormula kk_not(KKFormula f);
KKFormula kk_and(KKFormula a, KKFormula b);
KKFormula kk_or(KKFormula a, KKFormula b);
KKFormula kk_iff(KKFormula a, KKFormula b);

// Person names are the capital letters "A".."H".
std::string kk_person_name(int i);

struct KKPuzzle {
  int n = 0;
  // (speaker, claim) pairs; persons without a statement are unconstrained.
  std::vector<std::pair<int, KKFormula>> statements;
  std::vector<bool> solution;  // true = knight
};

// All role assignments where every knight's statement evaluates true and
// every knave's statement evaluates false. n <= 8, so at most 256 candidates.
std::vector<std::vector<bool>> kk_brute_force_solve(const KKPuzzle& p);

struct KKGenerated {
  KKPuzzle puzzle;
  Sample sample;
};

// Arithmetic problem with `difficulty`-digit operands (difficulty in {1,2,3}).
// The rationale states the computed equation and ends "The answer is N";
// answers are always non-negative integers.
Sample gen_arithmetic(RandomSource& rng, int difficulty);

// Same problem family, with the rationale wrapped in <think>/<answer> blocks
// so it scores under the tag-structured reward.
Sample gen_math_style(RandomSource& rng, int difficulty);

// Puzzle with one statement per person, rejection-sampled until the brute
// force solver finds exactly one model (budget 1000 tries, then
// GenerationError). The sample's rationale is a <think> case analysis plus an
// <answer> block of numbered per-person role declarations.
KKGenerated gen_kk(RandomSource& rng, int n);

// Gsm8k: the number following the last "The answer is"; Math/Kk: the trimmed
// content of the first <answer> block. Absent when no marker is found.
std::optional<std::string> extract_answer(const std::string& response,
                                          TaskKind task);

// Role assignment declared in `text`, as "NAME is a knight|knave" phrases.
// Present only when each of the n expected persons is declared exactly once
// and no unexpected name is declared.
std::optional<std::vector<bool>> parse_kk_assignment(const std::string& text,
                                                     int n);

double reward_gsm8k(const std::string& response, const std::string& gold);
double reward_math(const std::string& response, const std::string& gold);
double reward_kk(const std::string& response, const KKPuzzle& puzzle);

// Numeric equivalence used by the tag-structured reward: both sides stripped
// of whitespace, parsed as exact rationals when possible (integers, decimals,
// a/b fractions), otherwise compared as strings.
bool math_equivalent(const std::string& a, const std::string& b);

// One {"question", "cot", "answer"} object per line.
std::vector<Sample> load_samples_jsonl(const std::string& path);
void save_samples_jsonl(const std::string& path,
                        const std::vector<Sample>& samples);

}  // namespace sasr
