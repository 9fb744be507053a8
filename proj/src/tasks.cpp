#include "sasr/tasks.hpp"

#include <fstream>
#include <sstream>

#include "json.hpp"

namespace sasr {

const char* task_name(TaskKind k) {
  switch (k) {
    case TaskKind::Gsm8k: return "gsm8k";
    case TaskKind::Math: return "math";
    case TaskKind::Kk: return "kk";
  }
  return "?";
}

TaskKind task_from_name(const std::string& name) {
  if (name == "gsm8k") return TaskKind::Gsm8k;
  if (name == "math") return TaskKind::Math;
  if (name == "kk") return TaskKind::Kk;
  throw ConfigError("unknown task name: " + name);
}

bool KKFormula::eval(const std::vector<bool>& knight) const {
  switch (kind) {
    case Kind::Atom:
      if (person < 0 || person >= static_cast<int>(knight.size())) {
        throw ContractError("formula atom references person " +
                            std::to_string(person) + " outside the puzzle");
      }
      return knight[static_cast<size_t>(person)];
    case Kind::Not: return !child[0].eval(knight);
    case Kind::And: return child[0].eval(knight) && child[1].eval(knight);
    case Kind::Or: return child[0].eval(knight) || child[1].eval(knight);
    case Kind::Iff: return child[0].eval(knight) == child[1].eval(knight);
  }
  throw ContractError("unreachable formula kind");
}

namespace {

bool is_literal(const KKFormula& f) {
  return f.kind == KKFormula::Kind::Atom ||
         (f.kind == KKFormula::Kind::Not &&
          f.child[0].kind == KKFormula::Kind::Atom);
}

std::string render_child(const KKFormula& f, int speaker) {
  std::string s = f.render(speaker);
  return is_literal(f) ? s : "(" + s + ")";
}

std::string role_phrase(int person, int speaker, bool knight) {
  const std::string role = knight ? "knight" : "knave";
  if (person == speaker) return "I am a " + role;
  return kk_person_name(person) + " is a " + role;
}

}  // namespace

std::string KKFormula::render(int speaker) const {
  switch (kind) {
    case Kind::Atom: return role_phrase(person, speaker, true);
    case Kind::Not:
      if (child[0].kind == Kind::Atom) {
        return role_phrase(child[0].person, speaker, false);
      }
      return "it is false that " + render_child(child[0], speaker);
    case Kind::And:
      return render_child(child[0], speaker) + " and " +
             render_child(child[1], speaker);
    case Kind::Or:
      return render_child(child[0], speaker) + " or " +
             render_child(child[1], speaker);
    case Kind::Iff:
      return render_child(child[0], speaker) + " if and only if " +
             render_child(child[1], speaker);
  }
  throw ContractError("unreachable formula kind");
}

KKFormula kk_atom(int person) {
  KKFormula f;
  f.kind = KKFormula::Kind::Atom;
  f.person = person;
  return f;
}

namespace {

KKFormula kk_binary(KKFormula::Kind k, KKFormula a, KKFormula b) {
  KKFormula f;
  f.kind = k;
  f.child.push_back(std::move(a));
  f.child.push_back(std::move(b));
  return f;
}

}  // namespace

KKFormula kk_not(KKFormula f) {
  KKFormula g;
  g.kind = KKFormula::Kind::Not;
  g.child.push_back(std::move(f));
  return g;
}

KKFormula kk_and(KKFormula a, KKFormula b) {
  return kk_binary(KKFormula::Kind::And, std::move(a), std::move(b));
}

KKFormula kk_or(KKFormula a, KKFormula b) {
  return kk_binary(KKFormula::Kind::Or, std::move(a), std::move(b));
}

KKFormula kk_iff(KKFormula a, KKFormula b) {
  return kk_binary(KKFormula::Kind::Iff, std::move(a), std::move(b));
}

std::string kk_person_name(int i) {
  if (i < 0 || i > 7) {
    throw ContractError("person index " + std::to_string(i) +
                        " outside the supported 0..7 range");
  }
  return std::string(1, static_cast<char>('A' + i));
}

std::vector<std::vector<bool>> kk_brute_force_solve(const KKPuzzle& p) {
  if (p.n < 1 || p.n > 8) {
    throw ContractError("puzzle has " + std::to_string(p.n) +
                        " persons, supported range is 1..8");
  }
  std::vector<std::vector<bool>> models;
  for (int mask = 0; mask < (1 << p.n); ++mask) {
    std::vector<bool> knight(static_cast<size_t>(p.n));
    for (int i = 0; i < p.n; ++i) knight[static_cast<size_t>(i)] = (mask >> i) & 1;
    bool ok = true;
    for (const auto& [speaker, claim] : p.statements) {
      if (speaker < 0 || speaker >= p.n) {
        throw ContractError("statement speaker " + std::to_string(speaker) +
                            " outside the puzzle");
      }
      if (claim.eval(knight) != knight[static_cast<size_t>(speaker)]) {
        ok = false;
        break;
      }
    }
    if (ok) models.push_back(std::move(knight));
  }
  return models;
}

namespace {

long long pow10ll(int d) {
  long long v = 1;
  for (int i = 0; i < d; ++i) v *= 10;
  return v;
}

struct ArithProblem {
  std::string question;
  std::string equation;  // "17+25"
  long long result = 0;
};

ArithProblem make_arith(RandomSource& rng, int difficulty) {
  if (difficulty < 1 || difficulty > 3) {
    throw ContractError("difficulty must be 1, 2, or 3, got " +
                        std::to_string(difficulty));
  }
  const long long hi = pow10ll(difficulty);
  const int op = static_cast<int>(rng.uniform_int(3));
  long long a = static_cast<long long>(rng.uniform_int(static_cast<uint64_t>(hi)));
  long long b = static_cast<long long>(rng.uniform_int(static_cast<uint64_t>(hi)));
  if (op == 1 && a < b) std::swap(a, b);  // answers stay non-negative

  ArithProblem p;
  const char sym = op == 0 ? '+' : op == 1 ? '-' : '*';
  p.equation = std::to_string(a) + sym + std::to_string(b);
  p.result = op == 0 ? a + b : op == 1 ? a - b : a * b;

  const int tmpl = difficulty == 1 ? 0 : static_cast<int>(rng.uniform_int(2));
  if (tmpl == 0) {
    p.question = p.equation + "=?";
  } else {
    const std::string as = std::to_string(a), bs = std::to_string(b);
    switch (op) {
      case 0:
        p.question = "Sam has " + as + " marbles and finds " + bs +
                     " more. How many marbles does Sam have now?";
        break;
      case 1:
        p.question = "A baker made " + as + " rolls and sold " + bs +
                     ". How many rolls are left?";
        break;
      default:
        p.question = "There are " + as + " boxes and each holds " + bs +
                     " pens. How many pens are there?";
        break;
    }
  }
  return p;
}

}  // namespace

Sample gen_arithmetic(RandomSource& rng, int difficulty) {
  const ArithProblem p = make_arith(rng, difficulty);
  const std::string c = std::to_string(p.result);
  Sample s;
  s.question = p.question;
  s.cot = p.equation + " = " + c + ". The answer is " + c;
  s.answer = c;
  return s;
}

Sample gen_math_style(RandomSource& rng, int difficulty) {
  const ArithProblem p = make_arith(rng, difficulty);
  const std::string c = std::to_string(p.result);
  Sample s;
  s.question = p.question;
  s.cot = "<think>" + p.equation + " = " + c + ".</think><answer>" + c +
          "</answer>";
  s.answer = c;
  return s;
}

namespace {

KKFormula gen_kk_literal(RandomSource& rng, int n) {
  KKFormula atom = kk_atom(static_cast<int>(rng.uniform_int(static_cast<uint64_t>(n))));
  if (rng.uniform_int(2) == 0) return atom;
  return kk_not(std::move(atom));
}

KKFormula gen_kk_statement(RandomSource& rng, int n) {
  switch (rng.uniform_int(4)) {
    case 0: return gen_kk_literal(rng, n);
    case 1: return kk_and(gen_kk_literal(rng, n), gen_kk_literal(rng, n));
    case 2: return kk_or(gen_kk_literal(rng, n), gen_kk_literal(rng, n));
    default: return kk_iff(gen_kk_literal(rng, n), gen_kk_literal(rng, n));
  }
}

std::string kk_name_list(int n) {
  std::string out;
  for (int i = 0; i < n; ++i) {
    if (i > 0) out += (i == n - 1) ? (n == 2 ? " and " : ", and ") : ", ";
    out += kk_person_name(i);
  }
  return out;
}

std::string kk_answer_block(const std::vector<bool>& solution) {
  std::string out;
  for (size_t i = 0; i < solution.size(); ++i) {
    if (i > 0) out += '\n';
    out += "(" + std::to_string(i + 1) + ") " +
           kk_person_name(static_cast<int>(i)) + " is a " +
           (solution[i] ? "knight" : "knave");
  }
  return out;
}

}  // namespace

KKGenerated gen_kk(RandomSource& rng, int n) {
  if (n < 2 || n > 8) {
    throw ContractError("person count must be in 2..8, got " +
                        std::to_string(n));
  }
  for (int attempt = 0; attempt < 1000; ++attempt) {
    KKPuzzle puzzle;
    puzzle.n = n;
    for (int i = 0; i < n; ++i) {
      puzzle.statements.emplace_back(i, gen_kk_statement(rng, n));
    }
    auto models = kk_brute_force_solve(puzzle);
    if (models.size() != 1) continue;
    puzzle.solution = models[0];

    KKGenerated out;
    std::string q = kk_name_list(n) +
                    " are each either a knight or a knave. Knights always "
                    "tell the truth and knaves always lie.";
    for (const auto& [speaker, claim] : puzzle.statements) {
      q += " " + kk_person_name(speaker) + " says: \"" + claim.render(speaker) +
           ".\"";
    }
    q += " Who is a knight and who is a knave?";
    out.sample.question = std::move(q);
    out.sample.answer = kk_answer_block(puzzle.solution);
    out.sample.cot =
        "<think>Check each of the " + std::to_string(1 << n) +
        " role assignments against every statement; knights must speak truth "
        "and knaves must lie. Exactly one assignment survives.</think><answer>" +
        out.sample.answer + "</answer>";
    out.puzzle = std::move(puzzle);
    return out;
  }
  throw GenerationError("no unique-solution puzzle with " + std::to_string(n) +
                        " persons found within 1000 tries");
}

std::vector<Sample> load_samples_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  std::vector<Sample> out;
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j = nlohmann::json::parse(line, nullptr, false);
    if (j.is_discarded() || !j.is_object() || !j.contains("question") ||
        !j.contains("cot") || !j.contains("answer") ||
        !j["question"].is_string() || !j["cot"].is_string() ||
        !j["answer"].is_string()) {
      throw IoError(path + ":" + std::to_string(lineno) +
                    ": expected an object with string fields "
                    "question/cot/answer");
    }
    out.push_back(Sample{j["question"].get<std::string>(),
                         j["cot"].get<std::string>(),
                         j["answer"].get<std::string>()});
  }
  return out;
}

void save_samples_jsonl(const std::string& path,
                        const std::vector<Sample>& samples) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot open " + path + " for writing");
  for (const Sample& s : samples) {
    nlohmann::json j;
    j["question"] = s.question;
    j["cot"] = s.cot;
    j["answer"] = s.answer;
    out << j.dump() << '\n';
  }
  if (!out) throw IoError("write to " + path + " failed");
}

}  // namespace sasr
