#include <algorithm>
#include <cctype>
#include <cstdlib>

#include "sasr/tasks.hpp"

namespace sasr {

namespace {

bool is_ws(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return c >= '0' && c <= '9'; }

std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && is_ws(s[a])) ++a;
  while (b > a && is_ws(s[b - 1])) --b;
  return s.substr(a, b - a);
}

size_t count_substr(const std::string& s, const std::string& needle) {
  size_t count = 0;
  for (size_t p = s.find(needle); p != std::string::npos;
       p = s.find(needle, p + 1)) {
    ++count;
  }
  return count;
}

// Occurrences of `needle` bounded by non-alphanumerics on both sides.
size_t count_bounded(const std::string& s, const std::string& needle) {
  size_t count = 0;
  for (size_t p = s.find(needle); p != std::string::npos;
       p = s.find(needle, p + 1)) {
    const size_t q = p + needle.size();
    const bool left_ok = p == 0 || !is_alnum(s[p - 1]);
    const bool right_ok = q == s.size() || !is_alnum(s[q]);
    if (left_ok && right_ok) ++count;
  }
  return count;
}

struct NumberScan {
  std::string text;
  size_t end = 0;  // index just past the number
};

// Number token at/after `pos`, skipping leading whitespace: optional sign,
// then digits with an optional fractional part. A '.' not followed by a
// digit is left outside the token, so "42." scans as "42".
std::optional<NumberScan> scan_number(const std::string& s, size_t pos) {
  size_t i = pos;
  while (i < s.size() && is_ws(s[i])) ++i;
  const size_t start = i;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) ++i;
  size_t digits = 0;
  while (i < s.size() && is_digit(s[i])) {
    ++i;
    ++digits;
  }
  if (i + 1 < s.size() && s[i] == '.' && is_digit(s[i + 1])) {
    ++i;
    while (i < s.size() && is_digit(s[i])) {
      ++i;
      ++digits;
    }
  }
  if (digits == 0) return std::nullopt;
  return NumberScan{s.substr(start, i - start), i};
}

std::optional<double> parse_full_double(const std::string& s) {
  if (s.empty()) return std::nullopt;
  const char* begin = s.c_str();
  char* end = nullptr;
  const double v = std::strtod(begin, &end);
  if (end != begin + s.size()) return std::nullopt;
  return v;
}

constexpr const char* kAnswerMarker = "The answer is";

std::optional<std::pair<size_t, size_t>> answer_block_span(
    const std::string& s) {
  const size_t a = s.find("<answer>");
  if (a == std::string::npos) return std::nullopt;
  const size_t begin = a + 8;
  const size_t b = s.find("</answer>", begin);
  if (b == std::string::npos) return std::nullopt;
  return std::make_pair(begin, b);
}

struct Rational {
  long long num = 0;
  long long den = 1;
};

std::optional<long long> digits_to_ll(const std::string& s, size_t a,
                                      size_t b) {
  if (b - a == 0 || b - a > 18) return std::nullopt;
  long long v = 0;
  for (size_t i = a; i < b; ++i) v = v * 10 + (s[i] - '0');
  return v;
}

// "42", "-3.25", "10/4", ".5". No exponents; digit counts capped at 18 so
// all arithmetic stays exact.
std::optional<Rational> parse_rational(const std::string& s) {
  size_t i = 0;
  long long sign = 1;
  if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
    if (s[i] == '-') sign = -1;
    ++i;
  }
  const size_t int_begin = i;
  while (i < s.size() && is_digit(s[i])) ++i;
  const size_t int_end = i;

  if (i < s.size() && s[i] == '/') {
    ++i;
    long long dsign = 1;
    if (i < s.size() && (s[i] == '+' || s[i] == '-')) {
      if (s[i] == '-') dsign = -1;
      ++i;
    }
    const size_t den_begin = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    if (i != s.size()) return std::nullopt;
    const auto num = digits_to_ll(s, int_begin, int_end);
    const auto den = digits_to_ll(s, den_begin, i);
    if (!num || !den || *den == 0) return std::nullopt;
    Rational r;
    r.num = sign * dsign * *num;
    r.den = *den;
    return r;
  }

  size_t frac_begin = 0, frac_end = 0;
  if (i < s.size() && s[i] == '.') {
    ++i;
    frac_begin = i;
    while (i < s.size() && is_digit(s[i])) ++i;
    frac_end = i;
  }
  if (i != s.size()) return std::nullopt;
  const size_t total_digits = (int_end - int_begin) + (frac_end - frac_begin);
  if (total_digits == 0 || total_digits > 18) return std::nullopt;

  long long num = 0, den = 1;
  for (size_t k = int_begin; k < int_end; ++k) num = num * 10 + (s[k] - '0');
  for (size_t k = frac_begin; k < frac_end; ++k) {
    num = num * 10 + (s[k] - '0');
    den *= 10;
  }
  Rational r;
  r.num = sign * num;
  r.den = den;
  return r;
}

std::string strip_all_ws(const std::string& s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    if (!is_ws(c)) out += c;
  }
  return out;
}

}  // namespace

std::optional<std::string> extract_answer(const std::string& response,
                                          TaskKind task) {
  if (task == TaskKind::Gsm8k) {
    const size_t pos = response.rfind(kAnswerMarker);
    if (pos == std::string::npos) return std::nullopt;
    const auto num = scan_number(response, pos + 13);
    if (!num) return std::nullopt;
    return num->text;
  }
  const auto span = answer_block_span(response);
  if (!span) return std::nullopt;
  return trim(response.substr(span->first, span->second - span->first));
}

bool math_equivalent(const std::string& a, const std::string& b) {
  const std::string sa = strip_all_ws(a);
  const std::string sb = strip_all_ws(b);
  const auto ra = parse_rational(sa);
  const auto rb = parse_rational(sb);
  if (ra && rb) {
    return static_cast<__int128>(ra->num) * rb->den ==
           static_cast<__int128>(rb->num) * ra->den;
  }
  return sa == sb;
}

double reward_gsm8k(const std::string& response, const std::string& gold) {
  double correctness = 0.0;
  double integer_bonus = 0.0;
  double format = 0.0;

  const size_t pos = response.rfind(kAnswerMarker);
  if (pos != std::string::npos) {
    const auto num = scan_number(response, pos + 13);
    if (num) {
      const auto ev = parse_full_double(num->text);
      const auto gv = parse_full_double(trim(gold));
      if (ev && gv && *ev == *gv) correctness = 2.0;

      integer_bonus = 0.5;
      for (char c : num->text) {
        if (!is_digit(c)) {
          integer_bonus = 0.0;
          break;
        }
      }

      const std::string tail = trim(response.substr(num->end));
      if (tail.empty() || tail == ".") {
        format = 1.0;
      } else {
        const double penalty =
            std::min(0.4, static_cast<double>(tail.size()) * 0.01);
        format = std::max(0.5 - penalty, 0.1);
      }
    }
  }
  return correctness + integer_bonus + format;
}

double reward_math(const std::string& response, const std::string& gold) {
  double correctness = 0.0;
  const auto extracted = extract_answer(response, TaskKind::Math);
  if (extracted && math_equivalent(*extracted, gold)) correctness = 2.0;

  double format = 0.0;
  const std::string s = trim(response);
  if (count_substr(s, "<think>") == 1 && count_substr(s, "</think>") == 1 &&
      count_substr(s, "<answer>") == 1 && count_substr(s, "</answer>") == 1) {
    const size_t think_close = s.find("</think>");
    const size_t answer_open = s.find("<answer>");
    const bool starts = s.rfind("<think>", 0) == 0;
    const bool ends = s.size() >= 9 && s.compare(s.size() - 9, 9, "</answer>") == 0;
    bool gap_ws = think_close != std::string::npos &&
                  answer_open != std::string::npos &&
                  think_close + 8 <= answer_open;
    if (gap_ws) {
      for (size_t i = think_close + 8; i < answer_open; ++i) {
        if (!is_ws(s[i])) {
          gap_ws = false;
          break;
        }
      }
    }
    if (starts && ends && gap_ws) format = 1.0;
  }
  return correctness + format;
}

std::optional<std::vector<bool>> parse_kk_assignment(const std::string& text,
                                                     int n) {
  if (n < 1 || n > 8) {
    throw ContractError("expected person count in 1..8, got " +
                        std::to_string(n));
  }
  std::vector<bool> roles(static_cast<size_t>(n));
  for (int i = 0; i < 8; ++i) {
    const std::string name = kk_person_name(i);
    const size_t k = count_bounded(text, name + " is a knight");
    const size_t v = count_bounded(text, name + " is a knave");
    if (i < n) {
      if (k + v != 1) return std::nullopt;
      roles[static_cast<size_t>(i)] = k == 1;
    } else if (k + v != 0) {
      return std::nullopt;  // declaration for a person outside the puzzle
    }
  }
  return roles;
}

double reward_kk(const std::string& response, const KKPuzzle& puzzle) {
  const size_t think_open = response.find("<think>");
  const size_t think_close = response.find("</think>");
  const size_t answer_open = response.find("<answer>");
  const size_t answer_close = response.find("</answer>");
  const bool structure_ok =
      count_substr(response, "<think>") == 1 &&
      count_substr(response, "</think>") == 1 &&
      count_substr(response, "<answer>") == 1 &&
      count_substr(response, "</answer>") == 1 && think_open < think_close &&
      think_close < answer_open && answer_open < answer_close;
  const double format = structure_ok ? 1.0 : -1.0;

  double answer = -2.0;
  const auto span = answer_block_span(response);
  if (span) {
    const auto parsed = parse_kk_assignment(
        response.substr(span->first, span->second - span->first), puzzle.n);
    if (parsed) answer = (*parsed == puzzle.solution) ? 2.0 : -1.5;
  }
  return format + answer;
}

}  // namespace sasr
