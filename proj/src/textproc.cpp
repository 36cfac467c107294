#include "crosscheck/textproc.hpp"

#include <algorithm>
#include <cctype>
#include <utility>

namespace crosscheck::textproc {
namespace {

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }
bool is_lower(char c) { return std::islower(static_cast<unsigned char>(c)) != 0; }
bool is_closer(char c) { return c == '"' || c == '\'' || c == ')' || c == ']' || c == '}'; }
bool is_opener(char c) { return c == '"' || c == '\'' || c == '(' || c == '['; }

std::string lower(std::string_view s) {
  std::string out(s);
  std::transform(out.begin(), out.end(), out.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return out;
}

// The whitespace-delimited token ending at `dot` (inclusive), minus openers.
std::string_view token_ending_at(std::string_view text, std::size_t dot) {
  std::size_t b = dot;
  while (b > 0 && !is_space(text[b - 1])) --b;
  while (b < dot && is_opener(text[b])) ++b;
  return text.substr(b, dot - b + 1);
}

bool keeps_period(std::string_view text, std::size_t dot, const SegmenterRules& rules) {
  const std::string_view tok = token_ending_at(text, dot);
  if (rules.abbreviations.count(lower(tok))) return true;
  if (rules.initials_guard && tok.size() == 2 && is_upper(tok[0])) return true;
  if (rules.decimal_guard && dot > 0 && dot + 1 < text.size() && is_digit(text[dot - 1]) &&
      is_digit(text[dot + 1]))
    return true;
  return false;
}

struct Span {
  std::size_t begin;
  std::size_t end;
};

}  // namespace

SegmenterRules SegmenterRules::english() {
  SegmenterRules r;
  r.abbreviations = {
      "dr.",   "mr.",   "mrs.",   "ms.",   "prof.", "st.",  "no.",   "sr.",  "jr.",  "gen.",
      "col.",  "capt.", "lt.",    "sgt.",  "rev.",  "hon.", "mt.",   "ft.",  "ave.", "rd.",
      "inc.",  "ltd.",  "co.",    "corp.", "vs.",   "etc.", "e.g.",  "i.e.", "a.m.", "p.m.",
      "approx.", "dept.", "fig.", "vol.",  "ed.",   "est.", "u.s.",  "u.k.", "jan.", "feb.",
      "mar.",  "apr.",  "jun.",   "jul.",  "aug.",  "sep.", "sept.", "oct.", "nov.", "dec.",
      "cf.",   "al.",   "ca.",    "pp.",   "ph.d.", "b.a.", "m.a.",  "b.sc."};
  return r;
}

std::vector<SentenceUnit> segment_sentences(std::string_view text, const SegmenterRules& rules) {
  const std::size_t n = text.size();
  std::vector<Span> pieces;
  std::size_t start = 0;

  auto cut = [&](std::size_t end) {
    pieces.push_back({start, end});
    start = end;
  };

  for (std::size_t i = 0; i < n; ++i) {
    const char c = text[i];
    if (rules.split_on_newline && c == '\n') {
      cut(i);
      continue;
    }
    if (rules.terminals.find(c) == std::string::npos) continue;

    std::size_t run_end = i + 1;
    while (run_end < n && rules.terminals.find(text[run_end]) != std::string::npos) ++run_end;
    std::size_t after = run_end;
    while (after < n && is_closer(text[after])) ++after;

    bool split = after == n || is_space(text[after]);
    if (split && run_end == i + 1 && c == '.' && keeps_period(text, i, rules)) split = false;
    if (split && run_end - i >= 2 && text.substr(i, run_end - i).find_first_not_of('.') ==
                                         std::string_view::npos) {
      // Ellipsis: only a boundary when the next word starts upper-case.
      std::size_t next = after;
      while (next < n && is_space(text[next]) && text[next] != '\n') ++next;
      if (next < n && is_lower(text[next])) split = false;
    }
    if (split) cut(after);
    i = after - 1;
  }
  if (start < n) cut(n);

  // Trim and drop empty pieces.
  std::vector<Span> spans;
  for (auto [b, e] : pieces) {
    while (b < e && is_space(text[b])) ++b;
    while (e > b && is_space(text[e - 1])) --e;
    if (b < e) spans.push_back({b, e});
  }

  // Fold short fragments into a neighbour, preferring the previous sentence.
  std::vector<Span> merged;
  bool carry = false;
  std::size_t carry_begin = 0;
  for (const auto& s : spans) {
    const bool short_piece = s.end - s.begin < rules.min_sentence_chars;
    if (carry) {
      merged.push_back({carry_begin, s.end});
      carry = false;
      continue;
    }
    if (short_piece && !merged.empty()) {
      merged.back().end = s.end;
    } else if (short_piece) {
      carry = true;
      carry_begin = s.begin;
    } else {
      merged.push_back(s);
    }
  }
  if (carry) merged.push_back({carry_begin, spans.back().end});

  std::vector<SentenceUnit> out;
  out.reserve(merged.size());
  for (const auto& s : merged) {
    SentenceUnit u;
    u.index = out.size();
    u.text = std::string(text.substr(s.begin, s.end - s.begin));
    u.begin = s.begin;
    u.end = s.end;
    out.push_back(std::move(u));
  }
  return out;
}

Response make_response(ModelId model, QueryId query, std::string text,
                       const SentenceSegmenter& segmenter) {
  Response r;
  r.model_id = std::move(model);
  r.query_id = std::move(query);
  r.text = std::move(text);
  r.sentences = segmenter.segment(r.text);
  return r;
}

}  // namespace crosscheck::textproc
