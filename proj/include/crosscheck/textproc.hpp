#pragma once

#include <memory>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "crosscheck/core.hpp"

namespace crosscheck::textproc {

struct SegmenterRules {
  // Lowercase tokens including the trailing '.', matched case-insensitively.
  std::set<std::string> abbreviations;
  std::string terminals = ".!?";
  // "3.5" never splits. Terminals must be followed by whitespace or the end of
  // text to split anyway, so this only matters for custom terminal sets.
  bool decimal_guard = true;
  // A single capital letter followed by '.' ("J. K. Rowling") is an initial.
  bool initials_guard = true;
  // Newlines always end a sentence; list items become sentences.
  bool split_on_newline = true;
  // Fragments shorter than this after trimming merge into the previous one.
  std::size_t min_sentence_chars = 3;

  static SegmenterRules english();
};

std::vector<SentenceUnit> segment_sentences(std::string_view text, const SegmenterRules& rules);

class SentenceSegmenter {
 public:
  virtual ~SentenceSegmenter() = default;
  virtual std::vector<SentenceUnit> segment(std::string_view text) const = 0;
};

class RuleSegmenter final : public SentenceSegmenter {
 public:
  explicit RuleSegmenter(SegmenterRules rules = SegmenterRules::english())
      : rules_(std::move(rules)) {}
  std::vector<SentenceUnit> segment(std::string_view text) const override {
    return segment_sentences(text, rules_);
  }

 private:
  SegmenterRules rules_;
};

// Builds a Response with its sentences filled in.
Response make_response(ModelId model, QueryId query, std::string text,
                       const SentenceSegmenter& segmenter);

}  // namespace crosscheck::textproc
