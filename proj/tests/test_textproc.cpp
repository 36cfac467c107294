#include <fstream>
#include <random>
#include <string>

#include <nlohmann/json.hpp>

#include "crosscheck/textproc.hpp"
#include "doctest.h"

using crosscheck::SentenceUnit;
using crosscheck::textproc::SegmenterRules;
using crosscheck::textproc::segment_sentences;

namespace {

std::vector<std::string> texts_of(const std::vector<SentenceUnit>& units) {
  std::vector<std::string> out;
  for (const auto& u : units) out.push_back(u.text);
  return out;
}

std::string strip_ws(const std::string& s) {
  std::string out;
  for (char c : s)
    if (!std::isspace(static_cast<unsigned char>(c))) out.push_back(c);
  return out;
}

void check_span_reconstruction(const std::string& text, const std::vector<SentenceUnit>& units) {
  std::size_t prev_end = 0;
  std::string concat;
  for (std::size_t i = 0; i < units.size(); ++i) {
    const auto& u = units[i];
    REQUIRE(u.index == i);
    REQUIRE(u.begin >= prev_end);
    REQUIRE(u.begin < u.end);
    REQUIRE(u.end <= text.size());
    REQUIRE(text.substr(u.begin, u.end - u.begin) == u.text);
    for (std::size_t k = prev_end; k < u.begin; ++k)
      REQUIRE(std::isspace(static_cast<unsigned char>(text[k])));
    prev_end = u.end;
    concat += u.text;
  }
  for (std::size_t k = prev_end; k < text.size(); ++k)
    REQUIRE(std::isspace(static_cast<unsigned char>(text[k])));
  REQUIRE(strip_ws(concat) == strip_ws(text));
}

std::string join_lines(const std::vector<SentenceUnit>& units) {
  std::string out;
  for (const auto& u : units) {
    if (!out.empty()) out += '\n';
    out += u.text;
  }
  return out;
}

}  // namespace

TEST_SUITE("textproc") {
  const auto rules = SegmenterRules::english();

  TEST_CASE("simple two-sentence text") {
    auto s = segment_sentences("John is a doctor. He lives in Paris.", rules);
    CHECK(texts_of(s) == std::vector<std::string>{"John is a doctor.", "He lives in Paris."});
  }

  TEST_CASE("empty text yields no sentences") {
    CHECK(segment_sentences("", rules).empty());
    CHECK(segment_sentences("   \n\t ", rules).empty());
  }

  TEST_CASE("abbreviation and decimal do not split") {
    auto s = segment_sentences("Dr. Smith arrived at 3.5 pm. He left.", rules);
    CHECK(texts_of(s) == std::vector<std::string>{"Dr. Smith arrived at 3.5 pm.", "He left."});
  }

  TEST_CASE("abbreviations match case-insensitively") {
    auto s = segment_sentences("We met DR. Who. It was fun.", rules);
    CHECK(texts_of(s) == std::vector<std::string>{"We met DR. Who.", "It was fun."});
  }

  TEST_CASE("short fragments merge into the previous sentence") {
    auto s = segment_sentences("It rained all day. !! Then it stopped.", rules);
    CHECK(texts_of(s) == std::vector<std::string>{"It rained all day. !!", "Then it stopped."});
  }

  TEST_CASE("leading short fragment merges forward") {
    auto s = segment_sentences("A\nThe rest follows.", rules);
    REQUIRE(s.size() == 1);
    CHECK(s[0].text == "A\nThe rest follows.");
  }

  TEST_CASE("lone short text is kept") {
    auto s = segment_sentences("ok", rules);
    REQUIRE(s.size() == 1);
    CHECK(s[0].text == "ok");
  }

  TEST_CASE("hand-segmented fixture corpus") {
    std::ifstream in(std::string(CROSSCHECK_TEST_DATA) + "/segmentation_corpus.json");
    REQUIRE(in.good());
    const auto corpus = nlohmann::json::parse(in);
    std::size_t total = 0;
    for (const auto& entry : corpus) {
      const auto text = entry.at("text").get<std::string>();
      const auto expected = entry.at("sentences").get<std::vector<std::string>>();
      const auto got = segment_sentences(text, rules);
      CAPTURE(text);
      CHECK(texts_of(got) == expected);
      check_span_reconstruction(text, got);
      total += expected.size();
    }
    CHECK(total == 50);
  }

  TEST_CASE("span reconstruction and idempotence on printable-ASCII fuzz") {
    std::mt19937_64 rng(1234);
    // Bias the alphabet towards characters that exercise the rules.
    const std::string alphabet =
        "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789"
        "...........!!!???      \n\"')(][,;:-Dr.St.No.e.g.";
    std::uniform_int_distribution<std::size_t> len_dist(0, 160);
    std::uniform_int_distribution<std::size_t> pick(0, alphabet.size() - 1);
    std::uniform_int_distribution<int> printable(32, 126);
    for (int iter = 0; iter < 3000; ++iter) {
      std::string text;
      const std::size_t len = len_dist(rng);
      for (std::size_t k = 0; k < len; ++k)
        text.push_back(iter % 3 == 0 ? static_cast<char>(printable(rng)) : alphabet[pick(rng)]);
      CAPTURE(text);
      const auto first = segment_sentences(text, rules);
      check_span_reconstruction(text, first);
      const auto again = segment_sentences(join_lines(first), rules);
      REQUIRE(texts_of(again) == texts_of(first));
      // Deterministic for fixed rules.
      REQUIRE(segment_sentences(text, rules) == first);
    }
  }
}
