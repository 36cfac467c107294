#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <thread>

#include "crosscheck/hash.hpp"
#include "crosscheck/store.hpp"
#include "doctest.h"

using namespace crosscheck;
using namespace crosscheck::store;
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("crosscheck_store_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

CacheRecord record(const std::string& query, int sample, const std::string& text) {
  CacheRecord r;
  r.key = CacheKey::make("passage", "m1", query, sample, "Generate a passage about X.", json{{"temperature", 1.0}});
  r.payload = text;
  r.fingerprint = "abc";
  return r;
}

}  // namespace

TEST_SUITE("store") {
  TEST_CASE("cache keys") {
    const json dec = {{"temperature", 1.0}, {"top_p", 0.9}};
    auto a = CacheKey::make("passage", "m1", "q1", 0, "Generate  a passage\nabout X.", dec);
    auto b = CacheKey::make("passage", "m1", "q1", 0, "Generate a passage about X.", dec);
    CHECK(a == b);  // whitespace-normalised prompt
    CHECK(CacheKey::parse(a.str()) == a);
    CHECK(a.prompt_hash.size() == 64);
    CHECK(a.str().rfind("passage|m1|q1|0|", 0) == 0);

    CHECK(CacheKey::make("passage", "m2", "q1", 0, "Generate a passage about X.", dec) != a);
    CHECK(CacheKey::make("passage", "m1", "q2", 0, "Generate a passage about X.", dec) != a);
    CHECK(CacheKey::make("passage", "m1", "q1", 1, "Generate a passage about X.", dec) != a);
    CHECK(CacheKey::make("response", "m1", "q1", 0, "Generate a passage about X.", dec) != a);
    CHECK(CacheKey::make("passage", "m1", "q1", 0, "Generate a passage about Y.", dec) != a);
    CHECK(CacheKey::make("passage", "m1", "q1", 0, "Generate a passage about X.",
                         {{"temperature", 0.5}, {"top_p", 0.9}}) != a);
    // key order in the decoding object is irrelevant
    CHECK(CacheKey::make("passage", "m1", "q1", 0, "Generate a passage about X.",
                         json::parse(R"({"top_p":0.9,"temperature":1.0})")) == a);
    CHECK(CacheKey::make("judge_support", "j", "q1", std::nullopt, "p", dec).sample_index == "-");

    CHECK_THROWS_AS(CacheKey::parse("a|b|c"), Error);
    CHECK_THROWS_AS(CacheKey::make("passage", "m|1", "q1", 0, "p", dec), Error);
    CHECK_THROWS_AS(CacheKey::make("Passage", "m1", "q1", 0, "p", dec), Error);
  }

  TEST_CASE("put semantics in memory") {
    Store s;
    CHECK_FALSE(s.persistent());
    CHECK(s.put(record("q1", 0, "text")) == PutResult::stored);
    CHECK(s.put(record("q1", 0, "text")) == PutResult::already_present);
    CHECK(s.put(record("q1", 0, "other")) == PutResult::conflict);
    CHECK(s.get(record("q1", 0, "").key)->payload == "text");
    CHECK_FALSE(s.get(record("q9", 0, "").key));
    CHECK(s.size() == 1);
  }

  TEST_CASE("file store round-trips and survives restart") {
    TempDir dir;
    const std::string tricky = "line1\nline2 \"quoted\" \xC3\xA9 \\ tab\t";
    {
      Store s(dir.path);
      CHECK(s.persistent());
      CHECK(s.put(record("q1", 0, tricky)) == PutResult::stored);
      CHECK(s.put(record("q1", 1, "b")) == PutResult::stored);
      CHECK(s.get(record("q1", 0, "").key)->payload == tricky);
    }
    CHECK(fs::exists(dir.path / "passage" / "records.jsonl"));
    Store again(dir.path);
    CHECK(again.size() == 2);
    auto got = again.get(record("q1", 0, "").key);
    REQUIRE(got);
    CHECK(got->payload.get<std::string>() == tricky);
    CHECK(got->fingerprint == "abc");
    CHECK(again.put(record("q1", 0, tricky)) == PutResult::already_present);
    CHECK(again.put(record("q1", 0, "changed")) == PutResult::conflict);

    std::ifstream in(dir.path / "passage" / "records.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
      auto j = json::parse(line);
      CHECK(j.contains("checksum"));
      CHECK(j.at("kind") == "passage");
      ++lines;
    }
    CHECK(lines == 2);
  }

  TEST_CASE("checksum mismatch is an integrity error") {
    TempDir dir;
    {
      Store s(dir.path);
      s.put(record("q1", 0, "original"));
      s.put(record("q2", 0, "fine"));
    }
    const auto shard = dir.path / "passage" / "records.jsonl";
    std::ifstream in(shard);
    std::stringstream ss;
    ss << in.rdbuf();
    std::string text = ss.str();
    const auto at = text.find("original");
    REQUIRE(at != std::string::npos);
    text.replace(at, 8, "tampered");
    in.close();
    std::ofstream(shard, std::ios::trunc) << text;

    Store s(dir.path);
    CHECK_THROWS_AS(s.get(record("q1", 0, "").key), IntegrityError);
    CHECK(s.get(record("q2", 0, "").key)->payload == "fine");
  }

  TEST_CASE("a torn final line is skipped and does not swallow later writes") {
    TempDir dir;
    {
      Store s(dir.path);
      s.put(record("q1", 0, "a"));
    }
    std::ofstream(dir.path / "passage" / "records.jsonl", std::ios::app) << R"({"key":"passage|m1|q2|0|x)";
    {
      Store s(dir.path);
      CHECK(s.size() == 1);
      CHECK(s.put(record("q3", 0, "c")) == PutResult::stored);
    }
    Store s(dir.path);
    CHECK(s.size() == 2);
    CHECK(s.skipped_lines() == 1);
    CHECK(s.get(record("q3", 0, "").key)->payload == "c");
  }

  TEST_CASE("a second store instance sees appends from the first") {
    TempDir dir;
    Store a(dir.path);
    Store b(dir.path);
    a.put(record("q1", 0, "from a"));
    CHECK(b.get(record("q1", 0, "").key)->payload == "from a");
    CHECK(b.put(record("q1", 0, "from b")) == PutResult::conflict);
  }

  TEST_CASE("concurrent writers never corrupt the store") {
    TempDir dir;
    constexpr int kThreads = 6;
    constexpr int kKeys = 40;
    {
      // Two instances stand in for two processes sharing the directory.
      Store a(dir.path);
      Store b(dir.path);
      std::vector<std::thread> threads;
      std::atomic<int> stored{0};
      for (int t = 0; t < kThreads; ++t)
        threads.emplace_back([&, t] {
          Store& s = t % 2 ? a : b;
          std::mt19937 rng(t);
          std::vector<int> order(kKeys);
          std::iota(order.begin(), order.end(), 0);
          std::shuffle(order.begin(), order.end(), rng);
          for (int k : order) {
            auto r = s.put(record("q" + std::to_string(k), k % 3, "payload " + std::to_string(k)));
            CHECK(r != PutResult::conflict);
            if (r == PutResult::stored) ++stored;
            CHECK(s.get(record("q" + std::to_string(k), k % 3, "").key)->payload ==
                  "payload " + std::to_string(k));
          }
        });
      for (auto& t : threads) t.join();
      CHECK(stored == kKeys);
    }
    Store reopened(dir.path);
    CHECK(reopened.size() == kKeys);
    CHECK(reopened.skipped_lines() == 0);
    std::ifstream in(dir.path / "passage" / "records.jsonl");
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) ++lines;
    CHECK(lines == kKeys);
  }

  TEST_CASE("run serialization round-trips and is stable") {
    BenchmarkRun run;
    run.config = {{"measure", "explicit"}};
    run.requested_measure = "explicit";
    run.measure = Measure::crosscheck_explicit;
    run.avg_selfcheck = 0.4063;
    run.judge = "judge";
    run.explicit_weights.entries = {{"e1", 0.8808}, {"e2", 0.1192}};
    ModelScoreCard c;
    c.model_id = "t1";
    c.sentence_scores[{"q1", 0}] = 0.25;
    c.sentence_scores[{"q1", 1}] = 0.75;
    c.query_scores["q1"] = 0.5;
    c.corpus_score = 0.5;
    c.total_verdicts = 8;
    c.excluded_queries = {"q2"};
    run.scorecards["t1"] = c;
    c.model_id = "t0";
    c.corpus_score = 0.1;
    run.scorecards["t0"] = c;
    run.selfcheck["t1"] = c;
    run.ranking = rank_by_score({{"t1", 0.5}, {"t0", 0.1}});
    run.notes = {"query q2 excluded for t1: empty response"};

    const auto text = serialize_run(run);
    const auto back = run_from_json(json::parse(text));
    CHECK(serialize_run(back) == text);
    CHECK(back.ranking.front().model_id == "t0");
    CHECK(back.scorecards.at("t1").sentence_scores.at({"q1", 1}) == 0.75);

    const auto md = render_markdown(run);
    CHECK(md.find("| 1 | t0 | 10.00 |") != std::string::npos);
    CHECK(md.find("| 2 | t1 | 50.00 |") != std::string::npos);
    CHECK(md.find("0.8808") != std::string::npos);

    TempDir dir;
    write_run_artifacts(run, dir.path);
    std::ifstream in(dir.path / "run.json");
    std::stringstream ss;
    ss << in.rdbuf();
    CHECK(ss.str() == text);
    CHECK(fs::exists(dir.path / "leaderboard.md"));
  }
}
