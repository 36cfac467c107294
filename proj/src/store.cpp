#include "crosscheck/store.hpp"

#include <fcntl.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstdio>
#include <cstring>
#include <ctime>
#include <fstream>
#include <sstream>

#include "crosscheck/hash.hpp"

namespace crosscheck::store {
namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

bool well_formed_field(std::string_view f) {
  return !f.empty() && f.find('|') == std::string_view::npos && f.find('\n') == std::string_view::npos;
}

void check_key(const CacheKey& k) {
  for (std::string_view f : {std::string_view(k.kind), std::string_view(k.model_id), std::string_view(k.query_id),
                             std::string_view(k.sample_index), std::string_view(k.prompt_hash),
                             std::string_view(k.decoding_hash)})
    if (!well_formed_field(f)) throw Error("malformed cache key '" + k.str() + "'");
  for (char c : k.kind)
    if (!(std::islower(static_cast<unsigned char>(c)) || c == '_'))
      throw Error("cache key kind must be [a-z_]+: '" + k.kind + "'");
}

// RAII advisory lock on a shard file.
class FileLock {
 public:
  FileLock(const fs::path& path, bool exclusive) {
    fd_ = ::open(path.c_str(), O_RDWR | O_CREAT | O_APPEND | O_CLOEXEC, 0644);
    if (fd_ < 0) throw Error("cannot open cache shard '" + path.string() + "': " + std::strerror(errno));
    while (::flock(fd_, exclusive ? LOCK_EX : LOCK_SH) != 0) {
      if (errno != EINTR) {
        ::close(fd_);
        throw Error("cannot lock cache shard '" + path.string() + "': " + std::strerror(errno));
      }
    }
  }
  ~FileLock() {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

  void append(const std::string& data) {
    // A torn final line from a crashed writer must not swallow this record.
    const off_t end = ::lseek(fd_, 0, SEEK_END);
    std::string out;
    if (end > 0) {
      char last = '\n';
      if (::pread(fd_, &last, 1, end - 1) == 1 && last != '\n') out.push_back('\n');
    }
    out += data;
    std::size_t done = 0;
    while (done < out.size()) {
      const ssize_t n = ::write(fd_, out.data() + done, out.size() - done);
      if (n < 0) {
        if (errno == EINTR) continue;
        throw Error(std::string("cache append failed: ") + std::strerror(errno));
      }
      done += static_cast<std::size_t>(n);
    }
  }

 private:
  int fd_ = -1;
};

std::string dump(const json& j, int indent = -1) {
  return j.dump(indent, ' ', false, json::error_handler_t::replace);
}

}  // namespace

// ---------------------------------------------------------------------------
// Keys and records

std::string CacheKey::str() const {
  return kind + "|" + model_id + "|" + query_id + "|" + sample_index + "|" + prompt_hash + "|" + decoding_hash;
}

CacheKey CacheKey::parse(std::string_view s) {
  std::vector<std::string> parts;
  std::size_t start = 0;
  while (true) {
    const auto bar = s.find('|', start);
    parts.emplace_back(s.substr(start, bar == std::string_view::npos ? std::string_view::npos : bar - start));
    if (bar == std::string_view::npos) break;
    start = bar + 1;
  }
  if (parts.size() != 6) throw Error("malformed cache key '" + std::string(s) + "'");
  CacheKey k{parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]};
  check_key(k);
  return k;
}

CacheKey CacheKey::make(std::string kind, std::string model_id, std::string query_id,
                        std::optional<int> sample_index, std::string_view prompt, const json& decoding) {
  return make_with_digest(std::move(kind), std::move(model_id), std::move(query_id), sample_index, prompt,
                          decoding_digest(decoding));
}

CacheKey CacheKey::make_with_digest(std::string kind, std::string model_id, std::string query_id,
                                    std::optional<int> sample_index, std::string_view prompt,
                                    std::string decoding_hash) {
  CacheKey k;
  k.kind = std::move(kind);
  k.model_id = std::move(model_id);
  k.query_id = std::move(query_id);
  k.sample_index = sample_index ? std::to_string(*sample_index) : "-";
  k.prompt_hash = sha256_hex(normalize_whitespace(prompt));
  k.decoding_hash = std::move(decoding_hash);
  check_key(k);
  return k;
}

std::string CacheKey::decoding_digest(const json& decoding) { return sha256_hex(canonical_json(decoding)); }

std::string CacheRecord::checksum() const { return sha256_hex(canonical_json(payload)); }

std::string_view to_string(PutResult r) {
  switch (r) {
    case PutResult::stored: return "stored";
    case PutResult::already_present: return "already_present";
    case PutResult::conflict: return "conflict";
  }
  return "conflict";
}

std::string utc_timestamp() {
  const std::time_t now = std::time(nullptr);
  std::tm tm{};
  gmtime_r(&now, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

json to_json(const CacheRecord& r) {
  return {{"key", r.key.str()},         {"kind", r.key.kind},          {"payload", r.payload},
          {"checksum", r.checksum()},   {"created_at", r.created_at},  {"fingerprint", r.fingerprint}};
}

// ---------------------------------------------------------------------------
// Store

Store::Store() = default;

Store::Store(fs::path dir) : dir_(std::move(dir)) {
  std::error_code ec;
  fs::create_directories(*dir_, ec);
  if (ec) throw Error("cannot create cache directory '" + dir_->string() + "': " + ec.message());
  std::unique_lock lock(mu_);
  for (const auto& entry : fs::directory_iterator(*dir_)) {
    if (!entry.is_directory()) continue;
    const auto kind = entry.path().filename().string();
    if (fs::exists(shard_path(kind))) refresh(kind);
  }
}

fs::path Store::shard_path(const std::string& kind) const { return *dir_ / kind / "records.jsonl"; }

void Store::ingest_line(const std::string& line) {
  json j;
  try {
    j = json::parse(line);
  } catch (const json::exception&) {
    ++skipped_;
    return;
  }
  if (!j.is_object() || !j.contains("key") || !j.contains("payload") || !j.contains("checksum") ||
      !j.at("key").is_string()) {
    ++skipped_;
    return;
  }
  CacheRecord r;
  try {
    r.key = CacheKey::parse(j.at("key").get<std::string>());
  } catch (const Error&) {
    ++skipped_;
    return;
  }
  const std::string key = r.key.str();
  if (records_.count(key)) return;  // first write wins
  r.payload = j.at("payload");
  r.created_at = j.value("created_at", std::string{});
  r.fingerprint = j.value("fingerprint", std::string{});
  const std::string stored = j.at("checksum").is_string() ? j.at("checksum").get<std::string>() : "";
  if (r.checksum() != stored) {
    corrupt_.emplace(key, "checksum mismatch for '" + key + "'");
    return;
  }
  corrupt_.erase(key);
  records_.emplace(key, std::move(r));
}

void Store::refresh(const std::string& kind) {
  const auto path = shard_path(kind);
  std::ifstream in(path, std::ios::binary);
  if (!in) return;
  auto& shard = shards_[kind];
  in.seekg(static_cast<std::streamoff>(shard.offset));
  std::string line;
  while (true) {
    const auto pos = in.tellg();
    if (!std::getline(in, line)) break;
    if (in.eof()) {
      // No trailing newline: a write in progress or a torn line. Leave it.
      in.clear();
      in.seekg(pos);
      break;
    }
    shard.offset += line.size() + 1;
    if (!line.empty()) ingest_line(line);
  }
}

PutResult Store::put(const CacheRecord& record) {
  check_key(record.key);
  const std::string key = record.key.str();
  const std::string canonical = canonical_json(record.payload);
  std::unique_lock lock(mu_);

  auto decide = [&]() -> std::optional<PutResult> {
    auto it = records_.find(key);
    if (it == records_.end()) return std::nullopt;
    return canonical_json(it->second.payload) == canonical ? PutResult::already_present : PutResult::conflict;
  };

  if (!dir_) {
    if (auto r = decide()) return *r;
    records_.emplace(key, record);
    return PutResult::stored;
  }

  const auto path = shard_path(record.key.kind);
  fs::create_directories(path.parent_path());
  FileLock file(path, true);
  refresh(record.key.kind);
  if (auto r = decide()) return *r;
  CacheRecord stored = record;
  if (stored.created_at.empty()) stored.created_at = utc_timestamp();
  const std::string line = dump(to_json(stored)) + "\n";
  file.append(line);
  // Our own line is now part of the shard; skip past it without re-reading
  // unless someone else appended in between (refresh handles that case).
  refresh(record.key.kind);
  if (!records_.count(key)) records_.emplace(key, std::move(stored));
  corrupt_.erase(key);
  return PutResult::stored;
}

std::optional<CacheRecord> Store::get(const CacheKey& key) {
  const std::string k = key.str();
  {
    std::shared_lock lock(mu_);
    if (auto it = records_.find(k); it != records_.end()) return it->second;
    if (auto it = corrupt_.find(k); it != corrupt_.end()) throw IntegrityError(it->second);
    if (!dir_) return std::nullopt;
  }
  std::unique_lock lock(mu_);
  const auto path = shard_path(key.kind);
  if (fs::exists(path)) {
    FileLock file(path, false);
    refresh(key.kind);
  }
  if (auto it = records_.find(k); it != records_.end()) return it->second;
  if (auto it = corrupt_.find(k); it != corrupt_.end()) throw IntegrityError(it->second);
  return std::nullopt;
}

std::size_t Store::size() const {
  std::shared_lock lock(mu_);
  return records_.size();
}

std::size_t Store::skipped_lines() const {
  std::shared_lock lock(mu_);
  return skipped_;
}

// ---------------------------------------------------------------------------
// Run artifacts

json to_json(const WeightVector& w) {
  return {{"temperature", w.temperature}, {"mode", to_string(w.mode)}, {"weights", w.entries}};
}

WeightVector weights_from_json(const json& j) {
  WeightVector w;
  w.temperature = j.at("temperature").get<double>();
  auto mode = parse_weight_mode(j.at("mode").get<std::string>());
  if (!mode) throw Error("bad weight mode in run file");
  w.mode = *mode;
  w.entries = j.at("weights").get<std::map<ModelId, double>>();
  return w;
}

json to_json(const ModelScoreCard& c) {
  json sentences = json::object();
  for (const auto& [k, v] : c.sentence_scores) {
    auto& arr = sentences[k.query_id];
    if (arr.is_null()) arr = json::array();
    if (arr.size() != k.sentence_index) throw Error("non-contiguous sentence indices in scorecard");
    arr.push_back(v);
  }
  return {{"model_id", c.model_id},
          {"measure", to_string(c.measure)},
          {"corpus_score", c.corpus_score},
          {"query_scores", c.query_scores},
          {"sentence_scores", sentences},
          {"modality_scores", c.modality_scores},
          {"unparseable_verdicts", c.unparseable_verdicts},
          {"total_verdicts", c.total_verdicts},
          {"excluded_queries", c.excluded_queries}};
}

ModelScoreCard scorecard_from_json(const json& j) {
  ModelScoreCard c;
  c.model_id = j.at("model_id").get<std::string>();
  auto m = parse_measure(j.at("measure").get<std::string>());
  if (!m) throw Error("bad measure in run file");
  c.measure = *m;
  c.corpus_score = j.at("corpus_score").get<double>();
  c.query_scores = j.at("query_scores").get<std::map<QueryId, double>>();
  for (const auto& [q, arr] : j.at("sentence_scores").items())
    for (std::size_t i = 0; i < arr.size(); ++i) c.sentence_scores[{q, i}] = arr.at(i).get<double>();
  c.modality_scores = j.value("modality_scores", std::map<std::string, double>{});
  c.unparseable_verdicts = j.value("unparseable_verdicts", std::size_t{0});
  c.total_verdicts = j.value("total_verdicts", std::size_t{0});
  c.excluded_queries = j.value("excluded_queries", std::vector<QueryId>{});
  return c;
}

namespace {

json cards_json(const std::map<ModelId, ModelScoreCard>& cards) {
  json out = json::object();
  for (const auto& [id, c] : cards) out[id] = to_json(c);
  return out;
}

std::map<ModelId, ModelScoreCard> cards_from(const json& j) {
  std::map<ModelId, ModelScoreCard> out;
  for (const auto& [id, c] : j.items()) out[id] = scorecard_from_json(c);
  return out;
}

json query_weights_json(const std::map<QueryId, WeightVector>& w) {
  json out = json::object();
  for (const auto& [q, v] : w) out[q] = to_json(v);
  return out;
}

std::map<QueryId, WeightVector> query_weights_from(const json& j) {
  std::map<QueryId, WeightVector> out;
  for (const auto& [q, v] : j.items()) out[q] = weights_from_json(v);
  return out;
}

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", 100.0 * v);
  return buf;
}

}  // namespace

json to_json(const BenchmarkRun& run) {
  json ranking = json::array();
  for (const auto& r : run.ranking)
    ranking.push_back({{"rank", r.rank}, {"model_id", r.model_id}, {"score", r.score}});
  json tracks = json::object();
  for (const auto& [t, cards] : run.track_scorecards) tracks[t] = cards_json(cards);
  json j = {
      {"config", run.config},
      {"requested_measure", run.requested_measure},
      {"measure", to_string(run.measure)},
      {"avg_selfcheck", run.avg_selfcheck ? json(*run.avg_selfcheck) : json(nullptr)},
      {"judge", run.judge},
      {"modality_plan", run.modality_plan},
      {"explicit_weights", to_json(run.explicit_weights)},
      {"implicit_weights", to_json(run.implicit_weights)},
      {"explicit_query_weights", query_weights_json(run.explicit_query_weights)},
      {"implicit_query_weights", query_weights_json(run.implicit_query_weights)},
      {"track_weights", query_weights_json(run.track_weights)},
      {"selfcheck", cards_json(run.selfcheck)},
      {"scorecards", cards_json(run.scorecards)},
      {"track_scorecards", tracks},
      {"refcheck", cards_json(run.refcheck)},
      {"ranking", ranking},
      {"notes", run.notes},
  };
  return j;
}

BenchmarkRun run_from_json(const json& j) {
  try {
    BenchmarkRun run;
    run.config = j.at("config");
    run.requested_measure = j.at("requested_measure").get<std::string>();
    auto m = parse_measure(j.at("measure").get<std::string>());
    if (!m) throw Error("bad measure in run file");
    run.measure = *m;
    if (!j.at("avg_selfcheck").is_null()) run.avg_selfcheck = j.at("avg_selfcheck").get<double>();
    run.judge = j.at("judge").get<std::string>();
    run.modality_plan = j.at("modality_plan").get<std::string>();
    run.explicit_weights = weights_from_json(j.at("explicit_weights"));
    run.implicit_weights = weights_from_json(j.at("implicit_weights"));
    run.explicit_query_weights = query_weights_from(j.at("explicit_query_weights"));
    run.implicit_query_weights = query_weights_from(j.at("implicit_query_weights"));
    run.track_weights = query_weights_from(j.at("track_weights"));
    run.selfcheck = cards_from(j.at("selfcheck"));
    run.scorecards = cards_from(j.at("scorecards"));
    for (const auto& [t, cards] : j.at("track_scorecards").items()) run.track_scorecards[t] = cards_from(cards);
    run.refcheck = cards_from(j.at("refcheck"));
    for (const auto& r : j.at("ranking"))
      run.ranking.push_back({r.at("model_id").get<std::string>(), r.at("rank").get<int>(), r.at("score").get<double>()});
    run.notes = j.at("notes").get<std::vector<std::string>>();
    return run;
  } catch (const json::exception& e) {
    throw Error(std::string("malformed run file: ") + e.what());
  }
}

std::string serialize_run(const BenchmarkRun& run) { return dump(to_json(run), 2) + "\n"; }

std::string render_markdown(const BenchmarkRun& run) {
  std::ostringstream md;
  md << "# Hallucination leaderboard\n\n";
  md << "Measure: " << to_string(run.measure);
  if (run.requested_measure == "auto" && run.avg_selfcheck)
    md << " (auto; mean SelfCheck " << pct(*run.avg_selfcheck) << "%)";
  md << "  \nJudge: " << run.judge << "  \nLower is better; scores are percentages.\n\n";

  const bool av = run.modality_plan == "audio_visual";
  const bool ref = !run.refcheck.empty();
  if (av)
    md << "| Rank | Model | Visual | Audio | Combined |";
  else
    md << "| Rank | Model | Score | SelfCheck |";
  if (ref) md << " RefCheck |";
  md << " Unparseable |\n";
  md << (av ? "|---:|---|---:|---:|---:|" : "|---:|---|---:|---:|");
  if (ref) md << "---:|";
  md << "---:|\n";

  auto cell = [](const std::map<std::string, double>& m, const char* k) {
    auto it = m.find(k);
    return it == m.end() ? std::string("–") : pct(it->second);
  };
  for (const auto& r : run.ranking) {
    const auto& card = run.scorecards.at(r.model_id);
    md << "| " << r.rank << " | " << r.model_id << " | ";
    if (av) {
      md << cell(card.modality_scores, "visual") << " | " << cell(card.modality_scores, "audio") << " | "
         << pct(card.corpus_score) << " |";
    } else {
      auto s = run.selfcheck.find(r.model_id);
      md << pct(card.corpus_score) << " | " << (s == run.selfcheck.end() ? "–" : pct(s->second.corpus_score))
         << " |";
    }
    if (ref) {
      auto rc = run.refcheck.find(r.model_id);
      md << " " << (rc == run.refcheck.end() ? "–" : pct(rc->second.corpus_score)) << " |";
    }
    md << " " << card.unparseable_verdicts << "/" << card.total_verdicts << " |\n";
  }

  auto weight_table = [&md](const std::string& title, const WeightVector& w) {
    if (w.entries.empty()) return;
    md << "\n" << title << " (T = " << w.temperature << ", " << to_string(w.mode) << "):\n\n";
    md << "| Evidence model | Weight |\n|---|---:|\n";
    for (const auto& [id, e] : w.entries) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.4f", e);
      md << "| " << id << " | " << buf << " |\n";
    }
  };
  weight_table("Evidence weights",
               run.measure == Measure::crosscheck_implicit ? run.implicit_weights : run.explicit_weights);
  for (const auto& [track, w] : run.track_weights) weight_table("Evidence weights, " + track, w);
  if (!run.notes.empty()) {
    md << "\nNotes:\n\n";
    for (const auto& n : run.notes) md << "- " << n << "\n";
  }
  return md.str();
}

void write_run_artifacts(const BenchmarkRun& run, const fs::path& dir) {
  fs::create_directories(dir);
  auto write = [](const fs::path& p, const std::string& text) {
    const fs::path tmp = p.string() + ".tmp";
    {
      std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
      if (!out) throw Error("cannot write '" + p.string() + "'");
      out << text;
      if (!out) throw Error("short write to '" + p.string() + "'");
    }
    fs::rename(tmp, p);
  };
  write(dir / "run.json", serialize_run(run));
  write(dir / "leaderboard.md", render_markdown(run));
}

}  // namespace crosscheck::store
