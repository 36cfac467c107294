#include "crosscheck/bench.hpp"

#include <algorithm>
#include <atomic>
#include <set>
#include <sstream>
#include <thread>
#include <unordered_map>
#include <utility>

#include "crosscheck/hash.hpp"
#include "crosscheck/planted.hpp"
#include "crosscheck/scoring.hpp"
#include "crosscheck/stats.hpp"

namespace crosscheck::bench {
namespace {

using json = nlohmann::json;
using MQ = std::pair<ModelId, QueryId>;

std::string join(const std::vector<std::string>& parts, std::string_view sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

Verdict support_verdict(const std::string& raw) {
  switch (parse_yes_no(raw)) {
    case YesNo::yes: return Verdict::supported;
    case YesNo::no: return Verdict::hallucinatory;
    case YesNo::unparseable: break;
  }
  return Verdict::unparseable;
}

// Inverted: "Yes, there are inaccuracies" marks the sentence hallucinatory.
Verdict analysis_verdict(const std::string& raw) {
  switch (parse_yes_no(raw)) {
    case YesNo::yes: return Verdict::hallucinatory;
    case YesNo::no: return Verdict::supported;
    case YesNo::unparseable: break;
  }
  return Verdict::unparseable;
}

// One cacheable backend output.
struct Cell {
  store::CacheKey key;
  std::string label;
  std::string fingerprint;
  std::function<std::string()> compute;
};

struct Resolution {
  std::map<std::string, std::string> values;  // key -> raw output
  std::vector<std::string> gaps;
  std::vector<std::string> failures;
  std::size_t cached = 0;
  std::size_t computed = 0;
};

// Looks every cell up in the store and, when allowed, computes the misses on
// a bounded worker pool. Each result is stored as soon as it arrives, so an
// interrupted stage resumes where it stopped.
Resolution resolve(std::vector<Cell> cells, bool allow_calls, int max_parallel, store::Store& store) {
  Resolution res;
  std::set<std::string> seen;
  std::vector<Cell*> pending;
  for (auto& c : cells) {
    const auto k = c.key.str();
    if (!seen.insert(k).second) continue;
    if (auto rec = store.get(c.key)) {
      if (!rec->payload.is_string()) throw store::IntegrityError("cache record '" + k + "' has a non-text payload");
      res.values.emplace(k, rec->payload.get<std::string>());
      ++res.cached;
    } else if (allow_calls) {
      pending.push_back(&c);
    } else {
      res.gaps.push_back(c.label);
    }
  }
  if (pending.empty()) return res;

  std::vector<std::optional<std::string>> out(pending.size());
  std::vector<std::string> errors(pending.size());
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < pending.size();) {
      Cell& c = *pending[i];
      try {
        std::string text = c.compute();
        store::CacheRecord rec{c.key, text, store::utc_timestamp(), c.fingerprint};
        if (store.put(rec) == store::PutResult::conflict) {
          errors[i] = c.label + ": conflicting record already cached";
          continue;
        }
        out[i] = std::move(text);
      } catch (const std::exception& e) {
        errors[i] = c.label + ": " + e.what();
      }
    }
  };
  const auto n = std::clamp<std::size_t>(static_cast<std::size_t>(std::max(max_parallel, 1)), 1, pending.size());
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n; ++t) pool.emplace_back(worker);
  worker();
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < pending.size(); ++i) {
    if (out[i]) {
      res.values.emplace(pending[i]->key.str(), std::move(*out[i]));
      ++res.computed;
    } else {
      res.failures.push_back(errors[i]);
    }
  }
  return res;
}

std::string mean_label(const ModelId& m, const QueryId& q) { return "model '" + m + "' query '" + q + "'"; }

}  // namespace

// ---------------------------------------------------------------------------

Backends::Backends(const RunConfig& config, const BackendFactory& factory) {
  for (const auto& m : config.models) {
    auto b = factory(m.backend);
    if (!b) throw Error("no backend built for model '" + m.id + "'");
    add(std::move(b));
  }
}

Backend& Backends::at(const ModelId& id) const {
  auto it = by_id_.find(id);
  if (it == by_id_.end()) throw Error("no backend for model '" + id + "'");
  return *it->second;
}

void Backends::add(std::unique_ptr<Backend> backend) {
  auto id = backend->model_id();
  by_id_[id] = std::move(backend);
}

std::uint64_t Backends::total_calls() const {
  std::uint64_t n = 0;
  for (const auto& [_, b] : by_id_) n += b->calls();
  return n;
}

Backends make_backends(const RunConfig& config) {
  auto world = planted::world_from_config(config);
  return Backends(config, world ? planted::factory(world) : BackendFactory(make_backend));
}

GenerationError::GenerationError(std::string what, std::vector<std::string> failures)
    : Error(std::move(what)), failures_(std::move(failures)) {}

// ---------------------------------------------------------------------------

struct Pipeline::Impl {
  enum class Stop { generation, judging, scoring };

  RunConfig cfg;
  const Backends& backends;
  store::Store& store;
  PipelineOptions opts;
  textproc::RuleSegmenter segmenter;

  // Filled per execution.
  std::vector<std::string> notes;
  std::map<MQ, std::string> response_text;
  std::map<MQ, std::vector<std::string>> passages;
  std::map<MQ, Response> responses;
  std::map<std::string, std::string> outputs;  // every resolved cell
  StageReport gen_report, judge_report;

  struct Track {
    std::string name;
    std::vector<const Query*> queries;
  };
  std::vector<Track> tracks;

  Impl(RunConfig c, const Backends& b, store::Store& s, PipelineOptions o)
      : cfg(std::move(c)), backends(b), store(s), opts(std::move(o)), segmenter(opts.segmenter) {}

  void log(const std::string& msg) const {
    if (opts.log) opts.log(msg);
  }

  Backend& backend(const ModelId& m) const { return backends.at(m); }
  mutable std::map<ModelId, std::string> fingerprints, digests;
  mutable std::unordered_map<std::string, std::string> support_keys;

  const std::string& fingerprint(const ModelId& m) const {
    auto& fp = fingerprints[m];
    if (fp.empty()) fp = backend(m).descriptor().fingerprint();
    return fp;
  }

  // Cache key of one call. Greedy calls (judging, error analysis) use the
  // judge decoding; generation uses the model's own.
  store::CacheKey key(std::string kind, const ModelId& m, const QueryId& q, std::optional<int> sample,
                      std::string_view prompt, bool greedy) const {
    auto& d = digests[m + (greedy ? "|greedy" : "|sampled")];
    if (d.empty())
      d = store::CacheKey::decoding_digest(
          json{{"decoding", to_json(greedy ? judge_decoding() : cfg.model(m).decoding)}, {"backend", fingerprint(m)}});
    return store::CacheKey::make_with_digest(std::move(kind), m, q, sample, prompt, d);
  }
  bool active(const ModelId& m, const Query& q) const { return backend(m).descriptor().supports(q.modality); }

  // Models active on every query of the track.
  std::vector<ModelId> covering(const std::vector<ModelId>& models, const Track& t) const {
    std::vector<ModelId> out;
    for (const auto& m : models)
      if (std::all_of(t.queries.begin(), t.queries.end(), [&](const Query* q) { return active(m, *q); }))
        out.push_back(m);
    return out;
  }

  void build_tracks() {
    tracks.clear();
    if (cfg.modality_plan == ModalityPlan::single) {
      Track t{"all", {}};
      for (const auto& q : cfg.queries) t.queries.push_back(&q);
      tracks.push_back(std::move(t));
      return;
    }
    Track visual{"visual", {}}, audio{"audio", {}};
    for (const auto& q : cfg.queries) (q.modality == Modality::video_audio ? audio : visual).queries.push_back(&q);
    for (auto* t : {&visual, &audio})
      if (!t->queries.empty()) tracks.push_back(std::move(*t));
  }

  bool may_explicit() const { return cfg.measure != MeasureSelection::crosscheck_implicit; }
  bool may_implicit() const {
    if (cfg.measure == MeasureSelection::crosscheck_explicit) return false;
    return cfg.modality_plan == ModalityPlan::single || cfg.implicit_for_audio_visual;
  }

  static std::vector<ModelId> unite(std::vector<ModelId> a, const std::vector<ModelId>& b) {
    for (const auto& m : b)
      if (std::find(a.begin(), a.end(), m) == a.end()) a.push_back(m);
    std::sort(a.begin(), a.end());
    return a;
  }

  // Models whose own response is needed: targets, plus evidence models whose
  // SelfCheck feeds the weights.
  std::vector<ModelId> responders() const {
    auto r = unite(cfg.targets(), {});
    if (cfg.weighted) {
      if (may_explicit()) r = unite(r, cfg.explicit_evidence());
      if (may_implicit()) r = unite(r, cfg.implicit_evidence());
    }
    return r;
  }

  std::vector<ModelId> passage_models() const {
    auto p = responders();
    if (may_explicit()) p = unite(p, cfg.explicit_evidence());
    return p;
  }

  int samples_of(const ModelId& m) const { return cfg.model(m).samples; }

  // ---- generation -------------------------------------------------------

  void generation(bool allow) {
    std::vector<Cell> cells;
    std::vector<std::pair<MQ, std::string>> response_keys;
    std::vector<std::tuple<MQ, int, std::string>> passage_keys;
    std::set<MQ> skipped;

    auto gen_cell = [&](const ModelId& m, const Query& q, int n) {
      const auto& mc = cfg.model(m);
      const auto prompt = generation_prompt(q);
      const auto fp = fingerprint(m);
      auto key = this->key(n < 0 ? "response" : "passage", m, q.query_id,
                           n < 0 ? std::nullopt : std::optional<int>(n), prompt, false);
      std::string label = n < 0 ? "response " + mean_label(m, q.query_id)
                                : "passage " + mean_label(m, q.query_id) + " sample " + std::to_string(n);
      Backend* b = &backend(m);
      Query qc = q;
      DecodingParams d = mc.decoding;
      cells.push_back({key, std::move(label), fp, [b, qc, d, n] { return generate_passage(*b, qc, d, n).text; }});
      return key.str();
    };

    for (const auto& m : responders())
      for (const auto& q : cfg.queries) {
        if (!active(m, q)) {
          skipped.insert({m, q.query_id});
          continue;
        }
        response_keys.emplace_back(MQ{m, q.query_id}, gen_cell(m, q, -1));
      }
    for (const auto& m : passage_models())
      for (const auto& q : cfg.queries) {
        if (!active(m, q)) {
          skipped.insert({m, q.query_id});
          continue;
        }
        for (int n = 0; n < samples_of(m); ++n) passage_keys.emplace_back(MQ{m, q.query_id}, n, gen_cell(m, q, n));
      }
    for (const auto& [m, q] : skipped)
      notes.push_back("model '" + m + "' does not accept the modality of query '" + q + "'; skipped");

    auto res = resolve(std::move(cells), allow, opts.max_parallel, store);
    if (allow) {
      gen_report.cached += res.cached;
      gen_report.computed += res.computed;
    }
    log("generation: " + std::to_string(res.cached) + " cached, " + std::to_string(res.computed) + " generated, " +
        std::to_string(res.failures.size()) + " failed");
    if (!res.failures.empty()) {
      const auto what = "generation failed for " + std::to_string(res.failures.size()) + " cell(s)";
      throw GenerationError(what, std::move(res.failures));
    }
    if (!res.gaps.empty()) {
      const auto what = "missing " + std::to_string(res.gaps.size()) + " generated artifact(s); run generate first";
      throw IncompleteError(what, std::move(res.gaps));
    }

    for (auto& [mq, k] : response_keys) response_text[mq] = res.values.at(k);
    for (auto& [mq, n, k] : passage_keys) {
      auto& v = passages[mq];
      if (v.size() <= static_cast<std::size_t>(n)) v.resize(n + 1);
      v[n] = res.values.at(k);
    }
    for (const auto& [mq, text] : response_text) {
      responses[mq] = textproc::make_response(mq.first, mq.second, text, segmenter);
      if (responses[mq].sentences.empty())
        notes.push_back("model '" + mq.first + "' gave an empty response to query '" + mq.second +
                        "'; excluded from its scores");
    }
    outputs.insert(res.values.begin(), res.values.end());
  }

  // ---- judging ----------------------------------------------------------

  const Query& query(const QueryId& id) const {
    for (const auto& q : cfg.queries)
      if (q.query_id == id) return q;
    throw Error("unknown query '" + id + "'");
  }

  const std::string& support_key(const QueryId& q, const std::string& sentence, const std::string& evidence) const {
    auto& k = support_keys[q + '\x1f' + sentence + '\x1f' + evidence];
    if (k.empty()) {
      const auto prompt = render_prompt(prompt_template(PromptName::judge_explicit),
                                        {{"evidence_passage", evidence}, {"sentence", sentence}});
      k = key("judge_support", cfg.judge, q, std::nullopt, prompt, true).str();
    }
    return k;
  }

  void add_support_cell(std::vector<Cell>& cells, const QueryId& q, const SentenceUnit& s, const std::string& evidence,
                        std::string label) const {
    const auto& fp = fingerprint(cfg.judge);
    auto key = store::CacheKey::parse(support_key(q, s.text, evidence));
    Backend* judge = &backend(cfg.judge);
    EvidencePassage ev;
    ev.query_id = q;
    ev.text = evidence;
    cells.push_back({std::move(key), std::move(label), fp,
                     [judge, ev, s] { return judge_support(*judge, ev, s).raw_judge_output; }});
  }

  std::string analysis_prompt(const Query& q, const SentenceUnit& s) const {
    return render_prompt(prompt_template(PromptName::implicit_list_errors),
                         {{"subject", subject_for(q)}, {"sentence", s.text}});
  }

  std::string analysis_key(const ModelId& e, const Query& q, const SentenceUnit& s) const {
    return key("analysis", e, q.query_id, std::nullopt, analysis_prompt(q, s), true).str();
  }

  std::string judge_analysis_prompt(const Query& q, const SentenceUnit& s, const std::string& analysis) const {
    return render_prompt(
        prompt_template(PromptName::implicit_judge),
        {{"subject", subject_for(q)}, {"sentence", s.text}, {"list_of_possible_errors", analysis}});
  }

  std::string judge_analysis_key(const Query& q, const SentenceUnit& s, const std::string& analysis) const {
    return key("judge_analysis", cfg.judge, q.query_id, std::nullopt, judge_analysis_prompt(q, s, analysis), true)
        .str();
  }

  static std::string sentence_label(const ModelId& t, const QueryId& q, std::size_t i) {
    return "target '" + t + "' query '" + q + "' sentence " + std::to_string(i);
  }

  // `polarity`: how to count the outputs as verdicts (none for analyses).
  enum class Polarity { none, support, analysis };

  void judge_cells(std::vector<Cell> cells, bool allow, Polarity polarity, std::vector<std::string>& gaps,
                   std::vector<std::string>& failures) {
    auto res = resolve(std::move(cells), allow, opts.max_parallel, store);
    if (allow) {
      judge_report.cached += res.cached;
      judge_report.computed += res.computed;
    }
    if (polarity != Polarity::none)
      for (const auto& [k, raw] : res.values) {
        if (outputs.count(k)) continue;
        ++judge_report.verdicts;
        const auto v = polarity == Polarity::support ? support_verdict(raw) : analysis_verdict(raw);
        if (v == Verdict::unparseable) ++judge_report.unparseable;
      }
    gaps.insert(gaps.end(), res.gaps.begin(), res.gaps.end());
    failures.insert(failures.end(), res.failures.begin(), res.failures.end());
    outputs.insert(res.values.begin(), res.values.end());
  }

  void check_judging(std::vector<std::string>& gaps, std::vector<std::string>& failures) {
    if (!failures.empty()) {
      const auto what = "judging failed for " + std::to_string(failures.size()) + " cell(s)";
      throw IncompleteError(what, std::move(failures));
    }
    if (!gaps.empty()) {
      const auto what = "missing " + std::to_string(gaps.size()) + " judge artifact(s); run judge first";
      throw IncompleteError(what, std::move(gaps));
    }
  }

  Verdict verdict_of(const std::string& key, bool analysis) const {
    const auto& raw = outputs.at(key);
    return analysis ? analysis_verdict(raw) : support_verdict(raw);
  }

  // SelfCheck matrix of model m over the given queries.
  scoring::ExplicitMatrix selfcheck_matrix(const ModelId& m, const std::vector<const Query*>& qs) {
    scoring::ExplicitMatrix mat;
    for (const auto* q : qs) {
      auto it = responses.find({m, q->query_id});
      if (it == responses.end()) continue;
      auto& rows = mat.queries[q->query_id];
      const auto& ps = passages.at({m, q->query_id});
      for (const auto& s : it->second.sentences) {
        auto& col = rows.emplace_back()[m];
        for (const auto& p : ps) col.push_back(verdict_of(support_key(q->query_id, s.text, p), false));
      }
    }
    return mat;
  }

  bool has_sentences(const ModelId& m, const std::vector<const Query*>& qs) const {
    return std::any_of(qs.begin(), qs.end(), [&](const Query* q) {
      auto it = responses.find({m, q->query_id});
      return it != responses.end() && !it->second.sentences.empty();
    });
  }

  std::vector<const Query*> active_queries(const ModelId& m, const std::vector<const Query*>& qs) const {
    std::vector<const Query*> out;
    for (const auto* q : qs)
      if (active(m, *q)) out.push_back(q);
    return out;
  }

  std::vector<const Query*> all_queries() const {
    std::vector<const Query*> out;
    for (const auto& q : cfg.queries) out.push_back(&q);
    return out;
  }

  // Per model: overall SelfCheck card, and one per track.
  std::map<ModelId, ModelScoreCard> selfcheck;
  std::map<std::string, std::map<ModelId, ModelScoreCard>> track_selfcheck;

  void compute_selfcheck() {
    const scoring::ScoringOptions so{cfg.unparseable};
    for (const auto& m : responders()) {
      const auto qs = active_queries(m, all_queries());
      if (!has_sentences(m, qs)) {
        notes.push_back("model '" + m + "' has no scoreable response; no SelfCheck score");
        continue;
      }
      selfcheck[m] = scoring::selfcheck_score(m, selfcheck_matrix(m, qs), samples_of(m), so);
      for (const auto& t : tracks) {
        const auto tq = active_queries(m, t.queries);
        if (has_sentences(m, tq)) track_selfcheck[t.name][m] = scoring::selfcheck_score(m, selfcheck_matrix(m, tq), samples_of(m), so);
      }
    }
  }

  Measure measure = Measure::crosscheck_explicit;
  std::optional<double> avg_selfcheck;

  void choose_measure() {
    double sum = 0.0;
    int n = 0;
    for (const auto& t : cfg.targets())
      if (auto it = selfcheck.find(t); it != selfcheck.end()) {
        sum += it->second.corpus_score;
        ++n;
      }
    if (n) avg_selfcheck = sum / n;
    switch (cfg.measure) {
      case MeasureSelection::crosscheck_explicit: measure = Measure::crosscheck_explicit; break;
      case MeasureSelection::crosscheck_implicit: measure = Measure::crosscheck_implicit; break;
      case MeasureSelection::automatic: {
        if (!avg_selfcheck) throw Error("auto measure needs a SelfCheck score for at least one target");
        const auto sel = scoring::select_measure(*avg_selfcheck, cfg.selection_threshold);
        measure = sel == scoring::SelectedMeasure::crosscheck_explicit ? Measure::crosscheck_explicit
                                                                       : Measure::crosscheck_implicit;
        std::ostringstream os;
        os.precision(4);
        os << "auto measure: average target SelfCheck " << *avg_selfcheck << " vs threshold "
           << cfg.selection_threshold << " -> " << to_string(measure);
        notes.push_back(os.str());
        if (measure == Measure::crosscheck_implicit && !may_implicit()) {
          measure = Measure::crosscheck_explicit;
          notes.push_back("implicit measure is disabled for audio-visual inputs; using explicit");
        }
      }
    }
  }

  bool is_explicit() const { return measure == Measure::crosscheck_explicit; }

  // Evidence set for target t in a track.
  std::vector<ModelId> evidence_for(const ModelId& t, const Track& tr) const {
    auto set = covering(is_explicit() ? cfg.explicit_evidence() : cfg.implicit_evidence(), tr);
    const bool keep_self = is_explicit() ? cfg.include_self_explicit : cfg.include_self_implicit;
    if (!keep_self) set.erase(std::remove(set.begin(), set.end(), t), set.end());
    return set;
  }

  void judging(bool allow) {
    std::vector<std::string> gaps, failures;

    // SelfCheck: every responder against its own passages.
    std::vector<Cell> cells;
    for (const auto& [mq, r] : responses) {
      const auto& ps = passages.at(mq);
      for (const auto& s : r.sentences)
        for (std::size_t n = 0; n < ps.size(); ++n)
          add_support_cell(cells, mq.second, s, ps[n],
                           "selfcheck " + sentence_label(mq.first, mq.second, s.index) + " sample " + std::to_string(n));
    }
    judge_cells(std::move(cells), allow, Polarity::support, gaps, failures);
    check_judging(gaps, failures);
    compute_selfcheck();
    choose_measure();

    cells.clear();
    std::vector<Cell> analyses;
    for (const auto& tr : tracks)
      for (const auto& t : cfg.targets())
        for (const auto* q : active_queries(t, tr.queries)) {
          const auto& r = responses.at({t, q->query_id});
          for (const auto& e : evidence_for(t, tr))
            for (const auto& s : r.sentences) {
              const auto lbl = sentence_label(t, q->query_id, s.index) + " evidence '" + e + "'";
              if (is_explicit()) {
                const auto& ps = passages.at({e, q->query_id});
                for (std::size_t n = 0; n < ps.size(); ++n)
                  add_support_cell(cells, q->query_id, s, ps[n], "explicit " + lbl + " sample " + std::to_string(n));
              } else {
                const auto prompt = analysis_prompt(*q, s);
                const auto fp = fingerprint(e);
                Backend* b = &backend(e);
                Query qc = *q;
                analyses.push_back({key("analysis", e, q->query_id, std::nullopt, prompt, true),
                                    "analysis " + lbl, fp, [b, qc, s] { return analyze_errors(*b, qc, s); }});
              }
            }
        }
    if (cfg.refcheck)
      for (const auto& t : cfg.targets())
        for (const auto* q : active_queries(t, all_queries())) {
          if (!q->reference_texts) continue;
          const auto& refs = *q->reference_texts;
          for (const auto& s : responses.at({t, q->query_id}).sentences)
            for (std::size_t k = 0; k < refs.size(); ++k)
              add_support_cell(cells, q->query_id, s, refs[k],
                               "refcheck " + sentence_label(t, q->query_id, s.index) + " reference " + std::to_string(k));
        }
    judge_cells(std::move(cells), allow, Polarity::support, gaps, failures);
    judge_cells(std::move(analyses), allow, Polarity::none, gaps, failures);
    check_judging(gaps, failures);

    if (!is_explicit()) {
      cells.clear();
      for (const auto& tr : tracks)
        for (const auto& t : cfg.targets())
          for (const auto* q : active_queries(t, tr.queries))
            for (const auto& e : evidence_for(t, tr))
              for (const auto& s : responses.at({t, q->query_id}).sentences) {
                const auto& analysis = outputs.at(analysis_key(e, *q, s));
                if (normalize_whitespace(analysis).empty()) {
                  ++judge_report.verdicts;  // no analysis to judge: unparseable
                  ++judge_report.unparseable;
                  continue;
                }
                const auto fp = fingerprint(cfg.judge);
                Backend* judge = &backend(cfg.judge);
                Query qc = *q;
                cells.push_back({key("judge_analysis", cfg.judge, q->query_id, std::nullopt,
                                     judge_analysis_prompt(*q, s, analysis), true),
                                 "implicit " + sentence_label(t, q->query_id, s.index) + " evidence '" + e + "'", fp,
                                 [judge, qc, s, analysis] {
                                   return judge_analysis(*judge, qc, s, analysis).raw_judge_output;
                                 }});
              }
      judge_cells(std::move(cells), allow, Polarity::analysis, gaps, failures);
      check_judging(gaps, failures);
    }
    log("judging: " + std::to_string(judge_report.cached) + " cached, " + std::to_string(judge_report.computed) +
        " computed");
  }

  // ---- scoring ----------------------------------------------------------

  scoring::EvidenceWeights track_weights(const Track& tr, store::BenchmarkRun& run) {
    const auto pool = covering(is_explicit() ? cfg.explicit_evidence() : cfg.implicit_evidence(), tr);
    if (pool.empty())
      throw Error(std::string(is_explicit() ? "explicit" : "implicit") + " evidence set is empty for track '" +
                  tr.name + "'");
    scoring::EvidenceWeights w;
    if (!cfg.weighted) {
      w.run_level = scoring::uniform_weights(pool, cfg.calibration_temperature);
    } else {
      const auto& cards = track_selfcheck[tr.name];
      std::map<ModelId, double> scores;
      for (const auto& e : pool) {
        auto it = cards.find(e);
        if (it == cards.end()) {
          notes.push_back("evidence model '" + e + "' has no SelfCheck score on track '" + tr.name +
                          "'; weighted as fully inconsistent");
          scores[e] = 1.0;
        } else {
          scores[e] = it->second.corpus_score;
        }
      }
      w.run_level = scoring::compute_weights(scores, cfg.calibration_temperature, cfg.weight_mode);
      if (cfg.weight_mode == WeightMode::per_query) {
        std::map<QueryId, std::map<ModelId, double>> per_query;
        for (const auto* q : tr.queries)
          for (const auto& e : pool) {
            double s = scores.at(e);
            if (auto it = cards.find(e); it != cards.end())
              if (auto qs = it->second.query_scores.find(q->query_id); qs != it->second.query_scores.end())
                s = qs->second;
            per_query[q->query_id][e] = s;
          }
        w.per_query = scoring::compute_query_weights(per_query, cfg.calibration_temperature);
      }
    }
    const std::string suffix = is_explicit() ? "explicit" : "implicit";
    if (cfg.modality_plan == ModalityPlan::single) {
      (is_explicit() ? run.explicit_weights : run.implicit_weights) = w.run_level;
      (is_explicit() ? run.explicit_query_weights : run.implicit_query_weights) = w.per_query;
    } else {
      run.track_weights[tr.name + "/" + suffix] = w.run_level;
      for (const auto& [q, v] : w.per_query) run.track_weights[tr.name + "/" + suffix + "/" + q] = v;
    }
    return w;
  }

  static scoring::EvidenceWeights restrict(const scoring::EvidenceWeights& w, const std::vector<ModelId>& set) {
    scoring::EvidenceWeights r(w.run_level.restricted_to(set));
    for (const auto& [q, v] : w.per_query) r.per_query[q] = v.restricted_to(set);
    return r;
  }

  std::optional<ModelScoreCard> target_card(const ModelId& t, const Track& tr, const scoring::EvidenceWeights& pool_w) {
    const auto qs = active_queries(t, tr.queries);
    if (qs.empty()) return std::nullopt;
    if (!has_sentences(t, qs)) {
      notes.push_back("target '" + t + "' has no scoreable response on track '" + tr.name + "'");
      return std::nullopt;
    }
    const auto ev = evidence_for(t, tr);
    if (ev.empty()) throw Error("target '" + t + "' has no evidence models on track '" + tr.name + "'");
    const auto w = restrict(pool_w, ev);
    const scoring::ScoringOptions so{cfg.unparseable};
    if (is_explicit()) {
      scoring::ExplicitMatrix mat;
      std::map<ModelId, int> n;
      for (const auto& e : ev) n[e] = samples_of(e);
      for (const auto* q : qs) {
        auto& rows = mat.queries[q->query_id];
        for (const auto& s : responses.at({t, q->query_id}).sentences) {
          auto& row = rows.emplace_back();
          for (const auto& e : ev)
            for (const auto& p : passages.at({e, q->query_id}))
              row[e].push_back(verdict_of(support_key(q->query_id, s.text, p), false));
        }
      }
      return scoring::crosscheck_explicit_score(t, mat, w, n, so);
    }
    scoring::ImplicitMatrix mat;
    for (const auto* q : qs) {
      auto& rows = mat.queries[q->query_id];
      for (const auto& s : responses.at({t, q->query_id}).sentences) {
        auto& row = rows.emplace_back();
        for (const auto& e : ev) {
          const auto& analysis = outputs.at(analysis_key(e, *q, s));
          if (normalize_whitespace(analysis).empty()) {
            row[e] = Verdict::unparseable;
          } else {
            row[e] = verdict_of(judge_analysis_key(*q, s, analysis), true);
          }
        }
      }
    }
    return scoring::crosscheck_implicit_score(t, mat, w, so);
  }

  ModelScoreCard combine(const ModelId& t, const std::map<std::string, ModelScoreCard>& by_track) const {
    ModelScoreCard c;
    c.model_id = t;
    c.measure = measure;
    std::optional<double> visual, audio;
    for (const auto& [name, card] : by_track) {
      (name == "audio" ? audio : visual) = card.corpus_score;
      c.modality_scores[name] = card.corpus_score;
      c.unparseable_verdicts += card.unparseable_verdicts;
      c.total_verdicts += card.total_verdicts;
      c.excluded_queries.insert(c.excluded_queries.end(), card.excluded_queries.begin(), card.excluded_queries.end());
      for (const auto& [q, s] : card.query_scores) {
        const auto& item = query(q).item();
        auto [it, fresh] = c.query_scores.emplace(item, s);
        if (!fresh) it->second = std::min(it->second, s);
      }
    }
    c.corpus_score = scoring::combine_audio_visual(audio, visual);
    c.modality_scores["combined"] = c.corpus_score;
    std::sort(c.excluded_queries.begin(), c.excluded_queries.end());
    return c;
  }

  store::BenchmarkRun scoring_stage() {
    store::BenchmarkRun run;
    run.config = config_snapshot(cfg);
    run.requested_measure = std::string(to_string(cfg.measure));
    run.measure = measure;
    run.avg_selfcheck = avg_selfcheck;
    run.judge = cfg.judge;
    run.modality_plan = std::string(to_string(cfg.modality_plan));
    run.selfcheck = selfcheck;

    std::map<ModelId, std::map<std::string, ModelScoreCard>> per_target;
    for (const auto& tr : tracks) {
      const auto w = track_weights(tr, run);
      for (const auto& t : cfg.targets())
        if (auto card = target_card(t, tr, w)) per_target[t][tr.name] = std::move(*card);
    }
    for (auto& [t, by_track] : per_target) {
      if (cfg.modality_plan == ModalityPlan::single) {
        run.scorecards[t] = by_track.at("all");
      } else {
        run.scorecards[t] = combine(t, by_track);
        for (auto& [name, card] : by_track) run.track_scorecards[name][t] = card;
      }
    }
    if (run.scorecards.empty()) throw Error("no target could be scored");

    if (cfg.refcheck) {
      const scoring::ScoringOptions so{cfg.unparseable};
      for (const auto& t : cfg.targets()) {
        const auto qs = active_queries(t, all_queries());
        if (!has_sentences(t, qs)) continue;
        scoring::ReferenceMatrix mat;
        for (const auto* q : qs) {
          const auto& refs = *q->reference_texts;
          mat.reference_counts[q->query_id] = static_cast<int>(refs.size());
          auto& rows = mat.queries[q->query_id];
          for (const auto& s : responses.at({t, q->query_id}).sentences) {
            auto& row = rows.emplace_back();
            for (const auto& ref : refs) row.push_back(verdict_of(support_key(q->query_id, s.text, ref), false));
          }
        }
        run.refcheck[t] = scoring::refcheck_score(t, mat, so);
      }
    }

    std::map<ModelId, double> corpus;
    for (const auto& [t, c] : run.scorecards) corpus[t] = c.corpus_score;
    run.ranking = rank_by_score(corpus);

    std::sort(notes.begin(), notes.end());
    notes.erase(std::unique(notes.begin(), notes.end()), notes.end());
    run.notes = notes;
    return run;
  }

  // ---- driver -----------------------------------------------------------

  std::optional<store::BenchmarkRun> execute(bool allow_generate, bool allow_judge, Stop stop) {
    notes.clear();
    response_text.clear();
    passages.clear();
    responses.clear();
    outputs.clear();
    selfcheck.clear();
    track_selfcheck.clear();
    fingerprints.clear();
    digests.clear();
    support_keys.clear();
    avg_selfcheck.reset();
    gen_report = judge_report = {};
    build_tracks();
    if (!cfg.find_model(cfg.judge)) throw Error("judge model '" + cfg.judge + "' is not configured");

    generation(allow_generate);
    if (stop == Stop::generation) return std::nullopt;
    judging(allow_judge);
    if (stop == Stop::judging) return std::nullopt;
    return scoring_stage();
  }
};

Pipeline::Pipeline(RunConfig config, const Backends& backends, store::Store& store, PipelineOptions options)
    : impl_(std::make_unique<Impl>(std::move(config), backends, store, std::move(options))) {}

Pipeline::~Pipeline() = default;

StageReport Pipeline::generate() {
  impl_->execute(true, false, Impl::Stop::generation);
  return impl_->gen_report;
}

StageReport Pipeline::judge() {
  impl_->execute(false, true, Impl::Stop::judging);
  return impl_->judge_report;
}

store::BenchmarkRun Pipeline::score() { return *impl_->execute(false, false, Impl::Stop::scoring); }

store::BenchmarkRun Pipeline::run() { return *impl_->execute(true, true, Impl::Stop::scoring); }

store::BenchmarkRun run_benchmark(const RunConfig& config, const Backends& backends, store::Store& store,
                                  PipelineOptions options) {
  return Pipeline(config, backends, store, std::move(options)).run();
}

// ---------------------------------------------------------------------------

std::string_view to_string(CorrelationLevel l) { return l == CorrelationLevel::system ? "system" : "document"; }

Reference Reference::from_json(const json& j) {
  if (!j.is_object()) throw Error("reference must be a JSON object keyed by model id");
  Reference r;
  for (const auto& [model, v] : j.items()) {
    if (v.is_number()) {
      r.system[model] = v.get<double>();
    } else if (v.is_object()) {
      for (const auto& [q, s] : v.items()) {
        if (!s.is_number()) throw Error("reference value for '" + model + "' / '" + q + "' is not a number");
        r.document[model][q] = s.get<double>();
      }
    } else {
      throw Error("reference value for '" + model + "' must be a number or an object of numbers");
    }
  }
  return r;
}

Reference refcheck_reference(const store::BenchmarkRun& run) {
  if (run.refcheck.empty()) throw Error("run has no RefCheck scores");
  Reference r;
  for (const auto& [m, c] : run.refcheck) {
    r.system[m] = c.corpus_score;
    r.document[m] = c.query_scores;
  }
  return r;
}

json CorrelationReport::to_json() const {
  return {{"level", to_string(level)},
          {"statistic", level == CorrelationLevel::system ? "spearman_rho" : "pearson_r"},
          {"value", value},
          {"n", n}};
}

CorrelationReport correlate_against_reference(const store::BenchmarkRun& run, const Reference& reference,
                                              CorrelationLevel level) {
  if (run.scorecards.empty()) throw Error("run has no scorecards");
  stats::PairedSeries series;
  std::vector<std::string> missing;
  for (const auto& [t, card] : run.scorecards) {
    if (level == CorrelationLevel::system) {
      auto it = reference.system.find(t);
      if (it == reference.system.end()) {
        missing.push_back(t);
        continue;
      }
      series.labels.push_back(t);
      series.x.push_back(card.corpus_score);
      series.y.push_back(it->second);
    } else {
      auto mt = reference.document.find(t);
      for (const auto& [q, s] : card.query_scores) {
        const std::map<QueryId, double>* doc = mt == reference.document.end() ? nullptr : &mt->second;
        auto qt = doc ? doc->find(q) : std::map<QueryId, double>::const_iterator{};
        if (!doc || qt == doc->end()) {
          missing.push_back(t + "/" + q);
          continue;
        }
        series.labels.push_back(t + "/" + q);
        series.x.push_back(s);
        series.y.push_back(qt->second);
      }
    }
  }
  if (!missing.empty()) throw Error("reference does not cover: " + join(missing, ", "));
  CorrelationReport rep;
  rep.level = level;
  rep.n = series.x.size();
  rep.value = level == CorrelationLevel::system ? stats::spearman_rho(series) : stats::pearson_r(series);
  return rep;
}

json SignTestResult::to_json() const {
  return {{"successes", successes}, {"trials", trials}, {"success_rate", success_rate}, {"p_value", p_value}};
}

SignTestResult compare_methods_signtest(const store::BenchmarkRun& run_a, const store::BenchmarkRun& run_b,
                                        const Reference& reference,
                                        const std::vector<std::vector<QueryId>>& subsets) {
  if (subsets.size() < 2) throw Error("sign test needs at least 2 query subsets");
  std::vector<ModelId> targets;
  for (const auto& [t, _] : run_a.scorecards) targets.push_back(t);
  std::vector<ModelId> targets_b;
  for (const auto& [t, _] : run_b.scorecards) targets_b.push_back(t);
  if (targets != targets_b) throw Error("sign test runs do not share the same targets");

  auto subset_mean = [](const std::map<QueryId, double>& scores, const std::vector<QueryId>& subset,
                        const std::string& what) {
    double sum = 0.0;
    for (const auto& q : subset) {
      auto it = scores.find(q);
      if (it == scores.end()) throw Error(what + " has no score for query '" + q + "'");
      sum += it->second;
    }
    return sum / static_cast<double>(subset.size());
  };

  SignTestResult r;
  r.trials = static_cast<int>(subsets.size());
  for (std::size_t k = 0; k < subsets.size(); ++k) {
    const auto& subset = subsets[k];
    if (subset.empty()) throw Error("sign test subset " + std::to_string(k) + " is empty");
    stats::PairedSeries a, b;
    for (const auto& t : targets) {
      double ref;
      if (auto it = reference.document.find(t); it != reference.document.end()) {
        ref = subset_mean(it->second, subset, "reference for '" + t + "'");
      } else if (auto st = reference.system.find(t); st != reference.system.end()) {
        ref = st->second;
      } else {
        throw Error("reference does not cover target '" + t + "'");
      }
      a.labels.push_back(t);
      b.labels.push_back(t);
      a.x.push_back(subset_mean(run_a.scorecards.at(t).query_scores, subset, "run a target '" + t + "'"));
      b.x.push_back(subset_mean(run_b.scorecards.at(t).query_scores, subset, "run b target '" + t + "'"));
      a.y.push_back(ref);
      b.y.push_back(ref);
    }
    if (stats::spearman_rho(a) > stats::spearman_rho(b)) ++r.successes;
  }
  r.success_rate = static_cast<double>(r.successes) / r.trials;
  r.p_value = stats::sign_test_one_tailed(r.successes, r.trials);
  return r;
}

}  // namespace crosscheck::bench
