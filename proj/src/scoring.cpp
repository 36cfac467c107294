#include "crosscheck/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace crosscheck::scoring {
namespace {

std::string cell_name(const QueryId& q, std::size_t i) {
  return "query '" + q + "' sentence " + std::to_string(i);
}

double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

ModelScoreCard new_card(const ModelId& target, Measure m) {
  ModelScoreCard card;
  card.model_id = target;
  card.measure = m;
  return card;
}

}  // namespace

const WeightVector& EvidenceWeights::for_query(const QueryId& q) const {
  auto it = per_query.find(q);
  return it == per_query.end() ? run_level : it->second;
}

void aggregate_scorecard(ModelScoreCard& card) {
  card.query_scores.clear();
  card.excluded_queries.erase(
      std::remove_if(card.excluded_queries.begin(), card.excluded_queries.end(),
                     [&](const QueryId& q) {
                       return std::any_of(card.sentence_scores.begin(), card.sentence_scores.end(),
                                          [&](const auto& kv) { return kv.first.query_id == q; });
                     }),
      card.excluded_queries.end());

  std::map<QueryId, std::pair<double, std::size_t>> sums;
  for (const auto& [key, score] : card.sentence_scores) {
    auto& [total, count] = sums[key.query_id];
    total += score;
    ++count;
  }
  if (sums.empty()) throw Error("model '" + card.model_id + "' has no scoreable queries");
  double corpus = 0.0;
  for (const auto& [q, tc] : sums) {
    const double qs = tc.first / static_cast<double>(tc.second);
    card.query_scores[q] = qs;
    corpus += qs;
  }
  card.corpus_score = clamp01(corpus / static_cast<double>(sums.size()));
}

ModelScoreCard selfcheck_score(const ModelId& target, const ExplicitMatrix& verdicts,
                               int expected_samples, const ScoringOptions& opts) {
  if (expected_samples < 1) throw Error("selfcheck needs at least one self passage per query");
  auto card = new_card(target, Measure::selfcheck);
  std::vector<std::string> gaps;
  for (const auto& [q, sentences] : verdicts.queries) {
    if (sentences.empty()) {
      card.excluded_queries.push_back(q);
      continue;
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      auto it = sentences[i].find(target);
      if (it == sentences[i].end() || static_cast<int>(it->second.size()) != expected_samples) {
        const auto have = it == sentences[i].end() ? 0 : it->second.size();
        gaps.push_back(cell_name(q, i) + ": " + std::to_string(have) + " of " +
                       std::to_string(expected_samples) + " self verdicts");
        continue;
      }
      double hits = 0.0;
      for (Verdict v : it->second) {
        hits += verdict_value(v, opts.unparseable);
        card.unparseable_verdicts += v == Verdict::unparseable ? 1 : 0;
      }
      card.total_verdicts += it->second.size();
      card.sentence_scores[{q, i}] = clamp01(hits / static_cast<double>(expected_samples));
    }
  }
  if (!gaps.empty()) throw IncompleteError("selfcheck verdicts incomplete for '" + target + "'", gaps);
  aggregate_scorecard(card);
  return card;
}

ModelScoreCard crosscheck_explicit_score(const ModelId& target, const ExplicitMatrix& verdicts,
                                         const EvidenceWeights& weights,
                                         const std::map<ModelId, int>& samples,
                                         const ScoringOptions& opts) {
  auto card = new_card(target, Measure::crosscheck_explicit);
  std::vector<std::string> gaps;
  for (const auto& [q, sentences] : verdicts.queries) {
    if (sentences.empty()) {
      card.excluded_queries.push_back(q);
      continue;
    }
    const WeightVector& w = weights.for_query(q);
    if (w.entries.empty()) throw Error("explicit scoring: empty evidence weight vector");
    for (const auto& [model, eta] : w.entries) {
      auto n = samples.find(model);
      if (n == samples.end()) throw Error("explicit scoring: no N_j for evidence model '" + model + "'");
      if (n->second < 1) throw Error("explicit scoring: N_j < 1 for evidence model '" + model + "'");
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      double numerator = 0.0;
      double denominator = 0.0;
      bool complete = true;
      for (const auto& [model, eta] : w.entries) {
        const int n_j = samples.at(model);
        auto it = sentences[i].find(model);
        if (it == sentences[i].end() || static_cast<int>(it->second.size()) != n_j) {
          const auto have = it == sentences[i].end() ? 0 : it->second.size();
          gaps.push_back(cell_name(q, i) + " model '" + model + "': " + std::to_string(have) +
                         " of " + std::to_string(n_j) + " verdicts");
          complete = false;
          continue;
        }
        double hits = 0.0;
        for (Verdict v : it->second) {
          hits += verdict_value(v, opts.unparseable);
          card.unparseable_verdicts += v == Verdict::unparseable ? 1 : 0;
        }
        card.total_verdicts += it->second.size();
        numerator += eta * hits;
        denominator += eta * static_cast<double>(n_j);
      }
      if (complete) card.sentence_scores[{q, i}] = clamp01(numerator / denominator);
    }
  }
  if (!gaps.empty())
    throw IncompleteError("explicit verdicts incomplete for '" + target + "'", gaps);
  aggregate_scorecard(card);
  return card;
}

ModelScoreCard crosscheck_implicit_score(const ModelId& target, const ImplicitMatrix& verdicts,
                                         const EvidenceWeights& weights,
                                         const ScoringOptions& opts) {
  auto card = new_card(target, Measure::crosscheck_implicit);
  std::vector<std::string> gaps;
  for (const auto& [q, sentences] : verdicts.queries) {
    if (sentences.empty()) {
      card.excluded_queries.push_back(q);
      continue;
    }
    const WeightVector& w = weights.for_query(q);
    if (w.entries.empty()) throw Error("implicit scoring: empty evidence weight vector");
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      double score = 0.0;
      bool complete = true;
      for (const auto& [model, eta] : w.entries) {
        auto it = sentences[i].find(model);
        if (it == sentences[i].end()) {
          gaps.push_back(cell_name(q, i) + " model '" + model + "': no implicit verdict");
          complete = false;
          continue;
        }
        score += eta * verdict_value(it->second, opts.unparseable);
        card.unparseable_verdicts += it->second == Verdict::unparseable ? 1 : 0;
        ++card.total_verdicts;
      }
      if (complete) card.sentence_scores[{q, i}] = clamp01(score);
    }
  }
  if (!gaps.empty())
    throw IncompleteError("implicit verdicts incomplete for '" + target + "'", gaps);
  aggregate_scorecard(card);
  return card;
}

WeightVector compute_weights(const std::map<ModelId, double>& selfcheck_scores, double temperature,
                             WeightMode mode) {
  if (!(temperature > 0.0)) throw Error("calibration temperature T must be > 0");
  if (selfcheck_scores.empty()) throw Error("cannot weight an empty evidence-model set");
  double lowest = std::numeric_limits<double>::infinity();
  for (const auto& [id, s] : selfcheck_scores) {
    if (!(s >= 0.0 && s <= 1.0)) throw Error("selfcheck score of '" + id + "' outside [0, 1]");
    lowest = std::min(lowest, s);
  }
  WeightVector w;
  w.temperature = temperature;
  w.mode = mode;
  double total = 0.0;
  for (const auto& [id, s] : selfcheck_scores) {
    // exp(-(S - S_min)/T): the largest term is exactly 1, so no overflow and
    // the sum never underflows to zero.
    const double e = std::exp(-(s - lowest) / temperature);
    w.entries[id] = e;
    total += e;
  }
  for (auto& [id, e] : w.entries) e /= total;
  return w;
}

std::map<QueryId, WeightVector> compute_query_weights(
    const std::map<QueryId, std::map<ModelId, double>>& per_query_scores, double temperature) {
  std::map<QueryId, WeightVector> out;
  for (const auto& [q, scores] : per_query_scores)
    out.emplace(q, compute_weights(scores, temperature, WeightMode::per_query));
  return out;
}

WeightVector uniform_weights(const std::vector<ModelId>& models, double temperature) {
  if (models.empty()) throw Error("cannot weight an empty evidence-model set");
  WeightVector w;
  w.temperature = temperature;
  for (const auto& m : models) w.entries[m] = 1.0 / static_cast<double>(models.size());
  return w;
}

ModelScoreCard refcheck_score(const ModelId& target, const ReferenceMatrix& verdicts,
                              const ScoringOptions& opts) {
  auto card = new_card(target, Measure::refcheck);
  std::vector<std::string> gaps;
  for (const auto& [q, sentences] : verdicts.queries) {
    auto rc = verdicts.reference_counts.find(q);
    if (rc == verdicts.reference_counts.end() || rc->second < 1)
      throw Error("refcheck: query '" + q + "' has no reference text");
    if (sentences.empty()) {
      card.excluded_queries.push_back(q);
      continue;
    }
    for (std::size_t i = 0; i < sentences.size(); ++i) {
      if (static_cast<int>(sentences[i].size()) != rc->second) {
        gaps.push_back(cell_name(q, i) + ": " + std::to_string(sentences[i].size()) + " of " +
                       std::to_string(rc->second) + " reference verdicts");
        continue;
      }
      double hits = 0.0;
      for (Verdict v : sentences[i]) {
        hits += verdict_value(v, opts.unparseable);
        card.unparseable_verdicts += v == Verdict::unparseable ? 1 : 0;
      }
      card.total_verdicts += sentences[i].size();
      card.sentence_scores[{q, i}] = clamp01(hits / static_cast<double>(rc->second));
    }
  }
  if (!gaps.empty())
    throw IncompleteError("refcheck verdicts incomplete for '" + target + "'", gaps);
  aggregate_scorecard(card);
  return card;
}

double combine_audio_visual(std::optional<double> c_audio, std::optional<double> c_visual) {
  if (c_audio && c_visual) return std::min(*c_audio, *c_visual);
  if (c_audio) return *c_audio;
  if (c_visual) return *c_visual;
  throw Error("combine_audio_visual: neither audio nor visual score present");
}

SelectedMeasure select_measure(double avg_selfcheck, double threshold) {
  return avg_selfcheck >= threshold ? SelectedMeasure::crosscheck_explicit
                                    : SelectedMeasure::crosscheck_implicit;
}

}  // namespace crosscheck::scoring
