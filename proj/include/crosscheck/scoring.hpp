#pragma once

// Score formulas: SelfCheck, CrossCheck-explicit, CrossCheck-implicit,
// confidence weighting, RefCheck, the audio/visual combination and the
// explicit-vs-implicit selection rule. Everything here is pure computation
// over completed verdict matrices.

#include <map>
#include <optional>
#include <string>
#include <vector>

#include "crosscheck/core.hpp"

namespace crosscheck::scoring {

// x^(n) for one sentence against one evidence model, indexed by sample n.
using SampleVerdicts = std::vector<Verdict>;

// Explicit verdicts for one target sentence: evidence model -> samples.
using SentenceExplicit = std::map<ModelId, SampleVerdicts>;

// Implicit verdicts for one target sentence: evidence model -> y.
using SentenceImplicit = std::map<ModelId, Verdict>;

// One target model's verdicts over the query set. Each query maps to one entry
// per response sentence; an empty vector marks an empty response.
struct ExplicitMatrix {
  std::map<QueryId, std::vector<SentenceExplicit>> queries;
};

struct ImplicitMatrix {
  std::map<QueryId, std::vector<SentenceImplicit>> queries;
};

// Per-query weights override the run-level vector when present.
struct EvidenceWeights {
  WeightVector run_level;
  std::map<QueryId, WeightVector> per_query;

  EvidenceWeights() = default;
  EvidenceWeights(WeightVector w) : run_level(std::move(w)) {}  // NOLINT(implicit)

  const WeightVector& for_query(const QueryId& q) const;
};

struct ScoringOptions {
  UnparseablePolicy unparseable = UnparseablePolicy::hallucinatory;
};

// Eq. 1: the target's sentences against its own N̂ passages.
ModelScoreCard selfcheck_score(const ModelId& target, const ExplicitMatrix& verdicts,
                               int expected_samples, const ScoringOptions& opts = {});

// Eq. 2. `samples` gives N_j for every evidence model in the weights.
ModelScoreCard crosscheck_explicit_score(const ModelId& target, const ExplicitMatrix& verdicts,
                                         const EvidenceWeights& weights,
                                         const std::map<ModelId, int>& samples,
                                         const ScoringOptions& opts = {});

// Eq. 3.
ModelScoreCard crosscheck_implicit_score(const ModelId& target, const ImplicitMatrix& verdicts,
                                         const EvidenceWeights& weights,
                                         const ScoringOptions& opts = {});

// Eq. 4, softmax of -S_j / T in shifted form.
WeightVector compute_weights(const std::map<ModelId, double>& selfcheck_scores, double temperature,
                             WeightMode mode = WeightMode::constant);

// Footnote variant: one weight vector per query from per-query SelfCheck means.
// Input is query -> (model -> score).
std::map<QueryId, WeightVector> compute_query_weights(
    const std::map<QueryId, std::map<ModelId, double>>& per_query_scores, double temperature);

// Uniform weights over `models` (the unweighted CrossCheck variants).
WeightVector uniform_weights(const std::vector<ModelId>& models, double temperature);

// Verdicts of each target sentence against each reference text, indexed like
// ExplicitMatrix but with the reference position in place of the sample index.
struct ReferenceMatrix {
  std::map<QueryId, std::vector<SampleVerdicts>> queries;
  // Number of references per query; every query needs at least one.
  std::map<QueryId, int> reference_counts;
};

ModelScoreCard refcheck_score(const ModelId& target, const ReferenceMatrix& verdicts,
                              const ScoringOptions& opts = {});

// min(C_audio, C_visual); the present one when only one is given.
double combine_audio_visual(std::optional<double> c_audio, std::optional<double> c_visual);

enum class SelectedMeasure { crosscheck_explicit, crosscheck_implicit };

// Explicit iff the average SelfCheck score is at least the threshold.
SelectedMeasure select_measure(double avg_selfcheck, double threshold = 0.30);

// Query and corpus means recomputed from sentence scores. Used by the
// formulas above and exposed for re-aggregation over query subsets.
void aggregate_scorecard(ModelScoreCard& card);

}  // namespace crosscheck::scoring
