#pragma once

// End-to-end orchestration: generate responses and evidence, judge, weight,
// score, combine, rank; plus correlation against a reference and the
// method-comparison sign test.

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "crosscheck/backend.hpp"
#include "crosscheck/config.hpp"
#include "crosscheck/store.hpp"
#include "crosscheck/textproc.hpp"

namespace crosscheck::bench {

// Owns one backend per configured model.
class Backends {
 public:
  Backends() = default;
  Backends(const RunConfig& config, const BackendFactory& factory);

  Backend& at(const ModelId& id) const;
  void add(std::unique_ptr<Backend> backend);
  // Attempts issued across all backends.
  std::uint64_t total_calls() const;

 private:
  std::map<ModelId, std::unique_ptr<Backend>> by_id_;
};

// Backends for `config`, with mock_planted models sharing one world built
// from the config's planted_world block.
Backends make_backends(const RunConfig& config);

// Raised by the generation stage when any cell failed permanently or ran
// out of retries. `failures` names each cell.
class GenerationError : public Error {
 public:
  GenerationError(std::string what, std::vector<std::string> failures);
  const std::vector<std::string>& failures() const noexcept { return failures_; }

 private:
  std::vector<std::string> failures_;
};

struct PipelineOptions {
  int max_parallel = 8;
  textproc::SegmenterRules segmenter = textproc::SegmenterRules::english();
  std::function<void(const std::string&)> log;
};

struct StageReport {
  std::size_t cached = 0;    // artifacts found in the store
  std::size_t computed = 0;  // artifacts produced by backend calls
  std::size_t verdicts = 0;
  std::size_t unparseable = 0;
};

class Pipeline {
 public:
  Pipeline(RunConfig config, const Backends& backends, store::Store& store, PipelineOptions options = {});
  ~Pipeline();

  // Responses and evidence passages. Throws GenerationError.
  StageReport generate();
  // Verdicts (and analyses). Needs generation cached; throws IncompleteError
  // listing missing artifacts or failed judge cells.
  StageReport judge();
  // Scores from cached artifacts only; throws IncompleteError on gaps.
  store::BenchmarkRun score();
  // All three stages with backend calls allowed throughout.
  store::BenchmarkRun run();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

store::BenchmarkRun run_benchmark(const RunConfig& config, const Backends& backends, store::Store& store,
                                  PipelineOptions options = {});

// ---------------------------------------------------------------------------
// Evaluation against a reference

enum class CorrelationLevel { system, document };

std::string_view to_string(CorrelationLevel l);

// System level: model -> score or rank. Document level: model -> query ->
// value. Values must point the same way as the run's scores (e.g. a
// hallucination rate or a rank where 1 is best) for a positive correlation.
struct Reference {
  std::map<ModelId, double> system;
  std::map<ModelId, std::map<QueryId, double>> document;

  // {"model": number, ...} or {"model": {"query": number}, ...}.
  static Reference from_json(const nlohmann::json& j);
};

// RefCheck scorecards of a run as a reference (both levels).
Reference refcheck_reference(const store::BenchmarkRun& run);

struct CorrelationReport {
  CorrelationLevel level = CorrelationLevel::system;
  double value = 0.0;  // Spearman rho (system) or Pearson r (document)
  std::size_t n = 0;

  nlohmann::json to_json() const;
};

// Throws Error listing every target (or target/query pair) the reference
// does not cover.
CorrelationReport correlate_against_reference(const store::BenchmarkRun& run, const Reference& reference,
                                              CorrelationLevel level);

struct SignTestResult {
  int successes = 0;
  int trials = 0;
  double success_rate = 0.0;
  double p_value = 1.0;

  nlohmann::json to_json() const;
};

// Per query subset, a success iff run_a's system-level Spearman against the
// reference strictly exceeds run_b's (ties are not successes). Subset system
// scores are means of per-query scores; the reference is restricted the same
// way when it has document-level values. Needs at least two subsets.
SignTestResult compare_methods_signtest(const store::BenchmarkRun& run_a, const store::BenchmarkRun& run_b,
                                        const Reference& reference,
                                        const std::vector<std::vector<QueryId>>& subsets);

}  // namespace crosscheck::bench
