#pragma once

#include <map>
#include <string>
#include <vector>

#include "crosscheck/core.hpp"

namespace crosscheck::stats {

struct PairedSeries {
  std::vector<std::string> labels;
  std::vector<double> x;
  std::vector<double> y;

  // Throws if lengths differ, length < 2 or any entry is NaN.
  void validate() const;
};

// Average ranks (1-based); tied values share the mean of their positions.
std::vector<double> average_ranks(const std::vector<double>& values);

// Product-moment correlation. Throws Error when either series is constant.
double pearson_r(const PairedSeries& series);

// Pearson correlation of the average-ranked series.
double spearman_rho(const PairedSeries& series);

// P(X >= successes) for X ~ Binomial(trials, 1/2).
double sign_test_one_tailed(int successes, int trials);

// (p_o - p_e) / (1 - p_e); 1.0 when both agreement terms are 1.
double cohens_kappa(const std::vector<std::string>& labels_a,
                    const std::vector<std::string>& labels_b);

struct AggregateEntry {
  ModelId model_id;
  double mean_rank = 0.0;
  double mean_score = 0.0;
  int rank = 0;
};

// Averages per-metric ranks. Ties are broken by the mean raw score (when
// `raw_scores` is supplied, lower is better) and then by model id.
std::vector<AggregateEntry> aggregate_rankings(
    const std::map<std::string, std::map<ModelId, double>>& per_metric_ranks,
    const std::map<std::string, std::map<ModelId, double>>& raw_scores = {});

}  // namespace crosscheck::stats
