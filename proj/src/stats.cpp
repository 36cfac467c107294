#include "crosscheck/stats.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

namespace crosscheck::stats {

void PairedSeries::validate() const {
  if (x.size() != y.size()) throw Error("paired series lengths differ");
  if (!labels.empty() && labels.size() != x.size()) throw Error("paired series label count differs");
  if (x.size() < 2) throw Error("correlation needs at least two paired values");
  auto has_nan = [](const std::vector<double>& v) {
    return std::any_of(v.begin(), v.end(), [](double d) { return std::isnan(d); });
  };
  if (has_nan(x) || has_nan(y)) throw Error("paired series contains NaN");
}

std::vector<double> average_ranks(const std::vector<double>& values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i + 1;
    while (j < n && values[order[j]] == values[order[i]]) ++j;
    // Positions i..j-1 (0-based) share rank mean((i+1)..j).
    const double shared = 0.5 * static_cast<double>(i + 1 + j);
    for (std::size_t k = i; k < j; ++k) ranks[order[k]] = shared;
    i = j;
  }
  return ranks;
}

double pearson_r(const PairedSeries& s) {
  s.validate();
  const double n = static_cast<double>(s.x.size());
  const double mx = std::accumulate(s.x.begin(), s.x.end(), 0.0) / n;
  const double my = std::accumulate(s.y.begin(), s.y.end(), 0.0) / n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < s.x.size(); ++i) {
    const double dx = s.x[i] - mx;
    const double dy = s.y[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx == 0.0 || syy == 0.0) throw Error("correlation undefined for a constant series");
  const double r = sxy / std::sqrt(sxx * syy);
  return std::clamp(r, -1.0, 1.0);
}

double spearman_rho(const PairedSeries& s) {
  s.validate();
  PairedSeries ranked{s.labels, average_ranks(s.x), average_ranks(s.y)};
  return pearson_r(ranked);
}

double sign_test_one_tailed(int successes, int trials) {
  if (trials <= 0) throw Error("sign test needs at least one trial");
  if (successes < 0 || successes > trials) throw Error("sign test successes out of range");
  const long double log_half = std::log(0.5L);
  long double tail = 0.0L;
  for (int i = successes; i <= trials; ++i) {
    const long double log_choose =
        std::lgamma(static_cast<long double>(trials) + 1) - std::lgamma(static_cast<long double>(i) + 1) -
        std::lgamma(static_cast<long double>(trials - i) + 1);
    tail += std::exp(log_choose + trials * log_half);
  }
  return static_cast<double>(std::min(tail, 1.0L));
}

double cohens_kappa(const std::vector<std::string>& a, const std::vector<std::string>& b) {
  if (a.size() != b.size()) throw Error("cohens_kappa: label vectors differ in length");
  if (a.empty()) throw Error("cohens_kappa: empty label vectors");
  const double n = static_cast<double>(a.size());
  std::set<std::string> alphabet(a.begin(), a.end());
  alphabet.insert(b.begin(), b.end());
  double agree = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) agree += a[i] == b[i] ? 1.0 : 0.0;
  const double p_o = agree / n;
  double p_e = 0.0;
  for (const auto& label : alphabet) {
    const double ca = static_cast<double>(std::count(a.begin(), a.end(), label));
    const double cb = static_cast<double>(std::count(b.begin(), b.end(), label));
    p_e += (ca / n) * (cb / n);
  }
  if (p_e == 1.0) {
    // Only one label in play: perfect agreement by construction.
    return 1.0;
  }
  return (p_o - p_e) / (1.0 - p_e);
}

std::vector<AggregateEntry> aggregate_rankings(
    const std::map<std::string, std::map<ModelId, double>>& per_metric_ranks,
    const std::map<std::string, std::map<ModelId, double>>& raw_scores) {
  if (per_metric_ranks.empty()) throw Error("aggregate_rankings: no metrics");
  const auto& first = per_metric_ranks.begin()->second;
  std::set<ModelId> models;
  for (const auto& [id, r] : first) models.insert(id);
  for (const auto& [metric, ranks] : per_metric_ranks) {
    std::set<ModelId> these;
    for (const auto& [id, r] : ranks) these.insert(id);
    if (these != models)
      throw Error("aggregate_rankings: metric '" + metric + "' ranks a different model set");
  }

  std::vector<AggregateEntry> out;
  const double metrics = static_cast<double>(per_metric_ranks.size());
  for (const auto& id : models) {
    AggregateEntry e;
    e.model_id = id;
    for (const auto& [metric, ranks] : per_metric_ranks) e.mean_rank += ranks.at(id);
    e.mean_rank /= metrics;
    double score_total = 0.0;
    int score_count = 0;
    for (const auto& [metric, scores] : raw_scores) {
      auto it = scores.find(id);
      if (it == scores.end()) continue;
      score_total += it->second;
      ++score_count;
    }
    e.mean_score = score_count > 0 ? score_total / score_count : 0.0;
    out.push_back(std::move(e));
  }
  std::stable_sort(out.begin(), out.end(), [](const AggregateEntry& a, const AggregateEntry& b) {
    if (a.mean_rank != b.mean_rank) return a.mean_rank < b.mean_rank;
    if (a.mean_score != b.mean_score) return a.mean_score < b.mean_score;
    return a.model_id < b.model_id;
  });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].rank = static_cast<int>(i) + 1;
  return out;
}

}  // namespace crosscheck::stats
