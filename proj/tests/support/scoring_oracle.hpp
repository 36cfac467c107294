#pragma once

// Brute-force reference implementations of the score formulas and a random
// small-instance generator. Deliberately written without the library's
// helpers: plain nested loops over raw 0/1 arrays, unshifted softmax.

#include <cmath>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "crosscheck/scoring.hpp"

namespace oracle {

// x[q][i][j][n] with models indexed 0..M-1.
struct Instance {
  int models = 0;
  std::vector<int> samples;                                // N_j
  std::vector<double> eta;                                 // weights, sum 1
  std::vector<std::vector<std::vector<std::vector<int>>>> x;  // [q][i][j][n]
  std::vector<std::vector<std::vector<int>>> y;               // [q][i][j]
};

inline std::string model_name(int j) { return "m" + std::to_string(j); }
inline std::string query_name(int q) { return "q" + std::to_string(q); }

// Sizes bounded by 3 models, 4 samples, 3 sentences, 3 queries.
inline Instance random_instance(std::mt19937_64& rng) {
  auto pick = [&](int lo, int hi) { return lo + static_cast<int>(rng() % static_cast<unsigned>(hi - lo + 1)); };
  Instance in;
  in.models = pick(1, 3);
  const int queries = pick(1, 3);
  for (int j = 0; j < in.models; ++j) in.samples.push_back(pick(1, 4));
  double total = 0;
  for (int j = 0; j < in.models; ++j) {
    in.eta.push_back(0.05 + std::uniform_real_distribution<double>(0, 1)(rng));
    total += in.eta.back();
  }
  for (auto& e : in.eta) e /= total;
  in.x.resize(queries);
  in.y.resize(queries);
  for (int q = 0; q < queries; ++q) {
    const int sentences = pick(1, 3);
    in.x[q].resize(sentences);
    in.y[q].resize(sentences);
    for (int i = 0; i < sentences; ++i) {
      in.x[q][i].resize(in.models);
      for (int j = 0; j < in.models; ++j) {
        for (int n = 0; n < in.samples[j]; ++n) in.x[q][i][j].push_back(static_cast<int>(rng() % 2));
        in.y[q][i].push_back(static_cast<int>(rng() % 2));
      }
    }
  }
  return in;
}

// Eq. 1 for model j: (1/|Q|) Σ_q (1/|R_q|) Σ_i (1/N) Σ_n x.
inline double selfcheck(const Instance& in, int j) {
  double corpus = 0;
  for (const auto& query : in.x) {
    double qsum = 0;
    for (const auto& sentence : query) {
      double s = 0;
      for (int v : sentence[j]) s += v;
      qsum += s / in.samples[j];
    }
    corpus += qsum / query.size();
  }
  return corpus / in.x.size();
}

// Eq. 2.
inline double explicit_score(const Instance& in) {
  double corpus = 0;
  for (const auto& query : in.x) {
    double qsum = 0;
    for (const auto& sentence : query) {
      double num = 0, den = 0;
      for (int j = 0; j < in.models; ++j) {
        for (int v : sentence[j]) num += in.eta[j] * v;
        den += in.eta[j] * in.samples[j];
      }
      qsum += num / den;
    }
    corpus += qsum / query.size();
  }
  return corpus / in.x.size();
}

// Eq. 3.
inline double implicit_score(const Instance& in) {
  double corpus = 0;
  for (const auto& query : in.y) {
    double qsum = 0;
    for (const auto& sentence : query) {
      double s = 0;
      for (int j = 0; j < in.models; ++j) s += in.eta[j] * sentence[j];
      qsum += s;
    }
    corpus += qsum / query.size();
  }
  return corpus / in.y.size();
}

// Eq. 4 without the shift.
inline std::vector<double> softmax_weights(const std::vector<double>& scores, double t) {
  std::vector<double> out;
  double z = 0;
  for (double s : scores) z += std::exp(-s / t);
  for (double s : scores) out.push_back(std::exp(-s / t) / z);
  return out;
}

// --- conversion to library types -------------------------------------------

inline crosscheck::Verdict to_verdict(int v) {
  return v ? crosscheck::Verdict::hallucinatory : crosscheck::Verdict::supported;
}

inline crosscheck::scoring::ExplicitMatrix explicit_matrix(const Instance& in) {
  crosscheck::scoring::ExplicitMatrix m;
  for (std::size_t q = 0; q < in.x.size(); ++q) {
    auto& sentences = m.queries[query_name(static_cast<int>(q))];
    for (const auto& sentence : in.x[q]) {
      crosscheck::scoring::SentenceExplicit cell;
      for (int j = 0; j < in.models; ++j)
        for (int v : sentence[j]) cell[model_name(j)].push_back(to_verdict(v));
      sentences.push_back(std::move(cell));
    }
  }
  return m;
}

inline crosscheck::scoring::ImplicitMatrix implicit_matrix(const Instance& in) {
  crosscheck::scoring::ImplicitMatrix m;
  for (std::size_t q = 0; q < in.y.size(); ++q) {
    auto& sentences = m.queries[query_name(static_cast<int>(q))];
    for (const auto& sentence : in.y[q]) {
      crosscheck::scoring::SentenceImplicit cell;
      for (int j = 0; j < in.models; ++j) cell[model_name(j)] = to_verdict(sentence[j]);
      sentences.push_back(std::move(cell));
    }
  }
  return m;
}

inline crosscheck::WeightVector weight_vector(const Instance& in) {
  crosscheck::WeightVector w;
  for (int j = 0; j < in.models; ++j) w.entries[model_name(j)] = in.eta[j];
  return w;
}

inline std::map<std::string, int> sample_counts(const Instance& in) {
  std::map<std::string, int> out;
  for (int j = 0; j < in.models; ++j) out[model_name(j)] = in.samples[j];
  return out;
}

}  // namespace oracle
