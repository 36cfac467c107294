#include <cmath>
#include <numeric>
#include <random>

#include "crosscheck/stats.hpp"
#include "doctest.h"

using namespace crosscheck::stats;

namespace {

// Pascal-triangle tail, exact in integers for n <= 60.
double binomial_tail_oracle(int k, int n) {
  std::vector<std::uint64_t> row{1};
  for (int i = 0; i < n; ++i) {
    std::vector<std::uint64_t> next(row.size() + 1, 0);
    for (std::size_t j = 0; j < row.size(); ++j) {
      next[j] += row[j];
      next[j + 1] += row[j];
    }
    row = std::move(next);
  }
  std::uint64_t count = 0;
  for (int i = k; i <= n; ++i) count += row[static_cast<std::size_t>(i)];
  return static_cast<double>(count) / std::ldexp(1.0, n);
}

double pearson_oracle(const std::vector<double>& x, const std::vector<double>& y) {
  const double n = static_cast<double>(x.size());
  double sx = 0, sy = 0, sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
    sxy += x[i] * y[i];
    sxx += x[i] * x[i];
    syy += y[i] * y[i];
  }
  return (n * sxy - sx * sy) / std::sqrt((n * sxx - sx * sx) * (n * syy - sy * sy));
}

double spearman_d2_oracle(const std::vector<int>& rank_x, const std::vector<int>& rank_y) {
  const double n = static_cast<double>(rank_x.size());
  double d2 = 0;
  for (std::size_t i = 0; i < rank_x.size(); ++i) {
    const double d = rank_x[i] - rank_y[i];
    d2 += d * d;
  }
  return 1.0 - 6.0 * d2 / (n * (n * n - 1.0));
}

}  // namespace

TEST_SUITE("stats") {
  TEST_CASE("spearman examples") {
    CHECK(spearman_rho({{}, {1, 2, 3}, {10, 20, 30}}) == doctest::Approx(1.0));
    CHECK(spearman_rho({{}, {1, 2, 3}, {30, 20, 10}}) == doctest::Approx(-1.0));
    CHECK(spearman_rho({{}, {1, 2, 3, 4, 5}, {1, 3, 2, 4, 5}}) == doctest::Approx(0.9).epsilon(1e-12));
  }

  TEST_CASE("spearman matches the d-squared formula on tie-free permutations") {
    std::mt19937_64 rng(7);
    for (int iter = 0; iter < 500; ++iter) {
      const int n = 2 + static_cast<int>(rng() % 12);
      std::vector<int> rx(n), ry(n);
      std::iota(rx.begin(), rx.end(), 1);
      std::iota(ry.begin(), ry.end(), 1);
      std::shuffle(rx.begin(), rx.end(), rng);
      std::shuffle(ry.begin(), ry.end(), rng);
      std::vector<double> x(rx.begin(), rx.end()), y(ry.begin(), ry.end());
      CHECK(spearman_rho({{}, x, y}) == doctest::Approx(spearman_d2_oracle(rx, ry)).epsilon(1e-12));
    }
  }

  TEST_CASE("spearman is invariant under strictly increasing transforms") {
    std::mt19937_64 rng(11);
    std::uniform_real_distribution<double> u(-3, 3);
    for (int iter = 0; iter < 300; ++iter) {
      std::vector<double> x(8), y(8);
      for (auto& v : x) v = std::round(u(rng) * 2) / 2;  // forces some ties
      for (auto& v : y) v = u(rng);
      PairedSeries s{{}, x, y};
      double base = 0;
      try {
        base = spearman_rho(s);
      } catch (const crosscheck::Error&) {
        continue;  // constant draw
      }
      std::vector<double> tx = x, ty = y;
      for (auto& v : tx) v = std::exp(v) + 5.0;
      for (auto& v : ty) v = v * v * v;
      CHECK(spearman_rho({{}, tx, ty}) == doctest::Approx(base).epsilon(1e-12));
    }
  }

  TEST_CASE("spearman ties use average ranks") {
    const auto r = average_ranks({10, 20, 20, 30});
    CHECK(r == std::vector<double>{1.0, 2.5, 2.5, 4.0});
  }

  TEST_CASE("pearson examples") {
    CHECK(pearson_r({{}, {1, 2, 3, 4}, {5, 7, 9, 11}}) == doctest::Approx(1.0));
    CHECK(pearson_r({{}, {1, 2, 3, 4}, {-1, -2, -3, -4}}) == doctest::Approx(-1.0));
    CHECK(pearson_r({{}, {1, 2, 3, 4}, {2, 1, 4, 3}}) == doctest::Approx(0.6).epsilon(1e-12));
    CHECK(pearson_oracle({1, 2, 3, 4}, {2, 1, 4, 3}) == doctest::Approx(0.6).epsilon(1e-12));
  }

  TEST_CASE("pearson affine behaviour and oracle agreement") {
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(-10, 10);
    for (int iter = 0; iter < 300; ++iter) {
      std::vector<double> x(6), y(6);
      for (auto& v : x) v = u(rng);
      for (auto& v : y) v = u(rng);
      const double r = pearson_r({{}, x, y});
      CHECK(r == doctest::Approx(pearson_oracle(x, y)).epsilon(1e-9));
      const double a = std::abs(u(rng)) + 0.1, b = u(rng);
      std::vector<double> ax = x;
      for (auto& v : ax) v = a * v + b;
      CHECK(pearson_r({{}, ax, y}) == doctest::Approx(r).epsilon(1e-9));
      for (auto& v : ax) v = -v;
      CHECK(pearson_r({{}, ax, y}) == doctest::Approx(-r).epsilon(1e-9));
    }
  }

  TEST_CASE("correlation errors") {
    CHECK_THROWS_AS(pearson_r({{}, {1, 1, 1}, {1, 2, 3}}), crosscheck::Error);
    CHECK_THROWS_AS(spearman_rho({{}, {1, 2, 3}, {4, 4, 4}}), crosscheck::Error);
    CHECK_THROWS_AS(pearson_r({{}, {1}, {1}}), crosscheck::Error);
    CHECK_THROWS_AS(pearson_r({{}, {1, 2}, {1}}), crosscheck::Error);
    CHECK_THROWS_AS(pearson_r({{}, {1, NAN}, {1, 2}}), crosscheck::Error);
  }

  TEST_CASE("sign test examples") {
    // sum_{i=27..30} C(30,i) = 4526
    CHECK(sign_test_one_tailed(27, 30) == doctest::Approx(4526.0 / 1073741824.0).epsilon(1e-12));
    CHECK(sign_test_one_tailed(5, 10) == doctest::Approx(638.0 / 1024.0).epsilon(1e-12));
    CHECK(sign_test_one_tailed(1, 1) == doctest::Approx(0.5));
    CHECK(sign_test_one_tailed(0, 7) == doctest::Approx(1.0));
    CHECK(sign_test_one_tailed(4, 4) == doctest::Approx(1.0 / 16.0));
    CHECK_THROWS_AS(sign_test_one_tailed(0, 0), crosscheck::Error);
    CHECK_THROWS_AS(sign_test_one_tailed(5, 4), crosscheck::Error);
  }

  TEST_CASE("sign test matches exhaustive binomial oracle for n <= 20") {
    for (int n = 1; n <= 20; ++n)
      for (int k = 0; k <= n; ++k)
        CHECK(sign_test_one_tailed(k, n) == doctest::Approx(binomial_tail_oracle(k, n)).epsilon(1e-12));
  }

  TEST_CASE("cohens kappa hand cases") {
    CHECK(cohens_kappa({"1", "0", "1", "1"}, {"1", "0", "1", "1"}) == 1.0);
    CHECK(cohens_kappa({"1", "1", "0", "0"}, {"0", "0", "1", "1"}) == -1.0);
    CHECK(cohens_kappa({"1", "1", "1", "0"}, {"1", "1", "0", "0"}) == 0.5);
    CHECK(cohens_kappa({"a", "a"}, {"a", "a"}) == 1.0);
    CHECK_THROWS_AS(cohens_kappa({"1"}, {"1", "0"}), crosscheck::Error);
  }

  TEST_CASE("cohens kappa of a vector with itself is 1") {
    std::mt19937_64 rng(5);
    for (int iter = 0; iter < 100; ++iter) {
      std::vector<std::string> v(10);
      for (auto& s : v) s = std::string(1, static_cast<char>('a' + rng() % 3));
      CHECK(cohens_kappa(v, v) == doctest::Approx(1.0));
    }
  }

  TEST_CASE("aggregate rankings") {
    auto two = aggregate_rankings({{"m1", {{"A", 1}, {"B", 2}}}, {"m2", {{"A", 1}, {"B", 2}}}});
    REQUIRE(two.size() == 2);
    CHECK(two[0].model_id == "A");
    CHECK(two[1].model_id == "B");

    auto tied = aggregate_rankings(
        {{"m1", {{"A", 1}, {"B", 3}, {"C", 2}}}, {"m2", {{"A", 3}, {"B", 1}, {"C", 2}}}});
    CHECK(tied[0].mean_rank == 2.0);
    CHECK(tied[0].model_id == "A");
    CHECK(tied[1].model_id == "B");
    CHECK(tied[2].model_id == "C");

    auto by_score = aggregate_rankings(
        {{"m1", {{"A", 1}, {"B", 3}, {"C", 2}}}, {"m2", {{"A", 3}, {"B", 1}, {"C", 2}}}},
        {{"s", {{"A", 0.5}, {"B", 0.2}, {"C", 0.3}}}});
    CHECK(by_score[0].model_id == "B");
    CHECK(by_score[1].model_id == "C");

    auto three = aggregate_rankings({{"m1", {{"A", 1}, {"B", 2}, {"C", 3}}},
                                     {"m2", {{"A", 2}, {"B", 1}, {"C", 3}}},
                                     {"m3", {{"A", 1}, {"B", 3}, {"C", 2}}}});
    CHECK(three[0].model_id == "A");
    CHECK(three[0].mean_rank == doctest::Approx(4.0 / 3.0));
    CHECK(three[1].model_id == "B");
    CHECK(three[1].mean_rank == doctest::Approx(2.0));
    CHECK(three[2].model_id == "C");
    CHECK(three[2].mean_rank == doctest::Approx(8.0 / 3.0));

    CHECK_THROWS_AS(aggregate_rankings({{"m1", {{"A", 1}}}, {"m2", {{"B", 1}}}}), crosscheck::Error);
  }
}
