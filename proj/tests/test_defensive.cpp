#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "phmix/defensive.hpp"
#include "phmix/error.hpp"
#include "phmix/stats.hpp"

using namespace phmix;

TEST_CASE("select_lambda worked cases") {
  auto d = select_lambda(1.0, 100, 0.1, 0.3);
  CHECK(d.certified);
  CHECK(d.lambda_min == doctest::Approx(0.5));
  CHECK(d.lambda == doctest::Approx(0.5));

  d = select_lambda(10.0, 10, 0.1, 0.3);
  CHECK_FALSE(d.certified);
  CHECK(d.lambda_min == doctest::Approx(10.0 / 1.1));
  CHECK(d.lambda == 0.3);

  d = select_lambda(2.5, 299, 0.1, 0.3);
  CHECK(d.certified);
  CHECK(d.lambda == doctest::Approx(2.5 / 3.99));
  CHECK(d.lambda == doctest::Approx(0.6266).epsilon(1e-4));
}

TEST_CASE("select_lambda rejects a certificate below one") {
  try {
    select_lambda(0.99, 10, 0.1, 1.0);
    FAIL("expected INVALID_CERT");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kInvalidCert);
  }
  CHECK_THROWS_AS(select_lambda(1.0, 10, 0.0, 1.0), Error);
  CHECK_THROWS_AS(select_lambda(1.0, 10, 0.1, 0.0), Error);
}

TEST_CASE("defensive density basics") {
  CHECK(defensive_log_density(-3.0, -1.25, 1.0) == -1.25);
  // q = N(0,1), p = N(3,1), lambda = 0.5: p / q_lambda <= 2 everywhere.
  for (double x = -10.0; x <= 13.0; x += 0.01) {
    const double lp = stats::normal_log_pdf(x, 3.0, 1.0);
    const double lq = stats::normal_log_pdf(x, 0.0, 1.0);
    CHECK(std::exp(lp - defensive_log_density(lq, lp, 0.5)) <= 2.0 * (1.0 + 1e-12));
  }
  // Trapezoid quadrature of the mixture density.
  const double h = 1e-3;
  double total = 0.0;
  for (double x = -12.0; x <= 15.0; x += h) {
    const double w = (x == -12.0) ? 0.5 : 1.0;
    total += w * std::exp(defensive_log_density(stats::normal_log_pdf(x, 0.0, 1.0),
                                                stats::normal_log_pdf(x, 3.0, 1.0), 0.3));
  }
  CHECK(std::abs(total * h - 1.0) < 1e-6);
}

TEST_CASE("theory bounds arithmetic and monotonicity") {
  auto b = theory_bounds(1.0, 1.0, 10);
  CHECK(b.chi2_bound == 0.0);
  CHECK(b.ess_floor == 1.0);
  b = theory_bounds(2.0, 0.5, 100);
  CHECK(b.rel_var_bound == doctest::Approx(0.03));
  double prev = 1e300;
  for (double lambda = 0.05; lambda <= 1.0; lambda += 0.05) {
    const double v = theory_bounds(3.0, lambda, 50).rel_var_bound;
    CHECK(v < prev);
    prev = v;
  }
  CHECK(theory_bounds(3.0, 0.5, 51).rel_var_bound < theory_bounds(3.0, 0.5, 50).rel_var_bound);
}

TEST_CASE("lambda one reproduces the carrier law") {
  Rng rng(5);
  std::normal_distribution<double> normal(0.0, 1.0);
  auto q = [&](Rng& r) { return 4.0 + normal(r); };
  auto p = [&](Rng& r) { return normal(r); };
  const auto mixed = sample_defensive(q, p, 1.0, 10000, rng);
  std::vector<double> direct(10000);
  for (auto& v : direct) v = normal(rng);
  // Two-sample Kolmogorov-Smirnov statistic against a direct carrier sample.
  std::vector<double> a(mixed.begin(), mixed.end());
  std::sort(a.begin(), a.end());
  std::sort(direct.begin(), direct.end());
  std::size_t i = 0, j = 0;
  double ks = 0.0;
  while (i < a.size() && j < direct.size()) {
    if (a[i] <= direct[j]) ++i; else ++j;
    ks = std::max(ks, std::abs(double(i) / a.size() - double(j) / direct.size()));
  }
  // Critical value at p = 0.01 for n = m = 1e4.
  CHECK(ks < 1.628 * std::sqrt(2.0 / 10000.0));
}

TEST_CASE("component frequencies follow lambda") {
  Rng rng(17);
  const double lambda = 0.3;
  const auto draws = sample_defensive([](Rng&) { return 0; }, [](Rng&) { return 1; }, lambda, 20000, rng);
  const double freq = std::accumulate(draws.begin(), draws.end(), 0.0) / draws.size();
  CHECK(std::abs(freq - lambda) <= 3.0 * std::sqrt(lambda * (1 - lambda) / draws.size()));
}

TEST_CASE("one_step_weights degenerate cases") {
  const std::vector<double> zeros(5, 0.0);
  auto w = one_step_weights(zeros, zeros, zeros, 0.4);
  CHECK(w.ess_over_n == doctest::Approx(1.0));
  CHECK(w.zhat == doctest::Approx(1.0));
  CHECK(w.rel_weight_var == doctest::Approx(0.0));

  const double ninf = -std::numeric_limits<double>::infinity();
  std::vector<double> lg = {0.0, ninf, ninf, ninf};
  const std::vector<double> z4(4, 0.0);
  w = one_step_weights(lg, z4, z4, 0.5);
  CHECK(w.ess_over_n == doctest::Approx(0.25));
  CHECK(w.normalized[0] == doctest::Approx(1.0));

  const std::vector<double> all_zero(4, ninf);
  try {
    one_step_weights(all_zero, z4, z4, 0.5);
    FAIL("expected ALL_ZERO_WEIGHTS");
  } catch (const Error& e) {
    CHECK(e.code() == ErrorCode::kAllZeroWeights);
  }
}

TEST_CASE("normalizer estimate is unbiased on an enumerable toy") {
  const std::vector<double> p = {0.5, 0.3, 0.2};
  const std::vector<double> q = {0.7, 0.3, 0.0};
  const std::vector<double> g = {0.1, 0.5, 2.0};
  const double z = 0.5 * 0.1 + 0.3 * 0.5 + 0.2 * 2.0;
  const double lambda = 0.2;
  const int n = 20, reps = 10000;
  Rng rng(3);
  std::discrete_distribution<int> from_q(q.begin(), q.end()), from_p(p.begin(), p.end());
  std::vector<double> zhat(reps);
  for (int r = 0; r < reps; ++r) {
    const auto xs = sample_defensive([&](Rng& g_) { return from_q(g_); }, [&](Rng& g_) { return from_p(g_); },
                                     lambda, n, rng);
    std::vector<double> lg, lp, lq;
    for (int x : xs) {
      lg.push_back(std::log(g[x]));
      lp.push_back(std::log(p[x]));
      lq.push_back(q[x] > 0 ? std::log(q[x]) : -std::numeric_limits<double>::infinity());
    }
    zhat[r] = one_step_weights(lg, lp, lq, lambda).zhat;
  }
  CHECK(std::abs(stats::mean(zhat) - z) <= 4.0 * stats::sem(zhat));
}

TEST_CASE("systematic resampling offspring counts") {
  Rng rng(1);
  const std::vector<double> uniform(6, 1.0 / 6.0);
  auto anc = systematic_resample(uniform, rng);
  for (int i = 0; i < 6; ++i) CHECK(anc[i] == i);

  const std::vector<double> point = {1.0, 0.0, 0.0, 0.0};
  anc = systematic_resample(point, rng);
  for (int a : anc) CHECK(a == 0);

  std::uniform_real_distribution<double> u(0.0, 1.0);
  for (int n = 1; n <= 8; ++n) {
    for (int trial = 0; trial < 500; ++trial) {
      std::vector<double> w(n);
      for (auto& v : w) v = u(rng);
      const double total = std::accumulate(w.begin(), w.end(), 0.0);
      for (auto& v : w) v /= total;
      anc = systematic_resample(w, rng);
      std::vector<int> counts(n, 0);
      for (int a : anc) ++counts[a];
      for (int i = 0; i < n; ++i) {
        CHECK(counts[i] >= std::floor(n * w[i] - 1e-12));
        CHECK(counts[i] <= std::ceil(n * w[i] + 1e-12));
      }
    }
  }
}
