#include <doctest.h>

#include <random>

#include "oracles.hpp"
#include "phmix/error.hpp"
#include "phmix/metrics.hpp"
#include "phmix/stats.hpp"

using namespace phmix;

TEST_CASE("identical and relabelled sequences score perfectly") {
  const std::vector<int> truth = {0, 0, 1, 1, 1, 2, 2, 0, 0};
  std::vector<int> relabel;
  for (int v : truth) relabel.push_back((v + 1) % 3 + 10);
  const std::vector<const std::vector<int>*> preds = {&truth, &relabel};
  for (const auto* pred : preds) {
    const auto r = segmentation_report(*pred, truth);
    CHECK(r.mode_f1 == 1.0);
    CHECK(r.ari == doctest::Approx(1.0));
    CHECK(r.changepoint_f1 == 1.0);
    CHECK(r.segment_purity == 1.0);
  }
  CHECK(mode_f1(relabel, truth).mapping.at(11) == 0);
}

TEST_CASE("constant prediction against several classes") {
  const std::vector<int> truth = {0, 0, 1, 1, 2, 2, 2, 1};
  const std::vector<int> pred(truth.size(), 4);
  CHECK(adjusted_rand_index(pred, truth) == 0.0);
  CHECK(changepoint_f1(pred, truth) == 0.0);
}

TEST_CASE("segment purity and change-point windows") {
  const std::vector<int> truth = {0, 0, 1, 1};
  const std::vector<int> one_segment(4, 7);
  CHECK(segment_purity(one_segment, truth) == 0.5);

  std::vector<int> a(20, 0), b(20, 0);
  for (int t = 10; t < 20; ++t) a[t] = 1;
  for (int t = 12; t < 20; ++t) b[t] = 1;
  CHECK(changepoint_f1(b, a, 2) == 1.0);
  CHECK(changepoint_f1(b, a, 1) == 0.0);
  const std::vector<int> flat(20, 0);
  CHECK(changepoint_f1(flat, flat, 2) == 1.0);
}

TEST_CASE("mode F1 matches enumeration on a 3-class toy") {
  const std::vector<int> truth = {0, 0, 0, 1, 1, 2, 2, 2, 2, 1};
  const std::vector<int> pred = {2, 2, 1, 1, 1, 0, 0, 2, 0, 1};
  CHECK(mode_f1(pred, truth).f1 == doctest::Approx(oracle::mode_f1_by_enumeration(pred, truth)).epsilon(1e-12));
}

TEST_CASE("ARI and mode F1 agree with brute force on short sequences") {
  for (int n = 1; n <= 5; ++n) {
    oracle::for_each_sequence(n, 3, [&](const std::vector<int>& t) {
      oracle::for_each_sequence(n, 3, [&](const std::vector<int>& p) {
        REQUIRE(adjusted_rand_index(p, t) == doctest::Approx(oracle::ari_by_pairs(p, t)).epsilon(1e-12));
        REQUIRE(mode_f1(p, t).f1 == doctest::Approx(oracle::mode_f1_by_enumeration(p, t)).epsilon(1e-12));
      });
    });
  }
}

TEST_CASE("metrics are invariant under relabelling") {
  std::mt19937_64 rng(4);
  std::uniform_int_distribution<int> label(0, 3);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<int> t(12), p(12);
    for (auto& v : t) v = label(rng);
    for (auto& v : p) v = label(rng);
    std::vector<int> perm = {2, 0, 3, 1};
    std::vector<int> p2;
    for (int v : p) p2.push_back(perm[v] * 5);
    CHECK(adjusted_rand_index(p2, t) == doctest::Approx(adjusted_rand_index(p, t)));
    CHECK(mode_f1(p2, t).f1 == doctest::Approx(mode_f1(p, t).f1));
    CHECK(segment_purity(p2, t) == doctest::Approx(segment_purity(p, t)));
  }
}

TEST_CASE("assignment handles rectangular inputs") {
  const std::vector<std::vector<double>> w = {{1, 5, 0}, {4, 1, 0}};
  const auto m = max_weight_assignment(w);
  CHECK(m[0] == 1);
  CHECK(m[1] == 0);
  const std::vector<std::vector<double>> tall = {{3}, {7}, {1}};
  const auto m2 = max_weight_assignment(tall);
  CHECK(m2[0] == -1);
  CHECK(m2[1] == 0);
  CHECK(m2[2] == -1);
}

TEST_CASE("calibration on simulated Gaussians") {
  std::mt19937_64 rng(12);
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int n = 100000;
  std::vector<double> mean(n), var(n), value(n), conf(n);
  std::vector<int> correct(n);
  for (int i = 0; i < n; ++i) {
    mean[i] = normal(rng);
    var[i] = 0.5 + unit(rng);
    value[i] = mean[i] + std::sqrt(var[i]) * normal(rng);
    conf[i] = unit(rng);
    correct[i] = unit(rng) < conf[i];
  }
  const auto r = calibration(mean, var, value, conf, correct);
  CHECK(std::abs(r.cov90 - 0.9) <= 0.005);
  CHECK(r.ece < 0.01);

  const std::vector<double> zero(3, 0.0), one(3, 1.0);
  CHECK(gaussian_nll(zero, one, zero) == doctest::Approx(0.5 * std::log(2 * M_PI)));
  const std::vector<double> c = {0.25, 0.25, 0.25, 0.25};
  const std::vector<int> k = {1, 0, 0, 0};
  CHECK(expected_calibration_error(c, k) == doctest::Approx(0.0));
  CHECK_THROWS_AS(calibration({}, {}, {}, c, k), Error);
}
