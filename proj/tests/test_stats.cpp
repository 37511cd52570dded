#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include "doctest.h"
#include "zen/stats.hpp"

using namespace zen;

namespace oracle {

// two-sided Student t tail by direct numeric integration of the density
double t_two_sided(double t, double nu) {
  double c = std::exp(std::lgamma((nu + 1.0) / 2.0) - std::lgamma(nu / 2.0)) /
             std::sqrt(nu * M_PI);
  auto pdf = [&](double x) { return c * std::pow(1.0 + x * x / nu, -(nu + 1.0) / 2.0); };
  // x = |t| + u/(1-u), u in [0,1): maps the tail onto the unit interval
  double a = std::abs(t);
  auto g = [&](double u) {
    double om = 1.0 - u;
    return pdf(a + u / om) / (om * om);
  };
  const int n = 20000;  // Simpson, even count
  double h = 1.0 / double(n);
  double s = g(0.0);
  for (int i = 1; i < n; ++i) s += g(double(i) * h) * (i % 2 ? 4.0 : 2.0);
  // endpoint u=1 excluded: integrand decays to 0
  return 2.0 * s * h / 3.0;
}

// independently written exact signed-rank p-value
double wilcoxon_exact_p(const std::vector<double>& a, const std::vector<double>& b) {
  std::vector<double> d;
  for (std::size_t i = 0; i < a.size(); ++i)
    if (a[i] != b[i]) d.push_back(a[i] - b[i]);
  std::size_t m = d.size();
  if (m == 0) return 1.0;
  std::vector<std::pair<double, std::size_t>> keyed;
  for (std::size_t i = 0; i < m; ++i) keyed.emplace_back(std::abs(d[i]), i);
  std::sort(keyed.begin(), keyed.end());
  std::vector<double> rank(m, 0.0);
  std::size_t i = 0;
  while (i < m) {
    std::size_t j = i;
    while (j + 1 < m && keyed[j + 1].first == keyed[i].first) ++j;
    for (std::size_t k = i; k <= j; ++k) rank[keyed[k].second] = double(i + j + 2) / 2.0;
    i = j + 1;
  }
  double w = 0.0;
  for (std::size_t k = 0; k < m; ++k)
    if (d[k] > 0.0) w += rank[k];
  std::uint64_t total = std::uint64_t(1) << m, le = 0, ge = 0;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    double s = 0.0;
    for (std::size_t k = 0; k < m; ++k)
      if (mask >> k & 1) s += rank[k];
    if (s <= w + 1e-9) ++le;
    if (s >= w - 1e-9) ++ge;
  }
  return std::min(1.0, 2.0 * double(std::min(le, ge)) / double(total));
}

}  // namespace oracle

TEST_CASE("summarize hand values on 1..5") {
  RunSummary s = summarize({1, 2, 3, 4, 5});
  CHECK(s.mean == 3.0);
  CHECK(s.std_dev == doctest::Approx(std::sqrt(2.5)).epsilon(1e-14));
  CHECK(s.se == doctest::Approx(std::sqrt(2.5) / std::sqrt(5.0)).epsilon(1e-14));
  CHECK(s.ci95 == 1.96 * s.se);
  CHECK_THROWS(summarize({1.0}));
  CHECK_THROWS(summarize({}));
}

TEST_CASE("summarize on constant runs") {
  RunSummary s = summarize({2.5, 2.5, 2.5});
  CHECK(s.mean == 2.5);
  CHECK(s.std_dev == 0.0);
  CHECK(s.ci95 == 0.0);
}

TEST_CASE("incomplete beta identities") {
  CHECK(incomplete_beta(2.0, 3.0, 0.0) == 0.0);
  CHECK(incomplete_beta(2.0, 3.0, 1.0) == 1.0);
  for (double x : {0.1, 0.37, 0.5, 0.9})
    CHECK(incomplete_beta(1.0, 1.0, x) == doctest::Approx(x).epsilon(1e-12));
  for (double x : {0.2, 0.6}) {
    double lhs = incomplete_beta(2.5, 4.0, x) + incomplete_beta(4.0, 2.5, 1.0 - x);
    CHECK(lhs == doctest::Approx(1.0).epsilon(1e-12));
  }
  // I_x(1, b) = 1 - (1-x)^b
  CHECK(incomplete_beta(1.0, 3.0, 0.3) ==
        doctest::Approx(1.0 - std::pow(0.7, 3.0)).epsilon(1e-12));
}

TEST_CASE("normal cdf reference points") {
  CHECK(normal_cdf(0.0) == 0.5);
  CHECK(normal_cdf(1.96) == doctest::Approx(0.9750021048517795).epsilon(1e-12));
  CHECK(normal_cdf(-1.0) + normal_cdf(1.0) == doctest::Approx(1.0).epsilon(1e-14));
}

TEST_CASE("paired t-test hand case against numeric integration") {
  std::vector<double> b = {0, 0, 0, 0, 0};
  std::vector<double> a = {1, 2, 3, 2, 2};  // d mean 2, sd sqrt(0.5)
  TestResult r = paired_t_test(a, b);
  CHECK(r.statistic == doctest::Approx(2.0 / (std::sqrt(0.5) / std::sqrt(5.0))).epsilon(1e-12));
  CHECK(r.statistic == doctest::Approx(6.324555320336759).epsilon(1e-12));
  CHECK(r.p_value == doctest::Approx(oracle::t_two_sided(r.statistic, 4.0)).epsilon(1e-6));
  CHECK_FALSE(r.degenerate);
}

TEST_CASE("paired t-test p-values match integration across magnitudes") {
  std::mt19937_64 rng(42);
  std::normal_distribution<double> noise(0.0, 1.0);
  for (int trial = 0; trial < 10; ++trial) {
    std::size_t n = 4 + rng() % 8;
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      b[i] = noise(rng);
      a[i] = b[i] + 0.3 * double(trial % 4) + noise(rng);
    }
    TestResult r = paired_t_test(a, b);
    if (r.degenerate) continue;
    double expect = oracle::t_two_sided(r.statistic, double(n - 1));
    CHECK(r.p_value == doctest::Approx(expect).epsilon(1e-6));
  }
}

TEST_CASE("paired t-test symmetry and degenerate cases") {
  std::vector<double> a = {1.0, 2.0, 3.5}, b = {0.5, 2.5, 3.0};
  TestResult ab = paired_t_test(a, b), ba = paired_t_test(b, a);
  CHECK(ab.statistic == doctest::Approx(-ba.statistic).epsilon(1e-14));
  CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-14));

  TestResult same = paired_t_test(a, a);
  CHECK(same.degenerate);
  CHECK(same.p_value == 1.0);
  CHECK(same.statistic == 0.0);

  std::vector<double> shifted = {2.0, 3.0, 4.5};  // constant nonzero difference
  TestResult c = paired_t_test(shifted, a);
  CHECK(c.degenerate);
  CHECK(c.p_value == 0.0);
  CHECK(std::isinf(c.statistic));

  CHECK_THROWS(paired_t_test({1.0}, {2.0}));
  CHECK_THROWS(paired_t_test({1.0, 2.0}, {1.0}));
}

TEST_CASE("wilcoxon: five positive distinct differences give p = 0.0625") {
  std::vector<double> a = {1, 2, 3, 4, 5}, b = {0.5, 1, 2, 3, 4};
  TestResult r = wilcoxon_signed_rank(a, b);
  CHECK(r.statistic == 15.0);
  CHECK(r.p_value == doctest::Approx(2.0 / 32.0).epsilon(1e-14));
  CHECK(r.exact);
}

TEST_CASE("wilcoxon symmetry and degenerate input") {
  std::vector<double> a = {1.0, 3.0, 2.0, 5.0}, b = {2.0, 1.0, 2.5, 4.0};
  TestResult ab = wilcoxon_signed_rank(a, b), ba = wilcoxon_signed_rank(b, a);
  CHECK(ab.p_value == doctest::Approx(ba.p_value).epsilon(1e-14));
  CHECK(ab.statistic + ba.statistic == doctest::Approx(4.0 * 5.0 / 2.0).epsilon(1e-14));

  TestResult same = wilcoxon_signed_rank(a, a);
  CHECK(same.degenerate);
  CHECK(same.p_value == 1.0);
  CHECK_THROWS(wilcoxon_signed_rank({1.0}, {1.0, 2.0}));
}

TEST_CASE("wilcoxon exact p matches the enumeration oracle, ties and zeros included") {
  std::mt19937_64 rng(7);
  for (int trial = 0; trial < 25; ++trial) {
    std::size_t n = 3 + rng() % 8;  // m <= 10 after zero-dropping
    std::vector<double> a(n), b(n);
    for (std::size_t i = 0; i < n; ++i) {
      a[i] = double(rng() % 6);
      b[i] = double(rng() % 6);
    }
    TestResult r = wilcoxon_signed_rank(a, b);
    if (r.degenerate) {
      CHECK(r.p_value == 1.0);
      continue;
    }
    CHECK(r.exact);
    CHECK(r.p_value == doctest::Approx(oracle::wilcoxon_exact_p(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("wilcoxon switches to the normal approximation beyond the exact limit") {
  std::mt19937_64 rng(9);
  std::normal_distribution<double> noise(0.0, 1.0);
  std::vector<double> a(15), b(15);
  for (std::size_t i = 0; i < 15; ++i) {
    b[i] = noise(rng);
    a[i] = b[i] + 0.4 + noise(rng);
  }
  TestResult exact = wilcoxon_signed_rank(a, b, 20);
  TestResult approx = wilcoxon_signed_rank(a, b, 5);
  CHECK(exact.exact);
  CHECK_FALSE(approx.exact);
  CHECK(approx.statistic == exact.statistic);
  CHECK(approx.p_value > 0.0);
  CHECK(approx.p_value <= 1.0);
  CHECK(std::abs(approx.p_value - exact.p_value) < 0.05);
}

TEST_CASE("rank_values hand cases") {
  CHECK(rank_values({3.0, 1.0, 2.0}, TaskDirection::higher_better) ==
        std::vector<double>{1.0, 3.0, 2.0});
  CHECK(rank_values({3.0, 1.0, 2.0}, TaskDirection::lower_better) ==
        std::vector<double>{3.0, 1.0, 2.0});
  CHECK(rank_values({5.0, 5.0, 1.0}, TaskDirection::higher_better) ==
        std::vector<double>{1.5, 1.5, 3.0});
}

namespace {

RunTable two_model_table() {
  RunTable t;
  t.models = {"ours", "baseline"};
  t.tasks = {"acc", "err"};
  t.values["ours"]["acc"] = {0.9, 0.92};
  t.values["ours"]["err"] = {0.1};
  t.values["baseline"]["acc"] = {0.8, 0.82};
  t.values["baseline"]["err"] = {0.3};
  return t;
}

}  // namespace

TEST_CASE("mean rank: single model is rank 1 everywhere") {
  RunTable t;
  t.models = {"only"};
  t.tasks = {"a", "b"};
  t.values["only"]["a"] = {1.0};
  t.values["only"]["b"] = {2.0};
  MeanRankResult r = mean_rank(t, {{"a", TaskDirection::higher_better},
                                   {"b", TaskDirection::lower_better}});
  CHECK(r.mean_rank.at("only") == 1.0);
}

TEST_CASE("mean rank respects per-task directions") {
  MeanRankResult r =
      mean_rank(two_model_table(), {{"acc", TaskDirection::higher_better},
                                    {"err", TaskDirection::lower_better}});
  CHECK(r.rank.at("ours").at("acc") == 1.0);
  CHECK(r.rank.at("ours").at("err") == 1.0);  // lower error ranks first
  CHECK(r.mean_rank.at("ours") == 1.0);
  CHECK(r.mean_rank.at("baseline") == 2.0);

  // flipping the error direction splits the ranks
  r = mean_rank(two_model_table(), {{"acc", TaskDirection::higher_better},
                                    {"err", TaskDirection::higher_better}});
  CHECK(r.mean_rank.at("ours") == 1.5);
  CHECK(r.mean_rank.at("baseline") == 1.5);
}

TEST_CASE("mean rank: exact cell-mean ties share the average rank") {
  RunTable t = two_model_table();
  t.values["baseline"]["acc"] = {0.92, 0.9};  // same mean as ours
  MeanRankResult r = mean_rank(t, {{"acc", TaskDirection::higher_better},
                                   {"err", TaskDirection::lower_better}});
  CHECK(r.rank.at("ours").at("acc") == 1.5);
  CHECK(r.rank.at("baseline").at("acc") == 1.5);
}

TEST_CASE("mean rank errors") {
  RunTable t = two_model_table();
  CHECK_THROWS_WITH_AS(mean_rank(t, {{"acc", TaskDirection::higher_better}}),
                       doctest::Contains("err"), std::invalid_argument);
  t.values["baseline"].erase("err");
  CHECK_THROWS_WITH_AS(mean_rank(t, {{"acc", TaskDirection::higher_better},
                                     {"err", TaskDirection::lower_better}}),
                       doctest::Contains("baseline"), std::invalid_argument);
  CHECK_THROWS(mean_rank(RunTable{}, {}));
}

TEST_CASE("run table CSV round-trip") {
  RunTable t = two_model_table();
  std::string path = "/tmp/zen_test_runs.csv";
  t.to_csv(path);
  RunTable r = RunTable::from_csv(path);
  CHECK(r.models == t.models);
  CHECK(r.tasks == t.tasks);
  CHECK(r.values == t.values);
  std::remove(path.c_str());

  std::ofstream bad(path);
  bad << "wrong,header\n";
  bad.close();
  CHECK_THROWS(RunTable::from_csv(path));
  std::remove(path.c_str());
}
