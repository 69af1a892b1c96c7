#include <algorithm>
#include <array>
#include <cmath>
#include <numeric>
#include <vector>

#include <doctest.h>

#include "fedage/error.hpp"
#include "fedage/rng.hpp"
#include "fedage/stats.hpp"

using namespace fedage;
using namespace fedage::stats;

namespace {

// Brute-force oracle: enumerate all 2^n sign patterns of the ranked |d| and
// accumulate the two-sided tail mass at the observed W+.
double wilcoxon_enumeration_oracle(const std::vector<double>& diffs) {
  std::vector<double> abs_vals;
  std::vector<int> signs;
  for (double d : diffs)
    if (d != 0.0) {
      abs_vals.push_back(std::fabs(d));
      signs.push_back(d > 0.0 ? 1 : -1);
    }
  const std::size_t n = abs_vals.size();
  // average ranks
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return abs_vals[a] < abs_vals[b];
  });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && abs_vals[order[j + 1]] == abs_vals[order[i]]) ++j;
    for (std::size_t k = i; k <= j; ++k)
      ranks[order[k]] = 0.5 * static_cast<double>(i + j) + 1.0;
    i = j + 1;
  }
  double w_obs = 0.0;
  for (std::size_t k = 0; k < n; ++k)
    if (signs[k] > 0) w_obs += ranks[k];

  std::size_t le = 0, ge = 0;
  const std::size_t patterns = std::size_t{1} << n;
  for (std::size_t mask = 0; mask < patterns; ++mask) {
    double w = 0.0;
    for (std::size_t k = 0; k < n; ++k)
      if (mask & (std::size_t{1} << k)) w += ranks[k];
    if (w <= w_obs + 1e-12) ++le;
    if (w >= w_obs - 1e-12) ++ge;
  }
  const double denom = static_cast<double>(patterns);
  return std::min(1.0, 2.0 * std::min(le / denom, ge / denom));
}

// Brute-force oracle over all C(na+nb, na) group assignments of the pooled
// sample (tie-free inputs only).
double mwu_enumeration_oracle(const std::vector<double>& a,
                              const std::vector<double>& b) {
  const std::size_t na = a.size(), nb = b.size(), n = na + nb;
  std::vector<double> pooled(a);
  pooled.insert(pooled.end(), b.begin(), b.end());
  std::sort(pooled.begin(), pooled.end());

  auto u_of = [&](const std::vector<double>& grp_a) {
    double rank_sum = 0.0;
    for (double v : grp_a) {
      const auto it = std::lower_bound(pooled.begin(), pooled.end(), v);
      rank_sum += static_cast<double>(it - pooled.begin()) + 1.0;
    }
    const double ua = static_cast<double>(na * nb) +
                      static_cast<double>(na * (na + 1)) / 2.0 - rank_sum;
    return std::min(ua, static_cast<double>(na * nb) - ua);
  };
  const double u_obs = u_of(a);

  std::size_t count_le = 0, total = 0;
  std::vector<std::size_t> comb(na);
  std::iota(comb.begin(), comb.end(), std::size_t{0});
  while (true) {
    std::vector<double> grp;
    for (std::size_t idx : comb) grp.push_back(pooled[idx]);
    if (u_of(grp) <= u_obs + 1e-12) ++count_le;
    ++total;
    // next combination
    std::size_t k = na;
    while (k > 0 && comb[k - 1] == n - na + k - 1) --k;
    if (k == 0) break;
    ++comb[k - 1];
    for (std::size_t j = k; j < na; ++j) comb[j] = comb[j - 1] + 1;
  }
  return std::min(1.0, static_cast<double>(count_le) /
                            static_cast<double>(total));
}

// One-sample Kolmogorov-Smirnov test against U(0,1); asymptotic p.
double ks_uniform_pvalue(std::vector<double> p_values) {
  std::sort(p_values.begin(), p_values.end());
  const double n = static_cast<double>(p_values.size());
  double d = 0.0;
  for (std::size_t i = 0; i < p_values.size(); ++i) {
    const double cdf = p_values[i];
    d = std::max(d, std::fabs((i + 1) / n - cdf));
    d = std::max(d, std::fabs(cdf - i / n));
  }
  const double lambda = (std::sqrt(n) + 0.12 + 0.11 / std::sqrt(n)) * d;
  double sum = 0.0;
  for (int k = 1; k <= 100; ++k)
    sum += 2.0 * std::pow(-1.0, k - 1) * std::exp(-2.0 * k * k * lambda * lambda);
  return std::clamp(sum, 0.0, 1.0);
}

}  // namespace

TEST_CASE("chi-squared survival function against frozen references") {
  // Reference values computed with 40-digit arithmetic (regularized upper
  // incomplete gamma).
  const struct {
    double x, df, sf;
  } cases[] = {
      {0.5, 1.0, 0.479500122186953462},
      {3.84, 1.0, 0.0500435212487051032},
      {6.634896601021214, 1.0, 0.0100000000000000087},
      {10.0, 5.0, 0.0752352461465121787},
      {0.5, 2.0, 0.778800783071404868},
      {25.0, 15.0, 0.0499434336264283667},
      {3.831932773109244, 1.0, 0.0502849160604943202},
      {100.0, 3.0, 1.55415943138960492e-21},
      {0.001, 1.0, 0.974772879369960388},
      {14.3, 15.0, 0.502908916671940598},
  };
  for (const auto& c : cases) {
    const double got = chi2_sf(c.x, c.df);
    CHECK(std::fabs(got - c.sf) / c.sf < 1e-10);
    CHECK(chi2_cdf(c.x, c.df) == doctest::Approx(1.0 - c.sf).epsilon(1e-12));
  }
}

TEST_CASE("normal tail values") {
  CHECK(normal_sf(0.0) == 0.5);
  CHECK(normal_sf(1.0) == doctest::Approx(0.158655253931457051).epsilon(1e-14));
  CHECK(normal_cdf(-2.5) ==
        doctest::Approx(1.0 - 0.993790334674223865).epsilon(1e-12));
}

TEST_CASE("Wilcoxon exact p for uniformly signed differences") {
  const std::vector<double> diffs = {1.0, 2.0, 3.0, 4.0, 5.0};
  CHECK(wilcoxon_enumeration_oracle(diffs) == doctest::Approx(0.0625));
  const auto res = wilcoxon_signed_rank(diffs);
  CHECK(res.exact);
  CHECK(res.p_value == doctest::Approx(0.0625).epsilon(1e-12));
  CHECK(res.statistic == 15.0);
  CHECK(res.n == std::vector<std::size_t>{5});
}

TEST_CASE("Wilcoxon implementation matches the enumeration oracle") {
  Rng rng(17);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<double> diffs;
    const int n = 3 + static_cast<int>(rng.below(10));
    for (int i = 0; i < n; ++i) diffs.push_back(rng.normal());
    const auto res = wilcoxon_signed_rank(diffs);
    CHECK(res.p_value ==
          doctest::Approx(wilcoxon_enumeration_oracle(diffs)).epsilon(1e-12));
  }
}

TEST_CASE("Wilcoxon symmetric pair and degenerate input") {
  const auto res = wilcoxon_signed_rank(std::vector<double>{1.0, -1.0});
  CHECK(res.p_value == 1.0);

  CHECK_THROWS_AS(wilcoxon_signed_rank(std::vector<double>{0.0, 0.0}),
                  DegenerateTestError);
}

TEST_CASE("Wilcoxon drops zero differences before ranking") {
  const auto res =
      wilcoxon_signed_rank(std::vector<double>{0.0, 1.0, 2.0, 0.0, 3.0});
  CHECK(res.n == std::vector<std::size_t>{3});
  CHECK(res.p_value == doctest::Approx(0.25).epsilon(1e-12));  // 2/2^3
}

TEST_CASE("Wilcoxon null p-values are uniform (Monte-Carlo calibration)") {
  std::vector<double> ps;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    Rng rng(mix_seed(900, seed));
    std::vector<double> diffs;
    for (int i = 0; i < 100; ++i) diffs.push_back(rng.normal());
    ps.push_back(wilcoxon_signed_rank(diffs).p_value);
  }
  CHECK(ks_uniform_pvalue(ps) > 0.01);
}

TEST_CASE("Mann-Whitney exact p for {1,2} vs {3,4}") {
  const std::vector<double> a = {1.0, 2.0}, b = {3.0, 4.0};
  CHECK(mwu_enumeration_oracle(a, b) == doctest::Approx(1.0 / 3.0));
  const auto res = mann_whitney_u(a, b);
  CHECK(res.exact);
  CHECK(res.statistic == 0.0);
  CHECK(res.p_value == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("Mann-Whitney implementation matches the enumeration oracle") {
  Rng rng(23);
  for (int trial = 0; trial < 15; ++trial) {
    std::vector<double> a, b;
    const int na = 2 + static_cast<int>(rng.below(4));
    const int nb = 2 + static_cast<int>(rng.below(6));
    for (int i = 0; i < na; ++i) a.push_back(rng.normal());
    for (int i = 0; i < nb; ++i) b.push_back(rng.normal(0.5, 1.0));
    const auto res = mann_whitney_u(a, b);
    CHECK(res.exact);
    CHECK(res.p_value ==
          doctest::Approx(mwu_enumeration_oracle(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("Mann-Whitney on identical multisets") {
  const std::vector<double> a = {1.0, 2.0, 2.0, 3.0};
  CHECK(mann_whitney_u(a, a).p_value == 1.0);
}

TEST_CASE("Mann-Whitney detects a planted one-sd shift") {
  int significant = 0;
  for (std::uint64_t seed = 1; seed <= 100; ++seed) {
    Rng rng(mix_seed(41, seed));
    std::vector<double> a, b;
    for (int i = 0; i < 200; ++i) {
      a.push_back(rng.normal());
      b.push_back(rng.normal(1.0, 1.0));
    }
    if (mann_whitney_u(a, b).p_value < 0.001) ++significant;
  }
  CHECK(significant >= 95);
}

TEST_CASE("Mann-Whitney is invariant under strictly monotone transforms") {
  Rng rng(5);
  std::vector<double> a, b;
  for (int i = 0; i < 30; ++i) a.push_back(rng.normal(0.0, 2.0));
  for (int i = 0; i < 25; ++i) b.push_back(rng.normal(0.5, 2.0));
  const auto base = mann_whitney_u(a, b);

  auto transform = [](std::vector<double> v) {
    for (double& x : v) x = std::exp(0.3 * x) + 10.0;
    return v;
  };
  const auto mapped = mann_whitney_u(transform(a), transform(b));
  CHECK(mapped.statistic == base.statistic);
  CHECK(mapped.p_value == base.p_value);
}

TEST_CASE("Mann-Whitney exact and normal branches agree at the boundary") {
  // The approximate two-sided p from the same U, sigma without ties.
  auto approx_p = [](std::size_t na, std::size_t nb, double u_a) {
    const double mu = static_cast<double>(na * nb) / 2.0;
    const double sigma =
        std::sqrt(static_cast<double>(na * nb) *
                  static_cast<double>(na + nb + 1) / 12.0);
    const double d = std::max(0.0, std::fabs(u_a - mu) - 0.5);
    return std::min(1.0, 2.0 * normal_sf(d / sigma));
  };
  Rng rng(31);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 8; ++i) a.push_back(rng.normal());
    for (int i = 0; i < 12; ++i) b.push_back(rng.normal(0.3, 1.0));
    const auto res = mann_whitney_u(a, b);
    REQUIRE(res.exact);
    const double u_a =
        res.statistic;  // min(U_a, U_b); approx formula is symmetric in them
    CHECK(std::fabs(res.p_value - approx_p(8, 12, u_a)) < 0.02);
  }
}

TEST_CASE("Kruskal-Wallis on identical groups") {
  const std::vector<std::vector<double>> groups = {
      {5.0, 5.0, 5.0}, {5.0, 5.0}, {5.0, 5.0, 5.0, 5.0}};
  const auto res = kruskal_wallis(groups);
  CHECK(res.statistic == 0.0);
  CHECK(res.p_value == 1.0);
}

TEST_CASE("two-group Kruskal-Wallis agrees with the Mann-Whitney normal "
          "approximation") {
  Rng rng(12);
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<double> a, b;
    for (int i = 0; i < 25; ++i) a.push_back(rng.normal());
    for (int i = 0; i < 30; ++i) b.push_back(rng.normal(0.4, 1.2));
    const auto kw = kruskal_wallis(std::vector<std::vector<double>>{a, b});
    const auto mwu = mann_whitney_u(a, b);
    REQUIRE(!mwu.exact);
    CHECK(std::fabs(kw.p_value - mwu.p_value) < 0.01);
  }
}

TEST_CASE("Kruskal-Wallis null p-values are uniform across 16 groups") {
  std::vector<double> ps;
  for (std::uint64_t seed = 1; seed <= 1000; ++seed) {
    Rng rng(mix_seed(77, seed));
    std::vector<std::vector<double>> groups(16);
    for (auto& g : groups)
      for (int i = 0; i < 20; ++i) g.push_back(rng.normal());
    ps.push_back(kruskal_wallis(groups).p_value);
  }
  CHECK(ks_uniform_pvalue(ps) > 0.01);
}

TEST_CASE("Yates chi-squared pinned values") {
  CHECK(chi2_yates({{{10.0, 10.0}, {10.0, 10.0}}}).statistic == 0.0);
  CHECK(chi2_yates({{{10.0, 10.0}, {10.0, 10.0}}}).p_value == 1.0);

  CHECK(chi2_yates({{{20.0, 0.0}, {0.0, 20.0}}}).p_value < 1e-6);

  // Direct evaluation of the corrected formula: 1368/357.
  const auto res = chi2_yates({{{12.0, 5.0}, {7.0, 14.0}}});
  CHECK(std::fabs(res.statistic - 1368.0 / 357.0) < 1e-9);
  CHECK(res.p_value == doctest::Approx(0.0502849160604943202).epsilon(1e-10));
}

TEST_CASE("Yates chi-squared symmetry and degenerate margins") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const double a = 1.0 + static_cast<double>(rng.below(30));
    const double b = 1.0 + static_cast<double>(rng.below(30));
    const double c = 1.0 + static_cast<double>(rng.below(30));
    const double d = 1.0 + static_cast<double>(rng.below(30));
    const double base = chi2_yates({{{a, b}, {c, d}}}).statistic;
    CHECK(chi2_yates({{{a, c}, {b, d}}}).statistic ==
          doctest::Approx(base).epsilon(1e-12));
    CHECK(chi2_yates({{{c, d}, {a, b}}}).statistic ==
          doctest::Approx(base).epsilon(1e-12));
    CHECK(chi2_yates({{{b, a}, {d, c}}}).statistic ==
          doctest::Approx(base).epsilon(1e-12));
  }
  CHECK_THROWS_AS(chi2_yates({{{0.0, 0.0}, {3.0, 4.0}}}), DegenerateTestError);
}

TEST_CASE("all reported p-values stay in [0,1]") {
  Rng rng(99);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<double> a, b, d;
    const int n = 2 + static_cast<int>(rng.below(40));
    for (int i = 0; i < n; ++i) {
      a.push_back(rng.normal());
      b.push_back(rng.normal());
      d.push_back(rng.normal());
    }
    for (double p : {mann_whitney_u(a, b).p_value,
                     wilcoxon_signed_rank(d).p_value,
                     kruskal_wallis(std::vector<std::vector<double>>{a, b})
                         .p_value}) {
      CHECK(p >= 0.0);
      CHECK(p <= 1.0);
    }
  }
}
