#include "fedage/stats.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "fedage/error.hpp"

namespace fedage::stats {

double normal_cdf(double z) { return 0.5 * std::erfc(-z / std::sqrt(2.0)); }
double normal_sf(double z) { return 0.5 * std::erfc(z / std::sqrt(2.0)); }

namespace {

// Lower regularized incomplete gamma by power series; valid for x < a + 1.
double gamma_p_series(double a, double x) {
  double term = 1.0 / a;
  double sum = term;
  double ap = a;
  for (int i = 0; i < 10000; ++i) {
    ap += 1.0;
    term *= x / ap;
    sum += term;
    if (std::fabs(term) < std::fabs(sum) * 1e-16)
      return sum * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  throw Error("incomplete gamma series failed to converge");
}

// Upper regularized incomplete gamma by modified Lentz continued fraction;
// valid for x >= a + 1.
double gamma_q_contfrac(double a, double x) {
  const double tiny = 1e-300;
  double b = x + 1.0 - a;
  double c = 1.0 / tiny;
  double d = 1.0 / b;
  double h = d;
  for (int i = 1; i <= 10000; ++i) {
    const double an = -static_cast<double>(i) * (static_cast<double>(i) - a);
    b += 2.0;
    d = an * d + b;
    if (std::fabs(d) < tiny) d = tiny;
    c = b + an / c;
    if (std::fabs(c) < tiny) c = tiny;
    d = 1.0 / d;
    const double delta = d * c;
    h *= delta;
    if (std::fabs(delta - 1.0) < 1e-16)
      return h * std::exp(-x + a * std::log(x) - std::lgamma(a));
  }
  throw Error("incomplete gamma continued fraction failed to converge");
}

}  // namespace

double gamma_p(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error("gamma_p domain error");
  if (x == 0.0) return 0.0;
  if (x < a + 1.0) return gamma_p_series(a, x);
  return 1.0 - gamma_q_contfrac(a, x);
}

double gamma_q(double a, double x) {
  if (!(a > 0.0) || x < 0.0) throw Error("gamma_q domain error");
  if (x == 0.0) return 1.0;
  if (x < a + 1.0) return 1.0 - gamma_p_series(a, x);
  return gamma_q_contfrac(a, x);
}

double chi2_sf(double x, double df) {
  if (x <= 0.0) return 1.0;
  return gamma_q(df / 2.0, x / 2.0);
}

double chi2_cdf(double x, double df) {
  if (x <= 0.0) return 0.0;
  return gamma_p(df / 2.0, x / 2.0);
}

namespace {

// Average ranks (1-based) plus the tie-group sizes of the input.
std::pair<std::vector<double>, std::vector<std::size_t>> average_ranks(
    std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });

  std::vector<double> ranks(n);
  std::vector<std::size_t> tie_sizes;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[order[j + 1]] == values[order[i]]) ++j;
    const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = avg;
    tie_sizes.push_back(j - i + 1);
    i = j + 1;
  }
  return {std::move(ranks), std::move(tie_sizes)};
}

double tie_sum_cubed(const std::vector<std::size_t>& tie_sizes) {
  double s = 0.0;
  for (std::size_t t : tie_sizes) {
    const double td = static_cast<double>(t);
    s += td * td * td - td;
  }
  return s;
}

double two_sided_from_cdf(double cdf_at, double sf_at) {
  return std::min(1.0, 2.0 * std::min(cdf_at, sf_at));
}

}  // namespace

StatResult wilcoxon_signed_rank(std::span<const double> paired_diffs) {
  std::vector<double> diffs;
  for (double d : paired_diffs) {
    if (!std::isfinite(d)) throw Error("non-finite difference");
    if (d != 0.0) diffs.push_back(d);
  }
  const std::size_t n = diffs.size();
  if (n == 0)
    throw DegenerateTestError("all paired differences are zero");

  std::vector<double> abs(n);
  for (std::size_t i = 0; i < n; ++i) abs[i] = std::fabs(diffs[i]);
  auto [ranks, tie_sizes] = average_ranks(abs);

  double w_plus = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    if (diffs[i] > 0.0) w_plus += ranks[i];

  StatResult res;
  res.method = Method::wilcoxon_signed_rank;
  res.statistic = w_plus;
  res.n = {n};

  if (n <= 25) {
    // Exact sign-pattern distribution. Doubled ranks are integers even with
    // ties, so the 2^n patterns collapse into a small table of doubled-W+
    // sums; counts stay exactly representable (2^25 < 2^53).
    std::vector<long> r2(n);
    long total2 = 0;
    for (std::size_t i = 0; i < n; ++i) {
      r2[i] = std::lround(2.0 * ranks[i]);
      total2 += r2[i];
    }
    std::vector<double> count(static_cast<std::size_t>(total2) + 1, 0.0);
    count[0] = 1.0;
    long reach = 0;
    for (std::size_t i = 0; i < n; ++i) {
      reach += r2[i];
      for (long s = reach; s >= r2[i]; --s)
        count[static_cast<std::size_t>(s)] +=
            count[static_cast<std::size_t>(s - r2[i])];
    }
    const double denom = std::ldexp(1.0, static_cast<int>(n));  // 2^n
    const long w2 = std::lround(2.0 * w_plus);
    double cdf = 0.0, sf = 0.0;
    for (long s = 0; s <= total2; ++s) {
      const double c = count[static_cast<std::size_t>(s)];
      if (s <= w2) cdf += c;
      if (s >= w2) sf += c;
    }
    res.exact = true;
    res.p_value = two_sided_from_cdf(cdf / denom, sf / denom);
    return res;
  }

  const double nd = static_cast<double>(n);
  const double mu = nd * (nd + 1.0) / 4.0;
  double sigma2 =
      nd * (nd + 1.0) * (2.0 * nd + 1.0) / 24.0 - tie_sum_cubed(tie_sizes) / 48.0;
  if (!(sigma2 > 0.0)) {
    res.p_value = 1.0;
    return res;
  }
  const double d = std::max(0.0, std::fabs(w_plus - mu) - 0.5);
  const double z = d / std::sqrt(sigma2);
  res.p_value = std::min(1.0, 2.0 * normal_sf(z));
  return res;
}

StatResult mann_whitney_u(std::span<const double> group_a,
                          std::span<const double> group_b) {
  const std::size_t na = group_a.size(), nb = group_b.size();
  if (na == 0 || nb == 0)
    throw InsufficientDataError("both groups must be non-empty");

  std::vector<double> pooled(group_a.begin(), group_a.end());
  pooled.insert(pooled.end(), group_b.begin(), group_b.end());
  auto [ranks, tie_sizes] = average_ranks(pooled);
  const bool has_ties = tie_sizes.size() != pooled.size();

  double rank_a = 0.0;
  for (std::size_t i = 0; i < na; ++i) rank_a += ranks[i];
  const double u_a = static_cast<double>(na) * static_cast<double>(nb) +
                     static_cast<double>(na) * (static_cast<double>(na) + 1.0) / 2.0 -
                     rank_a;
  const double u_b = static_cast<double>(na) * static_cast<double>(nb) - u_a;

  StatResult res;
  res.method = Method::mann_whitney_u;
  res.statistic = std::min(u_a, u_b);
  res.n = {na, nb};

  if (std::min(na, nb) <= 8 && !has_ties) {
    // Exact distribution of U_a by the standard interleaving recurrence
    //   count(m, n, u) = count(m, n-1, u) + count(m-1, n, u-n),
    // collapsed over n: dp[m][u] holds count(m, n2, u) after the n2-th pass.
    const std::size_t umax = na * nb;
    std::vector<std::vector<double>> dp(na + 1,
                                        std::vector<double>(umax + 1, 0.0));
    for (std::size_t m = 0; m <= na; ++m) dp[m][0] = 1.0;
    for (std::size_t n2 = 1; n2 <= nb; ++n2)
      for (std::size_t m = 1; m <= na; ++m)
        for (std::size_t u = n2; u <= umax; ++u) dp[m][u] += dp[m - 1][u - n2];

    double cdf = 0.0, sf = 0.0, total = 0.0;
    for (std::size_t u = 0; u <= umax; ++u) {
      const double c = dp[na][u];
      total += c;
      if (static_cast<double>(u) <= u_a + 1e-9) cdf += c;
      if (static_cast<double>(u) >= u_a - 1e-9) sf += c;
    }
    res.exact = true;
    res.p_value = two_sided_from_cdf(cdf / total, sf / total);
    return res;
  }

  const double nad = static_cast<double>(na), nbd = static_cast<double>(nb);
  const double N = nad + nbd;
  const double mu = nad * nbd / 2.0;
  double sigma2 =
      nad * nbd / 12.0 * ((N + 1.0) - tie_sum_cubed(tie_sizes) / (N * (N - 1.0)));
  if (!(sigma2 > 0.0)) {
    res.p_value = 1.0;
    return res;
  }
  const double d = std::max(0.0, std::fabs(u_a - mu) - 0.5);
  const double z = d / std::sqrt(sigma2);
  res.p_value = std::min(1.0, 2.0 * normal_sf(z));
  return res;
}

StatResult kruskal_wallis(std::span<const std::vector<double>> groups) {
  if (groups.size() < 2) throw InsufficientDataError("need >= 2 groups");
  std::vector<double> pooled;
  for (const auto& g : groups) {
    if (g.empty()) throw InsufficientDataError("empty group");
    pooled.insert(pooled.end(), g.begin(), g.end());
  }
  const double N = static_cast<double>(pooled.size());
  auto [ranks, tie_sizes] = average_ranks(pooled);

  double h = 0.0;
  std::size_t offset = 0;
  StatResult res;
  res.method = Method::kruskal_wallis;
  for (const auto& g : groups) {
    double rank_sum = 0.0;
    for (std::size_t i = 0; i < g.size(); ++i) rank_sum += ranks[offset + i];
    offset += g.size();
    h += rank_sum * rank_sum / static_cast<double>(g.size());
    res.n.push_back(g.size());
  }
  h = 12.0 / (N * (N + 1.0)) * h - 3.0 * (N + 1.0);

  const double tie_corr = 1.0 - tie_sum_cubed(tie_sizes) / (N * N * N - N);
  if (tie_corr <= 0.0) {
    // Every pooled value identical.
    res.statistic = 0.0;
    res.p_value = 1.0;
    return res;
  }
  h /= tie_corr;
  if (std::fabs(h) < 1e-12) h = 0.0;
  res.statistic = h;
  res.p_value = chi2_sf(h, static_cast<double>(groups.size()) - 1.0);
  return res;
}

StatResult chi2_yates(const std::array<std::array<double, 2>, 2>& table) {
  for (const auto& row : table)
    for (double c : row)
      if (c < 0.0 || !std::isfinite(c))
        throw DegenerateTestError("negative or non-finite cell count");
  const double row0 = table[0][0] + table[0][1];
  const double row1 = table[1][0] + table[1][1];
  const double col0 = table[0][0] + table[1][0];
  const double col1 = table[0][1] + table[1][1];
  const double total = row0 + row1;
  if (row0 <= 0.0 || row1 <= 0.0 || col0 <= 0.0 || col1 <= 0.0)
    throw DegenerateTestError("zero margin in 2x2 table");

  const double rows[2] = {row0, row1};
  const double cols[2] = {col0, col1};
  double stat = 0.0;
  for (int r = 0; r < 2; ++r)
    for (int c = 0; c < 2; ++c) {
      const double expected = rows[r] * cols[c] / total;
      const double d = std::max(0.0, std::fabs(table[r][c] - expected) - 0.5);
      stat += d * d / expected;
    }

  StatResult res;
  res.method = Method::chi2_yates;
  res.statistic = stat;
  res.p_value = chi2_sf(stat, 1.0);
  res.n = {static_cast<std::size_t>(total)};
  return res;
}

std::string significance_stars(double p) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return "";
}

std::vector<OddsRatioRow> odds_ratio_table(const LogisticFit& fit) {
  if (!fit.converged)
    throw NonConvergenceError("odds ratios requested for unconverged fit");
  std::vector<OddsRatioRow> rows;
  for (std::size_t j = 1; j < fit.coef.size(); ++j) {
    OddsRatioRow row;
    row.name = j < fit.names.size() ? fit.names[j] : "x" + std::to_string(j);
    row.odds_ratio = fit.odds[j];
    row.ci_lo = fit.ci_lo[j];
    row.ci_hi = fit.ci_hi[j];
    row.p = fit.p[j];
    row.stars = significance_stars(fit.p[j]);
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace fedage::stats
