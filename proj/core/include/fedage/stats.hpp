// Nonparametric tests and logistic regression used by the evaluation
// pipeline: Wilcoxon signed-rank, Mann-Whitney U, Kruskal-Wallis H,
// Yates-corrected chi-squared, and IRLS logistic fits with Wald inference.
#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace fedage::stats {

enum class Method {
  wilcoxon_signed_rank,
  mann_whitney_u,
  kruskal_wallis,
  chi2_yates,
};

struct StatResult {
  Method method{};
  double statistic = 0.0;
  double p_value = 1.0;  // two-tailed
  bool exact = false;    // true when computed by enumeration
  std::vector<std::size_t> n;  // sample sizes (after zero-removal for Wilcoxon)
};

// --- distribution helpers -------------------------------------------------

double normal_cdf(double z);
double normal_sf(double z);

// Regularized incomplete gamma functions P(a, x) and Q(a, x) = 1 - P(a, x),
// series/continued-fraction evaluation, relative accuracy ~1e-14.
double gamma_p(double a, double x);
double gamma_q(double a, double x);

double chi2_sf(double x, double df);
double chi2_cdf(double x, double df);

// --- rank tests ------------------------------------------------------------

// Two-tailed one-sample signed-rank test on paired differences. Zero
// differences are dropped before ranking (reported n excludes them); exact
// sign-pattern distribution for n <= 25, otherwise a tie- and
// continuity-corrected normal approximation. Statistic: W+ (sum of positive
// ranks).
StatResult wilcoxon_signed_rank(std::span<const double> paired_diffs);

// Two-tailed two-sample rank test. Exact rank enumeration when
// min(n_a, n_b) <= 8 and the pooled sample is tie-free, otherwise the
// tie-corrected normal approximation with continuity correction. Statistic:
// min(U_a, U_b), average ranks for ties.
StatResult mann_whitney_u(std::span<const double> group_a,
                          std::span<const double> group_b);

// Tie-corrected H statistic, p from chi-squared with (groups - 1) df.
StatResult kruskal_wallis(std::span<const std::vector<double>> groups);

// 2x2 table with Yates continuity correction; counts[r][c], both margins
// must be positive.
StatResult chi2_yates(const std::array<std::array<double, 2>, 2>& table);

// --- logistic regression ---------------------------------------------------

struct LogisticFit {
  std::vector<std::string> names;  // per design column
  std::vector<double> coef;
  std::vector<double> se;
  std::vector<double> z;
  std::vector<double> p;       // two-tailed Wald
  std::vector<double> odds;    // exp(coef)
  std::vector<double> ci_lo;   // exp(coef - 1.96 se)
  std::vector<double> ci_hi;   // exp(coef + 1.96 se)
  std::vector<double> column_scale;  // divisor applied when standardized
  bool standardized = false;
  bool converged = false;
  bool separation_warning = false;
  int iterations = 0;
  double log_likelihood = 0.0;
  std::vector<double> ll_trace;  // per accepted IRLS step
  std::size_t n = 0;
};

struct LogisticOptions {
  int max_iterations = 100;
  double tolerance = 1e-8;   // on |delta log-likelihood|
  double ridge = 1e-8;       // jitter added to the information matrix
  // Scale continuous predictors (3+ distinct values) to unit variance;
  // binary columns and the intercept are left as-is.
  bool standardize = false;
  std::vector<std::string> names;  // optional column labels
};

// Maximum-likelihood fit by iteratively reweighted least squares with
// step-halving, so the log-likelihood is non-decreasing across iterations.
// `design` rows must include the intercept column; outcomes are 0/1.
LogisticFit logistic_fit(const std::vector<std::vector<double>>& design,
                         const std::vector<int>& outcomes,
                         const LogisticOptions& opts = {});

struct OddsRatioRow {
  std::string name;
  double odds_ratio = 1.0;
  double ci_lo = 1.0;
  double ci_hi = 1.0;
  double p = 1.0;
  std::string stars;  // "", "*", "**", "***" at p < .05/.01/.001
};

// Per-predictor report rows (the intercept column is skipped).
std::vector<OddsRatioRow> odds_ratio_table(const LogisticFit& fit);

std::string significance_stars(double p);

}  // namespace fedage::stats
