// Maximum-likelihood logistic regression via iteratively reweighted least
// squares (Newton steps with step-halving), Wald inference from the inverse
// observed information.
#include <algorithm>
#include <cmath>
#include <limits>
#include <set>

#include "fedage/error.hpp"
#include "fedage/stats.hpp"

namespace fedage::stats {

namespace {

using Matrix = std::vector<std::vector<double>>;

// Cholesky factorization of a symmetric positive-definite matrix (in place,
// lower triangle); throws on non-PD input.
void cholesky(Matrix& a) {
  const std::size_t p = a.size();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t j = 0; j <= i; ++j) {
      double sum = a[i][j];
      for (std::size_t k = 0; k < j; ++k) sum -= a[i][k] * a[j][k];
      if (i == j) {
        if (!(sum > 0.0))
          throw DegenerateFitError("information matrix not positive definite");
        a[i][i] = std::sqrt(sum);
      } else {
        a[i][j] = sum / a[j][j];
      }
    }
  }
}

std::vector<double> cholesky_solve(const Matrix& chol,
                                   std::vector<double> rhs) {
  const std::size_t p = chol.size();
  for (std::size_t i = 0; i < p; ++i) {
    for (std::size_t k = 0; k < i; ++k) rhs[i] -= chol[i][k] * rhs[k];
    rhs[i] /= chol[i][i];
  }
  for (std::size_t i = p; i-- > 0;) {
    for (std::size_t k = i + 1; k < p; ++k) rhs[i] -= chol[k][i] * rhs[k];
    rhs[i] /= chol[i][i];
  }
  return rhs;
}

Matrix cholesky_inverse(const Matrix& chol) {
  const std::size_t p = chol.size();
  Matrix inv(p, std::vector<double>(p, 0.0));
  for (std::size_t col = 0; col < p; ++col) {
    std::vector<double> e(p, 0.0);
    e[col] = 1.0;
    const auto x = cholesky_solve(chol, std::move(e));
    for (std::size_t row = 0; row < p; ++row) inv[row][col] = x[row];
  }
  return inv;
}

double log_likelihood(const Matrix& x, const std::vector<int>& y,
                      const std::vector<double>& beta) {
  double ll = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    double eta = 0.0;
    for (std::size_t j = 0; j < beta.size(); ++j) eta += x[i][j] * beta[j];
    // y*eta - log(1 + exp(eta)), evaluated stably on both signs of eta.
    const double log1pexp =
        eta > 0.0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
    ll += y[i] * eta - log1pexp;
  }
  return ll;
}

}  // namespace

LogisticFit logistic_fit(const Matrix& design, const std::vector<int>& outcomes,
                         const LogisticOptions& opts) {
  const std::size_t n = design.size();
  if (n == 0 || outcomes.size() != n)
    throw ShapeError("design/outcome size mismatch");
  const std::size_t p = design.front().size();
  for (const auto& row : design)
    if (row.size() != p) throw ShapeError("ragged design matrix");
  if (n <= p)
    throw InsufficientDataError("need more observations than predictors");
  {
    const int first = outcomes.front();
    bool varies = false;
    for (int v : outcomes) {
      if (v != 0 && v != 1) throw ConfigError("outcomes must be 0/1");
      varies = varies || v != first;
    }
    if (!varies) throw DegenerateFitError("outcomes are all equal");
  }

  LogisticFit fit;
  fit.n = n;
  fit.names = opts.names;
  fit.standardized = opts.standardize;
  fit.column_scale.assign(p, 1.0);

  Matrix x = design;
  if (opts.standardize) {
    for (std::size_t j = 0; j < p; ++j) {
      std::set<double> distinct;
      for (std::size_t i = 0; i < n && distinct.size() <= 3; ++i)
        distinct.insert(x[i][j]);
      if (distinct.size() <= 2) continue;  // intercept or binary column
      double mean = 0.0;
      for (std::size_t i = 0; i < n; ++i) mean += x[i][j];
      mean /= static_cast<double>(n);
      double var = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        var += (x[i][j] - mean) * (x[i][j] - mean);
      var /= static_cast<double>(n - 1);
      if (!(var > 0.0)) continue;
      const double sd = std::sqrt(var);
      fit.column_scale[j] = sd;
      for (std::size_t i = 0; i < n; ++i) x[i][j] /= sd;
    }
  }

  std::vector<double> beta(p, 0.0);
  double ll = log_likelihood(x, outcomes, beta);
  fit.ll_trace.push_back(ll);

  bool converged = false;
  int iter = 0;
  for (; iter < opts.max_iterations; ++iter) {
    // Score and observed information at the current beta.
    std::vector<double> score(p, 0.0);
    Matrix info(p, std::vector<double>(p, 0.0));
    for (std::size_t i = 0; i < n; ++i) {
      double eta = 0.0;
      for (std::size_t j = 0; j < p; ++j) eta += x[i][j] * beta[j];
      const double mu = 1.0 / (1.0 + std::exp(-eta));
      const double w = mu * (1.0 - mu);
      const double resid = outcomes[i] - mu;
      for (std::size_t j = 0; j < p; ++j) {
        score[j] += resid * x[i][j];
        for (std::size_t k = 0; k <= j; ++k)
          info[j][k] += w * x[i][j] * x[i][k];
      }
    }
    for (std::size_t j = 0; j < p; ++j) {
      for (std::size_t k = j + 1; k < p; ++k) info[j][k] = info[k][j];
      info[j][j] += opts.ridge;
    }

    Matrix chol = info;
    cholesky(chol);
    const auto delta = cholesky_solve(chol, score);

    // Step-halving keeps the log-likelihood non-decreasing.
    double step = 1.0;
    std::vector<double> candidate(p);
    double new_ll = -std::numeric_limits<double>::infinity();
    for (int half = 0; half < 30; ++half) {
      for (std::size_t j = 0; j < p; ++j)
        candidate[j] = beta[j] + step * delta[j];
      new_ll = log_likelihood(x, outcomes, candidate);
      if (new_ll >= ll - 1e-12) break;
      step *= 0.5;
    }
    const double improvement = new_ll - ll;
    beta = candidate;
    ll = new_ll;
    fit.ll_trace.push_back(ll);
    if (std::fabs(improvement) < opts.tolerance) {
      converged = true;
      ++iter;
      break;
    }
  }
  if (!converged)
    throw NonConvergenceError(
        "logistic IRLS did not converge in " +
        std::to_string(opts.max_iterations) +
        " iterations (log-likelihood " + std::to_string(ll) + ")");

  // Coefficients of magnitude > 15 with a still-improving likelihood are the
  // classic signature of (quasi-)separation.
  for (double b : beta)
    if (std::fabs(b) > 15.0) fit.separation_warning = true;

  // Wald inference from the final information matrix.
  Matrix info(p, std::vector<double>(p, 0.0));
  for (std::size_t i = 0; i < n; ++i) {
    double eta = 0.0;
    for (std::size_t j = 0; j < p; ++j) eta += x[i][j] * beta[j];
    const double mu = 1.0 / (1.0 + std::exp(-eta));
    const double w = mu * (1.0 - mu);
    for (std::size_t j = 0; j < p; ++j)
      for (std::size_t k = 0; k <= j; ++k) info[j][k] += w * x[i][j] * x[i][k];
  }
  for (std::size_t j = 0; j < p; ++j) {
    for (std::size_t k = j + 1; k < p; ++k) info[j][k] = info[k][j];
    info[j][j] += opts.ridge;
  }
  cholesky(info);
  const Matrix cov = cholesky_inverse(info);

  fit.converged = true;
  fit.iterations = iter;
  fit.log_likelihood = ll;
  fit.coef = beta;
  fit.se.resize(p);
  fit.z.resize(p);
  fit.p.resize(p);
  fit.odds.resize(p);
  fit.ci_lo.resize(p);
  fit.ci_hi.resize(p);
  for (std::size_t j = 0; j < p; ++j) {
    fit.se[j] = std::sqrt(cov[j][j]);
    fit.z[j] = fit.se[j] > 0.0 ? beta[j] / fit.se[j] : 0.0;
    fit.p[j] = std::min(1.0, 2.0 * normal_sf(std::fabs(fit.z[j])));
    fit.odds[j] = std::exp(beta[j]);
    fit.ci_lo[j] = std::exp(beta[j] - 1.96 * fit.se[j]);
    fit.ci_hi[j] = std::exp(beta[j] + 1.96 * fit.se[j]);
  }
  return fit;
}

}  // namespace fedage::stats
