#include "fedage/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedage/error.hpp"
#include "fedage/feedforward.hpp"

namespace fedage::model {

bool ModelParams::all_finite() const {
  if (!std::isfinite(intercept)) return false;
  return std::all_of(weights.begin(), weights.end(),
                     [](double w) { return std::isfinite(w); });
}

void LrSchedule::validate() const {
  if (!(eta0 > 0.0)) throw ConfigError("schedule eta0 must be > 0");
  if (horizon < 1) throw ConfigError("schedule horizon must be >= 1");
  switch (kind) {
    case ScheduleKind::inverse_scaling:
      if (!(power > 0.0)) throw ConfigError("inverse_scaling power must be > 0");
      break;
    case ScheduleKind::linear_decay:
      if (eta_end < 0.0) throw ConfigError("linear_decay eta_end must be >= 0");
      if (eta_end > eta0)
        throw ConfigError("linear_decay requires eta_end <= eta0");
      break;
    case ScheduleKind::constant:
      break;
  }
}

LrSchedule LrSchedule::inverse_scaling(double eta0, double power, int horizon) {
  LrSchedule s{ScheduleKind::inverse_scaling, eta0, 0.0, power, horizon};
  s.validate();
  return s;
}

LrSchedule LrSchedule::linear_decay(double eta0, double eta_end, int horizon) {
  LrSchedule s{ScheduleKind::linear_decay, eta0, eta_end, 0.25, horizon};
  s.validate();
  return s;
}

LrSchedule LrSchedule::constant(double eta0, int horizon) {
  LrSchedule s{ScheduleKind::constant, eta0, 0.0, 0.25, horizon};
  s.validate();
  return s;
}

double schedule_value(const LrSchedule& sched, int step) {
  sched.validate();
  if (step < 1 || step > sched.horizon)
    throw BoundsError("schedule step " + std::to_string(step) +
                      " outside [1, " + std::to_string(sched.horizon) + "]");
  switch (sched.kind) {
    case ScheduleKind::inverse_scaling:
      return sched.eta0 / std::pow(static_cast<double>(step), sched.power);
    case ScheduleKind::linear_decay:
      if (sched.horizon == 1) return sched.eta0;
      return sched.eta0 + (sched.eta_end - sched.eta0) *
                              (static_cast<double>(step - 1) /
                               static_cast<double>(sched.horizon - 1));
    case ScheduleKind::constant:
      return sched.eta0;
  }
  throw ConfigError("unknown schedule kind");
}

std::size_t expanded_size(std::size_t d) { return d * (d + 3) / 2; }

std::vector<double> expand_polynomial_values(std::span<const double> values,
                                             int degree) {
  if (degree != 2)
    throw ConfigError("polynomial expansion supports degree 2 only, got " +
                      std::to_string(degree));
  const std::size_t d = values.size();
  std::vector<double> out;
  out.reserve(expanded_size(d));
  out.assign(values.begin(), values.end());
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i; j < d; ++j) out.push_back(values[i] * values[j]);
  return out;
}

FeatureVector expand_polynomial(const FeatureVector& features, int degree) {
  FeatureVector out;
  out.values = expand_polynomial_values(features.values, degree);
  if (!features.names.empty()) {
    const auto& n = features.names;
    out.names.reserve(out.values.size());
    out.names.assign(n.begin(), n.end());
    for (std::size_t i = 0; i < n.size(); ++i)
      for (std::size_t j = i; j < n.size(); ++j)
        out.names.push_back(i == j ? n[i] + "^2" : n[i] + "*" + n[j]);
  }
  return out;
}

double predict(const ModelParams& params, std::span<const double> features) {
  if (params.is_feedforward()) return feedforward_forward(params, features);
  if (features.size() != params.weights.size())
    throw ShapeError("feature length " + std::to_string(features.size()) +
                     " != weight length " +
                     std::to_string(params.weights.size()));
  double acc = 0.0;
  for (std::size_t i = 0; i < features.size(); ++i)
    acc += params.weights[i] * features[i];
  return acc + params.intercept;
}

namespace {

// Subgradient factor of |r|; zero residual contributes nothing.
inline double mae_sign(double r) {
  return (r > 0.0) ? 1.0 : (r < 0.0 ? -1.0 : 0.0);
}

void validate_train_inputs(const RegressionData& train, const TrainConfig& cfg,
                           bool require_positive_ages) {
  if (train.size() == 0) throw InsufficientDataError("empty training set");
  if (require_positive_ages)
    for (double y : train.y)
      if (!(y > 0.0)) throw ConfigError("non-positive target age");
  for (const auto& row : train.x)
    if (row.size() != train.dim())
      throw ShapeError("ragged training matrix");
  if (cfg.epochs < 1) throw ConfigError("epochs must be >= 1");
  if (cfg.batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (cfg.l2_penalty < 0.0) throw ConfigError("l2_penalty must be >= 0");
  if (cfg.schedule.horizon < cfg.epochs)
    throw ConfigError("schedule horizon shorter than epoch budget");
}

std::vector<std::size_t> shuffled_order(std::size_t n, std::uint64_t seed,
                                        std::uint64_t epoch_stream) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(seed, epoch_stream));
  rng.shuffle(order);
  return order;
}

}  // namespace

void linear_epoch_inplace(ModelParams& params, const RegressionData& train,
                          double lr, const TrainConfig& cfg,
                          std::uint64_t epoch_stream) {
  const std::size_t n = train.size();
  const std::size_t d = train.dim();
  if (params.weights.size() != d)
    throw ShapeError("weight length " + std::to_string(params.weights.size()) +
                     " != feature dimension " + std::to_string(d));
  // Oversized batches saturate to one full-batch step per epoch.
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);

  const auto order = shuffled_order(n, cfg.seed, epoch_stream);
  std::vector<double> grad(d);

  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t stop = std::min(start + batch, n);
    const double inv = 1.0 / static_cast<double>(stop - start);
    std::fill(grad.begin(), grad.end(), 0.0);
    double grad_b = 0.0;
    for (std::size_t k = start; k < stop; ++k) {
      const auto& x = train.x[order[k]];
      double pred = params.intercept;
      for (std::size_t j = 0; j < d; ++j) pred += params.weights[j] * x[j];
      const double r = pred - train.y[order[k]];
      if (!std::isfinite(r))
        throw DivergenceError("non-finite loss at epoch step " +
                              std::to_string(epoch_stream) + ", batch offset " +
                              std::to_string(start));
      const double s = mae_sign(r);
      grad_b += s;
      if (s != 0.0)
        for (std::size_t j = 0; j < d; ++j) grad[j] += s * x[j];
    }
    const double l2 = 2.0 * cfg.l2_penalty;
    for (std::size_t j = 0; j < d; ++j)
      params.weights[j] -= lr * (grad[j] * inv + l2 * params.weights[j]);
    params.intercept -= lr * grad_b * inv;
  }
}

ModelParams fit_linear_sgd(const RegressionData& train, const TrainConfig& cfg) {
  validate_train_inputs(train, cfg, /*require_positive_ages=*/true);
  cfg.schedule.validate();

  ModelParams params;
  params.weights.assign(train.dim(), 0.0);
  params.intercept = cfg.intercept_init;

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = schedule_value(cfg.schedule, epoch);
    linear_epoch_inplace(params, train, lr, cfg,
                         static_cast<std::uint64_t>(epoch));
    if (!params.all_finite())
      throw DivergenceError("non-finite parameters after epoch " +
                            std::to_string(epoch));
  }
  return params;
}

double mean_absolute_error(const ModelParams& params,
                           const RegressionData& data) {
  if (data.size() == 0) throw InsufficientDataError("empty evaluation set");
  double acc = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i)
    acc += std::fabs(predict(params, data.x[i]) - data.y[i]);
  return acc / static_cast<double>(data.size());
}

double tune_l2_cv(const RegressionData& train, const std::vector<double>& grid,
                  int k, const TrainConfig& base_cfg) {
  if (grid.empty()) throw ConfigError("empty L2 grid");
  if (k < 2) throw ConfigError("cross-validation requires k >= 2");
  const std::size_t n = train.size();
  if (n < static_cast<std::size_t>(k))
    throw InsufficientDataError("training set smaller than fold count");

  // One shared fold split so every grid value sees the same partition.
  auto order = shuffled_order(n, base_cfg.seed, 0xF01D5ULL);
  std::vector<int> fold_of(n);
  for (std::size_t i = 0; i < n; ++i)
    fold_of[order[i]] = static_cast<int>(i % static_cast<std::size_t>(k));

  double best_lambda = 0.0;
  double best_mae = 0.0;
  bool first = true;
  for (double lambda : grid) {
    double mae = 0.0;
    try {
      for (int fold = 0; fold < k; ++fold) {
        RegressionData fit_part, held_out;
        for (std::size_t i = 0; i < n; ++i) {
          auto& dst = (fold_of[i] == fold) ? held_out : fit_part;
          dst.x.push_back(train.x[i]);
          dst.y.push_back(train.y[i]);
        }
        TrainConfig cfg = base_cfg;
        cfg.l2_penalty = lambda;
        mae += mean_absolute_error(fit_linear_sgd(fit_part, cfg), held_out) / k;
      }
    } catch (const DivergenceError&) {
      // A penalty that blows up at this step size cannot win the grid.
      continue;
    }
    if (first || mae < best_mae || (mae == best_mae && lambda > best_lambda)) {
      best_mae = mae;
      best_lambda = lambda;
      first = false;
    }
  }
  if (first) throw DivergenceError("every grid penalty diverged");
  return best_lambda;
}

}  // namespace fedage::model
