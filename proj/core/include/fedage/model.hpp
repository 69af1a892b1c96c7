// Regression models, learning-rate schedules and the L2 tuning protocol
// shared by the centralized, federated and single-site training paths.
#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "fedage/rng.hpp"

namespace fedage::model {

struct FeatureVector {
  std::vector<double> values;
  std::vector<std::string> names;  // optional; empty when only values matter

  std::size_t size() const { return values.size(); }
};

// Flat parameter container shared by the linear and feedforward regressors.
// Linear models: `weights` has one entry per feature. Feedforward models:
// `weights` holds every tensor flattened in layer order (see feedforward.hpp
// for the exact layout) and `layer_shapes` lists the dense (in, out) pairs;
// the output-layer bias lives in `intercept` for both model kinds.
struct ModelParams {
  std::vector<double> weights;
  double intercept = 0.0;
  std::vector<std::pair<int, int>> layer_shapes;

  bool is_feedforward() const { return !layer_shapes.empty(); }
  bool all_finite() const;
  bool operator==(const ModelParams&) const = default;
};

enum class ScheduleKind { inverse_scaling, linear_decay, constant };

struct LrSchedule {
  ScheduleKind kind = ScheduleKind::constant;
  double eta0 = 0.0;
  double eta_end = 0.0;  // linear_decay only
  double power = 0.25;   // inverse_scaling only
  int horizon = 1;       // total steps (epochs or rounds)

  void validate() const;  // throws ConfigError

  static LrSchedule inverse_scaling(double eta0, double power, int horizon);
  static LrSchedule linear_decay(double eta0, double eta_end, int horizon);
  static LrSchedule constant(double eta0, int horizon);
};

// Value of the schedule at `step` (1-based, step <= horizon).
double schedule_value(const LrSchedule& sched, int step);

enum class Optimizer { sgd, adam };

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 8;
  double l2_penalty = 0.0;
  LrSchedule schedule;
  Optimizer optimizer = Optimizer::sgd;
  std::uint64_t seed = 0;
  double intercept_init = 0.0;  // years
};

// Row-major training set; rows aligned with targets.
struct RegressionData {
  std::vector<std::vector<double>> x;
  std::vector<double> y;

  std::size_t size() const { return y.size(); }
  std::size_t dim() const { return x.empty() ? 0 : x.front().size(); }
};

// Degree-2 polynomial feature expansion: the original features, then every
// product x_i*x_j for i <= j in lexicographic (i, j) order. Output length is
// d(d+3)/2. Only degree 2 is supported; anything else throws.
FeatureVector expand_polynomial(const FeatureVector& features, int degree);
std::vector<double> expand_polynomial_values(std::span<const double> values,
                                             int degree);
std::size_t expanded_size(std::size_t d);

// Linear prediction or feedforward forward pass, chosen by params shape.
double predict(const ModelParams& params, std::span<const double> features);

// Minibatch SGD on mean(|pred - y|) + l2 * ||w||^2, `epochs` seeded-shuffle
// passes, intercept initialized to cfg.intercept_init and excluded from the
// penalty. Bit-reproducible for fixed (data order, seed).
ModelParams fit_linear_sgd(const RegressionData& train, const TrainConfig& cfg);

// One shuffled pass over `train` at a fixed learning rate, starting from
// `params`. `epoch_stream` selects the shuffle order (fit_linear_sgd passes
// the epoch index; federated clients pass the round index).
void linear_epoch_inplace(ModelParams& params, const RegressionData& train,
                          double lr, const TrainConfig& cfg,
                          std::uint64_t epoch_stream);

double mean_absolute_error(const ModelParams& params,
                           const RegressionData& data);

// k-fold cross-validated L2 selection: returns the grid value with the lowest
// mean held-out MAE, ties broken toward the larger penalty.
double tune_l2_cv(const RegressionData& train, const std::vector<double>& grid,
                  int k, const TrainConfig& base_cfg);

}  // namespace fedage::model
