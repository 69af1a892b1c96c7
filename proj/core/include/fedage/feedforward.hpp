// Small fully-connected age regressor with layer normalization after each
// hidden layer. Stands in for the deep model on the nonconvex side of the
// federated-vs-centralized comparison; trained with manual backprop.
#pragma once

#include <span>
#include <vector>

#include "fedage/model.hpp"

namespace fedage::model {

struct FeedforwardSpec {
  std::vector<int> hidden = {64, 32};
  double ln_epsilon = 1e-5;
};

// Parameter layout inside ModelParams::weights, in order:
//   per hidden layer i: W_i (out x in, row-major), b_i (out),
//                       ln_gamma_i (out), ln_beta_i (out)
//   output layer: W_out (1 x last_hidden)
// The output bias is ModelParams::intercept. layer_shapes records the dense
// (in, out) pairs, e.g. {(d,64),(64,32),(32,1)}.
std::vector<std::pair<int, int>> feedforward_shapes(int input_dim,
                                                    const FeedforwardSpec& spec);
std::size_t feedforward_weight_count(
    const std::vector<std::pair<int, int>>& shapes);

// Glorot-uniform dense weights, zero biases, gamma = 1, beta = 0, seeded.
ModelParams feedforward_init(int input_dim, const FeedforwardSpec& spec,
                             double intercept_init, std::uint64_t seed);

double feedforward_forward(const ModelParams& params,
                           std::span<const double> x,
                           const FeedforwardSpec& spec = {});

// Mean over the batch of |pred - y| plus l2 * sum of squared dense weights
// (layer-norm parameters, biases and the intercept are not penalized).
// Gradient is written flat, aligned with ModelParams::weights plus one
// trailing slot for the intercept.
double feedforward_loss_grad(const ModelParams& params,
                             const RegressionData& batch, double l2,
                             const FeedforwardSpec& spec,
                             std::vector<double>& grad);

struct AdamState {
  std::vector<double> m, v;
  long t = 0;
  double beta1 = 0.9, beta2 = 0.999, epsilon = 1e-8;

  void reset(std::size_t n);
};

// One shuffled pass; `adam` may be null for plain SGD (the federated path).
void feedforward_epoch_inplace(ModelParams& params, const RegressionData& train,
                               double lr, const TrainConfig& cfg,
                               const FeedforwardSpec& spec,
                               std::uint64_t epoch_stream, AdamState* adam);

ModelParams fit_feedforward(const RegressionData& train, const TrainConfig& cfg,
                            const FeedforwardSpec& spec = {});

}  // namespace fedage::model
