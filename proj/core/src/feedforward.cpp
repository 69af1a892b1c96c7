#include "fedage/feedforward.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "fedage/error.hpp"

namespace fedage::model {

namespace {

struct LayerView {
  // Offsets into the flat weight vector.
  std::size_t w = 0, b = 0, gamma = 0, beta = 0;
  int in = 0, out = 0;
};

struct Layout {
  std::vector<LayerView> hidden;
  std::size_t w_out = 0;  // offset of the 1 x last_hidden output row
  int last_hidden = 0;
  std::size_t total = 0;
};

Layout make_layout(const std::vector<std::pair<int, int>>& shapes) {
  if (shapes.size() < 2) throw ShapeError("feedforward needs >= 1 hidden layer");
  Layout lay;
  std::size_t off = 0;
  for (std::size_t i = 0; i + 1 < shapes.size(); ++i) {
    const auto [in, out] = shapes[i];
    LayerView v;
    v.in = in;
    v.out = out;
    v.w = off;
    off += static_cast<std::size_t>(in) * out;
    v.b = off;
    off += out;
    v.gamma = off;
    off += out;
    v.beta = off;
    off += out;
    lay.hidden.push_back(v);
  }
  const auto [in, out] = shapes.back();
  if (out != 1) throw ShapeError("output layer must have a single unit");
  lay.w_out = off;
  lay.last_hidden = in;
  off += static_cast<std::size_t>(in);
  lay.total = off;
  return lay;
}

// Per-layer activations cached for backprop.
struct LayerCache {
  std::vector<double> input;    // activation entering the dense layer
  std::vector<double> xhat;     // normalized pre-activation
  std::vector<double> ln_out;   // gamma * xhat + beta (pre-relu)
  double inv_std = 0.0;
};

double forward_sample(const ModelParams& p, const Layout& lay,
                      std::span<const double> x, double ln_eps,
                      std::vector<LayerCache>* caches) {
  std::vector<double> act(x.begin(), x.end());
  for (std::size_t li = 0; li < lay.hidden.size(); ++li) {
    const auto& L = lay.hidden[li];
    if (act.size() != static_cast<std::size_t>(L.in))
      throw ShapeError("feedforward input dimension mismatch");
    std::vector<double> z(L.out);
    for (int o = 0; o < L.out; ++o) {
      double acc = p.weights[L.b + o];
      const double* w = &p.weights[L.w + static_cast<std::size_t>(o) * L.in];
      for (int i = 0; i < L.in; ++i) acc += w[i] * act[i];
      z[o] = acc;
    }
    double mu = std::accumulate(z.begin(), z.end(), 0.0) / L.out;
    double var = 0.0;
    for (double v : z) var += (v - mu) * (v - mu);
    var /= L.out;
    const double inv_std = 1.0 / std::sqrt(var + ln_eps);

    LayerCache cache;
    cache.inv_std = inv_std;
    cache.input = act;
    cache.xhat.resize(L.out);
    cache.ln_out.resize(L.out);
    std::vector<double> next(L.out);
    for (int o = 0; o < L.out; ++o) {
      const double xh = (z[o] - mu) * inv_std;
      const double h = p.weights[L.gamma + o] * xh + p.weights[L.beta + o];
      cache.xhat[o] = xh;
      cache.ln_out[o] = h;
      next[o] = h > 0.0 ? h : 0.0;
    }
    if (caches) (*caches)[li] = std::move(cache);
    act = std::move(next);
  }
  double out = p.intercept;
  for (int i = 0; i < lay.last_hidden; ++i)
    out += p.weights[lay.w_out + i] * act[i];
  if (caches) {
    LayerCache top;
    top.input = act;  // activation entering the output row
    (*caches)[lay.hidden.size()] = std::move(top);
  }
  return out;
}

}  // namespace

std::vector<std::pair<int, int>> feedforward_shapes(int input_dim,
                                                    const FeedforwardSpec& spec) {
  if (input_dim < 1) throw ShapeError("input dimension must be >= 1");
  if (spec.hidden.empty()) throw ShapeError("at least one hidden layer required");
  std::vector<std::pair<int, int>> shapes;
  int in = input_dim;
  for (int h : spec.hidden) {
    if (h < 2) throw ShapeError("hidden width must be >= 2 for layer norm");
    shapes.emplace_back(in, h);
    in = h;
  }
  shapes.emplace_back(in, 1);
  return shapes;
}

std::size_t feedforward_weight_count(
    const std::vector<std::pair<int, int>>& shapes) {
  return make_layout(shapes).total;
}

ModelParams feedforward_init(int input_dim, const FeedforwardSpec& spec,
                             double intercept_init, std::uint64_t seed) {
  ModelParams p;
  p.layer_shapes = feedforward_shapes(input_dim, spec);
  const Layout lay = make_layout(p.layer_shapes);
  p.weights.assign(lay.total, 0.0);
  p.intercept = intercept_init;

  Rng rng(seed);
  for (const auto& L : lay.hidden) {
    const double s = std::sqrt(6.0 / (L.in + L.out));
    for (std::size_t k = 0; k < static_cast<std::size_t>(L.in) * L.out; ++k)
      p.weights[L.w + k] = rng.uniform(-s, s);
    for (int o = 0; o < L.out; ++o) p.weights[L.gamma + o] = 1.0;
  }
  const double s = std::sqrt(6.0 / (lay.last_hidden + 1));
  for (int i = 0; i < lay.last_hidden; ++i)
    p.weights[lay.w_out + i] = rng.uniform(-s, s);
  return p;
}

double feedforward_forward(const ModelParams& params, std::span<const double> x,
                           const FeedforwardSpec& spec) {
  const Layout lay = make_layout(params.layer_shapes);
  if (params.weights.size() != lay.total)
    throw ShapeError("flat weight vector does not match layer shapes");
  return forward_sample(params, lay, x, spec.ln_epsilon, nullptr);
}

double feedforward_loss_grad(const ModelParams& params,
                             const RegressionData& batch, double l2,
                             const FeedforwardSpec& spec,
                             std::vector<double>& grad) {
  const Layout lay = make_layout(params.layer_shapes);
  if (params.weights.size() != lay.total)
    throw ShapeError("flat weight vector does not match layer shapes");
  if (batch.size() == 0) throw InsufficientDataError("empty batch");

  grad.assign(lay.total + 1, 0.0);  // trailing slot: intercept
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  double loss = 0.0;

  std::vector<LayerCache> caches(lay.hidden.size() + 1);
  for (std::size_t s = 0; s < batch.size(); ++s) {
    const double out =
        forward_sample(params, lay, batch.x[s], spec.ln_epsilon, &caches);
    const double r = out - batch.y[s];
    if (!std::isfinite(r)) throw DivergenceError("non-finite feedforward loss");
    loss += std::fabs(r) * inv_n;
    const double dout = ((r > 0.0) ? 1.0 : (r < 0.0 ? -1.0 : 0.0)) * inv_n;
    if (dout == 0.0) continue;

    grad[lay.total] += dout;
    const auto& top_in = caches[lay.hidden.size()].input;
    std::vector<double> dact(lay.last_hidden);
    for (int i = 0; i < lay.last_hidden; ++i) {
      grad[lay.w_out + i] += dout * top_in[i];
      dact[i] = dout * params.weights[lay.w_out + i];
    }

    for (std::size_t li = lay.hidden.size(); li-- > 0;) {
      const auto& L = lay.hidden[li];
      const auto& c = caches[li];
      // relu, then layer norm, then the dense layer.
      std::vector<double> dxhat(L.out);
      double dxhat_mean = 0.0, dxhat_xhat_mean = 0.0;
      for (int o = 0; o < L.out; ++o) {
        const double dh = c.ln_out[o] > 0.0 ? dact[o] : 0.0;
        grad[L.gamma + o] += dh * c.xhat[o];
        grad[L.beta + o] += dh;
        dxhat[o] = dh * params.weights[L.gamma + o];
        dxhat_mean += dxhat[o];
        dxhat_xhat_mean += dxhat[o] * c.xhat[o];
      }
      dxhat_mean /= L.out;
      dxhat_xhat_mean /= L.out;

      std::vector<double> dprev(L.in, 0.0);
      for (int o = 0; o < L.out; ++o) {
        const double dz =
            c.inv_std * (dxhat[o] - dxhat_mean - c.xhat[o] * dxhat_xhat_mean);
        grad[L.b + o] += dz;
        const std::size_t row = L.w + static_cast<std::size_t>(o) * L.in;
        for (int i = 0; i < L.in; ++i) {
          grad[row + i] += dz * c.input[i];
          dprev[i] += dz * params.weights[row + i];
        }
      }
      dact = std::move(dprev);
    }
  }

  if (l2 > 0.0) {
    for (const auto& L : lay.hidden) {
      const std::size_t count = static_cast<std::size_t>(L.in) * L.out;
      for (std::size_t k = 0; k < count; ++k) {
        loss += l2 * params.weights[L.w + k] * params.weights[L.w + k];
        grad[L.w + k] += 2.0 * l2 * params.weights[L.w + k];
      }
    }
    for (int i = 0; i < lay.last_hidden; ++i) {
      loss += l2 * params.weights[lay.w_out + i] * params.weights[lay.w_out + i];
      grad[lay.w_out + i] += 2.0 * l2 * params.weights[lay.w_out + i];
    }
  }
  return loss;
}

void AdamState::reset(std::size_t n) {
  m.assign(n, 0.0);
  v.assign(n, 0.0);
  t = 0;
}

void feedforward_epoch_inplace(ModelParams& params, const RegressionData& train,
                               double lr, const TrainConfig& cfg,
                               const FeedforwardSpec& spec,
                               std::uint64_t epoch_stream, AdamState* adam) {
  const std::size_t n = train.size();
  const std::size_t batch = std::min<std::size_t>(cfg.batch_size, n);
  const std::size_t nparams = params.weights.size() + 1;
  if (adam && adam->m.size() != nparams) adam->reset(nparams);

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  Rng rng(mix_seed(cfg.seed, epoch_stream));
  rng.shuffle(order);

  std::vector<double> grad;
  RegressionData minibatch;
  for (std::size_t start = 0; start < n; start += batch) {
    const std::size_t stop = std::min(start + batch, n);
    minibatch.x.clear();
    minibatch.y.clear();
    for (std::size_t k = start; k < stop; ++k) {
      minibatch.x.push_back(train.x[order[k]]);
      minibatch.y.push_back(train.y[order[k]]);
    }
    feedforward_loss_grad(params, minibatch, cfg.l2_penalty, spec, grad);

    auto apply = [&](std::size_t i, double g) {
      double step;
      if (adam) {
        adam->m[i] = adam->beta1 * adam->m[i] + (1.0 - adam->beta1) * g;
        adam->v[i] = adam->beta2 * adam->v[i] + (1.0 - adam->beta2) * g * g;
        const double mhat = adam->m[i] / (1.0 - std::pow(adam->beta1, adam->t));
        const double vhat = adam->v[i] / (1.0 - std::pow(adam->beta2, adam->t));
        step = lr * mhat / (std::sqrt(vhat) + adam->epsilon);
      } else {
        step = lr * g;
      }
      if (i < params.weights.size())
        params.weights[i] -= step;
      else
        params.intercept -= step;
    };
    if (adam) ++adam->t;
    for (std::size_t i = 0; i < nparams; ++i) apply(i, grad[i]);
  }
}

ModelParams fit_feedforward(const RegressionData& train, const TrainConfig& cfg,
                            const FeedforwardSpec& spec) {
  if (train.size() == 0) throw InsufficientDataError("empty training set");
  cfg.schedule.validate();
  if (cfg.schedule.horizon < cfg.epochs)
    throw ConfigError("schedule horizon shorter than epoch budget");

  ModelParams params =
      feedforward_init(static_cast<int>(train.dim()), spec, cfg.intercept_init,
                       mix_seed(cfg.seed, 0x1417ULL));
  AdamState adam_state;
  AdamState* adam = cfg.optimizer == Optimizer::adam ? &adam_state : nullptr;
  if (adam) adam->reset(params.weights.size() + 1);

  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const double lr = schedule_value(cfg.schedule, epoch);
    feedforward_epoch_inplace(params, train, lr, cfg, spec,
                              static_cast<std::uint64_t>(epoch), adam);
    if (!params.all_finite())
      throw DivergenceError("non-finite parameters after epoch " +
                            std::to_string(epoch));
  }
  return params;
}

}  // namespace fedage::model
