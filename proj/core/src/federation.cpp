#include "fedage/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <future>
#include <set>

#include "fedage/error.hpp"

namespace fedage::fed {

void FederationPlan::validate(bool require_local_data) const {
  if (clients.empty()) throw ConfigError("federation plan has no clients");
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (local_epochs_per_round != 1)
    throw ConfigError("protocol fixes local_epochs_per_round at 1");
  train_cfg.schedule.validate();
  if (train_cfg.schedule.horizon < rounds)
    throw ConfigError("schedule horizon shorter than round budget");
  if (train_cfg.optimizer != model::Optimizer::sgd)
    throw ConfigError(
        "federated training uses plain SGD; optimizer state is not part of "
        "the weight exchange");

  std::set<int> ids;
  int dim = feature_dim;
  for (const auto& c : clients) {
    if (!ids.insert(c.client_id).second)
      throw ConfigError("duplicate client id " + std::to_string(c.client_id));
    if (c.local_data.size() > 0) {
      if (c.declared_samples != 0 &&
          c.declared_samples != static_cast<long>(c.local_data.size()))
        throw ConfigError("declared sample count disagrees with local data");
      const int d = static_cast<int>(c.local_data.dim());
      if (dim == 0) dim = d;
      if (d != dim) throw ConfigError("clients disagree on feature dimension");
    } else if (require_local_data) {
      throw ConfigError("client " + std::to_string(c.client_id) +
                        " has no local data");
    } else if (c.declared_samples <= 0) {
      throw ConfigError("remote client " + std::to_string(c.client_id) +
                        " needs a declared sample count");
    }
  }
  if (dim == 0) throw ConfigError("feature dimension unknown");
}

int FederationPlan::resolved_feature_dim() const {
  int dim = feature_dim;
  for (const auto& c : clients)
    if (c.local_data.size() > 0) {
      dim = static_cast<int>(c.local_data.dim());
      break;
    }
  if (dim == 0) throw ConfigError("feature dimension unknown");
  return dim;
}

std::vector<int> FederationPlan::roster() const {
  std::vector<int> ids;
  for (const auto& c : clients) ids.push_back(c.client_id);
  std::sort(ids.begin(), ids.end());
  return ids;
}

std::uint64_t params_checksum(const model::ModelParams& params) {
  // FNV-1a over the raw parameter bytes plus the shape list.
  std::uint64_t h = 1469598103934665603ULL;
  auto feed = [&h](const void* data, std::size_t size) {
    const auto* bytes = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < size; ++i) {
      h ^= bytes[i];
      h *= 1099511628211ULL;
    }
  };
  for (double w : params.weights) feed(&w, sizeof(w));
  feed(&params.intercept, sizeof(params.intercept));
  for (const auto& [in, out] : params.layer_shapes) {
    feed(&in, sizeof(in));
    feed(&out, sizeof(out));
  }
  return h;
}

model::ModelParams local_epoch(const ClientSite& client,
                               const model::ModelParams& global, int round,
                               const model::TrainConfig& cfg, ModelKind kind,
                               const model::FeedforwardSpec& ff) {
  if (client.local_data.size() == 0)
    throw InsufficientDataError("client " + std::to_string(client.client_id) +
                                " has no local data");
  if (kind == ModelKind::linear &&
      global.weights.size() != client.local_data.dim())
    throw ShapeError("global parameter length " +
                     std::to_string(global.weights.size()) +
                     " != client feature dimension " +
                     std::to_string(client.local_data.dim()));

  const double lr = model::schedule_value(cfg.schedule, round);
  model::TrainConfig local_cfg = cfg;
  local_cfg.seed = client.local_seed;

  model::ModelParams params = global;
  if (kind == ModelKind::linear)
    model::linear_epoch_inplace(params, client.local_data, lr, local_cfg,
                                static_cast<std::uint64_t>(round));
  else
    model::feedforward_epoch_inplace(params, client.local_data, lr, local_cfg,
                                     ff, static_cast<std::uint64_t>(round),
                                     nullptr);
  if (!params.all_finite())
    throw DivergenceError("client " + std::to_string(client.client_id) +
                          " diverged in round " + std::to_string(round));
  return params;
}

namespace {

// Pairwise (tree) reduction over [lo, hi) of term(i).
template <class Term>
double pairwise_sum(std::size_t lo, std::size_t hi, const Term& term) {
  if (hi - lo == 1) return term(lo);
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term);
}

}  // namespace

model::ModelParams aggregate_fedavg(const std::vector<ClientUpdate>& updates) {
  if (updates.empty())
    throw ProtocolError(ProtocolError::Kind::handshake,
                        "aggregate called with no client updates");
  for (const auto& u : updates) {
    if (u.n_samples <= 0)
      throw ConfigError("client " + std::to_string(u.client_id) +
                        " reports non-positive sample count");
    if (u.params.weights.size() != updates.front().params.weights.size() ||
        u.params.layer_shapes != updates.front().params.layer_shapes)
      throw ShapeError("client updates disagree on parameter shape");
  }

  std::vector<std::size_t> order(updates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return updates[a].client_id < updates[b].client_id;
  });

  // A single client is its own weighted mean, bit for bit, and so is any
  // set of bitwise-identical updates.
  if (updates.size() == 1) return updates.front().params;
  if (std::all_of(updates.begin(), updates.end(), [&](const ClientUpdate& u) {
        return u.params == updates.front().params;
      }))
    return updates.front().params;

  const std::size_t m = updates.size();
  const double total = pairwise_sum(0, m, [&](std::size_t i) {
    return static_cast<double>(updates[order[i]].n_samples);
  });

  model::ModelParams out;
  out.layer_shapes = updates.front().params.layer_shapes;
  out.weights.resize(updates.front().params.weights.size());
  for (std::size_t j = 0; j < out.weights.size(); ++j)
    out.weights[j] = pairwise_sum(0, m, [&](std::size_t i) {
      const auto& u = updates[order[i]];
      return static_cast<double>(u.n_samples) * u.params.weights[j];
    }) / total;
  out.intercept = pairwise_sum(0, m, [&](std::size_t i) {
    const auto& u = updates[order[i]];
    return static_cast<double>(u.n_samples) * u.params.intercept;
  }) / total;
  return out;
}

model::ModelParams initial_global_params(const FederationPlan& plan) {
  const int dim = plan.resolved_feature_dim();
  if (plan.model_kind == ModelKind::feedforward)
    return model::feedforward_init(dim, plan.feedforward,
                                   plan.train_cfg.intercept_init,
                                   mix_seed(plan.train_cfg.seed, 0x1417ULL));
  model::ModelParams p;
  p.weights.assign(static_cast<std::size_t>(dim), 0.0);
  p.intercept = plan.train_cfg.intercept_init;
  return p;
}

InProcessTransport::InProcessTransport(const FederationPlan& plan)
    : plan_(plan) {
  plan_.validate(/*require_local_data=*/true);
}

std::vector<ClientUpdate> InProcessTransport::run_round(
    int round, const model::ModelParams& global) {
  std::vector<std::future<ClientUpdate>> futures;
  futures.reserve(plan_.clients.size());
  for (const auto& client : plan_.clients)
    futures.push_back(std::async(std::launch::async, [&client, round, this,
                                                      &global] {
      ClientUpdate u;
      u.client_id = client.client_id;
      u.n_samples = client.sample_count();
      u.params = local_epoch(client, global, round, plan_.train_cfg,
                             plan_.model_kind, plan_.feedforward);
      return u;
    }));
  std::vector<ClientUpdate> updates;
  updates.reserve(futures.size());
  for (auto& f : futures) updates.push_back(f.get());
  return updates;
}

FederationResult run_federation(const FederationPlan& plan,
                                Transport& transport) {
  plan.validate(/*require_local_data=*/false);
  const auto roster = plan.roster();

  FederationResult result;
  result.params = initial_global_params(plan);
  result.history.reserve(plan.rounds);

  for (int round = 1; round <= plan.rounds; ++round) {
    auto updates = transport.run_round(round, result.params);

    std::sort(updates.begin(), updates.end(),
              [](const ClientUpdate& a, const ClientUpdate& b) {
                return a.client_id < b.client_id;
              });
    std::vector<int> seen;
    for (const auto& u : updates) seen.push_back(u.client_id);
    if (seen != roster)
      throw ProtocolError(ProtocolError::Kind::handshake,
                          "round " + std::to_string(round) +
                              ": updates do not match the client roster");

    RoundRecord record;
    record.round_index = round;
    for (const auto& u : updates) {
      double norm2 = 0.0;
      for (std::size_t j = 0; j < u.params.weights.size(); ++j) {
        const double d = u.params.weights[j] - result.params.weights[j];
        norm2 += d * d;
      }
      const double di = u.params.intercept - result.params.intercept;
      norm2 += di * di;
      record.clients.push_back(
          {u.client_id, u.n_samples, std::sqrt(norm2)});
    }
    result.params = aggregate_fedavg(updates);
    record.aggregate_checksum = params_checksum(result.params);
    result.history.push_back(std::move(record));
  }
  return result;
}

FederationResult run_federation(const FederationPlan& plan) {
  InProcessTransport transport(plan);
  return run_federation(plan, transport);
}

}  // namespace fedage::fed
