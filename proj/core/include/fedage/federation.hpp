// FedAvg orchestration: server round loop, client local training, and
// sample-weighted aggregation over a pluggable transport. All clients
// participate in every round and train for exactly one local epoch, with the
// server driving the protocol.
#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "fedage/feedforward.hpp"
#include "fedage/model.hpp"

namespace fedage::fed {

enum class ModelKind { linear, feedforward };

enum class InterceptInitSource { center1_mean };

struct ClientSite {
  int client_id = 0;
  model::RegressionData local_data;
  std::uint64_t local_seed = 0;
  // Roster entries on a TCP server have no local data; the declared count is
  // cross-checked against what the client registers.
  long declared_samples = 0;

  long sample_count() const {
    return local_data.size() ? static_cast<long>(local_data.size())
                             : declared_samples;
  }
};

struct FederationPlan {
  std::vector<ClientSite> clients;
  int rounds = 1;
  int local_epochs_per_round = 1;  // protocol constant
  model::TrainConfig train_cfg;
  ModelKind model_kind = ModelKind::linear;
  model::FeedforwardSpec feedforward;
  int feature_dim = 0;  // inferred from client data when present
  InterceptInitSource intercept_init_source = InterceptInitSource::center1_mean;

  void validate(bool require_local_data) const;
  int resolved_feature_dim() const;
  std::vector<int> roster() const;  // client ids, ascending
};

struct ClientUpdate {
  int client_id = 0;
  long n_samples = 0;
  model::ModelParams params;
};

struct RoundRecord {
  struct ClientEntry {
    int client_id = 0;
    long n_samples = 0;
    double update_norm = 0.0;  // ||theta_k - global||_2, intercept included
  };
  int round_index = 0;
  std::vector<ClientEntry> clients;  // ascending client id
  std::uint64_t aggregate_checksum = 0;
};

std::uint64_t params_checksum(const model::ModelParams& params);

// One local epoch from the received global parameters, at the round's
// scheduled learning rate, shuffled by (client seed, round).
model::ModelParams local_epoch(const ClientSite& client,
                               const model::ModelParams& global, int round,
                               const model::TrainConfig& cfg,
                               ModelKind kind = ModelKind::linear,
                               const model::FeedforwardSpec& ff = {});

// Sample-weighted parameter mean, sum(n_k theta_k) / sum(n_k), accumulated
// pairwise in ascending client-id order so the result is independent of the
// order updates arrive in.
model::ModelParams aggregate_fedavg(const std::vector<ClientUpdate>& updates);

// Fresh global parameters for round 1 of a plan (zero weights for the linear
// model, seeded Glorot for the feedforward one; intercept from the config).
model::ModelParams initial_global_params(const FederationPlan& plan);

class Transport {
 public:
  virtual ~Transport() = default;
  // Broadcast `global` for `round` and return one update per client.
  virtual std::vector<ClientUpdate> run_round(
      int round, const model::ModelParams& global) = 0;
};

// Clients run directly in this process, one task per client per round.
class InProcessTransport : public Transport {
 public:
  explicit InProcessTransport(const FederationPlan& plan);
  std::vector<ClientUpdate> run_round(int round,
                                      const model::ModelParams& global) override;

 private:
  const FederationPlan& plan_;
};

struct FederationResult {
  model::ModelParams params;
  std::vector<RoundRecord> history;
};

FederationResult run_federation(const FederationPlan& plan,
                                Transport& transport);
// Convenience overload using the in-process transport.
FederationResult run_federation(const FederationPlan& plan);

}  // namespace fedage::fed
