// TCP transport for the federation protocol: one persistent connection per
// client, frames as defined in wire.hpp. The server drives the round loop;
// clients register with a round-0 message and then answer one local epoch per
// round.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedage/federation.hpp"

namespace fedage::fed {

struct TcpOptions {
  std::string host = "127.0.0.1";
  int port = 0;  // 0 picks an ephemeral port
  int timeout_seconds = 60;
};

class TcpServerTransport : public Transport {
 public:
  // Binds and listens immediately; `expected` lists the roster client ids.
  TcpServerTransport(std::vector<int> expected, const TcpOptions& opts);
  ~TcpServerTransport() override;

  TcpServerTransport(const TcpServerTransport&) = delete;
  TcpServerTransport& operator=(const TcpServerTransport&) = delete;

  int port() const { return port_; }

  // Blocks until every roster client has registered.
  void wait_for_clients();

  std::vector<ClientUpdate> run_round(int round,
                                      const model::ModelParams& global) override;

  // n_samples reported at registration, by client id.
  const std::map<int, long>& registered_samples() const { return samples_; }

 private:
  std::vector<int> expected_;
  TcpOptions opts_;
  int listen_fd_ = -1;
  int port_ = 0;
  std::map<int, int> sockets_;  // client id -> fd
  std::map<int, long> samples_;

  void close_all();
};

// Client half: registers, serves `rounds` rounds of local training, returns
// after the last response is written. Retries the initial connect for a few
// seconds so client processes may start before the server.
void run_federation_client(const ClientSite& client,
                           const model::TrainConfig& cfg, ModelKind kind,
                           const model::FeedforwardSpec& ff, int rounds,
                           const std::string& host, int port,
                           int timeout_seconds = 60);

}  // namespace fedage::fed
