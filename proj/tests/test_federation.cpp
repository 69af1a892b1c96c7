#include <arpa/inet.h>
#include <netinet/in.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <cmath>
#include <optional>
#include <thread>

#include <doctest.h>

#include "fedage/error.hpp"
#include "fedage/federation.hpp"
#include "fedage/rng.hpp"
#include "fedage/tcp.hpp"
#include "fedage/wire.hpp"

using namespace fedage;
using namespace fedage::fed;
using fedage::model::LrSchedule;
using fedage::model::ModelParams;
using fedage::model::RegressionData;
using fedage::model::TrainConfig;

namespace {

RegressionData make_training_data(std::size_t n, std::size_t d, std::uint64_t seed) {
  RegressionData data;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    std::vector<double> row;
    for (std::size_t j = 0; j < d; ++j) row.push_back(rng.normal());
    data.x.push_back(std::move(row));
    data.y.push_back(70.0 + rng.normal(0.0, 8.0));
  }
  return data;
}

TrainConfig sgd_config(int horizon, std::uint64_t seed) {
  TrainConfig cfg;
  cfg.epochs = horizon;
  cfg.batch_size = 8;
  cfg.schedule = LrSchedule::linear_decay(0.1, 0.01, horizon);
  cfg.seed = seed;
  cfg.intercept_init = 70.0;
  return cfg;
}

FederationPlan one_client_plan(const RegressionData& data, int rounds,
                               std::uint64_t seed) {
  FederationPlan plan;
  plan.rounds = rounds;
  plan.train_cfg = sgd_config(rounds, seed);
  ClientSite client;
  client.client_id = 1;
  client.local_data = data;
  client.local_seed = seed;
  plan.clients.push_back(std::move(client));
  return plan;
}

}  // namespace

TEST_CASE("local epoch at a perfect fit is a fixed point") {
  ClientSite client;
  client.client_id = 1;
  client.local_data.x = {{0.0, 0.0}, {0.0, 0.0}};
  client.local_data.y = {70.0, 70.0};
  client.local_seed = 4;

  ModelParams global;
  global.weights = {0.0, 0.0};
  global.intercept = 70.0;
  const auto cfg = sgd_config(10, 4);
  const auto out = local_epoch(client, global, 3, cfg);
  CHECK(out.weights == global.weights);
  CHECK(out.intercept == global.intercept);
}

TEST_CASE("one local epoch equals one epoch of centralized SGD") {
  const auto data = make_training_data(50, 4, 8);
  auto cfg = sgd_config(1, 99);

  ClientSite client;
  client.client_id = 7;
  client.local_data = data;
  client.local_seed = cfg.seed;

  ModelParams global;
  global.weights.assign(4, 0.0);
  global.intercept = cfg.intercept_init;
  auto from_client = local_epoch(client, global, 1, cfg);
  const auto from_fit = model::fit_linear_sgd(data, cfg);
  CHECK(from_client.weights == from_fit.weights);
  CHECK(from_client.intercept == from_fit.intercept);
}

TEST_CASE("zero learning rate leaves parameters untouched") {
  const auto data = make_training_data(30, 3, 5);
  ClientSite client;
  client.client_id = 2;
  client.local_data = data;
  client.local_seed = 1;

  ModelParams global;
  global.weights = {0.5, -0.25, 1.5};
  global.intercept = 64.0;

  TrainConfig cfg = sgd_config(2, 1);
  cfg.schedule = LrSchedule::linear_decay(1.0, 0.0, 2);
  const auto out = local_epoch(client, global, 2, cfg);  // lr = 0 at step 2
  CHECK(out.weights == global.weights);
  CHECK(out.intercept == global.intercept);
}

TEST_CASE("local epoch rejects mismatched dimensions") {
  ClientSite client;
  client.client_id = 1;
  client.local_data.x = {{1.0, 2.0}};
  client.local_data.y = {70.0};
  ModelParams global;
  global.weights = {0.0, 0.0, 0.0};
  CHECK_THROWS_AS(local_epoch(client, global, 1, sgd_config(5, 0)), ShapeError);
}

TEST_CASE("weighted aggregation arithmetic") {
  ClientUpdate a{1, 1, {}};
  a.params.weights = {0.0, 0.0};
  ClientUpdate b{2, 3, {}};
  b.params.weights = {4.0, 4.0};
  const auto mean = aggregate_fedavg({a, b});
  CHECK(mean.weights == std::vector<double>{3.0, 3.0});
}

TEST_CASE("single-client aggregation returns that client's parameters") {
  ClientUpdate u{5, 37, {}};
  u.params.weights = {0.1, -0.7, 3.14159};
  u.params.intercept = 68.25;
  const auto out = aggregate_fedavg({u});
  CHECK(out.weights == u.params.weights);
  CHECK(out.intercept == u.params.intercept);
}

TEST_CASE("aggregating identical updates reproduces them bitwise") {
  // Exactly representable values keep every product and pairwise sum exact.
  Rng rng(6);
  for (int trial = 0; trial < 20; ++trial) {
    ModelParams theta;
    for (int j = 0; j < 5; ++j)
      theta.weights.push_back(
          static_cast<double>(static_cast<int>(rng.below(512)) - 256) / 16.0);
    theta.intercept = static_cast<double>(rng.below(128)) / 4.0;
    std::vector<ClientUpdate> updates;
    const int m = 2 + static_cast<int>(rng.below(15));
    for (int c = 0; c < m; ++c)
      updates.push_back({c + 1, static_cast<long>(1 + rng.below(600)), theta});
    const auto out = aggregate_fedavg(updates);
    CHECK(out.weights == theta.weights);
    CHECK(out.intercept == theta.intercept);
  }
}

TEST_CASE("aggregation ignores the arrival order of updates") {
  Rng rng(13);
  std::vector<ClientUpdate> updates;
  for (int c = 0; c < 9; ++c) {
    ClientUpdate u{c + 1, static_cast<long>(1 + rng.below(500)), {}};
    for (int j = 0; j < 6; ++j) u.params.weights.push_back(rng.normal());
    u.params.intercept = rng.normal(70.0, 3.0);
    updates.push_back(std::move(u));
  }
  const auto base = aggregate_fedavg(updates);
  for (int trial = 0; trial < 10; ++trial) {
    auto shuffled = updates;
    rng.shuffle(shuffled);
    const auto out = aggregate_fedavg(shuffled);
    CHECK(out.weights == base.weights);
    CHECK(out.intercept == base.intercept);
  }
}

TEST_CASE("the weighted mean stays inside the componentwise envelope") {
  Rng rng(29);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<ClientUpdate> updates;
    const int m = 2 + static_cast<int>(rng.below(10));
    for (int c = 0; c < m; ++c) {
      ClientUpdate u{c + 1, static_cast<long>(1 + rng.below(100)), {}};
      for (int j = 0; j < 4; ++j) u.params.weights.push_back(rng.normal());
      updates.push_back(std::move(u));
    }
    const auto mean = aggregate_fedavg(updates);
    for (int j = 0; j < 4; ++j) {
      double lo = 1e300, hi = -1e300;
      for (const auto& u : updates) {
        lo = std::min(lo, u.params.weights[j]);
        hi = std::max(hi, u.params.weights[j]);
      }
      CHECK(mean.weights[j] >= lo - 1e-12);
      CHECK(mean.weights[j] <= hi + 1e-12);
    }
  }
}

TEST_CASE("aggregation input validation") {
  CHECK_THROWS_AS(aggregate_fedavg({}), ProtocolError);
  ClientUpdate bad{1, 0, {}};
  bad.params.weights = {1.0};
  CHECK_THROWS_AS(aggregate_fedavg({bad}), ConfigError);
}

TEST_CASE("a one-client federation equals centralized SGD, bit for bit") {
  const auto data = make_training_data(80, 6, 21);
  const int rounds = 25;
  const auto plan = one_client_plan(data, rounds, 77);
  const auto fed_result = run_federation(plan);
  const auto central = model::fit_linear_sgd(data, sgd_config(rounds, 77));
  CHECK(fed_result.params.weights == central.weights);
  CHECK(fed_result.params.intercept == central.intercept);
  CHECK(fed_result.history.size() == rounds);
}

TEST_CASE("identical clients collapse to the one-client run") {
  const auto data = make_training_data(40, 3, 2);
  const int rounds = 12;

  FederationPlan plan16;
  plan16.rounds = rounds;
  plan16.train_cfg = sgd_config(rounds, 5);
  for (int c = 1; c <= 16; ++c) {
    ClientSite client;
    client.client_id = c;
    client.local_data = data;
    client.local_seed = 5;
    plan16.clients.push_back(std::move(client));
  }
  const auto many = run_federation(plan16);
  const auto one = run_federation(one_client_plan(data, rounds, 5));
  CHECK(many.params.weights == one.params.weights);
  CHECK(many.params.intercept == one.params.intercept);
}

TEST_CASE("federation runs are deterministic despite concurrent clients") {
  FederationPlan plan;
  plan.rounds = 10;
  plan.train_cfg = sgd_config(10, 3);
  for (int c = 1; c <= 8; ++c) {
    ClientSite client;
    client.client_id = c;
    client.local_data = make_training_data(20 + 5 * c, 4, 100 + c);
    client.local_seed = 50 + c;
    plan.clients.push_back(std::move(client));
  }
  const auto a = run_federation(plan);
  const auto b = run_federation(plan);
  CHECK(a.params.weights == b.params.weights);
  REQUIRE(a.history.size() == b.history.size());
  for (std::size_t r = 0; r < a.history.size(); ++r) {
    CHECK(a.history[r].aggregate_checksum == b.history[r].aggregate_checksum);
    for (std::size_t c = 0; c < a.history[r].clients.size(); ++c)
      CHECK(a.history[r].clients[c].update_norm ==
            b.history[r].clients[c].update_norm);
  }
}

TEST_CASE("plan validation catches protocol violations") {
  FederationPlan plan;
  plan.rounds = 5;
  plan.train_cfg = sgd_config(5, 1);
  ClientSite client;
  client.client_id = 1;
  client.local_data = make_training_data(10, 2, 1);
  plan.clients.push_back(client);

  auto bad_epochs = plan;
  bad_epochs.local_epochs_per_round = 2;
  CHECK_THROWS_AS(bad_epochs.validate(true), ConfigError);

  auto dup = plan;
  dup.clients.push_back(client);
  CHECK_THROWS_AS(dup.validate(true), ConfigError);

  auto adam = plan;
  adam.train_cfg.optimizer = model::Optimizer::adam;
  CHECK_THROWS_AS(adam.validate(true), ConfigError);

  auto short_schedule = plan;
  short_schedule.train_cfg.schedule = LrSchedule::constant(0.1, 3);
  CHECK_THROWS_AS(short_schedule.validate(true), ConfigError);
}

TEST_CASE("wire messages round-trip exactly") {
  Rng rng(17);
  ParamsMessage msg;
  msg.round = 42;
  msg.client_id = 7;
  msg.n_samples = 651;
  for (int i = 0; i < 560; ++i) msg.params.weights.push_back(rng.normal());
  msg.params.intercept = rng.normal(70.0, 5.0);
  msg.params.layer_shapes = {{32, 64}, {64, 1}};

  const auto bytes = encode_params_message(msg);
  CHECK(bytes[0] == kWireVersion);
  const auto decoded = decode_params_message(bytes);
  CHECK(decoded == msg);
}

TEST_CASE("empty weight vectors are valid messages") {
  ParamsMessage msg;
  msg.round = 0;
  msg.client_id = 3;
  msg.n_samples = 12;
  const auto decoded = decode_params_message(encode_params_message(msg));
  CHECK(decoded.params.weights.empty());
  CHECK(decoded == msg);
}

TEST_CASE("frame corruption raises distinct protocol errors") {
  ParamsMessage msg;
  msg.round = 1;
  msg.client_id = 1;
  msg.n_samples = 5;
  msg.params.weights = {1.0, 2.0};
  auto bytes = encode_params_message(msg);

  auto kind_of = [](const std::vector<std::uint8_t>& frame) {
    try {
      decode_params_message(frame);
      return std::optional<ProtocolError::Kind>{};
    } catch (const ProtocolError& e) {
      return std::optional<ProtocolError::Kind>{e.kind()};
    }
  };

  auto truncated = bytes;
  truncated.pop_back();
  CHECK(kind_of(truncated) == ProtocolError::Kind::truncated_payload);

  auto bad_version = bytes;
  bad_version[0] = 0x02;
  CHECK(kind_of(bad_version) == ProtocolError::Kind::unknown_version);

  std::vector<std::uint8_t> short_header = {kWireVersion, 0x00, 0x00};
  CHECK(kind_of(short_header) == ProtocolError::Kind::malformed_length);

  auto trailing = bytes;
  trailing.push_back(0x00);
  CHECK(kind_of(trailing) == ProtocolError::Kind::malformed_length);

  // Valid frame whose payload is not the expected JSON object.
  const std::string garbage = "{\"round\": 1}";
  std::vector<std::uint8_t> bad_payload = {kWireVersion, 0, 0, 0,
                                           static_cast<std::uint8_t>(garbage.size())};
  bad_payload.insert(bad_payload.end(), garbage.begin(), garbage.end());
  CHECK(kind_of(bad_payload) == ProtocolError::Kind::malformed_payload);

  ParamsMessage nan_msg = msg;
  nan_msg.params.weights[0] = std::nan("");
  CHECK_THROWS_AS(encode_params_message(nan_msg), ConfigError);
}

TEST_CASE("TCP and in-process transports produce identical results") {
  FederationPlan plan;
  plan.rounds = 8;
  plan.train_cfg = sgd_config(8, 31);
  for (int c = 1; c <= 4; ++c) {
    ClientSite client;
    client.client_id = c;
    client.local_data = make_training_data(15 + 3 * c, 5, 300 + c);
    client.local_seed = 40 + c;
    plan.clients.push_back(std::move(client));
  }

  const auto inproc = run_federation(plan);

  TcpOptions opts;
  opts.timeout_seconds = 30;
  TcpServerTransport transport(plan.roster(), opts);
  std::vector<std::thread> clients;
  for (const auto& site : plan.clients)
    clients.emplace_back([&, site] {
      run_federation_client(site, plan.train_cfg, plan.model_kind,
                            plan.feedforward, plan.rounds, "127.0.0.1",
                            transport.port(), 30);
    });
  const auto over_tcp = run_federation(plan, transport);
  for (auto& t : clients) t.join();

  CHECK(over_tcp.params.weights == inproc.params.weights);
  CHECK(over_tcp.params.intercept == inproc.params.intercept);
  REQUIRE(over_tcp.history.size() == inproc.history.size());
  for (std::size_t r = 0; r < inproc.history.size(); ++r) {
    CHECK(over_tcp.history[r].aggregate_checksum ==
          inproc.history[r].aggregate_checksum);
    REQUIRE(over_tcp.history[r].clients.size() ==
            inproc.history[r].clients.size());
    for (std::size_t c = 0; c < inproc.history[r].clients.size(); ++c) {
      CHECK(over_tcp.history[r].clients[c].update_norm ==
            inproc.history[r].clients[c].update_norm);
      CHECK(over_tcp.history[r].clients[c].n_samples ==
            inproc.history[r].clients[c].n_samples);
    }
  }
}

TEST_CASE("a silent client fails the round with its id") {
  FederationPlan plan;
  plan.rounds = 3;
  plan.train_cfg = sgd_config(3, 1);
  ClientSite site;
  site.client_id = 9;
  site.local_data = make_training_data(10, 2, 1);
  site.local_seed = 1;
  plan.clients.push_back(site);

  TcpOptions opts;
  opts.timeout_seconds = 1;
  TcpServerTransport transport(plan.roster(), opts);

  // Registers over a raw socket, then never answers any round.
  int fd = ::socket(AF_INET, SOCK_STREAM, 0);
  REQUIRE(fd >= 0);
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(transport.port()));
  inet_pton(AF_INET, "127.0.0.1", &addr.sin_addr);
  std::thread server_side([&] {
    try {
      run_federation(plan, transport);
      FAIL("server should time out");
    } catch (const RoundFailureError& e) {
      CHECK(e.client_id() == 9);
      CHECK(e.round() == 1);
    }
  });
  REQUIRE(::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0);
  ParamsMessage hello;
  hello.round = 0;
  hello.client_id = 9;
  hello.n_samples = 10;
  const auto frame = encode_params_message(hello);
  REQUIRE(::send(fd, frame.data(), frame.size(), 0) ==
          static_cast<ssize_t>(frame.size()));
  server_side.join();
  ::close(fd);
}
