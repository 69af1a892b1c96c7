#include "fedage/tcp.hpp"

#include <arpa/inet.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <chrono>
#include <cstring>
#include <thread>

#include "fedage/error.hpp"
#include "fedage/wire.hpp"

namespace fedage::fed {

namespace {

void set_timeout(int fd, int seconds) {
  timeval tv{};
  tv.tv_sec = seconds;
  setsockopt(fd, SOL_SOCKET, SO_RCVTIMEO, &tv, sizeof(tv));
  setsockopt(fd, SOL_SOCKET, SO_SNDTIMEO, &tv, sizeof(tv));
}

void write_all(int fd, const std::uint8_t* data, std::size_t size) {
  std::size_t sent = 0;
  while (sent < size) {
    const ssize_t n = ::send(fd, data + sent, size - sent, MSG_NOSIGNAL);
    if (n <= 0)
      throw ProtocolError(ProtocolError::Kind::io,
                          std::string("send failed: ") + std::strerror(errno));
    sent += static_cast<std::size_t>(n);
  }
}

// Reads exactly `size` bytes; distinguishes timeouts/EOF for the caller.
void read_exact(int fd, std::uint8_t* data, std::size_t size) {
  std::size_t got = 0;
  while (got < size) {
    const ssize_t n = ::recv(fd, data + got, size - got, 0);
    if (n == 0)
      throw ProtocolError(ProtocolError::Kind::io, "peer closed connection");
    if (n < 0) {
      if (errno == EAGAIN || errno == EWOULDBLOCK)
        throw ProtocolError(ProtocolError::Kind::io, "receive timeout");
      throw ProtocolError(ProtocolError::Kind::io,
                          std::string("recv failed: ") + std::strerror(errno));
    }
    got += static_cast<std::size_t>(n);
  }
}

void write_message(int fd, const ParamsMessage& msg) {
  const auto frame = encode_params_message(msg);
  write_all(fd, frame.data(), frame.size());
}

ParamsMessage read_message(int fd) {
  std::vector<std::uint8_t> frame(kHeaderSize);
  read_exact(fd, frame.data(), kHeaderSize);
  if (frame[0] != kWireVersion)
    throw ProtocolError(ProtocolError::Kind::unknown_version,
                        "unknown wire version byte " +
                            std::to_string(static_cast<int>(frame[0])));
  const std::uint32_t len = (static_cast<std::uint32_t>(frame[1]) << 24) |
                            (static_cast<std::uint32_t>(frame[2]) << 16) |
                            (static_cast<std::uint32_t>(frame[3]) << 8) |
                            static_cast<std::uint32_t>(frame[4]);
  frame.resize(kHeaderSize + len);
  try {
    read_exact(fd, frame.data() + kHeaderSize, len);
  } catch (const ProtocolError&) {
    throw ProtocolError(ProtocolError::Kind::truncated_payload,
                        "connection ended mid-payload");
  }
  return decode_params_message(frame);
}

int connect_with_retry(const std::string& host, int port, int timeout_seconds) {
  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(port));
  if (::inet_pton(AF_INET, host.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("cannot parse host address " + host);

  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::seconds(10);
  while (true) {
    const int fd = ::socket(AF_INET, SOCK_STREAM, 0);
    if (fd < 0) throw ProtocolError(ProtocolError::Kind::io, "socket() failed");
    if (::connect(fd, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) == 0) {
      set_timeout(fd, timeout_seconds);
      const int one = 1;
      setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));
      return fd;
    }
    ::close(fd);
    if (std::chrono::steady_clock::now() >= deadline)
      throw ProtocolError(ProtocolError::Kind::io,
                          "cannot connect to " + host + ":" +
                              std::to_string(port));
    std::this_thread::sleep_for(std::chrono::milliseconds(100));
  }
}

}  // namespace

TcpServerTransport::TcpServerTransport(std::vector<int> expected,
                                       const TcpOptions& opts)
    : expected_(std::move(expected)), opts_(opts) {
  std::sort(expected_.begin(), expected_.end());
  if (expected_.empty()) throw ConfigError("empty client roster");

  listen_fd_ = ::socket(AF_INET, SOCK_STREAM, 0);
  if (listen_fd_ < 0)
    throw ProtocolError(ProtocolError::Kind::io, "socket() failed");
  const int one = 1;
  setsockopt(listen_fd_, SOL_SOCKET, SO_REUSEADDR, &one, sizeof(one));

  sockaddr_in addr{};
  addr.sin_family = AF_INET;
  addr.sin_port = htons(static_cast<std::uint16_t>(opts_.port));
  if (::inet_pton(AF_INET, opts_.host.c_str(), &addr.sin_addr) != 1)
    throw ConfigError("cannot parse host address " + opts_.host);
  if (::bind(listen_fd_, reinterpret_cast<sockaddr*>(&addr), sizeof(addr)) != 0)
    throw ProtocolError(ProtocolError::Kind::io,
                        "bind failed on " + opts_.host + ":" +
                            std::to_string(opts_.port) + ": " +
                            std::strerror(errno));
  if (::listen(listen_fd_, 64) != 0)
    throw ProtocolError(ProtocolError::Kind::io, "listen failed");

  sockaddr_in bound{};
  socklen_t len = sizeof(bound);
  getsockname(listen_fd_, reinterpret_cast<sockaddr*>(&bound), &len);
  port_ = ntohs(bound.sin_port);
}

TcpServerTransport::~TcpServerTransport() { close_all(); }

void TcpServerTransport::close_all() {
  for (auto& [id, fd] : sockets_)
    if (fd >= 0) ::close(fd);
  sockets_.clear();
  if (listen_fd_ >= 0) {
    ::close(listen_fd_);
    listen_fd_ = -1;
  }
}

void TcpServerTransport::wait_for_clients() {
  while (sockets_.size() < expected_.size()) {
    const int fd = ::accept(listen_fd_, nullptr, nullptr);
    if (fd < 0)
      throw ProtocolError(ProtocolError::Kind::io,
                          std::string("accept failed: ") +
                              std::strerror(errno));
    set_timeout(fd, opts_.timeout_seconds);
    const int one = 1;
    setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof(one));

    const ParamsMessage hello = read_message(fd);
    if (hello.round != 0) {
      ::close(fd);
      throw ProtocolError(ProtocolError::Kind::handshake,
                          "registration must use round 0");
    }
    if (!std::binary_search(expected_.begin(), expected_.end(),
                            hello.client_id)) {
      ::close(fd);
      throw ProtocolError(ProtocolError::Kind::handshake,
                          "unexpected client id " +
                              std::to_string(hello.client_id));
    }
    if (sockets_.count(hello.client_id)) {
      ::close(fd);
      throw ProtocolError(ProtocolError::Kind::handshake,
                          "duplicate registration for client " +
                              std::to_string(hello.client_id));
    }
    if (hello.n_samples <= 0) {
      ::close(fd);
      throw ProtocolError(ProtocolError::Kind::handshake,
                          "client " + std::to_string(hello.client_id) +
                              " registered a non-positive sample count");
    }
    sockets_[hello.client_id] = fd;
    samples_[hello.client_id] = hello.n_samples;
  }
}

std::vector<ClientUpdate> TcpServerTransport::run_round(
    int round, const model::ModelParams& global) {
  if (sockets_.size() < expected_.size()) wait_for_clients();

  for (const auto& [id, fd] : sockets_) {
    ParamsMessage msg;
    msg.round = round;
    msg.client_id = id;
    msg.n_samples = 0;
    msg.params = global;
    try {
      write_message(fd, msg);
    } catch (const ProtocolError& e) {
      throw RoundFailureError(id, round, e.what());
    }
  }

  std::vector<ClientUpdate> updates;
  for (const auto& [id, fd] : sockets_) {
    ParamsMessage reply;
    try {
      reply = read_message(fd);
    } catch (const ProtocolError& e) {
      throw RoundFailureError(id, round, e.what());
    }
    if (reply.round != round || reply.client_id != id)
      throw RoundFailureError(id, round, "out-of-order reply");
    if (reply.n_samples != samples_.at(id))
      throw RoundFailureError(id, round,
                              "sample count changed after registration");
    updates.push_back({reply.client_id, reply.n_samples, reply.params});
  }
  return updates;
}

void run_federation_client(const ClientSite& client,
                           const model::TrainConfig& cfg, ModelKind kind,
                           const model::FeedforwardSpec& ff, int rounds,
                           const std::string& host, int port,
                           int timeout_seconds) {
  if (client.local_data.size() == 0)
    throw InsufficientDataError("federation client has no local data");
  const int fd = connect_with_retry(host, port, timeout_seconds);

  try {
    ParamsMessage hello;
    hello.round = 0;
    hello.client_id = client.client_id;
    hello.n_samples = client.sample_count();
    write_message(fd, hello);

    for (int round = 1; round <= rounds; ++round) {
      const ParamsMessage task = read_message(fd);
      if (task.round != round)
        throw ProtocolError(ProtocolError::Kind::handshake,
                            "expected round " + std::to_string(round) +
                                ", got " + std::to_string(task.round));
      ParamsMessage reply;
      reply.round = round;
      reply.client_id = client.client_id;
      reply.n_samples = client.sample_count();
      reply.params = local_epoch(client, task.params, round, cfg, kind, ff);
      write_message(fd, reply);
    }
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
}

}  // namespace fedage::fed
