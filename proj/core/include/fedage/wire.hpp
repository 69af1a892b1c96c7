// Wire format for parameter exchange between the federation server and its
// clients.
//
// Frame: one version byte (0x01), a 4-byte big-endian payload length, then a
// UTF-8 JSON object {round, client_id, n_samples, weights, intercept, shapes}
// with numbers emitted in shortest round-trip decimal form, so binary64
// values survive the trip exactly.
#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "fedage/model.hpp"

namespace fedage::fed {

inline constexpr std::uint8_t kWireVersion = 0x01;
inline constexpr std::size_t kHeaderSize = 5;

struct ParamsMessage {
  int round = 0;  // 0 is reserved for the client registration handshake
  int client_id = 0;
  long n_samples = 0;
  model::ModelParams params;

  bool operator==(const ParamsMessage&) const = default;
};

// Throws ConfigError on non-finite parameters.
std::vector<std::uint8_t> encode_params_message(const ParamsMessage& msg);

// Expects exactly one frame; throws ProtocolError with kinds
// malformed_length / unknown_version / truncated_payload / malformed_payload.
ParamsMessage decode_params_message(std::span<const std::uint8_t> bytes);

}  // namespace fedage::fed
