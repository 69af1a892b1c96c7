#include "fedage/wire.hpp"

#include <cmath>

#include <json.hpp>

#include "fedage/error.hpp"

namespace fedage::fed {

using nlohmann::json;

std::vector<std::uint8_t> encode_params_message(const ParamsMessage& msg) {
  if (!msg.params.all_finite())
    throw ConfigError("refusing to encode non-finite parameters");

  json shapes = json::array();
  for (const auto& [in, out] : msg.params.layer_shapes)
    shapes.push_back(json::array({in, out}));
  const json j = {{"round", msg.round},
                  {"client_id", msg.client_id},
                  {"n_samples", msg.n_samples},
                  {"weights", msg.params.weights},
                  {"intercept", msg.params.intercept},
                  {"shapes", shapes}};
  const std::string payload = j.dump();
  if (payload.size() > 0xFFFFFFFFull)
    throw ProtocolError(ProtocolError::Kind::malformed_length,
                        "payload too large for 32-bit length prefix");

  std::vector<std::uint8_t> out;
  out.reserve(kHeaderSize + payload.size());
  out.push_back(kWireVersion);
  const auto len = static_cast<std::uint32_t>(payload.size());
  out.push_back(static_cast<std::uint8_t>((len >> 24) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((len >> 16) & 0xFF));
  out.push_back(static_cast<std::uint8_t>((len >> 8) & 0xFF));
  out.push_back(static_cast<std::uint8_t>(len & 0xFF));
  out.insert(out.end(), payload.begin(), payload.end());
  return out;
}

ParamsMessage decode_params_message(std::span<const std::uint8_t> bytes) {
  if (bytes.size() < kHeaderSize)
    throw ProtocolError(ProtocolError::Kind::malformed_length,
                        "frame shorter than the 5-byte header");
  if (bytes[0] != kWireVersion)
    throw ProtocolError(ProtocolError::Kind::unknown_version,
                        "unknown wire version byte " +
                            std::to_string(static_cast<int>(bytes[0])));
  const std::uint32_t len = (static_cast<std::uint32_t>(bytes[1]) << 24) |
                            (static_cast<std::uint32_t>(bytes[2]) << 16) |
                            (static_cast<std::uint32_t>(bytes[3]) << 8) |
                            static_cast<std::uint32_t>(bytes[4]);
  if (bytes.size() < kHeaderSize + len)
    throw ProtocolError(ProtocolError::Kind::truncated_payload,
                        "payload truncated: header declares " +
                            std::to_string(len) + " bytes, got " +
                            std::to_string(bytes.size() - kHeaderSize));
  if (bytes.size() > kHeaderSize + len)
    throw ProtocolError(ProtocolError::Kind::malformed_length,
                        "trailing bytes after declared payload");

  json j;
  try {
    j = json::parse(bytes.begin() + kHeaderSize, bytes.end());
  } catch (const json::parse_error& e) {
    throw ProtocolError(ProtocolError::Kind::malformed_payload, e.what());
  }

  ParamsMessage msg;
  try {
    msg.round = j.at("round").get<int>();
    msg.client_id = j.at("client_id").get<int>();
    msg.n_samples = j.at("n_samples").get<long>();
    msg.params.weights = j.at("weights").get<std::vector<double>>();
    msg.params.intercept = j.at("intercept").get<double>();
    for (const auto& s : j.at("shapes"))
      msg.params.layer_shapes.emplace_back(s.at(0).get<int>(),
                                           s.at(1).get<int>());
  } catch (const json::exception& e) {
    throw ProtocolError(ProtocolError::Kind::malformed_payload, e.what());
  }
  if (!msg.params.all_finite())
    throw ProtocolError(ProtocolError::Kind::malformed_payload,
                        "non-finite parameter in payload");
  return msg;
}

}  // namespace fedage::fed
