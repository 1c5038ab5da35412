#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"
#include "viva/dynamics.hpp"
#include "viva/geometry.hpp"
#include "viva/image.hpp"

namespace viva::gateway {

inline constexpr int kProtocolVersion = 1;
inline constexpr std::uint32_t kMaxHeaderBytes = 1u << 20;
inline constexpr std::uint64_t kMaxPayloadBytes = 1ull << 30;

enum class ProtocolErrc {
  truncated,
  header_too_large,
  malformed_json,
  not_an_object,
  missing_type,
  unknown_type,
  bad_payload_length,
  payload_mismatch,
  invalid_field,
  both_forms,
  neither_form,
  stick_range,
  tick_mismatch,
  version_mismatch,
  unexpected_message,
};

const char* to_string(ProtocolErrc code) noexcept;

class ProtocolError : public std::runtime_error {
 public:
  ProtocolError(ProtocolErrc code, const std::string& what) : std::runtime_error(what), code_(code) {}
  ProtocolErrc code() const noexcept { return code_; }

 private:
  ProtocolErrc code_;
};

// 4-byte big-endian header length, UTF-8 JSON header, then payload_bytes of
// binary payload.
struct WireMessage {
  nlohmann::json header = nlohmann::json::object();
  std::vector<std::uint8_t> payload;

  std::string type() const;
};

// Writes payload_bytes into the header from the payload size.
std::vector<std::uint8_t> encode(const WireMessage& message);

// Exactly one complete message; trailing or missing bytes are errors.
WireMessage decode(std::span<const std::uint8_t> bytes);

// Incremental splitter for a byte stream of concatenated messages. A message
// with an invalid header is skipped (as if it had no payload) and reported as
// an error; an oversized header length leaves the stream unusable.
class StreamDecoder {
 public:
  void feed(std::span<const std::uint8_t> bytes);
  std::optional<WireMessage> next();
  std::size_t buffered() const noexcept { return buffer_.size() - offset_; }

 private:
  std::vector<std::uint8_t> buffer_;
  std::size_t offset_ = 0;
  // Parsed header of a message whose payload has not fully arrived.
  std::optional<nlohmann::json> pending_header_;
  std::size_t pending_payload_ = 0;
};

// Parses and validates a header block (without the length prefix).
nlohmann::json parse_header(std::span<const std::uint8_t> header_bytes);

enum class Encoding { rgb8, png };
const char* to_string(Encoding e) noexcept;
Encoding encoding_from_string(const std::string& text);

struct StateMessage {
  std::int64_t tick = 0;
  double sim_time_s = 0.0;
  dynamics::Vec3 pos = dynamics::Vec3::Zero();
  dynamics::Vec3 vel = dynamics::Vec3::Zero();
  double roll = 0.0;
  double pitch = 0.0;
  double yaw = 0.0;
  double thrust = 0.0;
  std::int64_t frame_id = 0;
  Encoding encoding = Encoding::rgb8;
  Image image;
  std::optional<std::array<geometry::Vec2, 4>> footprint_corners_src;
  std::optional<double> scale_factor;
  std::optional<double> coverage;
};

WireMessage make_state(const StateMessage& state);
std::vector<std::uint8_t> encode_state(const StateMessage& state);
StateMessage decode_state(const WireMessage& message);

struct CommandMessage {
  std::variant<dynamics::AttitudeCommand, dynamics::Stick> command;
  std::optional<std::int64_t> tick_ack;
};

WireMessage make_command(const CommandMessage& command);
std::vector<std::uint8_t> encode_command(const CommandMessage& command);
CommandMessage decode_command(const WireMessage& message);
CommandMessage decode_command(std::span<const std::uint8_t> bytes);

WireMessage make_error(ProtocolErrc code, const std::string& message, std::optional<std::int64_t> tick = {});

struct OverviewMessage {
  std::int64_t tick = 0;
  int src_width = 0;
  int src_height = 0;
  Encoding encoding = Encoding::png;
  Image image;
  std::array<geometry::Vec2, 4> footprint_corners_src{};
};

WireMessage make_overview(const OverviewMessage& overview);
OverviewMessage decode_overview(const WireMessage& message);

}  // namespace viva::gateway
