#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"
#include "viva/dynamics.hpp"
#include "viva/geometry.hpp"

namespace viva::session {

inline constexpr int kLogVersion = 1;

enum class Status { running, landed, out_of_bounds, max_ticks, aborted };
const char* to_string(Status status) noexcept;
Status status_from_string(const std::string& text);

// Log parse or integrity failure. tick() is the tick of the offending record
// when known, -1 otherwise.
class LogError : public std::runtime_error {
 public:
  LogError(std::int64_t tick, const std::string& what) : std::runtime_error(what), tick_(tick) {}
  std::int64_t tick() const noexcept { return tick_; }

 private:
  std::int64_t tick_;
};

struct LogHeader {
  int version = kLogVersion;
  std::string config_hash;
  std::string manifest_hash;
  std::uint64_t seed = 0;
  nlohmann::json config;  // canonical config document
};

// State at the start of a tick and the command applied during it.
struct TickRecord {
  std::int64_t tick = 0;
  double sim_time_s = 0.0;
  std::int64_t frame_index = 0;
  dynamics::Vec3 pos = dynamics::Vec3::Zero();
  dynamics::Vec3 vel = dynamics::Vec3::Zero();
  dynamics::AttitudeCommand cmd;  // after mapping, saturation and lag
  dynamics::Vec3 disturbance = dynamics::Vec3::Zero();
  std::array<geometry::Vec2, 4> footprint_corners_src{};
  double scale_factor = 0.0;
  double coverage = 0.0;
  bool clamped = false;  // position was clamped to the altitude ceiling or scene bounds
};

struct TerminalRecord {
  std::int64_t tick = -1;  // last recorded tick
  Status status = Status::running;
  dynamics::Vec3 pos = dynamics::Vec3::Zero();
  std::string reason;
};

// Every line carries "chain": SHA-256 of the previous line's chain and this
// line's content without the chain field, so any edit breaks the chain at the
// edited line.
class SessionLog {
 public:
  SessionLog() = default;
  explicit SessionLog(LogHeader header);

  const LogHeader& header() const noexcept { return header_; }
  const std::vector<TickRecord>& records() const noexcept { return records_; }
  const std::optional<TerminalRecord>& terminal() const noexcept { return terminal_; }

  void append(const TickRecord& record);
  void finish(const TerminalRecord& terminal);

  // One JSON document per line: header, records, terminal.
  const std::vector<std::string>& lines() const noexcept { return lines_; }
  std::string text() const;
  void write(const std::filesystem::path& path) const;

  // Parses a log and verifies the chain. Errors name the offending tick.
  static SessionLog parse(const std::string& text);
  static SessionLog read(const std::filesystem::path& path);

 private:
  void push_line(nlohmann::json doc);

  LogHeader header_;
  std::vector<TickRecord> records_;
  std::optional<TerminalRecord> terminal_;
  std::vector<std::string> lines_;
  std::string chain_;
};

nlohmann::json to_json(const TickRecord& record);
TickRecord tick_record_from_json(const nlohmann::json& doc);

}  // namespace viva::session
