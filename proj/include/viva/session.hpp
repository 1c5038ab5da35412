#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "viva/dynamics.hpp"
#include "viva/geometry.hpp"
#include "viva/render.hpp"
#include "viva/scenario.hpp"
#include "viva/session_config.hpp"
#include "viva/session_log.hpp"

namespace viva::session {

// Runtime failure that ends a session with status aborted.
class SessionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Replay produced a different log. tick() is the first divergent tick (-1 for
// the header).
class DivergenceError : public std::runtime_error {
 public:
  DivergenceError(std::int64_t tick, const std::string& what) : std::runtime_error(what), tick_(tick) {}
  std::int64_t tick() const noexcept { return tick_; }

 private:
  std::int64_t tick_;
};

struct InitialConditions {
  dynamics::EavState state;
  std::int64_t start_frame = 0;
  double yaw_rad = 0.0;
};

// Draws x, y, altitude, yaw and start frame, in that order, from one
// generator seeded by the session seed. Fixed specs consume no draws.
InitialConditions randomize_initial(std::uint64_t seed, const InitialPoseSpec& pose, const StartFrameSpec& frame,
                                    std::int64_t frame_count);

// Source-pixel bounds check of a footprint, with a small tolerance.
bool footprint_inside(const std::array<geometry::Vec2, 4>& corners, int src_width, int src_height);

// landed > out-of-bounds (terminate policy only) > max-ticks > running.
Status check_termination(const dynamics::EavState& state, const TerminationSpec& termination,
                         bool footprint_in_bounds);

// Everything a command source may look at when producing the command for a tick.
struct TickView {
  std::int64_t tick = 0;
  double sim_time_s = 0.0;
  std::int64_t frame_index = 0;
  dynamics::Vec3 pos = dynamics::Vec3::Zero();
  dynamics::Vec3 vel = dynamics::Vec3::Zero();
  dynamics::AttitudeCommand attitude;  // attitude the vehicle currently holds
  render::VacMetrics metrics;
  const render::VacFrame* frame = nullptr;  // set when the source needs frames
  const Image* source_frame = nullptr;      // full recorded frame, when rendered
};

struct CommandInput {
  std::variant<dynamics::AttitudeCommand, dynamics::Stick> command;
  // Replay: command is applied as logged, bypassing mapping, saturation and lag,
  // together with the logged disturbance.
  bool raw = false;
  std::optional<dynamics::Vec3> disturbance;
};

struct SessionInfo {
  const SessionConfig* config = nullptr;
  const ingest::ScenarioManifest* manifest = nullptr;
  std::uint64_t seed = 0;
};

class CommandSource {
 public:
  virtual ~CommandSource() = default;
  virtual bool needs_frames() const { return false; }
  virtual void on_start(const SessionInfo&) {}
  // nullopt ends the session as aborted. Exceptions do the same, with their message.
  virtual std::optional<CommandInput> next(const TickView& view) = 0;
  virtual void on_end(const TerminalRecord&) {}
};

// JSON lines of {"stick": [x, y, z, r]} or {"attitude": {"roll", "pitch",
// "yaw", "thrust"}}, each with optional "repeat" (default 1). Once the script
// runs out it keeps issuing the zero stick (hover).
class ScriptedSource final : public CommandSource {
 public:
  explicit ScriptedSource(const std::filesystem::path& path);
  static ScriptedSource from_text(const std::string& text);
  std::optional<CommandInput> next(const TickView& view) override;
  std::size_t size() const noexcept { return commands_.size(); }

 private:
  ScriptedSource() = default;
  std::vector<CommandInput> commands_;
  std::size_t cursor_ = 0;
};

// Feeds the commands and disturbances of a recorded log.
class ReplaySource final : public CommandSource {
 public:
  // Past the last record an aborted terminal re-raises its reason, so the
  // replayed terminal record matches.
  explicit ReplaySource(std::vector<TickRecord> records, std::optional<TerminalRecord> terminal = {})
      : records_(std::move(records)), terminal_(std::move(terminal)) {}
  std::optional<CommandInput> next(const TickView& view) override;

 private:
  std::vector<TickRecord> records_;
  std::optional<TerminalRecord> terminal_;
};

// Fixed command every tick.
class ConstantSource final : public CommandSource {
 public:
  explicit ConstantSource(CommandInput input) : input_(std::move(input)) {}
  std::optional<CommandInput> next(const TickView&) override { return input_; }

 private:
  CommandInput input_;
};

// Scripted or replay source from the config's command_source; nullptr for "gateway".
std::unique_ptr<CommandSource> make_command_source(const SessionConfig& config);

struct RunOptions {
  // Overrides the manifest file named by the config (benchmarks).
  std::optional<ingest::ScenarioManifest> manifest;
  // Overrides the manifest's frame source (tests, benchmarks).
  std::shared_ptr<ingest::FrameSource> frames;
  // Render a VacFrame every tick even if the command source does not need one.
  bool render = false;
  // Called with every rendered frame before the command for that tick is fetched.
  std::function<void(const render::VacFrame&, const Image& source)> frame_sink;
  // Called after every appended record.
  std::function<void(const TickRecord&)> on_record;
};

std::string manifest_hash(const ingest::ScenarioManifest& manifest);

// Loads the config's manifest; failures surface as ConfigError("manifest").
ingest::ScenarioManifest load_session_manifest(const SessionConfig& config);

SessionLog run_session(const SessionConfig& config, CommandSource& source, const RunOptions& options = {});

// Re-executes a log with its logged commands and disturbances and returns the
// reproduced log. Throws LogError / SessionError on hash mismatch and
// DivergenceError naming the first tick whose record differs.
SessionLog replay(const SessionLog& log, const RunOptions& options = {});

// Rebuilds the config stored in a log header.
SessionConfig config_from_log(const SessionLog& log);

}  // namespace viva::session
