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
#include "viva/render.hpp"
#include "viva/upscale.hpp"

namespace viva::session {

// Field-level configuration problem; field() is the dotted key path.
class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string field, const std::string& what)
      : std::runtime_error(field.empty() ? what : field + ": " + what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

enum class OutOfBoundsPolicy { clamp, terminate };

struct Range {
  double lo = 0.0;
  double hi = 0.0;
};

struct InitialPoseSpec {
  bool randomized = false;
  dynamics::Vec3 position{0.0, 0.0, 50.0};
  double yaw_rad = 0.0;
  Range altitude_m{50.0, 100.0};
  Range x_m{0.0, 0.0};
  Range y_m{0.0, 0.0};
  Range yaw_range_rad{0.0, 0.0};
};

struct StartFrameSpec {
  bool randomized = false;
  std::int64_t index = 0;
};

struct TerminationSpec {
  double landing_altitude_m = 1.0;
  std::int64_t max_ticks = 900;
  OutOfBoundsPolicy out_of_bounds = OutOfBoundsPolicy::clamp;
};

struct VacSpec {
  int width = 1280;
  int height = 720;
  double fov_h_deg = 82.1;
  double fov_v_deg = 0.0;  // 0 derives from the aspect ratio
  render::RenderOptions render;
  render::UpscalerSpec upscaler;
  bool upscale = true;
  bool yaw_lock = false;

  geometry::CameraIntrinsics intrinsics() const;
};

struct MountSpec {
  double roll_rad = 0.0;
  double pitch_rad = 0.0;
  double yaw_rad = 0.0;
  dynamics::Vec3 translation_m = dynamics::Vec3::Zero();

  geometry::MountTransform transform() const;
};

enum class Transport { tcp, websocket };

struct GatewaySpec {
  std::string endpoint = "127.0.0.1:5600";
  Transport transport = Transport::tcp;
  std::string encoding;  // empty: rgb8 for tcp, png for websocket
  double timeout_s = 10.0;
  double accept_timeout_s = 0.0;  // 0 waits for a controller indefinitely
  double disconnect_timeout_s = 5.0;
  bool overview = false;
  int overview_width = 960;

  std::string resolved_encoding() const;
};

struct SessionConfig {
  std::filesystem::path manifest;
  std::uint64_t seed = 0;
  dynamics::EavParams eav;
  dynamics::CommandLimits limits;
  double attitude_lag_s = 0.0;
  dynamics::DisturbanceModel disturbance;
  MountSpec mount;
  VacSpec vac;
  InitialPoseSpec initial;
  StartFrameSpec start_frame;
  std::string command_source = "gateway";
  TerminationSpec termination;
  bool realtime = false;
  std::filesystem::path log_path = "session.jsonl";
  GatewaySpec gateway;

  // Canonical document this config was built from (paths absolute, seed set,
  // log_path nulled since the output location does not affect the run).
  nlohmann::json document;
};

// Every recognised key with its default. seed and disturbance.seed default to null.
nlohmann::json default_config_document();

// Merges a user document over the defaults. Unknown keys are rejected.
nlohmann::json merge_config(const nlohmann::json& user);

// Reads a config file (JSON) and merges it over the defaults; relative paths
// are resolved against the file's directory.
nlohmann::json load_config_document(const std::filesystem::path& path);

// "a.b.c=value". The key must already exist; value is parsed as JSON when it
// parses, otherwise taken as a string.
void apply_override(nlohmann::json& doc, const std::string& assignment);

// Resolves manifest / scripted / log paths against base_dir.
void resolve_paths(nlohmann::json& doc, const std::filesystem::path& base_dir);

// Validates and converts. The seed must already be set (not null).
SessionConfig config_from_document(const nlohmann::json& doc);

std::string config_hash(const SessionConfig& config);

}  // namespace viva::session
