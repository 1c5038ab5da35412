#include "viva/session.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <sstream>
#include <thread>

#include "viva/digest.hpp"
#include "viva/json_format.hpp"
#include "viva/upscale.hpp"

namespace viva::session {
namespace {

using dynamics::AttitudeCommand;
using dynamics::EavState;
using dynamics::Vec3;
using nlohmann::json;

constexpr double kBoundsTolPx = 1e-6;
constexpr double kClampMarginPx = 1e-6;
constexpr double kCeilingFraction = 0.95;

void check_range(const Range& r, const char* field) {
  if (!(r.lo <= r.hi)) throw ConfigError(field, "empty range (lo > hi)");
}

// True when every VAC corner ray hits the ground on the same side as the
// principal ray, i.e. no corner looks above the horizon.
bool corners_on_ground(const geometry::Homography& src_to_vac, const geometry::CameraIntrinsics& vac) {
  const geometry::Mat3 inv = src_to_vac.inverse().h;
  auto w_at = [&](double u, double v) { return inv(2, 0) * u + inv(2, 1) * v + inv(2, 2); };
  const double ref = w_at(vac.principal_u, vac.principal_v);
  const double u1 = vac.width - 1;
  const double v1 = vac.height - 1;
  for (const auto& [u, v] : {std::pair{0.0, 0.0}, std::pair{u1, 0.0}, std::pair{u1, v1}, std::pair{0.0, v1}}) {
    if (!(w_at(u, v) * ref > 0.0)) return false;
  }
  return true;
}

// Pixel shift that brings [lo, hi] inside [0, limit], centring when it cannot fit.
double inward_shift(double lo, double hi, double limit) {
  if (hi - lo > limit) return 0.5 * limit - 0.5 * (lo + hi);
  if (lo < 0.0) return -lo + kClampMarginPx;
  if (hi > limit) return limit - hi - kClampMarginPx;
  return 0.0;
}

struct Evaluation {
  geometry::RigidTransform pose;
  geometry::Homography homography;
  render::VacMetrics metrics;
  bool in_bounds = false;
};

class Evaluator {
 public:
  Evaluator(const SessionConfig& config, const ingest::ScenarioManifest& manifest)
      : config_(config),
        manifest_(manifest),
        src_cam_(geometry::intrinsics_from_manifest(manifest)),
        vac_cam_(config.vac.intrinsics()),
        mount_(config.mount.transform()) {}

  const geometry::CameraIntrinsics& vac() const { return vac_cam_; }

  Evaluation evaluate(const Vec3& pos, const AttitudeCommand& att) const {
    Evaluation e;
    const double yaw = config_.vac.yaw_lock ? 0.0 : att.yaw_rad;
    e.pose = geometry::eav_pose(pos, att.roll_rad, att.pitch_rad, yaw);
    const auto cam = geometry::camera_pose(e.pose, mount_);
    e.homography = geometry::vac_homography(src_cam_, manifest_.altitude_m, vac_cam_, cam);
    e.metrics = render::vac_metrics(e.homography, vac_cam_, manifest_.width, manifest_.height,
                                    config_.vac.render.upscale_threshold);
    e.in_bounds = corners_on_ground(e.homography, vac_cam_) &&
                  footprint_inside(e.metrics.footprint_corners_src, manifest_.width, manifest_.height);
    return e;
  }

  // Applies the altitude ceiling and, under the clamp policy, pulls the
  // footprint back inside the scene. Returns true if the state changed.
  bool clamp(EavState& state, const AttitudeCommand& att, Evaluation& out) const {
    bool clamped = false;
    const double ceiling = kCeilingFraction * manifest_.altitude_m;
    if (state.pos.z() > ceiling) {
      state.pos.z() = ceiling;
      state.pos_prev.z() = ceiling;
      clamped = true;
    }
    out = evaluate(state.pos, att);
    if (out.in_bounds || config_.termination.out_of_bounds != OutOfBoundsPolicy::clamp ||
        !corners_on_ground(out.homography, vac_cam_)) {
      return clamped;
    }
    const auto& c = out.metrics.footprint_corners_src;
    double u_lo = c[0].x(), u_hi = c[0].x(), v_lo = c[0].y(), v_hi = c[0].y();
    for (const auto& p : c) {
      u_lo = std::min(u_lo, p.x());
      u_hi = std::max(u_hi, p.x());
      v_lo = std::min(v_lo, p.y());
      v_hi = std::max(v_hi, p.y());
    }
    const double du = inward_shift(u_lo, u_hi, manifest_.width - 1.0);
    const double dv = inward_shift(v_lo, v_hi, manifest_.height - 1.0);
    // A horizontal translation moves the footprint rigidly across the plane.
    if (du != 0.0) {
      state.pos.x() += du * manifest_.altitude_m / src_cam_.focal_u_px;
      state.pos_prev.x() = state.pos.x();
    }
    if (dv != 0.0) {
      state.pos.y() -= dv * manifest_.altitude_m / src_cam_.focal_v_px;
      state.pos_prev.y() = state.pos.y();
    }
    out = evaluate(state.pos, att);
    return true;
  }

 private:
  const SessionConfig& config_;
  const ingest::ScenarioManifest& manifest_;
  geometry::CameraIntrinsics src_cam_;
  geometry::CameraIntrinsics vac_cam_;
  geometry::MountTransform mount_;
};

CommandInput parse_script_line(const json& doc, std::size_t line_no, std::int64_t& repeat) {
  const std::string where = "line " + std::to_string(line_no);
  if (!doc.is_object()) throw ConfigError("command_source", where + ": expected a JSON object");
  for (auto it = doc.begin(); it != doc.end(); ++it) {
    if (it.key() != "stick" && it.key() != "attitude" && it.key() != "repeat") {
      throw ConfigError("command_source", where + ": unknown key \"" + it.key() + "\"");
    }
  }
  const bool has_stick = doc.contains("stick");
  if (has_stick == doc.contains("attitude")) {
    throw ConfigError("command_source", where + ": exactly one of \"stick\" or \"attitude\" is required");
  }
  repeat = 1;
  if (doc.contains("repeat")) {
    if (!doc["repeat"].is_number_integer() || doc["repeat"].get<std::int64_t>() < 1) {
      throw ConfigError("command_source", where + ": \"repeat\" must be a positive integer");
    }
    repeat = doc["repeat"].get<std::int64_t>();
  }
  CommandInput in;
  if (has_stick) {
    const json& s = doc["stick"];
    if (!s.is_array() || s.size() != 4) throw ConfigError("command_source", where + ": \"stick\" must be 4 numbers");
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!s[i].is_number()) throw ConfigError("command_source", where + ": \"stick\" must be 4 numbers");
      v[i] = s[i].get<double>();
      if (!(v[i] >= -1.0 && v[i] <= 1.0)) throw ConfigError("command_source", where + ": stick outside [-1, 1]");
    }
    in.command = dynamics::Stick{v[0], v[1], v[2], v[3]};
  } else {
    const json& a = doc["attitude"];
    auto get = [&](const char* key) {
      if (!a.is_object() || !a.contains(key) || !a[key].is_number()) {
        throw ConfigError("command_source", where + ": attitude." + key + " must be a number");
      }
      return a[key].get<double>();
    };
    in.command = AttitudeCommand{get("roll"), get("pitch"), get("yaw"), get("thrust")};
  }
  return in;
}

}  // namespace

InitialConditions randomize_initial(std::uint64_t seed, const InitialPoseSpec& pose, const StartFrameSpec& frame,
                                    std::int64_t frame_count) {
  dynamics::SeededRng rng(dynamics::derive_seed(seed, 0));
  Vec3 p = pose.position;
  double yaw = pose.yaw_rad;
  if (pose.randomized) {
    check_range(pose.x_m, "initial.x_range_m");
    check_range(pose.y_m, "initial.y_range_m");
    check_range(pose.altitude_m, "initial.altitude_range_m");
    check_range(pose.yaw_range_rad, "initial.yaw_range_rad");
    p.x() = rng.uniform(pose.x_m.lo, pose.x_m.hi);
    p.y() = rng.uniform(pose.y_m.lo, pose.y_m.hi);
    p.z() = rng.uniform(pose.altitude_m.lo, pose.altitude_m.hi);
    yaw = rng.uniform(pose.yaw_range_rad.lo, pose.yaw_range_rad.hi);
  }
  InitialConditions out;
  out.state = EavState::at_rest(p);
  out.yaw_rad = yaw;
  if (frame.randomized) {
    if (frame_count <= 0) throw ConfigError("start_frame.mode", "randomized start frame needs a stream of known length");
    out.start_frame = rng.uniform_index(frame_count);
  } else {
    out.start_frame = frame.index;
  }
  return out;
}

bool footprint_inside(const std::array<geometry::Vec2, 4>& corners, int w, int h) {
  for (const auto& c : corners) {
    if (!(c.x() >= -kBoundsTolPx && c.x() <= w - 1 + kBoundsTolPx && c.y() >= -kBoundsTolPx &&
          c.y() <= h - 1 + kBoundsTolPx)) {
      return false;
    }
  }
  return true;
}

Status check_termination(const EavState& state, const TerminationSpec& t, bool footprint_in_bounds) {
  if (state.pos.z() <= t.landing_altitude_m) return Status::landed;
  if (!footprint_in_bounds && t.out_of_bounds == OutOfBoundsPolicy::terminate) return Status::out_of_bounds;
  if (state.tick >= t.max_ticks) return Status::max_ticks;
  return Status::running;
}

ScriptedSource::ScriptedSource(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("command_source", "cannot read script " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  *this = from_text(ss.str());
}

ScriptedSource ScriptedSource::from_text(const std::string& text) {
  ScriptedSource s;
  std::istringstream in(text);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded()) throw ConfigError("command_source", "line " + std::to_string(line_no) + ": malformed JSON");
    std::int64_t repeat = 1;
    CommandInput in_cmd = parse_script_line(doc, line_no, repeat);
    s.commands_.reserve(s.commands_.size() + static_cast<std::size_t>(std::min<std::int64_t>(repeat, 1 << 20)));
    for (std::int64_t i = 0; i < repeat; ++i) s.commands_.push_back(in_cmd);
  }
  return s;
}

std::optional<CommandInput> ScriptedSource::next(const TickView&) {
  if (cursor_ < commands_.size()) return commands_[cursor_++];
  return CommandInput{dynamics::Stick{}, false, std::nullopt};
}

std::optional<CommandInput> ReplaySource::next(const TickView& view) {
  if (view.tick < static_cast<std::int64_t>(records_.size())) {
    const TickRecord& r = records_[static_cast<std::size_t>(view.tick)];
    return CommandInput{r.cmd, true, r.disturbance};
  }
  if (terminal_ && terminal_->status == Status::aborted) throw SessionError(terminal_->reason);
  return std::nullopt;
}

std::unique_ptr<CommandSource> make_command_source(const SessionConfig& config) {
  const std::string& cs = config.command_source;
  if (cs.rfind("scripted:", 0) == 0) return std::make_unique<ScriptedSource>(cs.substr(9));
  if (cs.rfind("replay:", 0) == 0) {
    SessionLog log;
    try {
      log = SessionLog::read(cs.substr(7));
    } catch (const LogError& e) {
      throw ConfigError("command_source", e.what());
    }
    return std::make_unique<ReplaySource>(log.records(), log.terminal());
  }
  return nullptr;
}

std::string manifest_hash(const ingest::ScenarioManifest& manifest) {
  return sha256_hex(canonical(ingest::to_json(manifest)));
}

ingest::ScenarioManifest load_session_manifest(const SessionConfig& config) {
  try {
    return ingest::load_manifest(config.manifest);
  } catch (const ingest::ManifestError& e) {
    const std::string field = e.field().empty() ? std::string() : " (" + e.field() + ")";
    throw ConfigError("manifest", config.manifest.string() + field + ": " + e.what());
  }
}

SessionLog run_session(const SessionConfig& config, CommandSource& source, const RunOptions& options) {
  const ingest::ScenarioManifest manifest = options.manifest ? *options.manifest : load_session_manifest(config);
  std::shared_ptr<ingest::FrameSource> frames = options.frames;
  if (!frames) {
    try {
      frames = ingest::open_frame_source(manifest);
    } catch (const ingest::FrameSourceError& e) {
      throw ConfigError("manifest", std::string("frame_source: ") + e.what());
    }
  }
  if (frames->width() != manifest.width || frames->height() != manifest.height) {
    throw ConfigError("manifest", "frame source dimensions differ from the manifest");
  }

  const double dt = config.eav.dt_s;
  const double ceiling = kCeilingFraction * manifest.altitude_m;
  const auto count = frames->frame_count();
  InitialConditions init = randomize_initial(config.seed, config.initial, config.start_frame, count.value_or(0));
  if (config.initial.randomized && !(config.initial.altitude_m.hi < manifest.altitude_m)) {
    throw ConfigError("initial.altitude_range_m", "must lie below the recording altitude");
  }
  if (!config.initial.randomized && init.state.pos.z() > ceiling) {
    throw ConfigError("initial.position", "altitude exceeds 0.95 x the recording altitude");
  }

  LogHeader header;
  header.config_hash = config_hash(config);
  header.manifest_hash = manifest_hash(manifest);
  header.seed = config.seed;
  header.config = config.document;
  SessionLog log(header);

  const Evaluator evaluator(config, manifest);
  AttitudeCommand attitude{0.0, 0.0, init.yaw_rad, dynamics::hover_thrust(config.eav)};
  AttitudeCommand commanded = attitude;
  dynamics::AttitudeLag lag(config.attitude_lag_s);
  lag.reset(attitude);
  dynamics::DisturbanceGenerator disturbances(config.disturbance, dt);
  EavState state = init.state;

  const bool need_frames = options.render || static_cast<bool>(options.frame_sink) || source.needs_frames();
  std::unique_ptr<render::Upscaler> upscaler;
  if (need_frames && config.vac.upscale) upscaler = std::make_unique<render::Upscaler>(config.vac.upscaler);

  SessionInfo info{&config, &manifest, config.seed};
  source.on_start(info);

  Status status = Status::running;
  std::string reason;
  Evaluation ev;
  bool clamped = false;
  try {
    clamped = evaluator.clamp(state, attitude, ev);
    status = check_termination(state, config.termination, ev.in_bounds);
  } catch (const geometry::GeometryError& e) {
    status = Status::aborted;
    reason = e.what();
  }

  const auto wall_start = std::chrono::steady_clock::now();
  while (status == Status::running) {
    const std::int64_t k = state.tick;
    const double t = static_cast<double>(k) * dt;
    if (config.realtime) {
      std::this_thread::sleep_until(wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                                     std::chrono::duration<double>(t)));
    }

    const std::int64_t logical = init.start_frame + ingest::frame_index_for_time(t, manifest.fps);
    std::optional<ingest::Frame> frame;
    std::optional<std::int64_t> physical;
    try {
      if (need_frames || !count) {
        frame = ingest::frame_by_index(*frames, manifest, logical);
        if (frame) physical = frame->index;
      } else {
        physical = ingest::physical_frame_index(logical, *count, manifest.end_policy);
      }
    } catch (const std::exception& e) {
      status = Status::aborted;
      reason = std::string("frame source: ") + e.what();
      break;
    }
    if (!physical) {
      status = Status::max_ticks;
      reason = "frame source exhausted";
      break;
    }

    TickView view;
    view.tick = k;
    view.sim_time_s = t;
    view.frame_index = *physical;
    view.pos = state.pos;
    view.vel = state.velocity(dt);
    view.attitude = attitude;
    view.metrics = ev.metrics;
    render::VacFrame vac_frame;
    if (need_frames) {
      render::VacImage img;
      try {
        img = render::render_vac(*frame->pixels, ev.homography, evaluator.vac(), config.vac.render, upscaler.get());
      } catch (const std::exception& e) {
        status = Status::aborted;
        reason = std::string("render: ") + e.what();
        break;
      }
      vac_frame.pixels = std::move(img.pixels);
      vac_frame.tick = k;
      vac_frame.sim_time_s = t;
      vac_frame.frame_index = *physical;
      vac_frame.eav_pose = ev.pose;
      vac_frame.roll_rad = attitude.roll_rad;
      vac_frame.pitch_rad = attitude.pitch_rad;
      vac_frame.yaw_rad = attitude.yaw_rad;
      vac_frame.homography = ev.homography;
      vac_frame.footprint_corners_src = ev.metrics.footprint_corners_src;
      vac_frame.scale_factor = ev.metrics.scale_factor;
      vac_frame.upscaled = img.upscaled;
      vac_frame.coverage = ev.metrics.coverage;
      view.frame = &vac_frame;
      view.source_frame = frame->pixels.get();
      if (options.frame_sink) options.frame_sink(vac_frame, *frame->pixels);
    }

    std::optional<CommandInput> input;
    try {
      input = source.next(view);
    } catch (const std::exception& e) {
      status = Status::aborted;
      reason = e.what();
      break;
    }
    if (!input) {
      status = Status::aborted;
      reason = "command source ended";
      break;
    }

    AttitudeCommand applied;
    Vec3 xi;
    if (input->raw) {
      const auto* a = std::get_if<AttitudeCommand>(&input->command);
      if (!a || !input->disturbance) {
        status = Status::aborted;
        reason = "raw command without attitude and disturbance";
        break;
      }
      applied = *a;
      xi = *input->disturbance;
    } else {
      if (const auto* s = std::get_if<dynamics::Stick>(&input->command)) {
        commanded = dynamics::map_stick(*s, config.limits, config.eav, commanded.yaw_rad, dt);
      } else {
        commanded = dynamics::saturate(std::get<AttitudeCommand>(input->command), config.limits, config.eav);
      }
      applied = lag.apply(commanded, dt);
      xi = disturbances.next();
    }

    TickRecord rec;
    rec.tick = k;
    rec.sim_time_s = t;
    rec.frame_index = *physical;
    rec.pos = state.pos;
    rec.vel = view.vel;
    rec.cmd = applied;
    rec.disturbance = xi;
    rec.footprint_corners_src = ev.metrics.footprint_corners_src;
    rec.scale_factor = ev.metrics.scale_factor;
    rec.coverage = ev.metrics.coverage;
    rec.clamped = clamped;

    EavState next;
    try {
      next = dynamics::step(state, config.eav, applied, xi);
    } catch (const dynamics::DynamicsError& e) {
      status = Status::aborted;
      reason = e.what();
      break;
    }
    log.append(rec);
    if (options.on_record) options.on_record(rec);

    state = next;
    attitude = applied;
    try {
      clamped = evaluator.clamp(state, attitude, ev);
    } catch (const geometry::GeometryError& e) {
      status = Status::aborted;
      reason = e.what();
      break;
    }
    status = check_termination(state, config.termination, ev.in_bounds);
  }

  TerminalRecord terminal;
  terminal.tick = static_cast<std::int64_t>(log.records().size()) - 1;
  terminal.status = status;
  terminal.pos = state.pos;
  terminal.reason = reason;
  log.finish(terminal);
  source.on_end(terminal);
  return log;
}

SessionConfig config_from_log(const SessionLog& log) {
  SessionConfig config;
  try {
    config = config_from_document(log.header().config);
  } catch (const ConfigError& e) {
    throw LogError(-1, std::string("header config: ") + e.what());
  }
  if (config_hash(config) != log.header().config_hash) throw LogError(-1, "header: config hash mismatch");
  if (config.seed != log.header().seed) throw LogError(-1, "header: seed differs from the config seed");
  return config;
}

SessionLog replay(const SessionLog& log, const RunOptions& options) {
  SessionConfig config = config_from_log(log);
  const ingest::ScenarioManifest manifest = load_session_manifest(config);
  if (manifest_hash(manifest) != log.header().manifest_hash) {
    throw LogError(-1, "manifest hash mismatch: " + config.manifest.string() + " changed since the log was written");
  }
  config.realtime = false;
  ReplaySource source(log.records(), log.terminal());
  SessionLog out = run_session(config, source, options);

  const auto& a = log.lines();
  const auto& b = out.lines();
  const std::size_t n = std::max(a.size(), b.size());
  for (std::size_t i = 0; i < n; ++i) {
    if (i < a.size() && i < b.size() && a[i] == b[i]) continue;
    const auto tick = static_cast<std::int64_t>(i) - 1;
    throw DivergenceError(tick, i == 0 ? std::string("replay diverged in the header")
                                       : "replay diverged at tick " + std::to_string(tick));
  }
  return out;
}

}  // namespace viva::session
