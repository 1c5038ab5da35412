#include "viva/session_config.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <sstream>

#include "viva/digest.hpp"
#include "viva/json_format.hpp"

namespace viva::session {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

constexpr double kDeg = std::numbers::pi / 180.0;

void merge_into(json& base, const json& user, const std::string& prefix) {
  if (!user.is_object()) throw ConfigError(prefix, "expected a JSON object");
  for (auto it = user.begin(); it != user.end(); ++it) {
    const std::string path = prefix.empty() ? it.key() : prefix + "." + it.key();
    auto slot = base.find(it.key());
    if (slot == base.end()) throw ConfigError(path, "unknown configuration key");
    if (slot->is_object() && it.value().is_object()) {
      merge_into(*slot, it.value(), path);
    } else if (slot->is_object()) {
      throw ConfigError(path, "expected a JSON object");
    } else {
      *slot = it.value();
    }
  }
}

// Typed accessors that report the dotted key on failure.
class Reader {
 public:
  explicit Reader(const json& doc) : doc_(doc) {}

  const json& at(const std::string& path) const {
    const json* cur = &doc_;
    std::size_t pos = 0;
    while (pos <= path.size()) {
      const auto dot = path.find('.', pos);
      const std::string key = path.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
      auto it = cur->find(key);
      if (it == cur->end()) throw ConfigError(path, "missing configuration key");
      cur = &*it;
      if (dot == std::string::npos) break;
      pos = dot + 1;
    }
    return *cur;
  }

  bool is_null(const std::string& path) const { return at(path).is_null(); }

  double number(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_number()) throw ConfigError(path, "expected a number");
    const double d = v.get<double>();
    if (!std::isfinite(d)) throw ConfigError(path, "expected a finite number");
    return d;
  }

  std::int64_t integer(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_number_integer()) throw ConfigError(path, "expected an integer");
    return v.get<std::int64_t>();
  }

  std::uint64_t unsigned_integer(const std::string& path) const {
    const json& v = at(path);
    if (v.is_number_unsigned()) return v.get<std::uint64_t>();
    if (v.is_number_integer() && v.get<std::int64_t>() >= 0) return static_cast<std::uint64_t>(v.get<std::int64_t>());
    throw ConfigError(path, "expected a non-negative integer");
  }

  bool boolean(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_boolean()) throw ConfigError(path, "expected true or false");
    return v.get<bool>();
  }

  std::string string(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_string()) throw ConfigError(path, "expected a string");
    return v.get<std::string>();
  }

  dynamics::Vec3 vec3(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_array() || v.size() != 3) throw ConfigError(path, "expected an array of 3 numbers");
    dynamics::Vec3 out;
    for (int i = 0; i < 3; ++i) {
      if (!v[static_cast<std::size_t>(i)].is_number()) throw ConfigError(path, "expected an array of 3 numbers");
      out[i] = v[static_cast<std::size_t>(i)].get<double>();
    }
    if (!std::isfinite(out.x()) || !std::isfinite(out.y()) || !std::isfinite(out.z())) {
      throw ConfigError(path, "expected finite numbers");
    }
    return out;
  }

  Range range(const std::string& path) const {
    const json& v = at(path);
    if (!v.is_array() || v.size() != 2 || !v[0].is_number() || !v[1].is_number()) {
      throw ConfigError(path, "expected [lo, hi]");
    }
    Range r{v[0].get<double>(), v[1].get<double>()};
    if (!std::isfinite(r.lo) || !std::isfinite(r.hi)) throw ConfigError(path, "expected finite bounds");
    if (r.lo > r.hi) throw ConfigError(path, "empty range (lo > hi)");
    return r;
  }

 private:
  const json& doc_;
};

template <typename F>
auto guarded(const std::string& field, F&& f) {
  try {
    return f();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(field, e.what());
  }
}

bool starts_with(const std::string& s, std::string_view p) { return s.rfind(p, 0) == 0; }

std::string absolute_from(const fs::path& base, const std::string& p) {
  fs::path path(p);
  if (path.is_relative()) path = base / path;
  return path.lexically_normal().string();
}

}  // namespace

geometry::CameraIntrinsics VacSpec::intrinsics() const {
  return geometry::CameraIntrinsics::from_fov(width, height, fov_h_deg * kDeg, fov_v_deg > 0.0 ? fov_v_deg * kDeg : 0.0);
}

geometry::MountTransform MountSpec::transform() const {
  return geometry::MountTransform::nadir_with_offset(roll_rad, pitch_rad, yaw_rad, translation_m);
}

std::string GatewaySpec::resolved_encoding() const {
  if (!encoding.empty()) return encoding;
  return transport == Transport::websocket ? "png" : "rgb8";
}

json default_config_document() {
  return json{
      {"manifest", nullptr},
      {"seed", nullptr},
      {"eav",
       {{"mass_kg", 0.25},
        {"gravity", 9.81},
        {"drag_coeff", 0.1},
        {"dt_s", 1.0 / 30.0},
        {"attitude_max", 0.35},
        {"thrust_min", 0.0},
        {"thrust_max", nullptr},
        {"thrust_headroom", 0.5},
        {"yaw_rate_max", 1.0},
        {"attitude_lag_s", 0.0}}},
      {"disturbance",
       {{"kind", "none"},
        {"force", {0.0, 0.0, 0.0}},
        {"tau_s", 2.0},
        {"sigma_n", 0.0},
        {"vertical", false},
        {"seed", nullptr}}},
      {"mount", {{"roll_rad", 0.0}, {"pitch_rad", 0.0}, {"yaw_rad", 0.0}, {"translation_m", {0.0, 0.0, 0.0}}}},
      {"vac",
       {{"width", 1280},
        {"height", 720},
        {"fov_h_deg", 82.1},
        {"fov_v_deg", nullptr},
        {"sampling", "bilinear"},
        {"fill", {0, 0, 0}},
        {"yaw_lock", false},
        {"upscale", true},
        {"upscale_threshold", 1.0},
        {"upscaler", {{"kind", "bicubic"}, {"command", nullptr}, {"timeout_s", 2.0}}}}},
      {"initial",
       {{"mode", "fixed"},
        {"position", {0.0, 0.0, 50.0}},
        {"yaw_rad", 0.0},
        {"altitude_range_m", {50.0, 100.0}},
        {"x_range_m", {0.0, 0.0}},
        {"y_range_m", {0.0, 0.0}},
        {"yaw_range_rad", {0.0, 0.0}}}},
      {"start_frame", {{"mode", "fixed"}, {"index", 0}}},
      {"command_source", "gateway"},
      {"termination", {{"landing_altitude_m", 1.0}, {"max_ticks", 900}, {"out_of_bounds", "clamp"}}},
      {"realtime", false},
      {"log_path", "session.jsonl"},
      {"gateway",
       {{"endpoint", "127.0.0.1:5600"},
        {"transport", "tcp"},
        {"encoding", nullptr},
        {"timeout_s", 10.0},
        {"accept_timeout_s", nullptr},
        {"disconnect_timeout_s", 5.0},
        {"overview", false},
        {"overview_width", 960}}},
  };
}

json merge_config(const json& user) {
  json doc = default_config_document();
  merge_into(doc, user, "");
  return doc;
}

json load_config_document(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  json user;
  try {
    user = json::parse(ss.str());
  } catch (const json::parse_error& e) {
    throw ConfigError("", path.string() + ": malformed JSON: " + e.what());
  }
  json doc = merge_config(user);
  resolve_paths(doc, fs::absolute(path).parent_path());
  return doc;
}

void apply_override(json& doc, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError(assignment, "override must look like key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);

  json* cur = &doc;
  std::size_t pos = 0;
  while (true) {
    const auto dot = key.find('.', pos);
    const std::string part = key.substr(pos, dot == std::string::npos ? std::string::npos : dot - pos);
    if (!cur->is_object() || !cur->contains(part)) throw ConfigError(key, "unknown configuration key");
    cur = &(*cur)[part];
    if (dot == std::string::npos) break;
    pos = dot + 1;
  }
  if (cur->is_object()) throw ConfigError(key, "cannot override a whole section");
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  *cur = std::move(value);
}

void resolve_paths(json& doc, const fs::path& base_dir) {
  if (doc["manifest"].is_string()) doc["manifest"] = absolute_from(base_dir, doc["manifest"].get<std::string>());
  if (doc["log_path"].is_string()) doc["log_path"] = absolute_from(base_dir, doc["log_path"].get<std::string>());
  if (doc["command_source"].is_string()) {
    const std::string src = doc["command_source"].get<std::string>();
    for (std::string_view scheme : {"scripted:", "replay:"}) {
      if (starts_with(src, scheme)) {
        doc["command_source"] = std::string(scheme) + absolute_from(base_dir, src.substr(scheme.size()));
      }
    }
  }
}

SessionConfig config_from_document(const json& doc) {
  {
    // Reject keys the defaults do not know, even when handed a raw document.
    json probe = default_config_document();
    merge_into(probe, doc, "");
  }
  const Reader r(doc);
  SessionConfig c;
  c.document = doc;
  // Where the log is written does not influence the run.
  c.document["log_path"] = nullptr;

  if (r.is_null("manifest")) throw ConfigError("manifest", "a scenario manifest path is required");
  c.manifest = r.string("manifest");
  if (r.is_null("seed")) throw ConfigError("seed", "seed must be set before the session starts");
  c.seed = r.unsigned_integer("seed");

  c.eav.mass_kg = r.number("eav.mass_kg");
  c.eav.gravity = r.number("eav.gravity");
  c.eav.drag_coeff = r.number("eav.drag_coeff");
  c.eav.dt_s = r.number("eav.dt_s");
  guarded("eav", [&] { c.eav.validate(); });
  c.limits.attitude_max_rad = r.number("eav.attitude_max");
  c.limits.thrust_min_n = r.number("eav.thrust_min");
  c.limits.thrust_max_n = r.is_null("eav.thrust_max") ? 0.0 : r.number("eav.thrust_max");
  if (!r.is_null("eav.thrust_max") && !(c.limits.thrust_max_n > 0.0)) {
    throw ConfigError("eav.thrust_max", "must be > 0");
  }
  c.limits.thrust_headroom = r.number("eav.thrust_headroom");
  c.limits.yaw_rate_max = r.number("eav.yaw_rate_max");
  guarded("eav", [&] { c.limits.validate(); });
  c.attitude_lag_s = r.number("eav.attitude_lag_s");
  if (c.attitude_lag_s < 0.0) throw ConfigError("eav.attitude_lag_s", "must be >= 0");

  c.disturbance.kind =
      guarded("disturbance.kind", [&] { return dynamics::disturbance_kind_from_string(r.string("disturbance.kind")); });
  c.disturbance.force_n = r.vec3("disturbance.force");
  c.disturbance.tau_s = r.number("disturbance.tau_s");
  c.disturbance.sigma_n = r.number("disturbance.sigma_n");
  c.disturbance.vertical = r.boolean("disturbance.vertical");
  c.disturbance.seed =
      r.is_null("disturbance.seed") ? dynamics::derive_seed(c.seed, 1) : r.unsigned_integer("disturbance.seed");
  guarded("disturbance", [&] { c.disturbance.validate(); });

  c.mount.roll_rad = r.number("mount.roll_rad");
  c.mount.pitch_rad = r.number("mount.pitch_rad");
  c.mount.yaw_rad = r.number("mount.yaw_rad");
  c.mount.translation_m = r.vec3("mount.translation_m");

  const auto vw = r.integer("vac.width");
  const auto vh = r.integer("vac.height");
  if (vw <= 0 || vw > 16384) throw ConfigError("vac.width", "must be in [1, 16384]");
  if (vh <= 0 || vh > 16384) throw ConfigError("vac.height", "must be in [1, 16384]");
  c.vac.width = static_cast<int>(vw);
  c.vac.height = static_cast<int>(vh);
  c.vac.fov_h_deg = r.number("vac.fov_h_deg");
  if (!(c.vac.fov_h_deg > 0.0 && c.vac.fov_h_deg < 180.0)) throw ConfigError("vac.fov_h_deg", "must lie in (0, 180)");
  if (!r.is_null("vac.fov_v_deg")) {
    c.vac.fov_v_deg = r.number("vac.fov_v_deg");
    if (!(c.vac.fov_v_deg > 0.0 && c.vac.fov_v_deg < 180.0)) throw ConfigError("vac.fov_v_deg", "must lie in (0, 180)");
  }
  c.vac.render.sampling = guarded("vac.sampling", [&] { return render::sampling_from_string(r.string("vac.sampling")); });
  {
    const json& fill = r.at("vac.fill");
    if (!fill.is_array() || fill.size() != 3) throw ConfigError("vac.fill", "expected [r, g, b]");
    std::array<std::uint8_t, 3> rgb{};
    for (std::size_t i = 0; i < 3; ++i) {
      if (!fill[i].is_number_integer() || fill[i].get<int>() < 0 || fill[i].get<int>() > 255) {
        throw ConfigError("vac.fill", "channels must be integers in [0, 255]");
      }
      rgb[i] = static_cast<std::uint8_t>(fill[i].get<int>());
    }
    c.vac.render.fill = {rgb[0], rgb[1], rgb[2]};
  }
  c.vac.yaw_lock = r.boolean("vac.yaw_lock");
  c.vac.upscale = r.boolean("vac.upscale");
  c.vac.render.upscale_threshold = r.number("vac.upscale_threshold");
  if (!(c.vac.render.upscale_threshold >= 1.0)) throw ConfigError("vac.upscale_threshold", "must be >= 1");
  c.vac.upscaler.kind =
      guarded("vac.upscaler.kind", [&] { return render::upscaler_kind_from_string(r.string("vac.upscaler.kind")); });
  if (!r.is_null("vac.upscaler.command")) c.vac.upscaler.command = r.string("vac.upscaler.command");
  c.vac.upscaler.timeout_s = r.number("vac.upscaler.timeout_s");
  guarded("vac.upscaler", [&] { c.vac.upscaler.validate(); });

  const std::string mode = r.string("initial.mode");
  if (mode != "fixed" && mode != "randomized") throw ConfigError("initial.mode", "must be fixed or randomized");
  c.initial.randomized = mode == "randomized";
  c.initial.position = r.vec3("initial.position");
  c.initial.yaw_rad = r.number("initial.yaw_rad");
  c.initial.altitude_m = r.range("initial.altitude_range_m");
  c.initial.x_m = r.range("initial.x_range_m");
  c.initial.y_m = r.range("initial.y_range_m");
  c.initial.yaw_range_rad = r.range("initial.yaw_range_rad");
  if (c.initial.randomized && !(c.initial.altitude_m.lo > 0.0)) {
    throw ConfigError("initial.altitude_range_m", "altitudes must be > 0");
  }
  if (!c.initial.randomized && !(c.initial.position.z() > 0.0)) {
    throw ConfigError("initial.position", "altitude must be > 0");
  }

  const std::string fmode = r.string("start_frame.mode");
  if (fmode != "fixed" && fmode != "randomized") throw ConfigError("start_frame.mode", "must be fixed or randomized");
  c.start_frame.randomized = fmode == "randomized";
  c.start_frame.index = r.integer("start_frame.index");
  if (c.start_frame.index < 0) throw ConfigError("start_frame.index", "must be >= 0");

  c.command_source = r.string("command_source");
  if (c.command_source != "gateway" && !starts_with(c.command_source, "scripted:") &&
      !starts_with(c.command_source, "replay:")) {
    throw ConfigError("command_source", "must be gateway, scripted:PATH or replay:PATH");
  }

  c.termination.landing_altitude_m = r.number("termination.landing_altitude_m");
  if (!(c.termination.landing_altitude_m > 0.0)) throw ConfigError("termination.landing_altitude_m", "must be > 0");
  c.termination.max_ticks = r.integer("termination.max_ticks");
  if (c.termination.max_ticks < 0) throw ConfigError("termination.max_ticks", "must be >= 0");
  const std::string oob = r.string("termination.out_of_bounds");
  if (oob != "clamp" && oob != "terminate") throw ConfigError("termination.out_of_bounds", "must be clamp or terminate");
  c.termination.out_of_bounds = oob == "clamp" ? OutOfBoundsPolicy::clamp : OutOfBoundsPolicy::terminate;

  c.realtime = r.boolean("realtime");
  c.log_path = r.is_null("log_path") ? std::string("session.jsonl") : r.string("log_path");

  c.gateway.endpoint = r.string("gateway.endpoint");
  const std::string transport = r.string("gateway.transport");
  if (transport != "tcp" && transport != "websocket") throw ConfigError("gateway.transport", "must be tcp or websocket");
  c.gateway.transport = transport == "tcp" ? Transport::tcp : Transport::websocket;
  if (!r.is_null("gateway.encoding")) {
    c.gateway.encoding = r.string("gateway.encoding");
    if (c.gateway.encoding != "rgb8" && c.gateway.encoding != "png") {
      throw ConfigError("gateway.encoding", "must be rgb8 or png");
    }
  }
  c.gateway.timeout_s = r.number("gateway.timeout_s");
  if (!(c.gateway.timeout_s > 0.0)) throw ConfigError("gateway.timeout_s", "must be > 0");
  if (!r.is_null("gateway.accept_timeout_s")) {
    c.gateway.accept_timeout_s = r.number("gateway.accept_timeout_s");
    if (!(c.gateway.accept_timeout_s > 0.0)) throw ConfigError("gateway.accept_timeout_s", "must be > 0 or null");
  }
  c.gateway.disconnect_timeout_s = r.number("gateway.disconnect_timeout_s");
  if (!(c.gateway.disconnect_timeout_s >= 0.0)) throw ConfigError("gateway.disconnect_timeout_s", "must be >= 0");
  c.gateway.overview = r.boolean("gateway.overview");
  const auto ow = r.integer("gateway.overview_width");
  if (ow <= 0) throw ConfigError("gateway.overview_width", "must be > 0");
  c.gateway.overview_width = static_cast<int>(ow);
  return c;
}

std::string config_hash(const SessionConfig& config) { return sha256_hex(canonical(config.document)); }

}  // namespace viva::session
