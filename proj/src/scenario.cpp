#include "viva/scenario.hpp"

#include <cmath>
#include <fstream>
#include <numbers>
#include <set>
#include <sstream>

namespace viva::ingest {
namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

const std::set<std::string>& known_keys() {
  static const std::set<std::string> keys = {"width",     "height",       "fps",
                                             "altitude_m", "fov_h_deg",    "fov_v_deg",
                                             "frame_source", "end_policy", "ground_z"};
  return keys;
}

const nlohmann::json& require(const nlohmann::json& doc, const char* key) {
  auto it = doc.find(key);
  if (it == doc.end() || it->is_null()) {
    throw ManifestError(key, std::string("manifest: missing required field \"") + key + "\"");
  }
  return *it;
}

int positive_int(const nlohmann::json& doc, const char* key) {
  const auto& v = require(doc, key);
  if (!v.is_number_integer()) {
    throw ManifestError(key, std::string("manifest: \"") + key + "\" must be an integer");
  }
  const auto n = v.get<std::int64_t>();
  if (n <= 0 || n > 1 << 20) {
    throw ManifestError(key, std::string("manifest: \"") + key + "\" must be a positive pixel count");
  }
  return static_cast<int>(n);
}

double number(const nlohmann::json& v, const char* key) {
  if (!v.is_number()) {
    throw ManifestError(key, std::string("manifest: \"") + key + "\" must be a number");
  }
  const double x = v.get<double>();
  if (!std::isfinite(x)) {
    throw ManifestError(key, std::string("manifest: \"") + key + "\" must be finite");
  }
  return x;
}

double positive(const nlohmann::json& doc, const char* key) {
  const double x = number(require(doc, key), key);
  if (!(x > 0.0)) {
    throw ManifestError(key, std::string("manifest: \"") + key + "\" must be strictly positive");
  }
  return x;
}

double fov(const nlohmann::json& v, const char* key) {
  const double x = number(v, key);
  if (!(x > 0.0 && x < 180.0)) {
    throw ManifestError(key, std::string("manifest: \"") + key + "\" must lie in (0, 180) degrees");
  }
  return x;
}

}  // namespace

const char* to_string(EndPolicy policy) noexcept {
  switch (policy) {
    case EndPolicy::clamp_last:
      return "clamp-last";
    case EndPolicy::loop:
      return "loop";
    case EndPolicy::terminate:
      return "terminate";
  }
  return "clamp-last";
}

EndPolicy end_policy_from_string(const std::string& text) {
  if (text == "clamp-last") return EndPolicy::clamp_last;
  if (text == "loop") return EndPolicy::loop;
  if (text == "terminate") return EndPolicy::terminate;
  throw ManifestError("end_policy", "manifest: \"end_policy\" must be one of clamp-last, loop, terminate");
}

double derive_fov_v_deg(int width, int height, double fov_h_deg) {
  const double half_h = 0.5 * fov_h_deg * kDegToRad;
  const double ratio = static_cast<double>(height) / static_cast<double>(width);
  return 2.0 * std::atan(ratio * std::tan(half_h)) / kDegToRad;
}

ScenarioManifest parse_manifest(const nlohmann::json& doc, std::filesystem::path base_dir) {
  if (!doc.is_object()) throw ManifestError("", "manifest: document must be a JSON object");
  for (const auto& [key, _] : doc.items()) {
    if (!known_keys().contains(key)) {
      throw ManifestError(key, "manifest: unknown field \"" + key + "\"");
    }
  }

  ScenarioManifest m;
  m.base_dir = std::move(base_dir);
  m.width = positive_int(doc, "width");
  m.height = positive_int(doc, "height");
  m.fps = positive(doc, "fps");
  m.altitude_m = positive(doc, "altitude_m");
  m.fov_h_deg = fov(require(doc, "fov_h_deg"), "fov_h_deg");

  if (auto it = doc.find("fov_v_deg"); it != doc.end() && !it->is_null()) {
    m.fov_v_deg = fov(*it, "fov_v_deg");
  } else {
    m.fov_v_deg = derive_fov_v_deg(m.width, m.height, m.fov_h_deg);
    m.fov_v_derived = true;
  }

  const auto& src = require(doc, "frame_source");
  if (!src.is_string() || src.get<std::string>().empty()) {
    throw ManifestError("frame_source", "manifest: \"frame_source\" must be a non-empty string");
  }
  m.frame_source = src.get<std::string>();

  if (auto it = doc.find("end_policy"); it != doc.end() && !it->is_null()) {
    if (!it->is_string()) {
      throw ManifestError("end_policy", "manifest: \"end_policy\" must be a string");
    }
    m.end_policy = end_policy_from_string(it->get<std::string>());
  }

  if (auto it = doc.find("ground_z"); it != doc.end() && !it->is_null()) {
    if (number(*it, "ground_z") != 0.0) {
      throw ManifestError("ground_z", "manifest: \"ground_z\" must be 0 (scene plane is z = 0)");
    }
  }
  return m;
}

ScenarioManifest parse_manifest_text(const std::string& text, std::filesystem::path base_dir) {
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ManifestError("", std::string("manifest: malformed JSON: ") + e.what());
  }
  return parse_manifest(doc, std::move(base_dir));
}

ScenarioManifest load_manifest(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ManifestError("", "manifest: cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  try {
    return parse_manifest_text(ss.str(), path.parent_path());
  } catch (const ManifestError& e) {
    throw ManifestError(e.field(), path.string() + ": " + e.what());
  }
}

nlohmann::json to_json(const ScenarioManifest& m) {
  return {{"width", m.width},
          {"height", m.height},
          {"fps", m.fps},
          {"altitude_m", m.altitude_m},
          {"fov_h_deg", m.fov_h_deg},
          {"fov_v_deg", m.fov_v_deg},
          {"frame_source", m.frame_source},
          {"end_policy", to_string(m.end_policy)},
          {"ground_z", m.ground_z}};
}

}  // namespace viva::ingest
