#pragma once

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <string>
#include <sys/wait.h>
#include <unistd.h>

#include "json.hpp"
#include "viva/session_config.hpp"

namespace viva::test {

namespace fs = std::filesystem;

// Scratch directory removed on destruction.
class TempDir {
 public:
  TempDir() {
    std::string pattern = (fs::temp_directory_path() / "viva-test-XXXXXX").string();
    if (::mkdtemp(pattern.data()) == nullptr) throw std::runtime_error("mkdtemp failed");
    path_ = pattern;
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const noexcept { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << text;
}

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct SyntheticScene {
  int width = 1920;
  int height = 1080;
  double fps = 30.0;
  double altitude_m = 100.0;
  double fov_h_deg = 82.1;
  int frames = 60;
  int cell = 64;
  std::string end_policy = "loop";
};

inline nlohmann::json synthetic_manifest(const SyntheticScene& s) {
  return {{"width", s.width},
          {"height", s.height},
          {"fps", s.fps},
          {"altitude_m", s.altitude_m},
          {"fov_h_deg", s.fov_h_deg},
          {"frame_source",
           "synthetic:checkerboard?cell=" + std::to_string(s.cell) + "&frames=" + std::to_string(s.frames)},
          {"end_policy", s.end_policy}};
}

inline fs::path write_manifest(const fs::path& dir, const SyntheticScene& s = {},
                               const std::string& name = "manifest.json") {
  const fs::path p = dir / name;
  write_text(p, synthetic_manifest(s).dump());
  return p;
}

// Config document over the defaults with a manifest, a seed and overrides.
inline nlohmann::json config_doc(const fs::path& manifest, std::uint64_t seed,
                                 std::initializer_list<std::string> overrides = {}) {
  nlohmann::json doc = session::merge_config(nlohmann::json::object());
  doc["manifest"] = manifest.string();
  doc["seed"] = seed;
  doc["vac"]["width"] = 320;
  doc["vac"]["height"] = 180;
  for (const auto& o : overrides) session::apply_override(doc, o);
  return doc;
}

inline session::SessionConfig make_config(const fs::path& manifest, std::uint64_t seed,
                                          std::initializer_list<std::string> overrides = {}) {
  return session::config_from_document(config_doc(manifest, seed, overrides));
}

// Exit status of a shell command, with stdout and stderr captured to a file.
struct CommandResult {
  int exit_code = -1;
  std::string output;
};

inline CommandResult run_command(const std::string& command, const fs::path& capture) {
  const std::string full = command + " >" + capture.string() + " 2>&1";
  const int raw = std::system(full.c_str());
  CommandResult r;
  r.exit_code = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
  std::error_code ec;
  if (fs::exists(capture, ec)) r.output = read_text(capture);
  return r;
}

}  // namespace viva::test
