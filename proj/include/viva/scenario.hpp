#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "viva/image.hpp"

namespace viva::ingest {

enum class EndPolicy { clamp_last, loop, terminate };

const char* to_string(EndPolicy policy) noexcept;
EndPolicy end_policy_from_string(const std::string& text);

// Recorded-scene metadata. The scene is assumed planar at ground_z = 0 and the
// recording camera nadir-looking at altitude_m.
struct ScenarioManifest {
  int width = 0;
  int height = 0;
  double fps = 0.0;
  double altitude_m = 0.0;
  double fov_h_deg = 0.0;
  double fov_v_deg = 0.0;
  bool fov_v_derived = false;
  std::string frame_source;
  EndPolicy end_policy = EndPolicy::clamp_last;
  double ground_z = 0.0;
  // Directory the manifest was loaded from; relative frame_source paths resolve here.
  std::filesystem::path base_dir;
};

// Validation failure. field() names the offending manifest key ("" for
// document-level problems such as a missing file or malformed JSON).
class ManifestError : public std::runtime_error {
 public:
  ManifestError(std::string field, const std::string& what)
      : std::runtime_error(what), field_(std::move(field)) {}
  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Vertical FoV such that tan(v/2) / tan(h/2) = height / width.
double derive_fov_v_deg(int width, int height, double fov_h_deg);

ScenarioManifest load_manifest(const std::filesystem::path& path);
ScenarioManifest parse_manifest(const nlohmann::json& doc, std::filesystem::path base_dir = {});
ScenarioManifest parse_manifest_text(const std::string& text, std::filesystem::path base_dir = {});

// Canonical document (derived fov_v included, base_dir excluded).
nlohmann::json to_json(const ScenarioManifest& manifest);

struct Frame {
  std::int64_t index = 0;
  std::shared_ptr<const Image> pixels;
  double timestamp_s = 0.0;
};

class FrameSourceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FrameSource {
 public:
  virtual ~FrameSource() = default;

  virtual int width() const = 0;
  virtual int height() const = 0;
  virtual bool random_access() const = 0;
  // Unknown for a pipe until it reaches end of stream.
  virtual std::optional<std::int64_t> frame_count() const = 0;
  // Returns the frame at a physical index, or nullopt past the end of the
  // stream. Sequential sources throw when asked for an index before the last
  // one they delivered.
  virtual std::optional<Frame> read(std::int64_t index) = 0;
};

std::unique_ptr<FrameSource> open_frame_source(const ScenarioManifest& manifest);

// floor(t * fps); the small bias absorbs representation error in tick * dt.
std::int64_t frame_index_for_time(double sim_time_s, double fps);

// Applies the manifest's end policy to a logical frame index. nullopt means the
// session must end (terminate policy, or an exhausted stream under terminate).
std::optional<Frame> frame_by_index(FrameSource& source, const ScenarioManifest& manifest,
                                    std::int64_t logical_index);

// The physical index frame_by_index would read for a stream of known length,
// without reading it. nullopt under the terminate policy past the end.
std::optional<std::int64_t> physical_frame_index(std::int64_t logical_index, std::int64_t frame_count,
                                                 EndPolicy policy);

std::optional<Frame> frame_at(FrameSource& source, const ScenarioManifest& manifest,
                              double sim_time_s);

// Procedural test pattern used by the synthetic source and the benchmark.
Image synthetic_checkerboard(int width, int height, int cell, std::int64_t index);

// Writes the raw pipe stream header ("VIVAFRM0" + BE width + BE height).
std::string raw_pipe_header(int width, int height);

}  // namespace viva::ingest
