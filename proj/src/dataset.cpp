#include "viva/dataset.hpp"

#include <fmt/format.h>

#include <fstream>
#include <optional>

#include "viva/image_io.hpp"
#include "viva/json_format.hpp"

namespace viva::session {
namespace {

namespace fs = std::filesystem;
using nlohmann::json;

struct PendingSample {
  std::int64_t tick = 0;
  std::string file;
  json meta;
  Image pixels;
};

}  // namespace

json sample_metadata(const render::VacFrame& f, const std::string& image_file, std::uint64_t seed) {
  json h = json::array();
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) h.push_back(f.homography.h(r, c));
  }
  json corners = json::array();
  for (const auto& p : f.footprint_corners_src) corners.push_back({p.x(), p.y()});
  const auto& t = f.eav_pose.translation;
  return {{"image", image_file},
          {"tick", f.tick},
          {"sim_time_s", f.sim_time_s},
          {"eav_pose",
           {{"position", {t.x(), t.y(), t.z()}},
            {"roll", f.roll_rad},
            {"pitch", f.pitch_rad},
            {"yaw", f.yaw_rad}}},
          {"yaw", f.yaw_rad},
          {"altitude", t.z()},
          {"homography", h},
          {"footprint_corners_src", corners},
          {"frame_index", f.frame_index},
          {"scale_factor", f.scale_factor},
          {"upscaled", f.upscaled},
          {"coverage", f.coverage},
          {"seed", seed}};
}

DatasetSummary export_dataset(const SessionLog& log, const fs::path& out_dir, std::int64_t stride) {
  if (stride < 1) throw DatasetError("stride must be >= 1");
  const SessionConfig config = config_from_log(log);
  const ingest::ScenarioManifest manifest = load_session_manifest(config);
  std::shared_ptr<ingest::FrameSource> frames = ingest::open_frame_source(manifest);
  if (!frames->random_access()) {
    throw DatasetError("dataset export needs a random-access frame source; \"" + manifest.frame_source +
                       "\" is sequential");
  }

  const fs::path images = out_dir / "images";
  std::error_code ec;
  fs::create_directories(images, ec);
  if (ec) throw DatasetError("cannot create " + images.string() + ": " + ec.message());
  std::ofstream meta(out_dir / "meta.jsonl", std::ios::binary | std::ios::trunc);
  if (!meta) throw DatasetError("cannot write " + (out_dir / "meta.jsonl").string());

  const std::uint64_t seed = log.header().seed;
  std::optional<PendingSample> pending;
  std::int64_t samples = 0;

  RunOptions options;
  options.frames = frames;
  options.render = true;
  options.frame_sink = [&](const render::VacFrame& frame, const Image&) {
    pending.reset();
    if (frame.tick % stride != 0) return;
    PendingSample s;
    s.tick = frame.tick;
    s.file = fmt::format("images/{:06d}.png", frame.tick);
    s.meta = sample_metadata(frame, s.file, seed);
    s.pixels = frame.pixels;
    pending = std::move(s);
  };
  // Only ticks that end up in the log are exported.
  options.on_record = [&](const TickRecord& rec) {
    if (!pending || pending->tick != rec.tick) return;
    try {
      image_io::write_png(out_dir / pending->file, pending->pixels);
    } catch (const std::exception& e) {
      throw DatasetError(e.what());
    }
    meta << dump_exact(pending->meta) << '\n';
    if (!meta) throw DatasetError("error writing meta.jsonl");
    ++samples;
    pending.reset();
  };

  const SessionLog reproduced = replay(log, options);
  meta.close();

  const auto vac = config.vac.intrinsics();
  DatasetSummary summary;
  summary.samples = samples;
  summary.stride = stride;
  summary.out_dir = out_dir;
  summary.document = {
      {"samples", samples},
      {"stride", stride},
      {"seed", seed},
      {"config_hash", log.header().config_hash},
      {"manifest_hash", log.header().manifest_hash},
      {"ticks", static_cast<std::int64_t>(reproduced.records().size())},
      {"status", to_string(reproduced.terminal()->status)},
      {"images", "images"},
      {"meta", "meta.jsonl"},
      {"source", {{"width", manifest.width}, {"height", manifest.height}, {"fps", manifest.fps},
                  {"altitude_m", manifest.altitude_m}}},
      {"vac",
       {{"width", vac.width},
        {"height", vac.height},
        {"focal_u_px", vac.focal_u_px},
        {"focal_v_px", vac.focal_v_px},
        {"principal_u", vac.principal_u},
        {"principal_v", vac.principal_v}}},
  };
  std::ofstream out(out_dir / "dataset.json", std::ios::binary | std::ios::trunc);
  out << summary.document.dump(2) << '\n';
  if (!out) throw DatasetError("cannot write " + (out_dir / "dataset.json").string());
  return summary;
}

}  // namespace viva::session
