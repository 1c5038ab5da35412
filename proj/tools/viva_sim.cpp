// viva-sim: run, replay, export, validate and benchmark emulated-flight sessions.

#include <CLI11.hpp>
#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <numeric>
#include <random>
#include <regex>

#include "viva/dataset.hpp"
#include "viva/gateway.hpp"
#include "viva/scenario.hpp"
#include "viva/session.hpp"
#include "viva/session_config.hpp"

namespace {

namespace fs = std::filesystem;
using nlohmann::json;
using namespace viva;

constexpr int kExitOk = 0;
constexpr int kExitConfig = 1;
constexpr int kExitAbort = 2;

struct Common {
  std::string config_path;
  std::vector<std::string> overrides;
  std::optional<std::uint64_t> seed;
  std::string endpoint;
  bool realtime = false;
  std::optional<std::int64_t> ticks;
  std::string vac;
  int verbosity = 0;
  bool quiet = false;
};

std::pair<int, int> parse_dims(const std::string& text, const char* flag) {
  static const std::regex re(R"((\d{1,6})[xX](\d{1,6}))");
  std::smatch m;
  if (!std::regex_match(text, m, re)) {
    throw session::ConfigError(flag, "expected WIDTHxHEIGHT, got \"" + text + "\"");
  }
  const int w = std::stoi(m[1]);
  const int h = std::stoi(m[2]);
  if (w <= 0 || h <= 0) throw session::ConfigError(flag, "dimensions must be positive");
  return {w, h};
}

// Config file (or defaults), --set overrides, then the dedicated flags.
json build_document(const Common& c, bool need_seed) {
  json doc = c.config_path.empty() ? session::default_config_document() : session::load_config_document(c.config_path);
  for (const auto& o : c.overrides) session::apply_override(doc, o);
  session::resolve_paths(doc, fs::current_path());
  if (c.seed) doc["seed"] = *c.seed;
  if (!c.endpoint.empty()) doc["gateway"]["endpoint"] = c.endpoint;
  if (c.realtime) doc["realtime"] = true;
  if (c.ticks) doc["termination"]["max_ticks"] = *c.ticks;
  if (!c.vac.empty()) {
    const auto [w, h] = parse_dims(c.vac, "--vac");
    doc["vac"]["width"] = w;
    doc["vac"]["height"] = h;
  }
  if (need_seed && doc["seed"].is_null()) {
    std::random_device rd;
    const std::uint64_t seed = (std::uint64_t{rd()} << 32) | rd();
    doc["seed"] = seed;
    std::printf("seed: %llu (random)\n", static_cast<unsigned long long>(seed));
  }
  return doc;
}

void configure_logging(const Common& c) {
  if (c.quiet) {
    spdlog::set_level(spdlog::level::warn);
  } else if (c.verbosity >= 2) {
    spdlog::set_level(spdlog::level::trace);
  } else if (c.verbosity == 1) {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::info);
  }
  spdlog::set_pattern("[%H:%M:%S.%e] [%^%l%$] %v");
}

int exit_code_for(session::Status status) { return status == session::Status::aborted ? kExitAbort : kExitOk; }

void print_terminal(const session::SessionLog& log) {
  const auto& t = *log.terminal();
  std::printf("status: %s\n", session::to_string(t.status));
  std::printf("ticks: %lld\n", static_cast<long long>(log.records().size()));
  std::printf("final_pos: [%.6f, %.6f, %.6f]\n", t.pos.x(), t.pos.y(), t.pos.z());
  if (!t.reason.empty()) std::printf("reason: %s\n", t.reason.c_str());
}

int cmd_run(const Common& c, bool force_gateway) {
  json doc = build_document(c, true);
  if (force_gateway) doc["command_source"] = "gateway";
  const session::SessionConfig config = session::config_from_document(doc);
  std::unique_ptr<session::CommandSource> source = session::make_command_source(config);
  std::unique_ptr<gateway::GatewaySource> gw;
  if (!source) {
    gw = std::make_unique<gateway::GatewaySource>(gateway::options_from_config(config));
    std::printf("listening: %s:%u\n", gateway::Endpoint::parse(config.gateway.endpoint).host.c_str(), gw->port());
    std::fflush(stdout);
  }
  session::CommandSource& src = source ? *source : *gw;
  const session::SessionLog log = session::run_session(config, src);
  log.write(config.log_path);
  std::printf("seed: %llu\n", static_cast<unsigned long long>(config.seed));
  print_terminal(log);
  std::printf("log: %s\n", config.log_path.string().c_str());
  return exit_code_for(log.terminal()->status);
}

int cmd_replay(const std::string& path) {
  session::SessionLog log;
  try {
    log = session::SessionLog::read(path);
  } catch (const session::LogError& e) {
    if (e.tick() >= 0) {
      std::printf("divergence at tick %lld\n", static_cast<long long>(e.tick()));
      std::fprintf(stderr, "error: %s\n", e.what());
      return kExitAbort;
    }
    throw;
  }
  try {
    const session::SessionLog out = session::replay(log);
    std::printf("replay: identical (%lld ticks, status %s)\n", static_cast<long long>(out.records().size()),
                session::to_string(out.terminal()->status));
    return kExitOk;
  } catch (const session::DivergenceError& e) {
    std::printf("divergence at tick %lld\n", static_cast<long long>(e.tick()));
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitAbort;
  }
}

int cmd_export(const std::string& path, const std::string& out, std::int64_t stride) {
  if (out.empty()) throw session::ConfigError("--out", "an output directory is required");
  const session::SessionLog log = session::SessionLog::read(path);
  const auto summary = session::export_dataset(log, out, stride);
  std::printf("exported: %lld samples to %s\n", static_cast<long long>(summary.samples), out.c_str());
  return kExitOk;
}

int cmd_validate(const std::string& path) {
  try {
    const auto m = ingest::load_manifest(path);
    std::printf("%s\n", ingest::to_json(m).dump(2).c_str());
    return kExitOk;
  } catch (const ingest::ManifestError& e) {
    if (e.field().empty()) {
      std::fprintf(stderr, "error: %s: %s\n", path.c_str(), e.what());
    } else {
      std::fprintf(stderr, "error: %s: %s: %s\n", path.c_str(), e.field().c_str(), e.what());
    }
    return kExitConfig;
  }
}

struct BenchArgs {
  std::string manifest;
  std::string source = "7680x4320";
  int cell = 64;
  bool json_out = false;
};

int cmd_bench(const Common& c, const BenchArgs& b) {
  Common cc = c;
  if (!cc.ticks) cc.ticks = 300;
  if (cc.vac.empty()) cc.vac = "1280x720";
  json doc = build_document(cc, false);
  if (doc["seed"].is_null()) doc["seed"] = 0;
  doc["command_source"] = "gateway";  // replaced by a constant hover source below

  ingest::ScenarioManifest manifest;
  if (!b.manifest.empty()) {
    manifest = ingest::load_manifest(b.manifest);
  } else {
    const auto [w, h] = parse_dims(b.source, "--source");
    json m = {{"width", w},
              {"height", h},
              {"fps", 30.0},
              {"altitude_m", 100.0},
              {"fov_h_deg", 82.1},
              {"frame_source", fmt::format("synthetic:checkerboard?cell={}&frames=1", b.cell)},
              {"end_policy", "clamp-last"}};
    manifest = ingest::parse_manifest(m);
  }
  if (doc["manifest"].is_null()) doc["manifest"] = b.manifest.empty() ? std::string("<synthetic>") : b.manifest;
  const session::SessionConfig config = session::config_from_document(doc);

  std::vector<double> latencies;
  latencies.reserve(static_cast<std::size_t>(std::max<std::int64_t>(0, *cc.ticks)));
  auto last = std::chrono::steady_clock::now();
  std::size_t upscaled = 0;

  session::RunOptions options;
  options.manifest = manifest;
  options.frames = ingest::open_frame_source(manifest);
  options.render = true;
  options.frame_sink = [&](const render::VacFrame& f, const Image&) { upscaled += f.upscaled ? 1 : 0; };
  options.on_record = [&](const session::TickRecord&) {
    const auto now = std::chrono::steady_clock::now();
    latencies.push_back(std::chrono::duration<double, std::milli>(now - last).count());
    last = now;
  };
  // Frame generation and decoding happen once, before the clock starts.
  (void)ingest::frame_by_index(*options.frames, manifest, 0);

  session::ConstantSource hover(session::CommandInput{dynamics::Stick{}, false, std::nullopt});
  const auto start = std::chrono::steady_clock::now();
  last = start;
  const session::SessionLog log = session::run_session(config, hover, options);
  const double total_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();

  json report = {{"ticks", latencies.size()},
                 {"source", {{"width", manifest.width}, {"height", manifest.height}}},
                 {"vac", {{"width", config.vac.width}, {"height", config.vac.height}}},
                 {"status", session::to_string(log.terminal()->status)}};
  if (!latencies.empty()) {
    std::vector<double> sorted = latencies;
    std::sort(sorted.begin(), sorted.end());
    const auto p99_index = static_cast<std::size_t>(std::ceil(0.99 * static_cast<double>(sorted.size()))) - 1;
    const double mean_ms = std::accumulate(latencies.begin(), latencies.end(), 0.0) / static_cast<double>(latencies.size());
    report["fps_mean"] = static_cast<double>(latencies.size()) / total_s;
    report["latency_ms_mean"] = mean_ms;
    report["latency_ms_p99"] = sorted[p99_index];
    report["latency_ms_max"] = sorted.back();
    report["upscaled_ticks"] = upscaled;
  }
  if (b.json_out) {
    std::printf("%s\n", report.dump(2).c_str());
  } else {
    std::printf("ticks: %zu\n", latencies.size());
    std::printf("source: %dx%d  vac: %dx%d\n", manifest.width, manifest.height, config.vac.width, config.vac.height);
    if (!latencies.empty()) {
      std::printf("fps_mean: %.2f\n", report["fps_mean"].get<double>());
      std::printf("latency_ms_mean: %.3f\n", report["latency_ms_mean"].get<double>());
      std::printf("latency_ms_p99: %.3f\n", report["latency_ms_p99"].get<double>());
    }
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"viva-sim: emulated aerial vehicle flying inside pre-recorded nadir video"};
  app.require_subcommand(1);
  Common common;
  app.add_option("--config", common.config_path, "Session config (JSON)");
  app.add_option("--set", common.overrides, "Override a config key: key.path=value (repeatable)")->take_all();
  app.add_option("--seed", common.seed, "Session seed; a random one is chosen and printed when absent");
  app.add_option("--endpoint", common.endpoint, "Gateway endpoint host:port");
  app.add_flag("--realtime", common.realtime, "Pace ticks by the wall clock");
  app.add_option("--ticks", common.ticks, "Tick limit");
  app.add_option("--vac", common.vac, "VAC output size WxH");
  app.add_flag("-v,--verbose", common.verbosity, "More logging (repeatable)");
  app.add_flag("-q,--quiet", common.quiet, "Warnings and errors only");

  auto* run = app.add_subcommand("run", "Run a session");
  auto* serve = app.add_subcommand("serve", "Run a session driven by a gateway controller");

  std::string log_path;
  auto* replay = app.add_subcommand("replay", "Re-execute a session log and check it reproduces bit-exactly");
  replay->add_option("log", log_path, "Session log")->required();

  std::string out_dir;
  std::int64_t stride = 1;
  auto* exp = app.add_subcommand("export-dataset", "Export VAC images and metadata from a session log");
  exp->add_option("log", log_path, "Session log")->required();
  exp->add_option("--out", out_dir, "Output directory")->required();
  exp->add_option("--stride", stride, "Export every Nth tick")->check(CLI::PositiveNumber);

  std::string manifest_path;
  auto* validate = app.add_subcommand("validate-manifest", "Check a scenario manifest");
  validate->add_option("manifest", manifest_path, "Manifest file")->required();

  BenchArgs bench_args;
  auto* bench = app.add_subcommand("bench", "Measure per-tick render throughput");
  bench->add_option("--manifest", bench_args.manifest, "Scenario manifest (default: synthetic source)");
  bench->add_option("--source", bench_args.source, "Synthetic source size WxH");
  bench->add_option("--cell", bench_args.cell, "Synthetic checkerboard cell size")->check(CLI::PositiveNumber);
  bench->add_flag("--json", bench_args.json_out, "Print the report as JSON");

  for (auto* sub : {run, serve, replay, exp, validate, bench}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }
  configure_logging(common);

  try {
    if (*run) return cmd_run(common, false);
    if (*serve) return cmd_run(common, true);
    if (*replay) return cmd_replay(log_path);
    if (*exp) return cmd_export(log_path, out_dir, stride);
    if (*validate) return cmd_validate(manifest_path);
    if (*bench) return cmd_bench(common, bench_args);
  } catch (const session::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const ingest::ManifestError& e) {
    std::fprintf(stderr, "manifest error: %s%s%s\n", e.field().c_str(), e.field().empty() ? "" : ": ", e.what());
    return kExitConfig;
  } catch (const session::LogError& e) {
    std::fprintf(stderr, "log error: %s\n", e.what());
    return kExitAbort;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitAbort;
  }
  return kExitOk;
}
