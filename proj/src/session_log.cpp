#include "viva/session_log.hpp"

#include <fstream>
#include <sstream>

#include "viva/digest.hpp"
#include "viva/json_format.hpp"

namespace viva::session {
namespace {

using nlohmann::json;

json vec_json(const dynamics::Vec3& v) { return {v.x(), v.y(), v.z()}; }

dynamics::Vec3 vec_from(const json& v, const char* key) {
  if (!v.is_array() || v.size() != 3 || !v[0].is_number() || !v[1].is_number() || !v[2].is_number()) {
    throw std::invalid_argument(std::string("\"") + key + "\" must be 3 numbers");
  }
  return {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
}

double num(const json& doc, const char* key) {
  const json& v = doc.at(key);
  if (!v.is_number()) throw std::invalid_argument(std::string("\"") + key + "\" must be a number");
  return v.get<double>();
}

std::string chain_step(const std::string& previous, const std::string& content) {
  return sha256_hex(previous + "\n" + content);
}

}  // namespace

const char* to_string(Status status) noexcept {
  switch (status) {
    case Status::running: return "running";
    case Status::landed: return "landed";
    case Status::out_of_bounds: return "out-of-bounds";
    case Status::max_ticks: return "max-ticks";
    case Status::aborted: return "aborted";
  }
  return "unknown";
}

Status status_from_string(const std::string& text) {
  for (Status s : {Status::running, Status::landed, Status::out_of_bounds, Status::max_ticks, Status::aborted}) {
    if (text == to_string(s)) return s;
  }
  throw std::invalid_argument("unknown status \"" + text + "\"");
}

json to_json(const TickRecord& r) {
  json corners = json::array();
  for (const auto& c : r.footprint_corners_src) corners.push_back({c.x(), c.y()});
  return {{"type", "tick"},
          {"tick", r.tick},
          {"sim_time_s", r.sim_time_s},
          {"frame_index", r.frame_index},
          {"pos", vec_json(r.pos)},
          {"vel", vec_json(r.vel)},
          {"cmd", {{"roll", r.cmd.roll_rad}, {"pitch", r.cmd.pitch_rad}, {"yaw", r.cmd.yaw_rad}, {"thrust", r.cmd.thrust_n}}},
          {"disturbance", vec_json(r.disturbance)},
          {"footprint_corners_src", corners},
          {"scale_factor", r.scale_factor},
          {"coverage", r.coverage},
          {"clamped", r.clamped}};
}

TickRecord tick_record_from_json(const json& doc) {
  TickRecord r;
  r.tick = doc.at("tick").get<std::int64_t>();
  r.sim_time_s = num(doc, "sim_time_s");
  r.frame_index = doc.at("frame_index").get<std::int64_t>();
  r.pos = vec_from(doc.at("pos"), "pos");
  r.vel = vec_from(doc.at("vel"), "vel");
  const json& c = doc.at("cmd");
  r.cmd = {num(c, "roll"), num(c, "pitch"), num(c, "yaw"), num(c, "thrust")};
  r.disturbance = vec_from(doc.at("disturbance"), "disturbance");
  const json& corners = doc.at("footprint_corners_src");
  if (!corners.is_array() || corners.size() != 4) throw std::invalid_argument("footprint_corners_src must have 4 corners");
  for (std::size_t i = 0; i < 4; ++i) {
    r.footprint_corners_src[i] = {corners[i].at(0).get<double>(), corners[i].at(1).get<double>()};
  }
  r.scale_factor = num(doc, "scale_factor");
  r.coverage = num(doc, "coverage");
  r.clamped = doc.at("clamped").get<bool>();
  return r;
}

SessionLog::SessionLog(LogHeader header) : header_(std::move(header)) {
  push_line({{"type", "header"},
             {"version", header_.version},
             {"config_hash", header_.config_hash},
             {"manifest_hash", header_.manifest_hash},
             {"seed", header_.seed},
             {"config", header_.config}});
}

void SessionLog::push_line(json doc) {
  chain_ = chain_step(chain_, dump_exact(doc));
  doc["chain"] = chain_;
  lines_.push_back(dump_exact(doc));
}

void SessionLog::append(const TickRecord& record) {
  if (terminal_) throw std::logic_error("SessionLog: append after finish");
  const std::int64_t expected = static_cast<std::int64_t>(records_.size());
  if (record.tick != expected) throw std::logic_error("SessionLog: ticks must be contiguous from 0");
  records_.push_back(record);
  push_line(to_json(record));
}

void SessionLog::finish(const TerminalRecord& terminal) {
  if (terminal_) throw std::logic_error("SessionLog: finished twice");
  terminal_ = terminal;
  push_line({{"type", "terminal"},
             {"tick", terminal.tick},
             {"status", to_string(terminal.status)},
             {"pos", vec_json(terminal.pos)},
             {"reason", terminal.reason}});
}

std::string SessionLog::text() const {
  std::string out;
  for (const auto& l : lines_) {
    out += l;
    out.push_back('\n');
  }
  return out;
}

void SessionLog::write(const std::filesystem::path& path) const {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write log " + path.string());
  const std::string t = text();
  out.write(t.data(), static_cast<std::streamsize>(t.size()));
  if (!out) throw std::runtime_error("error writing log " + path.string());
}

SessionLog SessionLog::parse(const std::string& text) {
  SessionLog log;
  std::istringstream in(text);
  std::string line;
  std::int64_t line_no = 0;
  std::string chain;
  while (std::getline(in, line)) {
    // Line 0 is the header; line k + 1 holds tick k.
    const std::int64_t tick = line_no - 1;
    const std::string where = line_no == 0 ? std::string("header") : "tick " + std::to_string(tick);
    if (log.terminal_) throw LogError(tick, where + ": content after the terminal record");
    json doc = json::parse(line, nullptr, false);
    if (doc.is_discarded() || !doc.is_object()) throw LogError(tick, where + ": malformed JSON");
    // Equal values can be spelled differently (e.g. an extra digit that rounds
    // back to the same double); only the canonical spelling is accepted.
    if (dump_exact(doc) != line) throw LogError(tick, where + ": non-canonical encoding (record altered)");
    auto chain_it = doc.find("chain");
    if (chain_it == doc.end() || !chain_it->is_string()) throw LogError(tick, where + ": missing chain");
    const std::string stated = chain_it->get<std::string>();
    doc.erase(chain_it);
    chain = chain_step(chain, dump_exact(doc));
    if (chain != stated) throw LogError(tick, where + ": chain mismatch (record altered)");

    try {
      const std::string type = doc.at("type").get<std::string>();
      if (line_no == 0) {
        if (type != "header") throw std::invalid_argument("first line must be the header");
        LogHeader h;
        h.version = doc.at("version").get<int>();
        if (h.version != kLogVersion) throw std::invalid_argument("unsupported log version");
        h.config_hash = doc.at("config_hash").get<std::string>();
        h.manifest_hash = doc.at("manifest_hash").get<std::string>();
        h.seed = doc.at("seed").get<std::uint64_t>();
        h.config = doc.at("config");
        log.header_ = std::move(h);
      } else if (type == "tick") {
        TickRecord r = tick_record_from_json(doc);
        if (r.tick != tick) throw std::invalid_argument("tick out of sequence");
        log.records_.push_back(r);
      } else if (type == "terminal") {
        TerminalRecord t;
        t.tick = doc.at("tick").get<std::int64_t>();
        t.status = status_from_string(doc.at("status").get<std::string>());
        t.pos = vec_from(doc.at("pos"), "pos");
        t.reason = doc.at("reason").get<std::string>();
        if (t.tick != static_cast<std::int64_t>(log.records_.size()) - 1) {
          throw std::invalid_argument("terminal tick does not match the record count");
        }
        log.terminal_ = t;
      } else {
        throw std::invalid_argument("unknown record type \"" + type + "\"");
      }
    } catch (const LogError&) {
      throw;
    } catch (const std::exception& e) {
      throw LogError(tick, where + ": " + e.what());
    }
    log.lines_.push_back(line);
    ++line_no;
  }
  if (line_no == 0) throw LogError(-1, "empty log");
  log.chain_ = chain;
  return log;
}

SessionLog SessionLog::read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LogError(-1, "cannot read log " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

}  // namespace viva::session
