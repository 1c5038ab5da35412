#include "viva/wire.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "viva/image_io.hpp"
#include "viva/json_format.hpp"

namespace viva::gateway {
namespace {

using nlohmann::json;

std::uint32_t read_be32(const std::uint8_t* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

std::size_t declared_payload(const json& header) {
  auto it = header.find("payload_bytes");
  if (it == header.end()) return 0;
  if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
    throw ProtocolError(ProtocolErrc::bad_payload_length, "payload_bytes must be a non-negative integer");
  }
  const auto n = it->get<std::uint64_t>();
  if (n > kMaxPayloadBytes) throw ProtocolError(ProtocolErrc::bad_payload_length, "payload_bytes exceeds limit");
  return static_cast<std::size_t>(n);
}

const json& field(const json& h, const char* key) {
  auto it = h.find(key);
  if (it == h.end()) throw ProtocolError(ProtocolErrc::invalid_field, std::string("missing field \"") + key + "\"");
  return *it;
}

double number(const json& h, const char* key) {
  const json& v = field(h, key);
  if (!v.is_number()) throw ProtocolError(ProtocolErrc::invalid_field, std::string("\"") + key + "\" must be a number");
  const double d = v.get<double>();
  if (!std::isfinite(d)) throw ProtocolError(ProtocolErrc::invalid_field, std::string("\"") + key + "\" must be finite");
  return d;
}

std::int64_t integer(const json& h, const char* key) {
  const json& v = field(h, key);
  if (!v.is_number_integer()) {
    throw ProtocolError(ProtocolErrc::invalid_field, std::string("\"") + key + "\" must be an integer");
  }
  return v.get<std::int64_t>();
}

dynamics::Vec3 vec3(const json& h, const char* key) {
  const json& v = field(h, key);
  if (!v.is_array() || v.size() != 3) {
    throw ProtocolError(ProtocolErrc::invalid_field, std::string("\"") + key + "\" must be 3 numbers");
  }
  dynamics::Vec3 out;
  for (std::size_t i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw ProtocolError(ProtocolErrc::invalid_field, std::string("\"") + key + "\" must be 3 numbers");
    out[static_cast<int>(i)] = v[i].get<double>();
  }
  return out;
}

json corners_json(const std::array<geometry::Vec2, 4>& c) {
  json a = json::array();
  for (const auto& p : c) a.push_back({p.x(), p.y()});
  return a;
}

std::array<geometry::Vec2, 4> corners_from(const json& v) {
  if (!v.is_array() || v.size() != 4) {
    throw ProtocolError(ProtocolErrc::invalid_field, "footprint_corners_src must be 4 [u, v] pairs");
  }
  std::array<geometry::Vec2, 4> out;
  for (std::size_t i = 0; i < 4; ++i) {
    if (!v[i].is_array() || v[i].size() != 2 || !v[i][0].is_number() || !v[i][1].is_number()) {
      throw ProtocolError(ProtocolErrc::invalid_field, "footprint_corners_src must be 4 [u, v] pairs");
    }
    out[i] = {v[i][0].get<double>(), v[i][1].get<double>()};
  }
  return out;
}

std::vector<std::uint8_t> encode_image(const Image& image, Encoding encoding) {
  if (encoding == Encoding::rgb8) return image.storage();
  return image_io::encode_png(image);
}

Image decode_image(const WireMessage& m, Encoding encoding, int width, int height) {
  if (width <= 0 || height <= 0) throw ProtocolError(ProtocolErrc::invalid_field, "image dimensions must be positive");
  if (encoding == Encoding::rgb8) {
    if (m.payload.size() != Image::byte_size(width, height)) {
      throw ProtocolError(ProtocolErrc::payload_mismatch, "rgb8 payload_bytes must equal width*height*3");
    }
    return Image(width, height, m.payload);
  }
  Image img;
  try {
    img = image_io::decode_png(m.payload);
  } catch (const image_io::CodecError& e) {
    throw ProtocolError(ProtocolErrc::invalid_field, std::string("png payload: ") + e.what());
  }
  if (img.width() != width || img.height() != height) {
    throw ProtocolError(ProtocolErrc::payload_mismatch, "png payload dimensions differ from header");
  }
  return img;
}

void expect_type(const WireMessage& m, const char* type) {
  if (m.type() != type) {
    throw ProtocolError(ProtocolErrc::unexpected_message, "expected a \"" + std::string(type) + "\" message, got \"" + m.type() + "\"");
  }
}

}  // namespace

const char* to_string(ProtocolErrc code) noexcept {
  switch (code) {
    case ProtocolErrc::truncated: return "truncated";
    case ProtocolErrc::header_too_large: return "header_too_large";
    case ProtocolErrc::malformed_json: return "malformed_json";
    case ProtocolErrc::not_an_object: return "not_an_object";
    case ProtocolErrc::missing_type: return "missing_type";
    case ProtocolErrc::unknown_type: return "unknown_type";
    case ProtocolErrc::bad_payload_length: return "bad_payload_length";
    case ProtocolErrc::payload_mismatch: return "payload_mismatch";
    case ProtocolErrc::invalid_field: return "invalid_field";
    case ProtocolErrc::both_forms: return "both_forms";
    case ProtocolErrc::neither_form: return "neither_form";
    case ProtocolErrc::stick_range: return "stick_range";
    case ProtocolErrc::tick_mismatch: return "tick_mismatch";
    case ProtocolErrc::version_mismatch: return "version_mismatch";
    case ProtocolErrc::unexpected_message: return "unexpected_message";
  }
  return "unknown";
}

std::string WireMessage::type() const {
  auto it = header.find("type");
  return it != header.end() && it->is_string() ? it->get<std::string>() : std::string();
}

json parse_header(std::span<const std::uint8_t> bytes) {
  json h = json::parse(bytes.begin(), bytes.end(), nullptr, false);
  if (h.is_discarded()) throw ProtocolError(ProtocolErrc::malformed_json, "header is not valid JSON");
  if (!h.is_object()) throw ProtocolError(ProtocolErrc::not_an_object, "header must be a JSON object");
  auto t = h.find("type");
  if (t == h.end() || !t->is_string()) throw ProtocolError(ProtocolErrc::missing_type, "header has no string \"type\"");
  declared_payload(h);
  return h;
}

std::vector<std::uint8_t> encode(const WireMessage& m) {
  json header = m.header;
  if (!header.is_object()) throw ProtocolError(ProtocolErrc::not_an_object, "header must be a JSON object");
  if (!m.payload.empty() || header.contains("payload_bytes")) header["payload_bytes"] = m.payload.size();
  const std::string text = dump_exact(header);
  if (text.size() > kMaxHeaderBytes) throw ProtocolError(ProtocolErrc::header_too_large, "header exceeds limit");
  std::vector<std::uint8_t> out;
  out.reserve(4 + text.size() + m.payload.size());
  const auto n = static_cast<std::uint32_t>(text.size());
  out.push_back(static_cast<std::uint8_t>(n >> 24));
  out.push_back(static_cast<std::uint8_t>(n >> 16));
  out.push_back(static_cast<std::uint8_t>(n >> 8));
  out.push_back(static_cast<std::uint8_t>(n));
  out.insert(out.end(), text.begin(), text.end());
  out.insert(out.end(), m.payload.begin(), m.payload.end());
  return out;
}

WireMessage decode(std::span<const std::uint8_t> bytes) {
  StreamDecoder d;
  d.feed(bytes);
  auto m = d.next();
  if (!m) throw ProtocolError(ProtocolErrc::truncated, "incomplete message");
  if (d.buffered() != 0) throw ProtocolError(ProtocolErrc::payload_mismatch, "bytes beyond the declared payload");
  return std::move(*m);
}

void StreamDecoder::feed(std::span<const std::uint8_t> bytes) {
  if (offset_ > 0 && offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  }
  buffer_.insert(buffer_.end(), bytes.begin(), bytes.end());
}

std::optional<WireMessage> StreamDecoder::next() {
  const std::size_t avail = buffer_.size() - offset_;
  const std::uint8_t* p = buffer_.data() + offset_;
  if (!pending_header_) {
    if (avail < 4) return std::nullopt;
    const std::uint32_t hlen = read_be32(p);
    if (hlen > kMaxHeaderBytes) throw ProtocolError(ProtocolErrc::header_too_large, "header length exceeds limit");
    if (avail < 4 + static_cast<std::size_t>(hlen)) return std::nullopt;
    // A bad header is consumed before the error propagates so the caller can
    // report it and keep reading.
    offset_ += 4 + hlen;
    json header = parse_header({p + 4, hlen});
    pending_payload_ = declared_payload(header);
    pending_header_ = std::move(header);
  }
  if (buffer_.size() - offset_ < pending_payload_) return std::nullopt;
  WireMessage m;
  m.header = std::move(*pending_header_);
  const auto begin = buffer_.begin() + static_cast<std::ptrdiff_t>(offset_);
  m.payload.assign(begin, begin + static_cast<std::ptrdiff_t>(pending_payload_));
  offset_ += pending_payload_;
  pending_header_.reset();
  pending_payload_ = 0;
  if (offset_ == buffer_.size()) {
    buffer_.clear();
    offset_ = 0;
  } else if (offset_ > (1u << 20) && offset_ * 2 > buffer_.size()) {
    buffer_.erase(buffer_.begin(), buffer_.begin() + static_cast<std::ptrdiff_t>(offset_));
    offset_ = 0;
  }
  return m;
}

const char* to_string(Encoding e) noexcept { return e == Encoding::png ? "png" : "rgb8"; }

Encoding encoding_from_string(const std::string& text) {
  if (text == "rgb8") return Encoding::rgb8;
  if (text == "png") return Encoding::png;
  throw ProtocolError(ProtocolErrc::invalid_field, "encoding must be rgb8 or png");
}

WireMessage make_state(const StateMessage& s) {
  WireMessage m;
  m.header = {{"type", "state"},
              {"tick", s.tick},
              {"sim_time_s", s.sim_time_s},
              {"pos", {s.pos.x(), s.pos.y(), s.pos.z()}},
              {"vel", {s.vel.x(), s.vel.y(), s.vel.z()}},
              {"roll", s.roll},
              {"pitch", s.pitch},
              {"yaw", s.yaw},
              {"thrust", s.thrust},
              {"frame_id", s.frame_id},
              {"encoding", to_string(s.encoding)},
              {"width", s.image.width()},
              {"height", s.image.height()}};
  if (s.footprint_corners_src) m.header["footprint_corners_src"] = corners_json(*s.footprint_corners_src);
  if (s.scale_factor) m.header["scale_factor"] = *s.scale_factor;
  if (s.coverage) m.header["coverage"] = *s.coverage;
  m.payload = encode_image(s.image, s.encoding);
  m.header["payload_bytes"] = m.payload.size();
  return m;
}

std::vector<std::uint8_t> encode_state(const StateMessage& state) { return encode(make_state(state)); }

StateMessage decode_state(const WireMessage& m) {
  expect_type(m, "state");
  const json& h = m.header;
  StateMessage s;
  s.tick = integer(h, "tick");
  s.sim_time_s = number(h, "sim_time_s");
  s.pos = vec3(h, "pos");
  s.vel = vec3(h, "vel");
  s.roll = number(h, "roll");
  s.pitch = number(h, "pitch");
  s.yaw = number(h, "yaw");
  s.thrust = number(h, "thrust");
  s.frame_id = integer(h, "frame_id");
  const json& enc = field(h, "encoding");
  if (!enc.is_string()) throw ProtocolError(ProtocolErrc::invalid_field, "\"encoding\" must be a string");
  s.encoding = encoding_from_string(enc.get<std::string>());
  const auto w = integer(h, "width");
  const auto hh = integer(h, "height");
  if (w <= 0 || hh <= 0 || w > 65535 || hh > 65535) throw ProtocolError(ProtocolErrc::invalid_field, "bad image size");
  s.image = decode_image(m, s.encoding, static_cast<int>(w), static_cast<int>(hh));
  if (auto it = h.find("footprint_corners_src"); it != h.end()) s.footprint_corners_src = corners_from(*it);
  if (h.contains("scale_factor")) s.scale_factor = number(h, "scale_factor");
  if (h.contains("coverage")) s.coverage = number(h, "coverage");
  return s;
}

WireMessage make_command(const CommandMessage& c) {
  WireMessage m;
  m.header = {{"type", "command"}};
  if (const auto* a = std::get_if<dynamics::AttitudeCommand>(&c.command)) {
    m.header["attitude"] = {{"roll", a->roll_rad}, {"pitch", a->pitch_rad}, {"yaw", a->yaw_rad}, {"thrust", a->thrust_n}};
  } else {
    const auto& s = std::get<dynamics::Stick>(c.command);
    m.header["stick"] = {s.x, s.y, s.z, s.r};
  }
  if (c.tick_ack) m.header["tick_ack"] = *c.tick_ack;
  return m;
}

std::vector<std::uint8_t> encode_command(const CommandMessage& c) { return encode(make_command(c)); }

CommandMessage decode_command(const WireMessage& m) {
  const std::string type = m.type();
  if (type.empty()) throw ProtocolError(ProtocolErrc::missing_type, "header has no string \"type\"");
  if (type != "command") {
    static const std::array<const char*, 6> known = {"hello", "state", "command", "error", "end", "overview"};
    const bool is_known = std::find(known.begin(), known.end(), type) != known.end();
    throw ProtocolError(is_known ? ProtocolErrc::unexpected_message : ProtocolErrc::unknown_type,
                        "expected a command, got \"" + type + "\"");
  }
  if (!m.payload.empty()) throw ProtocolError(ProtocolErrc::payload_mismatch, "command messages carry no payload");
  const json& h = m.header;
  const bool has_att = h.contains("attitude");
  const bool has_stick = h.contains("stick");
  if (has_att && has_stick) throw ProtocolError(ProtocolErrc::both_forms, "command has both attitude and stick");
  if (!has_att && !has_stick) throw ProtocolError(ProtocolErrc::neither_form, "command has neither attitude nor stick");

  CommandMessage c;
  if (has_att) {
    const json& a = h["attitude"];
    if (!a.is_object()) throw ProtocolError(ProtocolErrc::invalid_field, "\"attitude\" must be an object");
    dynamics::AttitudeCommand cmd;
    cmd.roll_rad = number(a, "roll");
    cmd.pitch_rad = number(a, "pitch");
    cmd.yaw_rad = number(a, "yaw");
    cmd.thrust_n = number(a, "thrust");
    c.command = cmd;
  } else {
    const json& s = h["stick"];
    if (!s.is_array() || s.size() != 4) throw ProtocolError(ProtocolErrc::invalid_field, "\"stick\" must be 4 numbers");
    std::array<double, 4> v{};
    for (std::size_t i = 0; i < 4; ++i) {
      if (!s[i].is_number()) throw ProtocolError(ProtocolErrc::invalid_field, "\"stick\" must be 4 numbers");
      v[i] = s[i].get<double>();
      if (!(v[i] >= -1.0 && v[i] <= 1.0)) {
        throw ProtocolError(ProtocolErrc::stick_range, "stick component " + std::to_string(i) + " outside [-1, 1]");
      }
    }
    c.command = dynamics::Stick{v[0], v[1], v[2], v[3]};
  }
  if (auto it = h.find("tick_ack"); it != h.end() && !it->is_null()) {
    if (!it->is_number_integer() || it->get<std::int64_t>() < 0) {
      throw ProtocolError(ProtocolErrc::invalid_field, "\"tick_ack\" must be a non-negative integer");
    }
    c.tick_ack = it->get<std::int64_t>();
  }
  return c;
}

CommandMessage decode_command(std::span<const std::uint8_t> bytes) { return decode_command(decode(bytes)); }

WireMessage make_error(ProtocolErrc code, const std::string& message, std::optional<std::int64_t> tick) {
  WireMessage m;
  m.header = {{"type", "error"}, {"code", to_string(code)}, {"message", message}};
  if (tick) m.header["tick"] = *tick;
  return m;
}

WireMessage make_overview(const OverviewMessage& o) {
  WireMessage m;
  m.header = {{"type", "overview"},
              {"tick", o.tick},
              {"src_width", o.src_width},
              {"src_height", o.src_height},
              {"encoding", to_string(o.encoding)},
              {"width", o.image.width()},
              {"height", o.image.height()},
              {"footprint_corners_src", corners_json(o.footprint_corners_src)}};
  m.payload = encode_image(o.image, o.encoding);
  m.header["payload_bytes"] = m.payload.size();
  return m;
}

OverviewMessage decode_overview(const WireMessage& m) {
  expect_type(m, "overview");
  const json& h = m.header;
  OverviewMessage o;
  o.tick = integer(h, "tick");
  o.src_width = static_cast<int>(integer(h, "src_width"));
  o.src_height = static_cast<int>(integer(h, "src_height"));
  const json& enc = field(h, "encoding");
  if (!enc.is_string()) throw ProtocolError(ProtocolErrc::invalid_field, "\"encoding\" must be a string");
  o.encoding = encoding_from_string(enc.get<std::string>());
  o.image = decode_image(m, o.encoding, static_cast<int>(integer(h, "width")), static_cast<int>(integer(h, "height")));
  o.footprint_corners_src = corners_from(field(h, "footprint_corners_src"));
  return o;
}

}  // namespace viva::gateway
