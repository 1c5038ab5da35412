#include "viva/gateway.hpp"

#include <fmt/format.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <map>

#include "viva/render.hpp"

namespace viva::gateway {
namespace {

using Clock = std::chrono::steady_clock;
using nlohmann::json;

double seconds_left(Clock::time_point deadline) {
  return std::max(0.0, std::chrono::duration<double>(deadline - Clock::now()).count());
}

session::CommandInput hover() { return session::CommandInput{dynamics::Stick{}, false, std::nullopt}; }

session::CommandInput to_input(const CommandMessage& c) {
  session::CommandInput in;
  if (const auto* a = std::get_if<dynamics::AttitudeCommand>(&c.command)) {
    in.command = *a;
  } else {
    in.command = std::get<dynamics::Stick>(c.command);
  }
  return in;
}

}  // namespace

const char* to_string(Mode mode) noexcept { return mode == Mode::realtime ? "realtime" : "lockstep"; }

GatewayOptions options_from_config(const session::SessionConfig& config) {
  GatewayOptions o;
  o.endpoint = Endpoint::parse(config.gateway.endpoint);
  o.framing = config.gateway.transport == session::Transport::websocket ? Framing::websocket : Framing::tcp;
  o.encoding = encoding_from_string(config.gateway.resolved_encoding());
  o.mode = config.realtime ? Mode::realtime : Mode::lockstep;
  o.timeout_s = config.gateway.timeout_s;
  o.accept_timeout_s = config.gateway.accept_timeout_s;
  o.disconnect_timeout_s = config.gateway.disconnect_timeout_s;
  o.overview = config.gateway.overview;
  o.overview_width = config.gateway.overview_width;
  return o;
}

GatewaySource::GatewaySource(GatewayOptions options) : options_(std::move(options)), listener_(options_.endpoint) {}

GatewaySource::~GatewaySource() { stop(); }

void GatewaySource::stop() {
  stopping_ = true;
  cv_.notify_all();
  if (acceptor_.joinable()) acceptor_.join();
  {
    std::lock_guard lock(mutex_);
    if (controller_) controller_->connection->close();
    for (auto& o : observers_) o.connection->close();
  }
  for (auto& t : readers_) {
    if (t.joinable()) t.join();
  }
  readers_.clear();
  listener_.close();
}

void GatewaySource::on_start(const session::SessionInfo& info) {
  const auto& m = *info.manifest;
  const auto& vac = info.config->vac;
  const auto cam = vac.intrinsics();
  hello_ = {{"type", "hello"},
            {"protocol_version", kProtocolVersion},
            {"mode", to_string(options_.mode)},
            {"encoding", to_string(options_.encoding)},
            {"dt_s", info.config->eav.dt_s},
            {"seed", info.seed},
            {"manifest",
             {{"width", m.width},
              {"height", m.height},
              {"fps", m.fps},
              {"altitude_m", m.altitude_m},
              {"fov_h_deg", m.fov_h_deg},
              {"fov_v_deg", m.fov_v_deg},
              {"end_policy", ingest::to_string(m.end_policy)}}},
            {"vac",
             {{"width", cam.width},
              {"height", cam.height},
              {"fov_h_deg", vac.fov_h_deg},
              {"fov_v_deg", cam.fov_v_rad * 180.0 / 3.14159265358979323846}}},
            {"overview", options_.overview}};
  started_ = true;
  spdlog::info("gateway listening on {}:{} ({}, {})", options_.endpoint.host, port(),
               options_.framing == Framing::websocket ? "websocket" : "tcp", to_string(options_.mode));
  acceptor_ = std::thread([this] { accept_loop(); });

  std::unique_lock lock(mutex_);
  auto ready = [this] { return controller_.has_value() || stopping_.load(); };
  if (options_.accept_timeout_s > 0.0) {
    cv_.wait_for(lock, std::chrono::duration<double>(options_.accept_timeout_s), ready);
  } else {
    cv_.wait(lock, ready);
  }
}

void GatewaySource::accept_loop() {
  while (!stopping_) {
    std::unique_ptr<Connection> c;
    try {
      c = listener_.accept(options_.framing, 0.1);
    } catch (const std::exception& e) {
      if (stopping_) return;
      spdlog::warn("gateway: rejected connection: {}", e.what());
      continue;
    }
    if (!c) continue;
    try {
      handshake(std::move(c));
    } catch (const std::exception& e) {
      spdlog::warn("gateway: handshake failed: {}", e.what());
    }
  }
}

void GatewaySource::send_error(Connection& c, ProtocolErrc code, const std::string& message,
                               std::optional<std::int64_t> tick) {
  try {
    c.send(make_error(code, message, tick));
  } catch (const TransportError&) {
  }
}

void GatewaySource::handshake(std::unique_ptr<Connection> connection) {
  std::shared_ptr<Connection> conn = std::move(connection);
  conn->send(WireMessage{hello_, {}});
  std::optional<WireMessage> reply;
  try {
    reply = conn->receive(options_.handshake_timeout_s);
  } catch (const ProtocolError& e) {
    send_error(*conn, e.code(), e.what(), std::nullopt);
    conn->close();
    throw;
  }
  if (!reply) {
    conn->close();
    throw TransportError("no hello from " + conn->peer());
  }
  const json& h = reply->header;
  if (reply->type() != "hello") {
    send_error(*conn, ProtocolErrc::unexpected_message, "expected a hello message", std::nullopt);
    conn->close();
    throw TransportError("first message from " + conn->peer() + " was not hello");
  }
  const auto version = h.find("protocol_version");
  if (version == h.end() || !version->is_number_integer() || version->get<std::int64_t>() != kProtocolVersion) {
    const std::string theirs = version == h.end() ? std::string("none") : version->dump();
    send_error(*conn, ProtocolErrc::version_mismatch,
               "protocol version mismatch: server " + std::to_string(kProtocolVersion) + ", client " + theirs,
               std::nullopt);
    conn->close();
    throw TransportError("protocol version mismatch from " + conn->peer());
  }
  Peer peer{conn, options_.encoding};
  if (auto enc = h.find("encoding"); enc != h.end() && !enc->is_null()) {
    try {
      peer.encoding = encoding_from_string(enc->is_string() ? enc->get<std::string>() : std::string());
    } catch (const ProtocolError& e) {
      send_error(*conn, e.code(), e.what(), std::nullopt);
      conn->close();
      throw;
    }
  }
  std::string role = "controller";
  if (auto r = h.find("role"); r != h.end() && r->is_string()) role = r->get<std::string>();

  std::lock_guard lock(mutex_);
  if (role == "observer") {
    spdlog::info("gateway: observer {} connected", conn->peer());
    observers_.push_back(std::move(peer));
    return;
  }
  if (role != "controller") {
    send_error(*conn, ProtocolErrc::invalid_field, "role must be controller or observer", std::nullopt);
    conn->close();
    throw TransportError("unknown role from " + conn->peer());
  }
  // Lockstep sessions end when their controller leaves, so there is never a second one.
  const bool slot_free = !controller_ && (options_.mode == Mode::realtime || !controller_lost_);
  if (!slot_free) {
    send_error(*conn, ProtocolErrc::unexpected_message, "a controller is already attached", std::nullopt);
    conn->close();
    throw TransportError("second controller from " + conn->peer() + " refused");
  }
  spdlog::info("gateway: controller {} connected", conn->peer());
  controller_ = std::move(peer);
  controller_lost_ = false;
  latest_.reset();
  if (options_.mode == Mode::realtime) {
    readers_.emplace_back([this, conn] { reader_loop(conn); });
  }
  cv_.notify_all();
}

void GatewaySource::reader_loop(std::shared_ptr<Connection> conn) {
  while (!stopping_) {
    try {
      auto m = conn->receive(0.1);
      if (!m) continue;
      try {
        const CommandMessage c = decode_command(*m);
        std::lock_guard lock(mutex_);
        latest_ = to_input(c);
      } catch (const ProtocolError& e) {
        ++protocol_errors_;
        send_error(*conn, e.code(), e.what(), std::nullopt);
      }
    } catch (const ProtocolError& e) {
      ++protocol_errors_;
      send_error(*conn, e.code(), e.what(), std::nullopt);
    } catch (const std::exception& e) {
      std::lock_guard lock(mutex_);
      if (controller_ && controller_->connection == conn) {
        spdlog::warn("gateway: controller lost: {}", e.what());
        controller_.reset();
        controller_lost_ = true;
        lost_at_ = Clock::now();
      }
      return;
    }
  }
}

void GatewaySource::broadcast(const session::TickView& view) {
  if (!view.frame) throw session::SessionError("gateway: no rendered frame for tick " + std::to_string(view.tick));
  StateMessage s;
  s.tick = view.tick;
  s.sim_time_s = view.sim_time_s;
  s.pos = view.pos;
  s.vel = view.vel;
  s.roll = view.attitude.roll_rad;
  s.pitch = view.attitude.pitch_rad;
  s.yaw = view.attitude.yaw_rad;
  s.thrust = view.attitude.thrust_n;
  s.frame_id = view.frame_index;
  s.image = view.frame->pixels;
  s.footprint_corners_src = view.frame->footprint_corners_src;
  s.scale_factor = view.frame->scale_factor;
  s.coverage = view.frame->coverage;

  std::map<Encoding, std::vector<std::uint8_t>> encoded;
  auto bytes_for = [&](Encoding e) -> const std::vector<std::uint8_t>& {
    auto it = encoded.find(e);
    if (it == encoded.end()) {
      s.encoding = e;
      it = encoded.emplace(e, encode_state(s)).first;
    }
    return it->second;
  };
  std::optional<std::vector<std::uint8_t>> overview;
  if (options_.overview && view.source_frame) {
    OverviewMessage o;
    o.tick = view.tick;
    o.src_width = view.source_frame->width();
    o.src_height = view.source_frame->height();
    o.encoding = Encoding::png;
    o.image = render::downscale_to_width(*view.source_frame, std::min(options_.overview_width, o.src_width));
    o.footprint_corners_src = view.frame->footprint_corners_src;
    overview = encode(make_overview(o));
  }

  std::vector<Peer> peers;
  std::optional<Peer> controller;
  {
    std::lock_guard lock(mutex_);
    peers = observers_;
    controller = controller_;
  }
  std::vector<std::shared_ptr<Connection>> dropped;
  for (const auto& p : peers) {
    try {
      p.connection->send(bytes_for(p.encoding));
      if (overview) p.connection->send(*overview);
    } catch (const TransportError&) {
      dropped.push_back(p.connection);
    }
  }
  if (!dropped.empty()) {
    std::lock_guard lock(mutex_);
    std::erase_if(observers_, [&](const Peer& p) {
      return std::find(dropped.begin(), dropped.end(), p.connection) != dropped.end();
    });
  }
  if (controller) {
    try {
      controller->connection->send(bytes_for(controller->encoding));
      if (overview) controller->connection->send(*overview);
    } catch (const TransportError& e) {
      std::lock_guard lock(mutex_);
      if (controller_ && controller_->connection == controller->connection) {
        spdlog::warn("gateway: controller lost: {}", e.what());
        controller_.reset();
        controller_lost_ = true;
        lost_at_ = Clock::now();
      }
    }
  }
}

std::optional<session::CommandInput> GatewaySource::next(const session::TickView& view) {
  return options_.mode == Mode::lockstep ? next_lockstep(view) : next_realtime(view);
}

std::optional<session::CommandInput> GatewaySource::next_lockstep(const session::TickView& view) {
  std::shared_ptr<Connection> conn;
  {
    std::lock_guard lock(mutex_);
    if (controller_) conn = controller_->connection;
  }
  if (!conn) {
    throw session::SessionError(view.tick == 0 ? "no controller connected" : "controller disconnected");
  }
  broadcast(view);
  {
    std::lock_guard lock(mutex_);
    if (!controller_) throw session::SessionError("controller disconnected");
  }

  const auto deadline = Clock::now() + std::chrono::duration_cast<Clock::duration>(
                                           std::chrono::duration<double>(options_.timeout_s));
  auto reject = [&](ProtocolErrc code, const std::string& what) {
    ++protocol_errors_;
    send_error(*conn, code, what, view.tick);
    if (++consecutive_errors_ >= options_.max_consecutive_errors) {
      throw session::SessionError(std::to_string(consecutive_errors_) + " consecutive protocol errors; last: " + what);
    }
  };
  for (;;) {
    std::optional<WireMessage> m;
    try {
      m = conn->receive(seconds_left(deadline));
    } catch (const ProtocolError& e) {
      reject(e.code(), e.what());
      continue;
    } catch (const TransportError& e) {
      std::lock_guard lock(mutex_);
      controller_.reset();
      controller_lost_ = true;
      throw session::SessionError(std::string("controller disconnected: ") + e.what());
    }
    if (!m) {
      throw session::SessionError("lockstep timeout: no command for tick " + std::to_string(view.tick) + " within " +
                                  fmt::format("{} s", options_.timeout_s));
    }
    CommandMessage c;
    try {
      c = decode_command(*m);
    } catch (const ProtocolError& e) {
      reject(e.code(), e.what());
      continue;
    }
    if (!c.tick_ack || *c.tick_ack != view.tick) {
      reject(ProtocolErrc::tick_mismatch,
             "tick_ack must equal " + std::to_string(view.tick) +
                 (c.tick_ack ? ", got " + std::to_string(*c.tick_ack) : std::string(", got none")));
      continue;
    }
    consecutive_errors_ = 0;
    ++consumed_;
    return to_input(c);
  }
}

std::optional<session::CommandInput> GatewaySource::next_realtime(const session::TickView& view) {
  broadcast(view);
  std::lock_guard lock(mutex_);
  if (!controller_) {
    if (!controller_lost_) throw session::SessionError("no controller connected");
    if (std::chrono::duration<double>(Clock::now() - lost_at_).count() > options_.disconnect_timeout_s) {
      throw session::SessionError("controller disconnected");
    }
    return hover();
  }
  if (!latest_) return hover();
  ++consumed_;
  return *latest_;
}

void GatewaySource::on_end(const session::TerminalRecord& terminal) {
  if (!started_) return;
  const WireMessage end{{{"type", "end"},
                         {"tick", terminal.tick},
                         {"status", session::to_string(terminal.status)},
                         {"pos", {terminal.pos.x(), terminal.pos.y(), terminal.pos.z()}},
                         {"reason", terminal.reason}},
                        {}};
  std::vector<Peer> peers;
  {
    std::lock_guard lock(mutex_);
    peers = observers_;
    if (controller_) peers.push_back(*controller_);
  }
  for (auto& p : peers) {
    try {
      p.connection->send(end);
    } catch (const TransportError&) {
    }
  }
  stop();
}

AgentClient::AgentClient(const Endpoint& endpoint, Framing framing, const std::string& role,
                         std::optional<Encoding> encoding, double timeout_s, int protocol_version)
    : connection_(connect(endpoint, framing, timeout_s)) {
  auto m = connection_->receive(timeout_s);
  if (!m || m->type() != "hello") throw TransportError("server did not send hello");
  hello_ = m->header;
  json reply = {{"type", "hello"}, {"protocol_version", protocol_version}, {"role", role}};
  if (encoding) reply["encoding"] = to_string(*encoding);
  connection_->send(WireMessage{reply, {}});
}

std::optional<WireMessage> AgentClient::receive(double timeout_s) { return connection_->receive(timeout_s); }

}  // namespace viva::gateway
