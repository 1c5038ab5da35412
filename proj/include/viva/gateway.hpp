#pragma once

#include <atomic>
#include <chrono>
#include <condition_variable>
#include <cstdint>
#include <functional>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "json.hpp"
#include "viva/session.hpp"
#include "viva/transport.hpp"
#include "viva/wire.hpp"

namespace viva::gateway {

enum class Mode { lockstep, realtime };
const char* to_string(Mode mode) noexcept;

struct GatewayOptions {
  Endpoint endpoint;
  Framing framing = Framing::tcp;
  Encoding encoding = Encoding::rgb8;  // default for peers that do not ask for one
  Mode mode = Mode::lockstep;
  double timeout_s = 10.0;            // lockstep wait for each command
  double accept_timeout_s = 0.0;      // wait for a controller; 0 waits indefinitely
  double disconnect_timeout_s = 5.0;  // realtime hover hold after the controller drops
  double handshake_timeout_s = 5.0;
  int max_consecutive_errors = 3;
  bool overview = false;
  int overview_width = 960;
};

GatewayOptions options_from_config(const session::SessionConfig& config);

// Command source backed by one remote controller. The listener is bound on
// construction; the controller is awaited in on_start. Extra connections that
// announce themselves as observers receive the same state stream read-only.
//
// Handshake: the server sends {"type":"hello","protocol_version",...}; the
// peer answers {"type":"hello","protocol_version","role"?,"encoding"?}.
class GatewaySource final : public session::CommandSource {
 public:
  explicit GatewaySource(GatewayOptions options);
  ~GatewaySource() override;

  std::uint16_t port() const noexcept { return listener_.port(); }
  bool needs_frames() const override { return true; }
  void on_start(const session::SessionInfo& info) override;
  std::optional<session::CommandInput> next(const session::TickView& view) override;
  void on_end(const session::TerminalRecord& terminal) override;

  std::int64_t commands_consumed() const noexcept { return consumed_; }
  std::int64_t protocol_errors() const noexcept { return protocol_errors_; }

 private:
  struct Peer {
    std::shared_ptr<Connection> connection;
    Encoding encoding = Encoding::rgb8;
  };

  void accept_loop();
  void handshake(std::unique_ptr<Connection> connection);
  void reader_loop(std::shared_ptr<Connection> connection);
  void broadcast(const session::TickView& view);
  void send_error(Connection& c, ProtocolErrc code, const std::string& message, std::optional<std::int64_t> tick);
  std::optional<session::CommandInput> next_lockstep(const session::TickView& view);
  std::optional<session::CommandInput> next_realtime(const session::TickView& view);
  void stop();

  GatewayOptions options_;
  Listener listener_;
  nlohmann::json hello_;

  std::mutex mutex_;
  std::condition_variable cv_;
  std::optional<Peer> controller_;  // guarded by mutex_
  std::vector<Peer> observers_;     // guarded by mutex_
  bool controller_lost_ = false;    // guarded by mutex_
  std::chrono::steady_clock::time_point lost_at_{};
  std::optional<session::CommandInput> latest_;  // realtime mailbox, guarded by mutex_

  std::atomic<bool> stopping_{false};
  std::thread acceptor_;
  std::vector<std::thread> readers_;
  std::atomic<std::int64_t> consumed_{0};
  std::atomic<std::int64_t> protocol_errors_{0};
  int consecutive_errors_ = 0;
  bool started_ = false;
};

// Client side of the protocol, for agents and tests.
class AgentClient {
 public:
  AgentClient(const Endpoint& endpoint, Framing framing, const std::string& role = "controller",
              std::optional<Encoding> encoding = {}, double timeout_s = 5.0,
              int protocol_version = kProtocolVersion);

  const nlohmann::json& server_hello() const noexcept { return hello_; }
  // Next message; nullopt on timeout.
  std::optional<WireMessage> receive(double timeout_s);
  void send(const WireMessage& message) { connection_->send(message); }
  void send_command(const CommandMessage& command) { connection_->send(make_command(command)); }
  void send_raw(std::span<const std::uint8_t> bytes) { connection_->send(bytes); }
  void close() { connection_->close(); }

 private:
  std::unique_ptr<Connection> connection_;
  nlohmann::json hello_;
};

}  // namespace viva::gateway
