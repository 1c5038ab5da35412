#pragma once

#include <cstdint>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "viva/wire.hpp"

namespace viva::gateway {

// Socket-level failure: bind/connect errors, peer disconnects, handshake errors.
class TransportError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Raised by receive() once the peer has closed the connection.
class Disconnected : public TransportError {
 public:
  using TransportError::TransportError;
};

enum class Framing { tcp, websocket };

struct Endpoint {
  std::string host = "127.0.0.1";
  std::uint16_t port = 0;

  static Endpoint parse(const std::string& text);  // "host:port"
  std::string to_string() const;
};

// One peer exchanging WireMessages. send() may be called from any thread;
// receive() from one thread at a time.
class Connection {
 public:
  virtual ~Connection();
  Connection(const Connection&) = delete;
  Connection& operator=(const Connection&) = delete;

  // Sends one encoded WireMessage.
  void send(std::span<const std::uint8_t> message_bytes);
  void send(const WireMessage& message) { send(encode(message)); }

  // Next complete message, or nullopt when timeout_s elapses first
  // (timeout_s < 0 waits indefinitely). Throws Disconnected on close and
  // ProtocolError on a malformed message.
  virtual std::optional<WireMessage> receive(double timeout_s) = 0;

  void close();
  bool closed() const;
  const std::string& peer() const noexcept { return peer_; }
  virtual Framing framing() const noexcept = 0;

 protected:
  Connection(int fd, std::string peer);
  virtual void write_message(std::span<const std::uint8_t> message_bytes) = 0;
  virtual void send_close() {}

  // Reads whatever is available within the deadline into out; returns false
  // on timeout. Throws Disconnected on EOF.
  bool read_some(std::vector<std::uint8_t>& out, double timeout_s);
  void write_all(std::span<const std::uint8_t> bytes);

  int fd_;
  std::string peer_;
  mutable std::mutex send_mutex_;
  bool closed_ = false;  // guarded by send_mutex_
};

class TcpConnection final : public Connection {
 public:
  TcpConnection(int fd, std::string peer) : Connection(fd, std::move(peer)) {}
  std::optional<WireMessage> receive(double timeout_s) override;
  Framing framing() const noexcept override { return Framing::tcp; }

 private:
  void write_message(std::span<const std::uint8_t> message_bytes) override;
  StreamDecoder decoder_;
};

// Each WireMessage travels as one binary WebSocket message. Server-side
// connections send unmasked frames and require masked ones; client-side the
// reverse.
class WebSocketConnection final : public Connection {
 public:
  WebSocketConnection(int fd, std::string peer, bool client_side, std::vector<std::uint8_t> pending = {});
  std::optional<WireMessage> receive(double timeout_s) override;
  Framing framing() const noexcept override { return Framing::websocket; }

 private:
  void write_message(std::span<const std::uint8_t> message_bytes) override;
  void send_close() override;
  void write_frame(std::uint8_t opcode, std::span<const std::uint8_t> payload);
  // Parses one frame from buffer_; nullopt when incomplete.
  struct Frame {
    bool fin = false;
    std::uint8_t opcode = 0;
    std::vector<std::uint8_t> payload;
  };
  std::optional<Frame> take_frame();

  bool client_side_;
  std::vector<std::uint8_t> buffer_;
  std::vector<std::uint8_t> message_;
  bool in_message_ = false;
  bool text_message_ = false;
  std::uint64_t mask_state_;
};

// Accept key for a Sec-WebSocket-Key value.
std::string websocket_accept_key(const std::string& client_key);

class Listener {
 public:
  // Port 0 binds an ephemeral port; see port().
  explicit Listener(const Endpoint& endpoint);
  ~Listener();
  Listener(const Listener&) = delete;
  Listener& operator=(const Listener&) = delete;

  std::uint16_t port() const noexcept { return port_; }
  // nullptr on timeout (timeout_s < 0 waits indefinitely). For websocket
  // framing the HTTP upgrade completes before returning.
  std::unique_ptr<Connection> accept(Framing framing, double timeout_s);
  void close();

 private:
  int fd_ = -1;
  std::uint16_t port_ = 0;
};

std::unique_ptr<Connection> connect(const Endpoint& endpoint, Framing framing, double timeout_s = 5.0);

}  // namespace viva::gateway
