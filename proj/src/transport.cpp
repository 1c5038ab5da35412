#include "viva/transport.hpp"

#include <arpa/inet.h>
#include <fcntl.h>
#include <netdb.h>
#include <netinet/in.h>
#include <netinet/tcp.h>
#include <poll.h>
#include <sys/socket.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <chrono>
#include <cstring>
#include <random>

#include <openssl/evp.h>

namespace viva::gateway {
namespace {

using Clock = std::chrono::steady_clock;

constexpr std::size_t kMaxHttpHead = 16 * 1024;
constexpr std::uint64_t kMaxFramePayload = kMaxPayloadBytes + kMaxHeaderBytes + 4;
constexpr const char* kWebSocketGuid = "258EAFA5-E914-47DA-95CA-C5AB0DC85B11";

std::string errno_text(const char* what) { return std::string(what) + ": " + std::strerror(errno); }

// Milliseconds left until the deadline, or -1 for no deadline.
int remaining_ms(std::optional<Clock::time_point> deadline) {
  if (!deadline) return -1;
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(*deadline - Clock::now()).count();
  return left <= 0 ? 0 : static_cast<int>(std::min<long long>(left, 1 << 30));
}

std::optional<Clock::time_point> deadline_after(double timeout_s) {
  if (timeout_s < 0.0) return std::nullopt;
  return Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(timeout_s));
}

// true when fd is readable before the deadline.
bool wait_readable(int fd, std::optional<Clock::time_point> deadline) {
  for (;;) {
    pollfd p{fd, POLLIN, 0};
    const int rc = ::poll(&p, 1, remaining_ms(deadline));
    if (rc > 0) return true;
    if (rc == 0) return false;
    if (errno != EINTR) throw TransportError(errno_text("poll"));
  }
}

std::string base64(std::span<const std::uint8_t> bytes) {
  std::string out(4 * ((bytes.size() + 2) / 3) + 1, '\0');
  const int n = EVP_EncodeBlock(reinterpret_cast<unsigned char*>(out.data()), bytes.data(), static_cast<int>(bytes.size()));
  out.resize(static_cast<std::size_t>(n));
  return out;
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

struct HttpHead {
  std::string start_line;
  std::vector<std::pair<std::string, std::string>> fields;  // lower-cased names
  std::vector<std::uint8_t> leftover;

  std::optional<std::string> field(const std::string& name) const {
    for (const auto& [k, v] : fields) {
      if (k == name) return v;
    }
    return std::nullopt;
  }
};

HttpHead read_http_head(int fd, double timeout_s) {
  const auto deadline = deadline_after(timeout_s);
  std::vector<std::uint8_t> buf;
  std::array<std::uint8_t, 4096> chunk{};
  static const std::string kEnd = "\r\n\r\n";
  for (;;) {
    const auto it = std::search(buf.begin(), buf.end(), kEnd.begin(), kEnd.end());
    if (it != buf.end()) {
      HttpHead head;
      const std::string text(buf.begin(), it);
      head.leftover.assign(it + 4, buf.end());
      std::size_t pos = 0;
      bool first = true;
      while (pos <= text.size()) {
        auto eol = text.find("\r\n", pos);
        if (eol == std::string::npos) eol = text.size();
        const std::string line = text.substr(pos, eol - pos);
        if (first) {
          head.start_line = line;
          first = false;
        } else if (const auto colon = line.find(':'); colon != std::string::npos) {
          head.fields.emplace_back(lower(trim(line.substr(0, colon))), trim(line.substr(colon + 1)));
        }
        pos = eol + 2;
      }
      return head;
    }
    if (buf.size() > kMaxHttpHead) throw TransportError("websocket handshake: HTTP head too large");
    if (!wait_readable(fd, deadline)) throw TransportError("websocket handshake: timed out");
    const ssize_t n = ::recv(fd, chunk.data(), chunk.size(), 0);
    if (n == 0) throw Disconnected("websocket handshake: peer closed the connection");
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("recv"));
    }
    buf.insert(buf.end(), chunk.begin(), chunk.begin() + n);
  }
}

void send_raw(int fd, const std::string& text) {
  std::size_t off = 0;
  while (off < text.size()) {
    const ssize_t n = ::send(fd, text.data() + off, text.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      throw TransportError(errno_text("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

bool header_has_token(const std::optional<std::string>& value, const std::string& token) {
  if (!value) return false;
  const std::string v = lower(*value);
  std::size_t pos = 0;
  while (pos <= v.size()) {
    auto comma = v.find(',', pos);
    if (comma == std::string::npos) comma = v.size();
    if (trim(v.substr(pos, comma - pos)) == token) return true;
    pos = comma + 1;
  }
  return false;
}

std::vector<std::uint8_t> server_handshake(int fd, double timeout_s) {
  HttpHead head = read_http_head(fd, timeout_s);
  const auto key = head.field("sec-websocket-key");
  const bool is_get = head.start_line.rfind("GET ", 0) == 0;
  if (!is_get || !key || !header_has_token(head.field("upgrade"), "websocket")) {
    send_raw(fd, "HTTP/1.1 400 Bad Request\r\nContent-Length: 0\r\nConnection: close\r\n\r\n");
    throw TransportError("websocket handshake: not a WebSocket upgrade request");
  }
  if (head.field("sec-websocket-version").value_or("") != "13") {
    send_raw(fd, "HTTP/1.1 426 Upgrade Required\r\nSec-WebSocket-Version: 13\r\nContent-Length: 0\r\n\r\n");
    throw TransportError("websocket handshake: unsupported WebSocket version");
  }
  send_raw(fd,
           "HTTP/1.1 101 Switching Protocols\r\nUpgrade: websocket\r\nConnection: Upgrade\r\n"
           "Sec-WebSocket-Accept: " +
               websocket_accept_key(*key) + "\r\n\r\n");
  return std::move(head.leftover);
}

std::vector<std::uint8_t> client_handshake(int fd, const Endpoint& endpoint, double timeout_s) {
  std::random_device rd;
  std::array<std::uint8_t, 16> nonce{};
  for (auto& b : nonce) b = static_cast<std::uint8_t>(rd());
  const std::string key = base64(nonce);
  send_raw(fd, "GET / HTTP/1.1\r\nHost: " + endpoint.to_string() +
                   "\r\nUpgrade: websocket\r\nConnection: Upgrade\r\nSec-WebSocket-Key: " + key +
                   "\r\nSec-WebSocket-Version: 13\r\n\r\n");
  HttpHead head = read_http_head(fd, timeout_s);
  if (head.start_line.rfind("HTTP/1.1 101", 0) != 0) {
    throw TransportError("websocket handshake: server answered \"" + head.start_line + "\"");
  }
  if (head.field("sec-websocket-accept").value_or("") != websocket_accept_key(key)) {
    throw TransportError("websocket handshake: bad Sec-WebSocket-Accept");
  }
  return std::move(head.leftover);
}

std::string numeric_peer(const sockaddr* addr, socklen_t len) {
  char host[NI_MAXHOST];
  char serv[NI_MAXSERV];
  if (::getnameinfo(addr, len, host, sizeof host, serv, sizeof serv, NI_NUMERICHOST | NI_NUMERICSERV) != 0) {
    return "unknown";
  }
  return std::string(host) + ":" + serv;
}

struct AddrInfo {
  addrinfo* list = nullptr;
  ~AddrInfo() {
    if (list) ::freeaddrinfo(list);
  }
};

void resolve(const Endpoint& endpoint, bool passive, AddrInfo& out) {
  addrinfo hints{};
  hints.ai_family = AF_UNSPEC;
  hints.ai_socktype = SOCK_STREAM;
  hints.ai_flags = passive ? AI_PASSIVE : 0;
  const std::string port = std::to_string(endpoint.port);
  const int rc = ::getaddrinfo(endpoint.host.empty() ? nullptr : endpoint.host.c_str(), port.c_str(), &hints, &out.list);
  if (rc != 0) throw TransportError("cannot resolve " + endpoint.to_string() + ": " + ::gai_strerror(rc));
}

void set_nodelay(int fd) {
  int one = 1;
  ::setsockopt(fd, IPPROTO_TCP, TCP_NODELAY, &one, sizeof one);
}

}  // namespace

Endpoint Endpoint::parse(const std::string& text) {
  const auto colon = text.rfind(':');
  if (colon == std::string::npos || colon + 1 == text.size()) {
    throw TransportError("endpoint \"" + text + "\" must be host:port");
  }
  Endpoint e;
  e.host = text.substr(0, colon);
  if (e.host.size() >= 2 && e.host.front() == '[' && e.host.back() == ']') e.host = e.host.substr(1, e.host.size() - 2);
  const std::string port = text.substr(colon + 1);
  if (!std::all_of(port.begin(), port.end(), [](unsigned char c) { return std::isdigit(c); }) || port.size() > 5 ||
      std::stoul(port) > 65535) {
    throw TransportError("endpoint \"" + text + "\" has an invalid port");
  }
  e.port = static_cast<std::uint16_t>(std::stoul(port));
  return e;
}

std::string Endpoint::to_string() const {
  const bool v6 = host.find(':') != std::string::npos;
  return (v6 ? "[" + host + "]" : host) + ":" + std::to_string(port);
}

std::string websocket_accept_key(const std::string& client_key) {
  const std::string input = client_key + kWebSocketGuid;
  std::array<std::uint8_t, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  if (EVP_Digest(input.data(), input.size(), digest.data(), &len, EVP_sha1(), nullptr) != 1) {
    throw TransportError("SHA-1 digest failed");
  }
  return base64({digest.data(), len});
}

// Connection

Connection::Connection(int fd, std::string peer) : fd_(fd), peer_(std::move(peer)) {}

Connection::~Connection() {
  if (fd_ >= 0) ::close(fd_);
}

void Connection::send(std::span<const std::uint8_t> message_bytes) {
  std::lock_guard lock(send_mutex_);
  if (closed_) throw Disconnected("connection to " + peer_ + " is closed");
  write_message(message_bytes);
}

void Connection::close() {
  std::lock_guard lock(send_mutex_);
  if (closed_) return;
  try {
    send_close();
  } catch (const TransportError&) {
  }
  closed_ = true;
  ::shutdown(fd_, SHUT_RDWR);
}

bool Connection::closed() const {
  std::lock_guard lock(send_mutex_);
  return closed_;
}

bool Connection::read_some(std::vector<std::uint8_t>& out, double timeout_s) {
  if (!wait_readable(fd_, deadline_after(timeout_s))) return false;
  std::array<std::uint8_t, 65536> chunk{};
  for (;;) {
    const ssize_t n = ::recv(fd_, chunk.data(), chunk.size(), 0);
    if (n > 0) {
      out.insert(out.end(), chunk.begin(), chunk.begin() + n);
      return true;
    }
    if (n == 0) throw Disconnected("peer " + peer_ + " closed the connection");
    if (errno == EINTR) continue;
    if (errno == ECONNRESET || errno == ENOTCONN || errno == EBADF) {
      throw Disconnected("peer " + peer_ + ": " + std::strerror(errno));
    }
    throw TransportError(errno_text("recv"));
  }
}

void Connection::write_all(std::span<const std::uint8_t> bytes) {
  std::size_t off = 0;
  while (off < bytes.size()) {
    const ssize_t n = ::send(fd_, bytes.data() + off, bytes.size() - off, MSG_NOSIGNAL);
    if (n < 0) {
      if (errno == EINTR) continue;
      if (errno == EPIPE || errno == ECONNRESET || errno == ENOTCONN) {
        throw Disconnected("peer " + peer_ + ": " + std::strerror(errno));
      }
      throw TransportError(errno_text("send"));
    }
    off += static_cast<std::size_t>(n);
  }
}

// TcpConnection

void TcpConnection::write_message(std::span<const std::uint8_t> message_bytes) { write_all(message_bytes); }

std::optional<WireMessage> TcpConnection::receive(double timeout_s) {
  const auto deadline = deadline_after(timeout_s);
  std::vector<std::uint8_t> bytes;
  for (;;) {
    if (auto m = decoder_.next()) return m;
    bytes.clear();
    const double left = deadline ? std::max(0.0, std::chrono::duration<double>(*deadline - Clock::now()).count()) : -1.0;
    if (!read_some(bytes, left)) return std::nullopt;
    decoder_.feed(bytes);
  }
}

// WebSocketConnection

WebSocketConnection::WebSocketConnection(int fd, std::string peer, bool client_side, std::vector<std::uint8_t> pending)
    : Connection(fd, std::move(peer)), client_side_(client_side), buffer_(std::move(pending)) {
  std::random_device rd;
  mask_state_ = (std::uint64_t{rd()} << 32) ^ rd() ^ 0x9E3779B97F4A7C15ull;
}

void WebSocketConnection::write_message(std::span<const std::uint8_t> message_bytes) {
  write_frame(0x2, message_bytes);
}

void WebSocketConnection::send_close() {
  const std::array<std::uint8_t, 2> code{0x03, 0xE8};
  write_frame(0x8, code);
}

void WebSocketConnection::write_frame(std::uint8_t opcode, std::span<const std::uint8_t> payload) {
  std::vector<std::uint8_t> frame;
  frame.reserve(payload.size() + 14);
  frame.push_back(static_cast<std::uint8_t>(0x80 | opcode));
  const std::uint8_t mask_bit = client_side_ ? 0x80 : 0x00;
  const std::uint64_t n = payload.size();
  if (n < 126) {
    frame.push_back(static_cast<std::uint8_t>(mask_bit | n));
  } else if (n <= 0xFFFF) {
    frame.push_back(mask_bit | 126);
    frame.push_back(static_cast<std::uint8_t>(n >> 8));
    frame.push_back(static_cast<std::uint8_t>(n));
  } else {
    frame.push_back(mask_bit | 127);
    for (int s = 56; s >= 0; s -= 8) frame.push_back(static_cast<std::uint8_t>(n >> s));
  }
  if (client_side_) {
    mask_state_ ^= mask_state_ << 13;
    mask_state_ ^= mask_state_ >> 7;
    mask_state_ ^= mask_state_ << 17;
    std::array<std::uint8_t, 4> key{};
    for (int i = 0; i < 4; ++i) key[static_cast<std::size_t>(i)] = static_cast<std::uint8_t>(mask_state_ >> (8 * i));
    frame.insert(frame.end(), key.begin(), key.end());
    const std::size_t start = frame.size();
    frame.insert(frame.end(), payload.begin(), payload.end());
    for (std::size_t i = 0; i < payload.size(); ++i) frame[start + i] ^= key[i & 3];
  } else {
    frame.insert(frame.end(), payload.begin(), payload.end());
  }
  write_all(frame);
}

std::optional<WebSocketConnection::Frame> WebSocketConnection::take_frame() {
  if (buffer_.size() < 2) return std::nullopt;
  const std::uint8_t b0 = buffer_[0];
  const std::uint8_t b1 = buffer_[1];
  if (b0 & 0x70) throw TransportError("websocket: reserved bits set");
  const bool masked = (b1 & 0x80) != 0;
  if (masked == client_side_) {
    throw TransportError(client_side_ ? "websocket: server frames must not be masked"
                                      : "websocket: client frames must be masked");
  }
  std::size_t pos = 2;
  std::uint64_t len = b1 & 0x7F;
  if (len == 126) {
    if (buffer_.size() < 4) return std::nullopt;
    len = (std::uint64_t{buffer_[2]} << 8) | buffer_[3];
    pos = 4;
  } else if (len == 127) {
    if (buffer_.size() < 10) return std::nullopt;
    len = 0;
    for (std::size_t i = 0; i < 8; ++i) len = (len << 8) | buffer_[2 + i];
    pos = 10;
  }
  if (len > kMaxFramePayload) throw TransportError("websocket: frame too large");
  std::array<std::uint8_t, 4> key{};
  if (masked) {
    if (buffer_.size() < pos + 4) return std::nullopt;
    std::copy_n(buffer_.begin() + static_cast<std::ptrdiff_t>(pos), 4, key.begin());
    pos += 4;
  }
  if (buffer_.size() - pos < len) return std::nullopt;
  Frame f;
  f.fin = (b0 & 0x80) != 0;
  f.opcode = b0 & 0x0F;
  const auto begin = buffer_.begin() + static_cast<std::ptrdiff_t>(pos);
  f.payload.assign(begin, begin + static_cast<std::ptrdiff_t>(len));
  if (masked) {
    for (std::size_t i = 0; i < f.payload.size(); ++i) f.payload[i] ^= key[i & 3];
  }
  buffer_.erase(buffer_.begin(), begin + static_cast<std::ptrdiff_t>(len));
  return f;
}

std::optional<WireMessage> WebSocketConnection::receive(double timeout_s) {
  const auto deadline = deadline_after(timeout_s);
  for (;;) {
    while (auto frame = take_frame()) {
      switch (frame->opcode) {
        case 0x9: {
          std::lock_guard lock(send_mutex_);
          if (!closed_) write_frame(0xA, frame->payload);
          continue;
        }
        case 0xA:
          continue;
        case 0x8: {
          {
            std::lock_guard lock(send_mutex_);
            if (!closed_) {
              try {
                write_frame(0x8, frame->payload.size() >= 2 ? std::span<const std::uint8_t>(frame->payload.data(), 2)
                                                            : std::span<const std::uint8_t>());
              } catch (const TransportError&) {
              }
              closed_ = true;
            }
          }
          throw Disconnected("peer " + peer_ + " closed the WebSocket");
        }
        case 0x1:
        case 0x2:
          if (in_message_) throw TransportError("websocket: new data frame inside a fragmented message");
          in_message_ = true;
          text_message_ = frame->opcode == 0x1;
          message_ = std::move(frame->payload);
          break;
        case 0x0:
          if (!in_message_) throw TransportError("websocket: continuation frame without a message");
          message_.insert(message_.end(), frame->payload.begin(), frame->payload.end());
          break;
        default:
          throw TransportError("websocket: unknown opcode");
      }
      if (message_.size() > kMaxFramePayload) throw TransportError("websocket: message too large");
      if (frame->fin) {
        in_message_ = false;
        std::vector<std::uint8_t> bytes = std::move(message_);
        message_.clear();
        if (text_message_) throw ProtocolError(ProtocolErrc::unexpected_message, "text WebSocket messages are not accepted");
        return decode(bytes);
      }
    }
    const double left = deadline ? std::max(0.0, std::chrono::duration<double>(*deadline - Clock::now()).count()) : -1.0;
    if (!read_some(buffer_, left)) return std::nullopt;
  }
}

// Listener

Listener::Listener(const Endpoint& endpoint) {
  AddrInfo ai;
  resolve(endpoint, true, ai);
  std::string last_error = "no usable address";
  for (addrinfo* a = ai.list; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC, a->ai_protocol);
    if (fd < 0) {
      last_error = errno_text("socket");
      continue;
    }
    int one = 1;
    ::setsockopt(fd, SOL_SOCKET, SO_REUSEADDR, &one, sizeof one);
    if (::bind(fd, a->ai_addr, a->ai_addrlen) != 0 || ::listen(fd, 8) != 0) {
      last_error = errno_text("bind");
      ::close(fd);
      continue;
    }
    sockaddr_storage addr{};
    socklen_t len = sizeof addr;
    ::getsockname(fd, reinterpret_cast<sockaddr*>(&addr), &len);
    port_ = addr.ss_family == AF_INET6 ? ntohs(reinterpret_cast<sockaddr_in6*>(&addr)->sin6_port)
                                       : ntohs(reinterpret_cast<sockaddr_in*>(&addr)->sin_port);
    fd_ = fd;
    return;
  }
  throw TransportError("cannot listen on " + endpoint.to_string() + ": " + last_error);
}

Listener::~Listener() { close(); }

void Listener::close() {
  if (fd_ >= 0) {
    ::shutdown(fd_, SHUT_RDWR);
    ::close(fd_);
    fd_ = -1;
  }
}

std::unique_ptr<Connection> Listener::accept(Framing framing, double timeout_s) {
  if (fd_ < 0) throw TransportError("listener is closed");
  if (!wait_readable(fd_, deadline_after(timeout_s))) return nullptr;
  sockaddr_storage addr{};
  socklen_t len = sizeof addr;
  int fd = -1;
  for (;;) {
    fd = ::accept4(fd_, reinterpret_cast<sockaddr*>(&addr), &len, SOCK_CLOEXEC);
    if (fd >= 0) break;
    if (errno == EINTR) continue;
    if (errno == EAGAIN || errno == ECONNABORTED) return nullptr;
    throw TransportError(errno_text("accept"));
  }
  set_nodelay(fd);
  const std::string peer = numeric_peer(reinterpret_cast<sockaddr*>(&addr), len);
  if (framing == Framing::tcp) return std::make_unique<TcpConnection>(fd, peer);
  try {
    auto pending = server_handshake(fd, 5.0);
    return std::make_unique<WebSocketConnection>(fd, peer, false, std::move(pending));
  } catch (...) {
    ::close(fd);
    throw;
  }
}

std::unique_ptr<Connection> connect(const Endpoint& endpoint, Framing framing, double timeout_s) {
  AddrInfo ai;
  resolve(endpoint, false, ai);
  const auto deadline = deadline_after(timeout_s);
  std::string last_error = "no usable address";
  for (addrinfo* a = ai.list; a; a = a->ai_next) {
    const int fd = ::socket(a->ai_family, a->ai_socktype | SOCK_CLOEXEC | SOCK_NONBLOCK, a->ai_protocol);
    if (fd < 0) {
      last_error = errno_text("socket");
      continue;
    }
    int rc = ::connect(fd, a->ai_addr, a->ai_addrlen);
    if (rc != 0 && errno == EINPROGRESS) {
      pollfd p{fd, POLLOUT, 0};
      rc = ::poll(&p, 1, remaining_ms(deadline));
      int err = 0;
      socklen_t elen = sizeof err;
      if (rc == 1) ::getsockopt(fd, SOL_SOCKET, SO_ERROR, &err, &elen);
      if (rc == 1 && err == 0) {
        rc = 0;
      } else {
        errno = rc == 0 ? ETIMEDOUT : err;
        rc = -1;
      }
    }
    if (rc != 0) {
      last_error = errno_text("connect");
      ::close(fd);
      continue;
    }
    ::fcntl(fd, F_SETFL, ::fcntl(fd, F_GETFL) & ~O_NONBLOCK);
    set_nodelay(fd);
    const std::string peer = endpoint.to_string();
    if (framing == Framing::tcp) return std::make_unique<TcpConnection>(fd, peer);
    try {
      auto pending = client_handshake(fd, endpoint, timeout_s < 0 ? 5.0 : timeout_s);
      return std::make_unique<WebSocketConnection>(fd, peer, true, std::move(pending));
    } catch (...) {
      ::close(fd);
      throw;
    }
  }
  throw TransportError("cannot connect to " + endpoint.to_string() + ": " + last_error);
}

}  // namespace viva::gateway
