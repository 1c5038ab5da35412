#include "viva/upscale.hpp"

#include <fcntl.h>
#include <poll.h>
#include <signal.h>
#include <sys/wait.h>
#include <unistd.h>

#include <algorithm>
#include <array>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <spdlog/spdlog.h>
#include <vector>

namespace viva::render {
namespace {

constexpr char kMagic[] = "VIVASR00";

using Clock = std::chrono::steady_clock;

struct Timeout {};

// Keys cubic convolution kernel, a = -0.5.
double keys(double t) {
  constexpr double a = -0.5;
  t = std::abs(t);
  if (t <= 1.0) return ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0;
  if (t < 2.0) return ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a;
  return 0.0;
}

struct Taps {
  std::array<int, 4> index;
  std::array<double, 4> weight;
};

std::vector<Taps> cubic_taps(int in, int out) {
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double s = (i + 0.5) * ratio - 0.5;
    const int base = static_cast<int>(std::floor(s));
    Taps& t = taps[static_cast<std::size_t>(i)];
    for (int k = 0; k < 4; ++k) {
      const int idx = base - 1 + k;
      t.index[static_cast<std::size_t>(k)] = std::clamp(idx, 0, in - 1);
      t.weight[static_cast<std::size_t>(k)] = keys(s - idx);
    }
  }
  return taps;
}

std::vector<Taps> linear_taps(int in, int out) {
  std::vector<Taps> taps(static_cast<std::size_t>(out));
  const double ratio = static_cast<double>(in) / out;
  for (int i = 0; i < out; ++i) {
    const double s = std::clamp((i + 0.5) * ratio - 0.5, 0.0, static_cast<double>(in - 1));
    const int x0 = static_cast<int>(s);
    const double f = s - x0;
    taps[static_cast<std::size_t>(i)] = {{x0, std::min(x0 + 1, in - 1), x0, x0}, {1.0 - f, f, 0.0, 0.0}};
  }
  return taps;
}

inline std::uint8_t to_byte(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

Image separable(const Image& in, int ow, int oh, const std::vector<Taps>& tx, const std::vector<Taps>& ty) {
  const int ih = in.height();
  std::vector<double> mid(static_cast<std::size_t>(ow) * ih * 3);
  for (int y = 0; y < ih; ++y) {
    const std::uint8_t* row = in.row(y);
    double* m = mid.data() + static_cast<std::size_t>(y) * ow * 3;
    for (int x = 0; x < ow; ++x) {
      const Taps& t = tx[static_cast<std::size_t>(x)];
      for (int ch = 0; ch < 3; ++ch) {
        double acc = 0.0;
        for (int k = 0; k < 4; ++k) acc += t.weight[k] * row[3 * t.index[k] + ch];
        m[3 * x + ch] = acc;
      }
    }
  }
  Image out(ow, oh);
  for (int y = 0; y < oh; ++y) {
    const Taps& t = ty[static_cast<std::size_t>(y)];
    std::uint8_t* o = out.row(y);
    for (int x = 0; x < 3 * ow; ++x) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.weight[k] * mid[static_cast<std::size_t>(t.index[k]) * ow * 3 + x];
      o[x] = to_byte(acc);
    }
  }
  return out;
}

void put_be32(std::string& s, std::uint32_t v) {
  s.push_back(static_cast<char>((v >> 24) & 0xFF));
  s.push_back(static_cast<char>((v >> 16) & 0xFF));
  s.push_back(static_cast<char>((v >> 8) & 0xFF));
  s.push_back(static_cast<char>(v & 0xFF));
}

std::uint32_t get_be32(const unsigned char* p) {
  return (std::uint32_t{p[0]} << 24) | (std::uint32_t{p[1]} << 16) | (std::uint32_t{p[2]} << 8) | std::uint32_t{p[3]};
}

int remaining_ms(Clock::time_point deadline) {
  const auto left = std::chrono::duration_cast<std::chrono::milliseconds>(deadline - Clock::now()).count();
  return static_cast<int>(std::max<long long>(0, left));
}

void write_all(int fd, const std::uint8_t* data, std::size_t n, Clock::time_point deadline) {
  while (n > 0) {
    pollfd p{fd, POLLOUT, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r == 0) throw Timeout{};
    if (r < 0) {
      if (errno == EINTR) continue;
      throw UpscaleError(std::string("external upscaler: poll failed: ") + std::strerror(errno));
    }
    const ssize_t w = ::write(fd, data, n);
    if (w < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw UpscaleError(std::string("external upscaler: write failed: ") + std::strerror(errno));
    }
    data += w;
    n -= static_cast<std::size_t>(w);
  }
}

void read_all(int fd, std::uint8_t* data, std::size_t n, Clock::time_point deadline) {
  while (n > 0) {
    pollfd p{fd, POLLIN, 0};
    const int r = ::poll(&p, 1, remaining_ms(deadline));
    if (r == 0) throw Timeout{};
    if (r < 0) {
      if (errno == EINTR) continue;
      throw UpscaleError(std::string("external upscaler: poll failed: ") + std::strerror(errno));
    }
    const ssize_t got = ::read(fd, data, n);
    if (got < 0) {
      if (errno == EINTR || errno == EAGAIN) continue;
      throw UpscaleError(std::string("external upscaler: read failed: ") + std::strerror(errno));
    }
    if (got == 0) throw UpscaleError("external upscaler: protocol violation: reply truncated");
    data += got;
    n -= static_cast<std::size_t>(got);
  }
}

}  // namespace

const char* to_string(UpscalerKind kind) noexcept {
  switch (kind) {
    case UpscalerKind::nearest:
      return "nearest";
    case UpscalerKind::bilinear:
      return "bilinear";
    case UpscalerKind::bicubic:
      return "bicubic";
    case UpscalerKind::external:
      return "external";
  }
  return "bicubic";
}

UpscalerKind upscaler_kind_from_string(const std::string& text) {
  if (text == "nearest") return UpscalerKind::nearest;
  if (text == "bilinear") return UpscalerKind::bilinear;
  if (text == "bicubic") return UpscalerKind::bicubic;
  if (text == "external") return UpscalerKind::external;
  throw std::invalid_argument("upscaler kind must be one of nearest, bilinear, bicubic, external");
}

void UpscalerSpec::validate() const {
  if (kind == UpscalerKind::external && command.empty()) {
    throw std::invalid_argument("upscaler: external kind requires a command");
  }
  if (!(timeout_s > 0.0)) throw std::invalid_argument("upscaler: timeout_s must be > 0");
}

std::string upscaler_header(int width, int height) {
  std::string h(kMagic, 8);
  put_be32(h, static_cast<std::uint32_t>(width));
  put_be32(h, static_cast<std::uint32_t>(height));
  return h;
}

Image resample(const Image& in, int ow, int oh, UpscalerKind kind) {
  if (in.empty() || ow <= 0 || oh <= 0) throw UpscaleError("resample: empty input or output");
  switch (kind) {
    case UpscalerKind::nearest: {
      Image out(ow, oh);
      std::vector<int> xs(static_cast<std::size_t>(ow));
      for (int x = 0; x < ow; ++x) {
        xs[static_cast<std::size_t>(x)] =
            std::min(in.width() - 1, static_cast<int>((2LL * x + 1) * in.width() / (2LL * ow)));
      }
      for (int y = 0; y < oh; ++y) {
        const int sy = std::min(in.height() - 1, static_cast<int>((2LL * y + 1) * in.height() / (2LL * oh)));
        const std::uint8_t* src = in.row(sy);
        std::uint8_t* o = out.row(y);
        for (int x = 0; x < ow; ++x) std::memcpy(o + 3 * x, src + 3 * xs[static_cast<std::size_t>(x)], 3);
      }
      return out;
    }
    case UpscalerKind::bilinear:
      return separable(in, ow, oh, linear_taps(in.width(), ow), linear_taps(in.height(), oh));
    case UpscalerKind::bicubic:
      return separable(in, ow, oh, cubic_taps(in.width(), ow), cubic_taps(in.height(), oh));
    case UpscalerKind::external:
      break;
  }
  throw UpscaleError("resample: external kind needs an ExternalUpscaler");
}

ExternalUpscaler::ExternalUpscaler(UpscalerSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  spawn();
}

ExternalUpscaler::~ExternalUpscaler() { terminate(); }

void ExternalUpscaler::spawn() {
  ::signal(SIGPIPE, SIG_IGN);
  int in_pipe[2];
  int out_pipe[2];
  if (::pipe2(in_pipe, O_CLOEXEC) != 0) throw UpscaleError("external upscaler: pipe failed");
  if (::pipe2(out_pipe, O_CLOEXEC) != 0) {
    ::close(in_pipe[0]);
    ::close(in_pipe[1]);
    throw UpscaleError("external upscaler: pipe failed");
  }
  const pid_t pid = ::fork();
  if (pid < 0) throw UpscaleError("external upscaler: fork failed");
  if (pid == 0) {
    ::dup2(in_pipe[0], STDIN_FILENO);
    ::dup2(out_pipe[1], STDOUT_FILENO);
    ::execl("/bin/sh", "sh", "-c", spec_.command.c_str(), static_cast<char*>(nullptr));
    ::_exit(127);
  }
  ::close(in_pipe[0]);
  ::close(out_pipe[1]);
  pid_ = pid;
  to_child_ = in_pipe[1];
  from_child_ = out_pipe[0];
}

void ExternalUpscaler::terminate() {
  if (to_child_ >= 0) ::close(to_child_);
  if (from_child_ >= 0) ::close(from_child_);
  to_child_ = from_child_ = -1;
  if (pid_ > 0) {
    ::kill(pid_, SIGKILL);
    ::waitpid(pid_, nullptr, 0);
    pid_ = -1;
  }
}

Image ExternalUpscaler::upscale_to(const Image& image, int ow, int oh) {
  if (disabled_) return resample(image, ow, oh, UpscalerKind::bicubic);
  const auto deadline =
      Clock::now() + std::chrono::duration_cast<Clock::duration>(std::chrono::duration<double>(spec_.timeout_s));
  try {
    std::string head = upscaler_header(image.width(), image.height());
    write_all(to_child_, reinterpret_cast<const std::uint8_t*>(head.data()), head.size(), deadline);
    write_all(to_child_, image.storage().data(), image.storage().size(), deadline);
    std::string tail;
    put_be32(tail, static_cast<std::uint32_t>(ow));
    put_be32(tail, static_cast<std::uint32_t>(oh));
    write_all(to_child_, reinterpret_cast<const std::uint8_t*>(tail.data()), tail.size(), deadline);

    unsigned char reply[16];
    read_all(from_child_, reply, sizeof reply, deadline);
    if (std::memcmp(reply, kMagic, 8) != 0) throw UpscaleError("external upscaler: protocol violation: bad magic");
    if (get_be32(reply + 8) != static_cast<std::uint32_t>(ow) || get_be32(reply + 12) != static_cast<std::uint32_t>(oh)) {
      throw UpscaleError("external upscaler: protocol violation: reply dimensions differ from request");
    }
    std::vector<std::uint8_t> payload(Image::byte_size(ow, oh));
    read_all(from_child_, payload.data(), payload.size(), deadline);
    return Image(ow, oh, std::move(payload));
  } catch (const Timeout&) {
    spdlog::warn("external upscaler timed out after {:.3f} s; falling back to bicubic", spec_.timeout_s);
    terminate();
    disabled_ = true;
    return resample(image, ow, oh, UpscalerKind::bicubic);
  } catch (...) {
    terminate();
    disabled_ = true;
    throw;
  }
}

Upscaler::Upscaler(UpscalerSpec spec) : spec_(std::move(spec)) {
  spec_.validate();
  if (spec_.kind == UpscalerKind::external) external_ = std::make_unique<ExternalUpscaler>(spec_);
}

Image Upscaler::upscale_to(const Image& image, int ow, int oh) {
  if (ow == image.width() && oh == image.height()) return image;
  if (external_) return external_->upscale_to(image, ow, oh);
  return resample(image, ow, oh, spec_.kind);
}

Image upscale(const Image& image, double factor, Upscaler& upscaler) {
  if (!(factor >= 1.0)) throw UpscaleError("upscale: factor must be >= 1");
  const int ow = static_cast<int>(std::lround(image.width() * factor));
  const int oh = static_cast<int>(std::lround(image.height() * factor));
  return upscaler.upscale_to(image, ow, oh);
}

Image upscale(const Image& image, double factor, const UpscalerSpec& spec) {
  Upscaler upscaler(spec);
  return upscale(image, factor, upscaler);
}

}  // namespace viva::render
