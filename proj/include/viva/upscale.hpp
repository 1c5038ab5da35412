#pragma once

#include <chrono>
#include <memory>
#include <stdexcept>
#include <string>
#include <sys/types.h>

#include "viva/image.hpp"

namespace viva::render {

enum class UpscalerKind { nearest, bilinear, bicubic, external };

const char* to_string(UpscalerKind kind) noexcept;
UpscalerKind upscaler_kind_from_string(const std::string& text);

struct UpscalerSpec {
  UpscalerKind kind = UpscalerKind::bicubic;
  // Shell command for the external kind; it must speak the VIVASR00 protocol
  // on stdin/stdout.
  std::string command;
  double timeout_s = 2.0;

  void validate() const;
};

class UpscaleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Classical separable resampling to an explicit output size. Output pixel
// centres map to input positions (x + 0.5) * in / out - 0.5, clamped to edge.
Image resample(const Image& image, int out_width, int out_height, UpscalerKind kind);

// Serialises one request/reply exchange with an external upscaler process. A
// timeout kills the process and every later call falls back to bicubic.
class ExternalUpscaler {
 public:
  explicit ExternalUpscaler(UpscalerSpec spec);
  ~ExternalUpscaler();
  ExternalUpscaler(const ExternalUpscaler&) = delete;
  ExternalUpscaler& operator=(const ExternalUpscaler&) = delete;

  Image upscale_to(const Image& image, int out_width, int out_height);
  bool fell_back() const noexcept { return disabled_; }

 private:
  void spawn();
  void terminate();

  UpscalerSpec spec_;
  pid_t pid_ = -1;
  int to_child_ = -1;
  int from_child_ = -1;
  bool disabled_ = false;
};

// Stateful front end for every upscaler kind; owns the external process when
// one is configured.
class Upscaler {
 public:
  explicit Upscaler(UpscalerSpec spec);

  const UpscalerSpec& spec() const noexcept { return spec_; }
  Image upscale_to(const Image& image, int out_width, int out_height);

 private:
  UpscalerSpec spec_;
  std::unique_ptr<ExternalUpscaler> external_;
};

// Output dims round(input dims * factor). Factor 1 returns a copy.
Image upscale(const Image& image, double factor, Upscaler& upscaler);
Image upscale(const Image& image, double factor, const UpscalerSpec& spec);

// Encodes the VIVASR00 request / reply framing; shared with the test helper.
std::string upscaler_header(int width, int height);

}  // namespace viva::render
