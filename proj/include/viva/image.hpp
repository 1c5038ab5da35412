#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

namespace viva {

struct Rgb {
  std::uint8_t r = 0;
  std::uint8_t g = 0;
  std::uint8_t b = 0;

  friend bool operator==(const Rgb&, const Rgb&) = default;
};

// Interleaved 8-bit RGB raster, row-major, top-left origin.
class Image {
 public:
  Image() = default;
  Image(int width, int height) : width_(width), height_(height) {
    if (width < 0 || height < 0) throw std::invalid_argument("Image: negative dimensions");
    data_.assign(static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3, 0);
  }
  Image(int width, int height, std::vector<std::uint8_t> data)
      : width_(width), height_(height), data_(std::move(data)) {
    if (width < 0 || height < 0 || data_.size() != byte_size(width, height)) {
      throw std::invalid_argument("Image: raster length does not match width*height*3");
    }
  }

  static std::size_t byte_size(int width, int height) {
    return static_cast<std::size_t>(width) * static_cast<std::size_t>(height) * 3;
  }

  int width() const noexcept { return width_; }
  int height() const noexcept { return height_; }
  bool empty() const noexcept { return width_ == 0 || height_ == 0; }
  std::size_t stride() const noexcept { return static_cast<std::size_t>(width_) * 3; }

  std::uint8_t* row(int y) noexcept { return data_.data() + static_cast<std::size_t>(y) * stride(); }
  const std::uint8_t* row(int y) const noexcept {
    return data_.data() + static_cast<std::size_t>(y) * stride();
  }

  Rgb at(int x, int y) const noexcept {
    const std::uint8_t* p = row(y) + static_cast<std::size_t>(x) * 3;
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) noexcept {
    std::uint8_t* p = row(y) + static_cast<std::size_t>(x) * 3;
    p[0] = c.r;
    p[1] = c.g;
    p[2] = c.b;
  }

  std::span<std::uint8_t> bytes() noexcept { return data_; }
  std::span<const std::uint8_t> bytes() const noexcept { return data_; }
  std::vector<std::uint8_t>& storage() noexcept { return data_; }
  const std::vector<std::uint8_t>& storage() const noexcept { return data_; }

  friend bool operator==(const Image&, const Image&) = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

}  // namespace viva
