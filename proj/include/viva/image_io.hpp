#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "viva/image.hpp"

namespace viva::image_io {

class CodecError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Lossless PNG (8-bit RGB). Grayscale, palette, alpha and 16-bit inputs are
// converted to 8-bit RGB on decode.
std::vector<std::uint8_t> encode_png(const Image& image, int compression_level = 1);
Image decode_png(std::span<const std::uint8_t> bytes);

Image decode_jpeg(std::span<const std::uint8_t> bytes);

// Reads a .png/.jpg/.jpeg file, dispatching on the file signature.
Image read_image(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const Image& image);

std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace viva::image_io
