#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "wmnet/model.hpp"
#include "wmnet/tensor.hpp"

namespace wmnet {

/// Interleaved 8-bit image, row-major [height][width][channels].
struct ByteImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::vector<std::uint8_t> pixels;

  friend bool operator==(const ByteImage&, const ByteImage&) = default;
};

/// clamp(v,0,1)*255 rounded half away from zero.
std::uint8_t quantize_unit(float value);
ByteImage to_bytes(const Tensor& image);  // [H,W] or [H,W,C]
Tensor from_bytes(const ByteImage& image);  // [H,W,C] in [0,1]
/// Round trip through 8 bits.
Tensor quantize_8bit(const Tensor& image);

/// PNG, or binary/ASCII PPM and PGM. Returns [H,W,3] in [0,1]; grayscale is
/// replicated to three channels and alpha is dropped.
Tensor load_image(const std::filesystem::path& path);
/// Format follows the extension: .png, .ppm or .pgm (channel 0 only).
void save_image(const Tensor& image, const std::filesystem::path& path);

bool is_supported_image(const std::filesystem::path& path);

/// Corner-aligned bilinear resize of an [H,W,C] image.
Tensor resize_bilinear(const Tensor& image, std::size_t height, std::size_t width);
Tensor resize_to_256(const Tensor& image);

/// 64 hex digits, most significant bit first within each byte.
std::string to_hex(const WatermarkBits& bits);
WatermarkBits from_hex(std::string_view hex);

}  // namespace wmnet
