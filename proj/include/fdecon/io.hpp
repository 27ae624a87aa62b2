#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

// FLK1 stack file, little-endian:
//   0  "FLK1"
//   4  u32 version (1)
//   8  u32 frames, 12 u32 height, 16 u32 width
//   20 f64 pixel_size_nm, 28 f64 fwhm_nm
//   36 frames*height*width f32, frame-major, row-major
inline constexpr std::size_t kStackHeaderBytes = 36;
inline constexpr std::uint32_t kStackVersion = 1;

std::vector<std::uint8_t> encode_stack(const FrameStack& stack);
// `origin` names the source in error messages.
FrameStack decode_stack(std::span<const std::uint8_t> bytes, const std::string& origin = "stack");
void write_stack(const std::filesystem::path& path, const FrameStack& stack);
FrameStack read_stack(const std::filesystem::path& path);

// FLI1 image file, little-endian: "FLI1", u32 version (1), u32 height,
// u32 width, then height*width f64 row-major. Lossless carrier for
// intermediate results between pipeline stages.
inline constexpr std::size_t kImageHeaderBytes = 16;

std::vector<std::uint8_t> encode_image(const Image& image);
Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin = "image");
void write_image(const std::filesystem::path& path, const Image& image);
Image read_image(const std::filesystem::path& path);

// 16-bit binary graymap (P5, maxval 65535) plus a JSON sidecar at
// `<path>.json` recording the value range mapped onto [0, 65535].
enum class ViewScaling { MinMax, Fixed };

struct ViewRange {
  ViewScaling scaling = ViewScaling::MinMax;
  double low = 0.0;
  double high = 0.0;
};

inline constexpr std::uint16_t kViewMidGray = 32768;

// MinMax uses the image's own range; Fixed uses [low, high] as given and
// clamps outside it. A zero-width range maps everything to mid-gray.
ViewRange write_image_view(const std::filesystem::path& path, const Image& image,
                           ViewRange range = ViewRange{});
std::vector<std::uint16_t> read_graymap(const std::filesystem::path& path, std::size_t& height, std::size_t& width);
// Inverse of write_image_view using the sidecar.
Image read_image_view(const std::filesystem::path& path);

// Text emitter list: "# field_nm <width> <height>" then one "x_nm,y_nm" per line.
void write_emitters(const std::filesystem::path& path, const EmitterSet& emitters);
EmitterSet read_emitters(const std::filesystem::path& path);

// Writes to a temporary file in the same directory, then renames over `path`.
void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);
void write_file_atomic(const std::filesystem::path& path, const std::string& text);
std::vector<std::uint8_t> read_file(const std::filesystem::path& path);

}  // namespace fdecon
