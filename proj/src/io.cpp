#include "fdecon/io.hpp"

#include <fcntl.h>
#include <unistd.h>

#include <algorithm>
#include <atomic>
#include <bit>
#include <cerrno>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iomanip>
#include <limits>
#include <sstream>

#include "fdecon/error.hpp"
#include "json.hpp"

namespace fdecon {

namespace {

constexpr char kStackMagic[4] = {'F', 'L', 'K', '1'};
constexpr char kImageMagic[4] = {'F', 'L', 'I', '1'};
constexpr std::uint32_t kImageVersion = 1;

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

void put_u64(std::vector<std::uint8_t>& out, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint32_t get_u32(const std::uint8_t* p) {
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

std::uint64_t get_u64(const std::uint8_t* p) {
  std::uint64_t v = 0;
  for (int i = 7; i >= 0; --i) v = (v << 8) | p[i];
  return v;
}

[[noreturn]] void format_error(const std::string& origin, std::size_t offset, const std::string& what) {
  throw FormatError(origin + ": " + what + " at offset " + std::to_string(offset));
}

std::string sys_error(const std::filesystem::path& path, const char* what) {
  return std::string(what) + " " + path.string() + ": " + std::strerror(errno);
}

std::filesystem::path sidecar_path(const std::filesystem::path& path) {
  return std::filesystem::path(path.string() + ".json");
}

}  // namespace

std::vector<std::uint8_t> encode_stack(const FrameStack& stack) {
  constexpr auto limit = std::numeric_limits<std::uint32_t>::max();
  if (stack.frames() > limit || stack.height() > limit || stack.width() > limit) {
    throw InvalidArgument("stack dimensions exceed the FLK1 header range");
  }
  std::vector<std::uint8_t> out;
  out.reserve(kStackHeaderBytes + 4 * stack.data().size());
  out.insert(out.end(), kStackMagic, kStackMagic + 4);
  put_u32(out, kStackVersion);
  put_u32(out, static_cast<std::uint32_t>(stack.frames()));
  put_u32(out, static_cast<std::uint32_t>(stack.height()));
  put_u32(out, static_cast<std::uint32_t>(stack.width()));
  put_u64(out, std::bit_cast<std::uint64_t>(stack.pixel_size_nm()));
  put_u64(out, std::bit_cast<std::uint64_t>(stack.fwhm_nm()));
  for (float v : stack.data()) put_u32(out, std::bit_cast<std::uint32_t>(v));
  return out;
}

FrameStack decode_stack(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < kStackHeaderBytes) {
    format_error(origin, bytes.size(),
                 "truncated header (" + std::to_string(bytes.size()) + " of " + std::to_string(kStackHeaderBytes) +
                     " bytes)");
  }
  const std::uint8_t* p = bytes.data();
  for (std::size_t i = 0; i < 4; ++i) {
    if (p[i] != static_cast<std::uint8_t>(kStackMagic[i])) format_error(origin, i, "bad magic, expected \"FLK1\"");
  }
  const std::uint32_t version = get_u32(p + 4);
  if (version != kStackVersion) format_error(origin, 4, "unsupported version " + std::to_string(version));
  const std::uint64_t frames = get_u32(p + 8), height = get_u32(p + 12), width = get_u32(p + 16);
  const double pixel = std::bit_cast<double>(get_u64(p + 20));
  const double fwhm = std::bit_cast<double>(get_u64(p + 28));
  if (frames < 2) format_error(origin, 8, "frame count " + std::to_string(frames) + " is below 2");
  if (height == 0) format_error(origin, 12, "zero height");
  if (width == 0) format_error(origin, 16, "zero width");
  if (!(pixel > 0.0) || !std::isfinite(pixel)) format_error(origin, 20, "pixel size must be positive");
  if (!(fwhm >= 0.0) || !std::isfinite(fwhm)) format_error(origin, 28, "FWHM must be nonnegative");

  // Each factor is < 2^32, so frames*height*width*4 can exceed 2^64.
  const auto max_count = std::numeric_limits<std::uint64_t>::max() / 4;
  if (height * width > max_count / frames) format_error(origin, 8, "shape overflow");
  const std::uint64_t count = frames * height * width;
  const std::uint64_t expected = kStackHeaderBytes + 4 * count;
  if (bytes.size() < expected) {
    format_error(origin, bytes.size(),
                 "truncated payload (expected " + std::to_string(expected) + " bytes, have " +
                     std::to_string(bytes.size()) + ")");
  }
  if (bytes.size() > expected) format_error(origin, expected, "trailing bytes after the last frame");

  std::vector<float> data(count);
  for (std::uint64_t i = 0; i < count; ++i) data[i] = std::bit_cast<float>(get_u32(p + kStackHeaderBytes + 4 * i));
  return FrameStack(frames, height, width, pixel, fwhm, std::move(data));
}

void write_stack(const std::filesystem::path& path, const FrameStack& stack) {
  write_file_atomic(path, encode_stack(stack));
}

FrameStack read_stack(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_stack(bytes, path.string());
}

std::vector<std::uint8_t> encode_image(const Image& image) {
  constexpr auto limit = std::numeric_limits<std::uint32_t>::max();
  if (image.height() > limit || image.width() > limit) throw InvalidArgument("image dimensions exceed FLI1 range");
  std::vector<std::uint8_t> out;
  out.reserve(kImageHeaderBytes + 8 * image.size());
  out.insert(out.end(), kImageMagic, kImageMagic + 4);
  put_u32(out, kImageVersion);
  put_u32(out, static_cast<std::uint32_t>(image.height()));
  put_u32(out, static_cast<std::uint32_t>(image.width()));
  for (double v : image.pixels()) put_u64(out, std::bit_cast<std::uint64_t>(v));
  return out;
}

Image decode_image(std::span<const std::uint8_t> bytes, const std::string& origin) {
  if (bytes.size() < kImageHeaderBytes) format_error(origin, bytes.size(), "truncated header");
  const std::uint8_t* p = bytes.data();
  for (std::size_t i = 0; i < 4; ++i) {
    if (p[i] != static_cast<std::uint8_t>(kImageMagic[i])) format_error(origin, i, "bad magic, expected \"FLI1\"");
  }
  const std::uint32_t version = get_u32(p + 4);
  if (version != kImageVersion) format_error(origin, 4, "unsupported version " + std::to_string(version));
  const std::uint64_t height = get_u32(p + 8), width = get_u32(p + 12);
  const std::uint64_t expected = kImageHeaderBytes + 8 * height * width;
  if (bytes.size() != expected) {
    format_error(origin, std::min<std::uint64_t>(bytes.size(), expected),
                 "payload size mismatch (expected " + std::to_string(expected) + " bytes, have " +
                     std::to_string(bytes.size()) + ")");
  }
  std::vector<double> pixels(height * width);
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    pixels[i] = std::bit_cast<double>(get_u64(p + kImageHeaderBytes + 8 * i));
    if (!std::isfinite(pixels[i])) format_error(origin, kImageHeaderBytes + 8 * i, "non-finite pixel");
  }
  return Image(height, width, std::move(pixels));
}

void write_image(const std::filesystem::path& path, const Image& image) { write_file_atomic(path, encode_image(image)); }

Image read_image(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return decode_image(bytes, path.string());
}

ViewRange write_image_view(const std::filesystem::path& path, const Image& image, ViewRange range) {
  image.require_finite("image view");
  if (image.empty()) throw InvalidArgument("cannot write an empty image view");
  if (range.scaling == ViewScaling::MinMax) {
    const auto [lo, hi] = std::minmax_element(image.pixels().begin(), image.pixels().end());
    range.low = *lo;
    range.high = *hi;
  } else if (!(range.high >= range.low) || !std::isfinite(range.low) || !std::isfinite(range.high)) {
    throw InvalidArgument("fixed view range must satisfy low <= high");
  }

  std::ostringstream header;
  header << "P5\n" << image.width() << ' ' << image.height() << "\n65535\n";
  std::string bytes = header.str();
  const double span = range.high - range.low;
  for (double v : image.pixels()) {
    std::uint16_t q = kViewMidGray;
    if (span > 0.0) q = static_cast<std::uint16_t>(std::lround(std::clamp((v - range.low) / span, 0.0, 1.0) * 65535.0));
    bytes.push_back(static_cast<char>(q >> 8));
    bytes.push_back(static_cast<char>(q & 0xff));
  }

  nlohmann::json sidecar = {
      {"format", "pgm16"},
      {"height", image.height()},
      {"width", image.width()},
      {"scaling", range.scaling == ViewScaling::MinMax ? "minmax" : "fixed"},
      {"low", range.low},
      {"high", range.high},
  };
  write_file_atomic(path, bytes);
  write_file_atomic(sidecar_path(path), sidecar.dump(2) + "\n");
  return range;
}

std::vector<std::uint16_t> read_graymap(const std::filesystem::path& path, std::size_t& height, std::size_t& width) {
  const auto bytes = read_file(path);
  const std::string origin = path.string();
  std::size_t pos = 0;
  auto skip_space = [&] {
    while (pos < bytes.size()) {
      if (bytes[pos] == '#') {
        while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
      } else if (std::isspace(bytes[pos])) {
        ++pos;
      } else {
        break;
      }
    }
  };
  auto number = [&]() -> std::size_t {
    skip_space();
    const std::size_t start = pos;
    std::size_t v = 0;
    while (pos < bytes.size() && std::isdigit(bytes[pos])) {
      v = v * 10 + (bytes[pos] - '0');
      if (v > (std::size_t{1} << 32)) format_error(origin, start, "header value out of range");
      ++pos;
    }
    if (pos == start) format_error(origin, start, "expected a header number");
    return v;
  };

  if (bytes.size() < 2 || bytes[0] != 'P' || bytes[1] != '5') format_error(origin, 0, "bad magic, expected \"P5\"");
  pos = 2;
  width = number();
  height = number();
  const std::size_t maxval = number();
  if (maxval != 65535) format_error(origin, pos, "maxval " + std::to_string(maxval) + " is not 65535");
  if (pos >= bytes.size() || !std::isspace(bytes[pos])) format_error(origin, pos, "missing separator after header");
  ++pos;
  const std::size_t expected = pos + 2 * height * width;
  if (bytes.size() != expected) {
    format_error(origin, std::min(bytes.size(), expected),
                 "payload size mismatch (expected " + std::to_string(expected) + " bytes, have " +
                     std::to_string(bytes.size()) + ")");
  }
  std::vector<std::uint16_t> out(height * width);
  for (std::size_t i = 0; i < out.size(); ++i) {
    out[i] = static_cast<std::uint16_t>((bytes[pos + 2 * i] << 8) | bytes[pos + 2 * i + 1]);
  }
  return out;
}

Image read_image_view(const std::filesystem::path& path) {
  std::size_t h = 0, w = 0;
  const auto q = read_graymap(path, h, w);
  const auto side = read_file(sidecar_path(path));
  double low = 0.0, high = 0.0;
  try {
    const auto meta = nlohmann::json::parse(side.begin(), side.end());
    low = meta.at("low").get<double>();
    high = meta.at("high").get<double>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(sidecar_path(path).string() + ": " + e.what());
  }
  Image out(h, w);
  for (std::size_t i = 0; i < q.size(); ++i) {
    out[i] = high > low ? low + (high - low) * (static_cast<double>(q[i]) / 65535.0) : low;
  }
  return out;
}

void write_emitters(const std::filesystem::path& path, const EmitterSet& emitters) {
  std::ostringstream out;
  out << std::setprecision(17);
  out << "# field_nm " << emitters.field_width_nm() << ' ' << emitters.field_height_nm() << '\n';
  for (const auto& p : emitters.positions()) out << p.x_nm << ',' << p.y_nm << '\n';
  write_file_atomic(path, out.str());
}

EmitterSet read_emitters(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError(sys_error(path, "cannot open"));
  std::string line;
  std::size_t line_no = 0;
  double field_w = 0.0, field_h = 0.0;
  bool have_header = false;
  std::vector<Point> points;
  auto fail = [&](const std::string& what) {
    throw FormatError(path.string() + ": line " + std::to_string(line_no) + ": " + what);
  };
  while (std::getline(in, line)) {
    ++line_no;
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    if (!have_header) {
      std::istringstream s(line);
      std::string hash, key;
      if (!(s >> hash >> key >> field_w >> field_h) || hash != "#" || key != "field_nm") {
        fail("expected header \"# field_nm <width> <height>\"");
      }
      have_header = true;
      continue;
    }
    if (line[0] == '#') continue;
    const auto comma = line.find(',');
    if (comma == std::string::npos) fail("expected \"x_nm,y_nm\"");
    try {
      std::size_t used_x = 0, used_y = 0;
      const std::string xs = line.substr(0, comma), ys = line.substr(comma + 1);
      const double x = std::stod(xs, &used_x);
      const double y = std::stod(ys, &used_y);
      if (xs.find_first_not_of(" \t", used_x) != std::string::npos ||
          ys.find_first_not_of(" \t\r", used_y) != std::string::npos) {
        fail("trailing characters");
      }
      points.push_back(Point{x, y});
    } catch (const std::logic_error&) {
      fail("cannot parse coordinates");
    }
  }
  if (!have_header) throw FormatError(path.string() + ": missing field-size header");
  try {
    return EmitterSet(std::move(points), field_w, field_h);
  } catch (const InvalidArgument& e) {
    throw FormatError(path.string() + ": " + e.what());
  }
}

void write_file_atomic(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  static std::atomic<unsigned> counter{0};
  const std::filesystem::path tmp =
      path.string() + ".tmp." + std::to_string(getpid()) + "." + std::to_string(counter.fetch_add(1));
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) throw IoError(sys_error(tmp, "cannot create"));
  std::size_t done = 0;
  while (done < bytes.size()) {
    const ssize_t n = ::write(fd, bytes.data() + done, bytes.size() - done);
    if (n < 0) {
      if (errno == EINTR) continue;
      const std::string msg = sys_error(tmp, "write failed for");
      ::close(fd);
      ::unlink(tmp.c_str());
      throw IoError(msg);
    }
    done += static_cast<std::size_t>(n);
  }
  if (::fsync(fd) != 0 || ::close(fd) != 0) {
    const std::string msg = sys_error(tmp, "cannot flush");
    ::unlink(tmp.c_str());
    throw IoError(msg);
  }
  if (::rename(tmp.c_str(), path.c_str()) != 0) {
    const std::string msg = sys_error(path, "cannot rename onto");
    ::unlink(tmp.c_str());
    throw IoError(msg);
  }
}

void write_file_atomic(const std::filesystem::path& path, const std::string& text) {
  write_file_atomic(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

std::vector<std::uint8_t> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError(sys_error(path, "cannot open"));
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError(sys_error(path, "read failed for"));
  return bytes;
}

}  // namespace fdecon
