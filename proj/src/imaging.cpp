#include "fdecon/imaging.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>

#include "fdecon/error.hpp"

namespace fdecon {

namespace {

void require_positive(double value, const char* what) {
  if (!(value > 0.0) || !std::isfinite(value)) {
    throw InvalidArgument(std::string(what) + " must be a positive finite number");
  }
}

}  // namespace

Image::Image(std::size_t height, std::size_t width, double fill)
    : height_(height), width_(width), pixels_(height * width, fill) {
  if (!std::isfinite(fill)) throw InvalidArgument("image fill value is not finite");
}

Image::Image(std::size_t height, std::size_t width, std::vector<double> pixels)
    : height_(height), width_(width), pixels_(std::move(pixels)) {
  if (pixels_.size() != height_ * width_) {
    throw InvalidArgument("image data has " + std::to_string(pixels_.size()) + " values, expected " +
                          std::to_string(height_ * width_));
  }
  require_finite("image");
}

void Image::require_finite(const char* what) const {
  for (std::size_t i = 0; i < pixels_.size(); ++i) {
    if (!std::isfinite(pixels_[i])) {
      throw InvalidArgument(std::string(what) + ": non-finite value at index " + std::to_string(i));
    }
  }
}

void require_same_shape(const Image& a, const Image& b, const char* what) {
  if (!a.same_shape(b)) {
    throw InvalidArgument(std::string(what) + ": shape mismatch " + std::to_string(a.height()) + "x" +
                          std::to_string(a.width()) + " vs " + std::to_string(b.height()) + "x" +
                          std::to_string(b.width()));
  }
}

double dot(const Image& a, const Image& b) {
  require_same_shape(a, b, "dot");
  return std::transform_reduce(a.pixels().begin(), a.pixels().end(), b.pixels().begin(), 0.0);
}

double squared_norm(const Image& a) { return dot(a, a); }

double max_value(const Image& a) {
  if (a.empty()) return 0.0;
  return *std::max_element(a.pixels().begin(), a.pixels().end());
}

double sum(const Image& a) { return std::accumulate(a.pixels().begin(), a.pixels().end(), 0.0); }

FrameStack::FrameStack(std::size_t frames, std::size_t height, std::size_t width, double pixel_size_nm,
                       double fwhm_nm)
    : FrameStack(frames, height, width, pixel_size_nm, fwhm_nm,
                 std::vector<float>(frames * height * width, 0.0f)) {}

FrameStack::FrameStack(std::size_t frames, std::size_t height, std::size_t width, double pixel_size_nm,
                       double fwhm_nm, std::vector<float> data)
    : frames_(frames),
      height_(height),
      width_(width),
      pixel_size_nm_(pixel_size_nm),
      fwhm_nm_(fwhm_nm),
      data_(std::move(data)) {
  if (frames_ < 2) throw InvalidArgument("a frame stack needs at least 2 frames");
  if (height_ == 0 || width_ == 0) throw InvalidArgument("frame shape must be nonzero");
  require_positive(pixel_size_nm_, "pixel size");
  if (!(fwhm_nm_ >= 0.0) || !std::isfinite(fwhm_nm_)) {
    throw InvalidArgument("stack FWHM must be finite and nonnegative");
  }
  if (data_.size() != frames_ * height_ * width_) {
    throw InvalidArgument("stack data size does not match T x height x width");
  }
  for (float v : data_) {
    if (!std::isfinite(v)) throw InvalidArgument("stack contains non-finite values");
  }
}

std::span<float> FrameStack::frame(std::size_t t) {
  return std::span<float>(data_).subspan(t * frame_size(), frame_size());
}

std::span<const float> FrameStack::frame(std::size_t t) const {
  return std::span<const float>(data_).subspan(t * frame_size(), frame_size());
}

Image FrameStack::frame_image(std::size_t t) const {
  auto f = frame(t);
  return Image(height_, width_, std::vector<double>(f.begin(), f.end()));
}

void FrameStack::set_frame(std::size_t t, const Image& image) {
  if (image.height() != height_ || image.width() != width_) {
    throw InvalidArgument("frame shape does not match stack");
  }
  if (t >= frames_) throw InvalidArgument("frame index out of range");
  auto f = frame(t);
  for (std::size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(image[i]);
}

Kernel::Kernel(Image weights) : weights_(std::move(weights)) {
  if (weights_.height() != weights_.width() || weights_.height() % 2 == 0) {
    throw InvalidArgument("kernel must be odd-sized and square");
  }
  weights_.require_finite("kernel");
}

Kernel Kernel::separable(std::vector<double> factor) {
  const std::size_t n = factor.size();
  Image w(n, n);
  for (std::size_t r = 0; r < n; ++r)
    for (std::size_t c = 0; c < n; ++c) w(r, c) = factor[r] * factor[c];
  Kernel k(std::move(w));
  k.factor_ = std::move(factor);
  return k;
}

Kernel Kernel::squared() const {
  if (factor_) {
    std::vector<double> f2(factor_->size());
    std::transform(factor_->begin(), factor_->end(), f2.begin(), [](double v) { return v * v; });
    Kernel k = separable(std::move(f2));
    // Keep the 2-D weights bitwise equal to the entrywise square of ours.
    for (std::size_t i = 0; i < k.weights_.size(); ++i) k.weights_[i] = weights_[i] * weights_[i];
    return k;
  }
  Image w = weights_;
  for (auto& v : w.pixels()) v *= v;
  return Kernel(std::move(w));
}

Kernel Kernel::scaled(double factor) const {
  if (!(factor > 0.0) || !std::isfinite(factor)) throw InvalidArgument("kernel scale must be positive");
  Image w = weights_;
  for (auto& v : w.pixels()) v *= factor;
  Kernel k(std::move(w));
  if (factor_) {
    const double root = std::sqrt(factor);
    std::vector<double> f = *factor_;
    for (auto& v : f) v *= root;
    k.factor_ = std::move(f);
  }
  return k;
}

double fwhm_to_sigma(double fwhm) { return fwhm / (2.0 * std::sqrt(2.0 * std::log(2.0))); }

Psf psf_from_fwhm(double fwhm_nm, double pixel_size_nm, std::size_t radius_px) {
  require_positive(fwhm_nm, "PSF FWHM");
  require_positive(pixel_size_nm, "pixel size");
  const double sigma_px = fwhm_to_sigma(fwhm_nm) / pixel_size_nm;
  if (radius_px == 0) radius_px = static_cast<std::size_t>(std::ceil(4.0 * sigma_px));
  radius_px = std::max<std::size_t>(radius_px, 1);

  // The sampled isotropic Gaussian factors as g(r) g(c); normalizing the 1-D
  // factor to unit sum normalizes the 2-D kernel.
  const std::size_t n = 2 * radius_px + 1;
  std::vector<double> g(n);
  for (std::size_t i = 0; i < n; ++i) {
    const double d = static_cast<double>(i) - static_cast<double>(radius_px);
    g[i] = std::exp(-0.5 * d * d / (sigma_px * sigma_px));
  }
  // Fold symmetric pairs so g is exactly symmetric after normalization.
  double total = g[radius_px];
  for (std::size_t i = 0; i < radius_px; ++i) total += 2.0 * g[i];
  for (auto& v : g) v /= total;

  Psf psf;
  psf.kernel = Kernel::separable(std::move(g));
  psf.fwhm_nm = fwhm_nm;
  psf.pixel_size_nm = pixel_size_nm;
  psf.sigma_px = sigma_px;
  return psf;
}

EmitterSet::EmitterSet(std::vector<Point> positions, double field_width_nm, double field_height_nm)
    : positions_(std::move(positions)), field_width_nm_(field_width_nm), field_height_nm_(field_height_nm) {
  require_positive(field_width_nm_, "field width");
  require_positive(field_height_nm_, "field height");
  for (const auto& p : positions_) {
    if (!(p.x_nm >= 0.0 && p.x_nm < field_width_nm_ && p.y_nm >= 0.0 && p.y_nm < field_height_nm_)) {
      throw InvalidArgument("emitter position (" + std::to_string(p.x_nm) + ", " + std::to_string(p.y_nm) +
                            ") lies outside the field");
    }
  }
}

}  // namespace fdecon
