#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

namespace fdecon {

// Dense row-major real image. Every public constructor rejects NaN/Inf.
class Image {
public:
  Image() = default;
  Image(std::size_t height, std::size_t width, double fill = 0.0);
  Image(std::size_t height, std::size_t width, std::vector<double> pixels);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t size() const noexcept { return pixels_.size(); }
  bool empty() const noexcept { return pixels_.empty(); }
  bool same_shape(const Image& other) const noexcept {
    return height_ == other.height_ && width_ == other.width_;
  }

  double& operator()(std::size_t row, std::size_t col) { return pixels_[row * width_ + col]; }
  double operator()(std::size_t row, std::size_t col) const { return pixels_[row * width_ + col]; }
  double& operator[](std::size_t i) { return pixels_[i]; }
  double operator[](std::size_t i) const { return pixels_[i]; }

  std::span<double> pixels() noexcept { return pixels_; }
  std::span<const double> pixels() const noexcept { return pixels_; }
  const std::vector<double>& vector() const noexcept { return pixels_; }

  // Throws InvalidArgument naming `what` if any entry is NaN/Inf.
  void require_finite(const char* what) const;

  bool operator==(const Image&) const = default;

private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<double> pixels_;
};

// Elementwise helpers over same-shape images.
double dot(const Image& a, const Image& b);
double squared_norm(const Image& a);
double max_value(const Image& a);
double sum(const Image& a);
void require_same_shape(const Image& a, const Image& b, const char* what);

// T frames of identical shape, stored as 32-bit floats (the on-disk precision).
class FrameStack {
public:
  FrameStack(std::size_t frames, std::size_t height, std::size_t width, double pixel_size_nm,
             double fwhm_nm = 0.0);
  FrameStack(std::size_t frames, std::size_t height, std::size_t width, double pixel_size_nm,
             double fwhm_nm, std::vector<float> data);

  std::size_t frames() const noexcept { return frames_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  std::size_t frame_size() const noexcept { return height_ * width_; }
  double pixel_size_nm() const noexcept { return pixel_size_nm_; }
  double fwhm_nm() const noexcept { return fwhm_nm_; }

  std::span<float> frame(std::size_t t);
  std::span<const float> frame(std::size_t t) const;
  Image frame_image(std::size_t t) const;
  void set_frame(std::size_t t, const Image& image);

  std::span<const float> data() const noexcept { return data_; }

  bool operator==(const FrameStack&) const = default;

private:
  std::size_t frames_;
  std::size_t height_;
  std::size_t width_;
  double pixel_size_nm_;
  double fwhm_nm_;
  std::vector<float> data_;
};

// Odd-sized square convolution kernel. When the kernel is an outer product
// k = f fᵀ the factor is kept so convolutions can run as two 1-D passes.
class Kernel {
public:
  Kernel() = default;
  explicit Kernel(Image weights);
  static Kernel separable(std::vector<double> factor);

  std::size_t size() const noexcept { return weights_.height(); }
  std::size_t radius() const noexcept { return weights_.height() / 2; }
  const Image& weights() const noexcept { return weights_; }
  const std::optional<std::vector<double>>& factor() const noexcept { return factor_; }
  double operator()(std::size_t row, std::size_t col) const { return weights_(row, col); }

  // Entrywise square; separability is preserved.
  Kernel squared() const;
  // Kernel multiplied by a positive factor; separability is preserved.
  Kernel scaled(double factor) const;

private:
  Image weights_;
  std::optional<std::vector<double>> factor_;
};

struct Psf {
  Kernel kernel;
  double fwhm_nm = 0.0;
  double pixel_size_nm = 0.0;
  double sigma_px = 0.0;
};

// FWHM to standard deviation for a Gaussian profile.
double fwhm_to_sigma(double fwhm);

// Isotropic Gaussian sampled at pixel centres and normalized to unit sum.
// radius_px == 0 selects ceil(4 sigma).
Psf psf_from_fwhm(double fwhm_nm, double pixel_size_nm, std::size_t radius_px = 0);

struct Point {
  double x_nm = 0.0;  // along columns
  double y_nm = 0.0;  // along rows
  bool operator==(const Point&) const = default;
};

class EmitterSet {
public:
  EmitterSet(std::vector<Point> positions, double field_width_nm, double field_height_nm);

  const std::vector<Point>& positions() const noexcept { return positions_; }
  std::size_t size() const noexcept { return positions_.size(); }
  double field_width_nm() const noexcept { return field_width_nm_; }
  double field_height_nm() const noexcept { return field_height_nm_; }

  bool operator==(const EmitterSet&) const = default;

private:
  std::vector<Point> positions_;
  double field_width_nm_;
  double field_height_nm_;
};

}  // namespace fdecon
