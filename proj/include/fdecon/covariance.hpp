#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

// Per-pixel temporal sample variance r̃_y of a stack; nonnegative and finite.
struct CovarianceImage {
  Image image;
  std::size_t source_frames = 0;
};

// Single-pass per-pixel mean/variance (Welford). Frames can be pushed as
// they are read so a long acquisition never needs to be held twice.
class MomentAccumulator {
public:
  MomentAccumulator(std::size_t height, std::size_t width);

  void push(std::span<const float> frame);
  void push(const Image& frame);

  std::size_t count() const noexcept { return count_; }
  Image mean() const;
  // Unbiased variance; requires count() >= 2.
  CovarianceImage variance() const;

private:
  template <class T>
  void push_values(std::span<const T> frame);

  std::size_t height_;
  std::size_t width_;
  std::size_t count_ = 0;
  std::vector<double> mean_;
  std::vector<double> m2_;
};

// Pixelwise arithmetic mean ȳ over frames (compensated summation).
Image temporal_mean(const FrameStack& stack);

// r̃_y = (1/(T-1)) Σ (y_t - ȳ)²
CovarianceImage auto_covariance(const FrameStack& stack);

}  // namespace fdecon
