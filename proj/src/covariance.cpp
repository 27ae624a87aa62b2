#include "fdecon/covariance.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fdecon/error.hpp"

namespace fdecon {

namespace {

// Variances below this (relative to the pixel's squared mean scale) that come
// out negative are rounding artefacts and are clamped to zero.
constexpr double kNegativeVarianceTolerance = 1e-12;

}  // namespace

MomentAccumulator::MomentAccumulator(std::size_t height, std::size_t width)
    : height_(height), width_(width), mean_(height * width, 0.0), m2_(height * width, 0.0) {
  if (height == 0 || width == 0) throw InvalidArgument("accumulator shape must be nonzero");
}

template <class T>
void MomentAccumulator::push_values(std::span<const T> frame) {
  if (frame.size() != mean_.size()) {
    throw InvalidArgument("frame has " + std::to_string(frame.size()) + " pixels, accumulator expects " +
                          std::to_string(mean_.size()));
  }
  ++count_;
  const double inv = 1.0 / static_cast<double>(count_);
  for (std::size_t i = 0; i < mean_.size(); ++i) {
    const double x = static_cast<double>(frame[i]);
    const double delta = x - mean_[i];
    mean_[i] += delta * inv;
    m2_[i] += delta * (x - mean_[i]);
  }
}

void MomentAccumulator::push(std::span<const float> frame) { push_values(frame); }

void MomentAccumulator::push(const Image& frame) { push_values(frame.pixels()); }

Image MomentAccumulator::mean() const {
  if (count_ == 0) throw InvalidArgument("mean of an empty sequence");
  return Image(height_, width_, mean_);
}

CovarianceImage MomentAccumulator::variance() const {
  if (count_ < 2) throw InvalidArgument("sample variance needs at least 2 frames");
  std::vector<double> var(m2_.size());
  const double denom = static_cast<double>(count_ - 1);
  for (std::size_t i = 0; i < var.size(); ++i) {
    double v = m2_[i] / denom;
    if (v < 0.0) {
      if (v < -kNegativeVarianceTolerance * std::max(1.0, mean_[i] * mean_[i])) {
        throw InternalError("negative variance beyond rounding at pixel " + std::to_string(i));
      }
      v = 0.0;
    }
    var[i] = v;
  }
  return CovarianceImage{Image(height_, width_, std::move(var)), count_};
}

Image temporal_mean(const FrameStack& stack) {
  const std::size_t n = stack.frame_size();
  std::vector<double> total(n, 0.0);
  std::vector<double> carry(n, 0.0);
  for (std::size_t t = 0; t < stack.frames(); ++t) {
    const auto frame = stack.frame(t);
    for (std::size_t i = 0; i < n; ++i) {
      // Neumaier summation
      const double x = frame[i];
      const double s = total[i] + x;
      carry[i] += std::abs(total[i]) >= std::abs(x) ? (total[i] - s) + x : (x - s) + total[i];
      total[i] = s;
    }
  }
  const double inv_t = 1.0 / static_cast<double>(stack.frames());
  for (std::size_t i = 0; i < n; ++i) total[i] = (total[i] + carry[i]) * inv_t;
  return Image(stack.height(), stack.width(), std::move(total));
}

CovarianceImage auto_covariance(const FrameStack& stack) {
  MomentAccumulator acc(stack.height(), stack.width());
  for (std::size_t t = 0; t < stack.frames(); ++t) acc.push(stack.frame(t));
  return acc.variance();
}

}  // namespace fdecon
