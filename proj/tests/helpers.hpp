// Shared test utilities and independent oracles.
#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "fdecon/imaging.hpp"
#include "temp_dir.hpp"

namespace testing {

inline fdecon::Image random_image(std::size_t h, std::size_t w, std::uint64_t seed, double lo = 0.0, double hi = 1.0) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> dist(lo, hi);
  fdecon::Image img(h, w);
  for (auto& v : img.pixels()) v = dist(rng);
  return img;
}

inline fdecon::Kernel random_kernel(std::size_t size, std::uint64_t seed) {
  return fdecon::Kernel(random_image(size, size, seed, 0.0, 1.0));
}

inline double relative_difference(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

inline double max_abs_difference(const fdecon::Image& a, const fdecon::Image& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) worst = std::max(worst, std::abs(a[i] - b[i]));
  return worst;
}

// Explicit n²×n² matrix of zero-padded "same" convolution: out(r,c) = Σ k(i,j) x(r+R-i, c+R-j).
inline Eigen::MatrixXd convolution_matrix(const fdecon::Kernel& k, std::size_t h, std::size_t w) {
  const long R = static_cast<long>(k.radius());
  const long K = static_cast<long>(k.size());
  Eigen::MatrixXd m = Eigen::MatrixXd::Zero(static_cast<long>(h * w), static_cast<long>(h * w));
  for (long r = 0; r < static_cast<long>(h); ++r) {
    for (long c = 0; c < static_cast<long>(w); ++c) {
      for (long i = 0; i < K; ++i) {
        for (long j = 0; j < K; ++j) {
          const long sr = r + R - i, sc = c + R - j;
          if (sr < 0 || sc < 0 || sr >= static_cast<long>(h) || sc >= static_cast<long>(w)) continue;
          m(r * static_cast<long>(w) + c, sr * static_cast<long>(w) + sc) += k(i, j);
        }
      }
    }
  }
  return m;
}

inline Eigen::VectorXd to_vector(const fdecon::Image& img) {
  return Eigen::Map<const Eigen::VectorXd>(img.vector().data(), static_cast<long>(img.size()));
}

// Golden-section minimization of a unimodal scalar function on [a, b].
template <class T, class F>
T golden_section(F f, T a, T b, T tol) {
  const T g = (std::sqrt(T(5)) - T(1)) / T(2);
  T c = b - g * (b - a), d = a + g * (b - a);
  T fc = f(c), fd = f(d);
  while (b - a > tol * std::max(T(1), std::abs(a) + std::abs(b))) {
    if (fc < fd) {
      b = d;
      d = c;
      fd = fc;
      c = b - g * (b - a);
      fc = f(c);
    } else {
      a = c;
      c = d;
      fc = fd;
      d = a + g * (b - a);
      fd = f(d);
    }
  }
  return (a + b) / T(2);
}


}  // namespace testing
