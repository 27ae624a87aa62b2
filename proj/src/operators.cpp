#include "fdecon/operators.hpp"

#include <algorithm>
#include <cmath>

#include "fdecon/error.hpp"

namespace fdecon {

namespace {

using Index = std::ptrdiff_t;

// out[i] = Σ_a f[a] in[i + R - a] along one axis (flip = false), or the
// correlation out[i] = Σ_a f[a] in[i - R + a] (flip = true).
void pass_1d(const std::vector<double>& f, const Image& in, Image& out, bool along_rows, bool flip) {
  const Index h = static_cast<Index>(in.height());
  const Index w = static_cast<Index>(in.width());
  const Index radius = static_cast<Index>(f.size() / 2);
  const Index len = along_rows ? w : h;
  const Index lines = along_rows ? h : w;
  const Index step = along_rows ? 1 : w;
  for (Index line = 0; line < lines; ++line) {
    const Index base = along_rows ? line * w : line;
    for (Index i = 0; i < len; ++i) {
      double acc = 0.0;
      for (Index a = 0; a < static_cast<Index>(f.size()); ++a) {
        const Index j = flip ? i - radius + a : i + radius - a;
        if (j < 0 || j >= len) continue;
        acc += f[a] * in[static_cast<std::size_t>(base + j * step)];
      }
      out[static_cast<std::size_t>(base + i * step)] = acc;
    }
  }
}

Image filter(const Kernel& kernel, const Image& x, bool flip) {
  if (x.empty()) throw InvalidArgument("cannot convolve an empty image");
  if (const auto& f = kernel.factor()) {
    Image tmp(x.height(), x.width());
    Image out(x.height(), x.width());
    pass_1d(*f, x, tmp, true, flip);
    pass_1d(*f, tmp, out, false, flip);
    return out;
  }
  const Index h = static_cast<Index>(x.height());
  const Index w = static_cast<Index>(x.width());
  const Index radius = static_cast<Index>(kernel.radius());
  const Index n = static_cast<Index>(kernel.size());
  Image out(x.height(), x.width());
  for (Index i = 0; i < h; ++i) {
    for (Index j = 0; j < w; ++j) {
      double acc = 0.0;
      for (Index a = 0; a < n; ++a) {
        const Index r = flip ? i - radius + a : i + radius - a;
        if (r < 0 || r >= h) continue;
        for (Index b = 0; b < n; ++b) {
          const Index c = flip ? j - radius + b : j + radius - b;
          if (c < 0 || c >= w) continue;
          acc += kernel(static_cast<std::size_t>(a), static_cast<std::size_t>(b)) *
                 x(static_cast<std::size_t>(r), static_cast<std::size_t>(c));
        }
      }
      out(static_cast<std::size_t>(i), static_cast<std::size_t>(j)) = acc;
    }
  }
  return out;
}

}  // namespace

PsfSq squared_psf_operator(const Psf& psf) { return PsfSq{psf.kernel.squared()}; }

Image convolve(const Kernel& kernel, const Image& x) { return filter(kernel, x, false); }

Image correlate(const Kernel& kernel, const Image& y) { return filter(kernel, y, true); }

GradientField forward_gradient(const Image& x) {
  const std::size_t h = x.height(), w = x.width();
  GradientField g{std::vector<double>(h * w, 0.0), std::vector<double>(h * w, 0.0)};
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      if (r + 1 < h) g.d_row[r * w + c] = x(r + 1, c) - x(r, c);
      if (c + 1 < w) g.d_col[r * w + c] = x(r, c + 1) - x(r, c);
    }
  }
  return g;
}

Image forward_gradient_adjoint(const GradientField& g, std::size_t h, std::size_t w) {
  if (g.d_row.size() != h * w || g.d_col.size() != h * w) {
    throw InvalidArgument("gradient field does not match the requested shape");
  }
  Image out(h, w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      double v = 0.0;
      if (r + 1 < h) v -= g.d_row[i];
      if (r > 0) v += g.d_row[i - w];
      if (c + 1 < w) v -= g.d_col[i];
      if (c > 0) v += g.d_col[i - 1];
      out[i] = v;
    }
  }
  return out;
}

NormEstimate squared_operator_norm(const Kernel& kernel, std::size_t height, std::size_t width,
                                   std::size_t max_iters, double rel_tol) {
  if (height == 0 || width == 0) throw InvalidArgument("operator grid must be nonzero");
  // A flat positive start has a nonzero component along the leading
  // eigenvector for kernels with nonnegative entries.
  Image v(height, width, 1.0 / std::sqrt(static_cast<double>(height * width)));
  NormEstimate est;
  double previous = 0.0;
  for (std::size_t k = 1; k <= max_iters; ++k) {
    Image w = correlate(kernel, convolve(kernel, v));
    const double norm = std::sqrt(squared_norm(w));
    est.iterations = k;
    if (norm == 0.0) {
      est.value = 0.0;
      est.converged = true;
      return est;
    }
    // Rayleigh quotient vᵀAᵀAv with ‖v‖ = 1.
    est.value = dot(v, w);
    for (std::size_t i = 0; i < w.size(); ++i) v[i] = w[i] / norm;
    if (k > 1 && std::abs(est.value - previous) <= rel_tol * est.value) {
      est.converged = true;
      return est;
    }
    previous = est.value;
  }
  return est;
}

}  // namespace fdecon
