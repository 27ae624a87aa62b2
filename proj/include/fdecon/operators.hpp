#pragma once

#include <cstddef>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

// Ψ² = Ψ ⊙ Ψ, realized as convolution with the entrywise-squared kernel (not
// renormalized).
struct PsfSq {
  Kernel kernel;
};

PsfSq squared_psf_operator(const Psf& psf);

// Zero-padded linear convolution cropped back to the input size.
Image convolve(const Kernel& kernel, const Image& x);
// Adjoint of convolve: correlation with the same kernel, same padding.
Image correlate(const Kernel& kernel, const Image& y);

inline Image apply(const Psf& op, const Image& x) { return convolve(op.kernel, x); }
inline Image apply(const PsfSq& op, const Image& x) { return convolve(op.kernel, x); }
inline Image apply_adjoint(const Psf& op, const Image& y) { return correlate(op.kernel, y); }
inline Image apply_adjoint(const PsfSq& op, const Image& y) { return correlate(op.kernel, y); }

// Forward differences along rows and columns; zero across the last row/column.
struct GradientField {
  std::vector<double> d_row;
  std::vector<double> d_col;
};

GradientField forward_gradient(const Image& x);
// ∇ᵀ, i.e. minus the discrete divergence.
Image forward_gradient_adjoint(const GradientField& g, std::size_t height, std::size_t width);

struct NormEstimate {
  double value = 0.0;  // ‖A‖² = largest eigenvalue of AᵀA
  std::size_t iterations = 0;
  bool converged = false;
};

// Power iteration on AᵀA for the convolution A on a height x width grid.
NormEstimate squared_operator_norm(const Kernel& kernel, std::size_t height, std::size_t width,
                                   std::size_t max_iters = 500, double rel_tol = 1e-8);

}  // namespace fdecon
