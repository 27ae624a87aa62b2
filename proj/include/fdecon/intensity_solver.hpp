#pragma once

#include <cstddef>
#include <optional>
#include <utility>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

// Ψ restricted to the columns in Ω and the forward-difference gradient
// restricted to pixel pairs with both endpoints in Ω.
class RestrictedOperators {
public:
  RestrictedOperators(const Psf& psf, std::vector<std::size_t> support, std::size_t height, std::size_t width);

  std::size_t support_size() const noexcept { return support_.size(); }
  std::size_t edge_count() const noexcept { return edges_.size(); }
  const std::vector<std::size_t>& support() const noexcept { return support_; }
  // Pairs of positions into support(): (lower/left, upper/right) neighbour.
  const std::vector<std::pair<std::size_t, std::size_t>>& edges() const noexcept { return edges_; }
  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }

  Image embed(const std::vector<double>& x) const;
  std::vector<double> gather(const Image& image) const;

  Image psi(const std::vector<double>& x) const;                   // Ψ_Ω x
  std::vector<double> psi_adjoint(const Image& y) const;           // Ψ_Ωᵀ y
  std::vector<double> grad(const std::vector<double>& x) const;    // ∇_Ω x, one value per edge
  std::vector<double> grad_adjoint(const std::vector<double>& g) const;

private:
  Kernel kernel_;
  std::vector<std::size_t> support_;
  std::vector<std::pair<std::size_t, std::size_t>> edges_;
  std::size_t height_;
  std::size_t width_;
};

// ½‖Ψ_Ω x - (ȳ - b)‖² + (μ/2)‖∇_Ω x‖² + (β/2)‖∇b‖² over x ≥ 0, b ≥ 0.
struct IntensityProblem {
  std::vector<std::size_t> support;
  Image mean_frame;  // ȳ
  double mu = 0.0;
  double beta = 0.0;
  // When false, b stays at fixed_background (default zero) and only x is solved.
  bool estimate_background = true;
  std::optional<Image> fixed_background;
};

struct IntensityConfig {
  std::size_t max_iters = 20000;
  // Projected-gradient norm at which iterations stop.
  double tol = 1e-6;
  // FISTA momentum with restart on objective increase; false gives plain
  // projected gradient.
  bool accelerated = true;
};

struct IntensityResult {
  Image intensity;         // x̂ embedded in the image grid, zero off Ω
  std::vector<double> x;   // x̂ on Ω, in support order
  Image background;        // b̂
  double objective = 0.0;
  double projected_gradient_norm = 0.0;
  double lipschitz = 0.0;
  std::size_t iterations = 0;
  std::size_t restarts = 0;
  bool converged = false;
  std::vector<double> objective_trace;
};

// μ = β = 0.1·‖Ψ_Ωᵀ ȳ‖∞
double default_smoothing_weight(const Psf& psf, const std::vector<std::size_t>& support, const Image& mean_frame);

double intensity_objective(const RestrictedOperators& ops, const IntensityProblem& problem, const std::vector<double>& x,
                           const Image& b);

IntensityResult solve_intensity(const IntensityProblem& problem, const Psf& psf, const IntensityConfig& cfg = {});

}  // namespace fdecon
