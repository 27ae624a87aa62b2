#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

// prox of θ‖·‖₁ + ι_{≥0}: max(z - θ, 0).
Image prox_l1_nonneg(const Image& z, double theta);

// prox of θ‖·‖₀ + ι_{≥0}: keeps z where z > √(2θ); ties go to 0.
Image prox_l0_nonneg(const Image& z, double theta);

double l1_norm(const Image& x);
double l0_count(const Image& x);

enum class ProxKind { L1, L0 };

// Explicit sparsity prior for the model-based branch. apply(z, θ) is the
// prox of θ·penalty + indicator of the nonnegative orthant.
struct ProxOperator {
  ProxKind kind = ProxKind::L1;

  Image apply(const Image& z, double theta) const;
  double penalty(const Image& x) const;
  std::string name() const;
};

struct DenoiserCapabilities {
  bool returns_potential = false;
  bool is_exact_prox = false;
};

struct DenoiseResult {
  Image image;
  // R_σ(z) when the denoiser exposes a potential.
  std::optional<double> potential;
};

// Anything that can fill the D_σ slot of the support iteration. Instances may
// carry state (warm starts, a connection); one call in flight at a time.
class Denoiser {
public:
  virtual ~Denoiser() = default;

  virtual std::string name() const = 0;
  virtual DenoiserCapabilities capabilities() const = 0;
  virtual DenoiseResult denoise(const Image& z, double sigma) = 0;
};

// Isotropic TV with forward differences; the last row/column difference is 0.
double total_variation(const Image& x);

struct TvResult {
  Image image;
  double duality_gap = 0.0;
  // Primal value ½‖x - z‖² + strength·TV(x) at the returned x; this is the
  // Moreau envelope of strength·TV at z up to the gap.
  double envelope = 0.0;
  std::size_t iterations = 0;
};

// Dual state of the TV prox, reusable as a warm start.
struct TvDual {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> p_row;
  std::vector<double> p_col;
};

// Exact prox of strength·TV by fast projected gradient on the dual, stopped
// once the duality gap is below gap_tol·‖z‖². The gap reported is the best
// primal value seen minus the best dual value seen, so it never increases.
// Throws ConvergenceError (with the achieved gap) after inner_iters.
TvResult tv_denoise(const Image& z, double strength, std::size_t inner_iters, double gap_tol = 1e-6,
                    TvDual* warm_start = nullptr, std::vector<double>* gap_history = nullptr);

// PnP stand-in with a genuine proximal structure. σ is ignored; strength is
// fixed at construction. Potential is the Moreau envelope.
class TvDenoiser final : public Denoiser {
public:
  TvDenoiser(double strength, std::size_t inner_iters = 5000, double gap_tol = 1e-10);

  std::string name() const override;
  DenoiserCapabilities capabilities() const override { return {true, true}; }
  DenoiseResult denoise(const Image& z, double sigma) override;

  double strength() const noexcept { return strength_; }

private:
  double strength_;
  std::size_t inner_iters_;
  double gap_tol_;
  TvDual dual_;
};

// D(z) = z - ∇R(z) with R(z) = (α/2)‖z‖², so D(z) = (1 - α) z.
struct QuadraticStep {
  Image image;
  double potential;
};
QuadraticStep quadratic_gradient_step_denoiser(const Image& z, double alpha);

// φ(w) = R(D⁻¹(w)) - ½‖D⁻¹(w) - w‖² for the quadratic denoiser, evaluated
// through the definition (not a closed form).
double quadratic_phi(const Image& w, double alpha);

class QuadraticDenoiser final : public Denoiser {
public:
  explicit QuadraticDenoiser(double alpha);

  std::string name() const override;
  DenoiserCapabilities capabilities() const override { return {true, true}; }
  DenoiseResult denoise(const Image& z, double sigma) override;

  double alpha() const noexcept { return alpha_; }

private:
  double alpha_;
};

// For the prior N(0, γ² Id): max |D(z) - z - σ²∇log p_σ(z)| with the MMSE
// denoiser D(z) = γ²/(γ²+σ²) z and p_σ = N(0, (γ²+σ²) Id).
double tweedie_residual_check(double gamma, double sigma, const Image& z);

}  // namespace fdecon
