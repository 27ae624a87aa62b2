#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "fdecon/covariance.hpp"
#include "fdecon/error.hpp"
#include "fdecon/imaging.hpp"
#include "fdecon/operators.hpp"
#include "fdecon/regularizers.hpp"

namespace fdecon {

// Alternating noise-variance / proximal-gradient estimation of the emitter
// covariance r_x from r̃_y = Ψ² r_x + s 1.
//
// Model-based branch: minimizes λ(½‖r̃_y - Ψ² r - s1‖² + ρ·penalty(r)) over
// r ≥ 0, s ≥ 0 with z = r - τλ∇, r⁺ = prox_{τλρ·penalty}(z).
//
// PnP branch: r⁺ = c·D_σ(z / c) with c frozen at the first iteration
// (max of z¹). The tracked objective is
//   F = (τλ/2)‖r̃_y - Ψ² r - s1‖² + R'(z) - ½‖z - r‖²,  R'(z) = c² R_σ(z/c),
// which reduces to the textbook F_σ at τλ = 1.
struct SolverConfig {
  double tau = 1.0;
  double lambda = 0.99;
  std::size_t max_iters = 2000;
  // Stop once the running minimum of ‖r^{k+1} - r^k‖² / ‖r_ref‖² drops below tol.
  double tol = 1e-8;

  ProxOperator prox{ProxKind::L1};
  // ρ. With penalty_relative, `penalty` is instead the fraction κ of the first
  // gradient step's peak at which the prox starts zeroing pixels.
  double penalty = 0.1;
  bool penalty_relative = true;

  // Non-owning; when set the PnP branch is used.
  Denoiser* denoiser = nullptr;
  double sigma = 0.0;
  bool normalize_denoiser_input = true;

  // Default: 0 for prox branches, 1e-3·max(r̂_x) for PnP.
  std::optional<double> support_threshold;

  // Iterate on Ψ²/‖Ψ²‖ so that τλL ≤ 1 holds for the unit-scale step sizes.
  bool normalize_operator = true;

  std::optional<Image> initial_estimate;

  bool is_pnp() const noexcept { return denoiser != nullptr; }
  void validate() const;
};

struct TraceRecord {
  std::size_t iteration = 0;
  // NaN when the denoiser exposes no potential.
  double objective = 0.0;
  double data_term = 0.0;
  double relative_change = 0.0;
  double running_min_change = 0.0;
  double noise_variance = 0.0;
};

struct SupportResult {
  CovarianceImage estimate;  // r̂_x in the units of r̃_y / Ψ²
  double noise_variance = 0.0;
  Image support_mask;
  std::vector<std::size_t> support;
  double support_threshold = 0.0;
  std::vector<TraceRecord> trace;
  bool converged = false;
  bool objective_available = true;
  std::size_t iterations = 0;

  double operator_norm_sq = 0.0;  // L of the operator actually iterated
  double operator_scale = 1.0;    // ‖Ψ²‖ when normalized, else 1
  double effective_tau = 0.0;
  double threshold_theta = 0.0;   // τλρ, model-based branch
  double denoiser_scale = 1.0;    // c, PnP branch
  std::vector<std::string> warnings;
};

// Thrown when a solve stops early (divergence, bridge failure); carries the
// trace up to the failing iteration.
class SolveAborted : public Error {
public:
  SolveAborted(ErrorCode code, const std::string& what, std::vector<TraceRecord> partial)
      : Error(code, what), partial_trace(std::move(partial)) {}

  std::vector<TraceRecord> partial_trace;
};

// argmin_{s≥0} ‖r̃_y - Ψ² r_x - s1‖², i.e. the clamped mean residual.
double estimate_noise_variance(const Image& r_y, const Image& psf_sq_r_x);
double estimate_noise_variance(const Image& r_y, const PsfSq& op, const Image& r_x);

// (Ψ²)ᵀ(Ψ² r + s1 - r̃_y): gradient of ½‖r̃_y - Ψ² r - s1‖² in r.
Image data_gradient(const Image& r_x, double s, const Image& r_y, const PsfSq& op);

double data_term(const Image& r_x, double s, const Image& r_y, const PsfSq& op);

struct PgStep {
  Image z;
  Image next;
  std::optional<double> potential;  // R'(z), PnP only
};

// One forward-backward step. `theta` is the prox threshold (model-based) and
// `denoiser_scale` the c of the PnP normalization.
PgStep pg_step(const Image& r_x, double s, const Image& r_y, const PsfSq& op, const SolverConfig& cfg, double theta,
               double denoiser_scale = 1.0);

struct ObjectiveTerms {
  double data_weight = 1.0;  // multiplies ½‖residual‖²
  // Model-based: weight on prox.penalty(r). Ignored for PnP.
  double penalty_weight = 0.0;
  std::optional<ProxOperator> prox;
  // PnP: R'(z); empty when the denoiser exposes none.
  std::optional<double> potential;
};

// Returns nullopt when the PnP potential is unavailable.
std::optional<double> eval_objective(const Image& r_x, const Image& z, double s, const Image& r_y, const PsfSq& op,
                                     const ObjectiveTerms& terms);

SupportResult solve_support(const CovarianceImage& r_y, const Psf& psf, const SolverConfig& cfg);
SupportResult solve_support(const Image& r_y, const PsfSq& op, const SolverConfig& cfg);

}  // namespace fdecon
