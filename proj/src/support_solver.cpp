#include "fdecon/support_solver.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace fdecon {

namespace {

constexpr double kPnpThresholdFraction = 1e-3;

double half_residual_sq(const Image& r_y, const Image& a_r, double s) {
  double acc = 0.0;
  for (std::size_t i = 0; i < r_y.size(); ++i) {
    const double d = r_y[i] - a_r[i] - s;
    acc += d * d;
  }
  return 0.5 * acc;
}

double squared_distance(const Image& a, const Image& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += (a[i] - b[i]) * (a[i] - b[i]);
  return acc;
}

bool all_finite(const Image& x) {
  return std::all_of(x.pixels().begin(), x.pixels().end(), [](double v) { return std::isfinite(v); });
}

Image forward_step(const Image& u, double s, const Image& r_y, const PsfSq& op, double step) {
  const Image g = data_gradient(u, s, r_y, op);
  Image z = u;
  for (std::size_t i = 0; i < z.size(); ++i) z[i] -= step * g[i];
  return z;
}

// θ for the relative mode: the prox starts zeroing entries at κ·max(z¹).
double relative_theta(ProxKind kind, double kappa, double peak) {
  const double level = kappa * std::max(peak, 0.0);
  const double theta = kind == ProxKind::L1 ? level : 0.5 * level * level;
  return std::max(theta, std::numeric_limits<double>::min());
}

}  // namespace

void SolverConfig::validate() const {
  if (!(tau > 0.0) || !std::isfinite(tau)) throw InvalidArgument("step size tau must be positive");
  if (!(lambda > 0.0) || !std::isfinite(lambda)) throw InvalidArgument("data weight lambda must be positive");
  if (max_iters == 0) throw InvalidArgument("max_iters must be positive");
  if (!(tol > 0.0)) throw InvalidArgument("tolerance must be positive");
  if (!is_pnp() && (!(penalty > 0.0) || !std::isfinite(penalty))) {
    throw InvalidArgument("penalty strength must be positive");
  }
  if (is_pnp() && (!(sigma >= 0.0) || !std::isfinite(sigma))) {
    throw InvalidArgument("denoiser level sigma must be nonnegative");
  }
  if (support_threshold && !(*support_threshold >= 0.0)) {
    throw InvalidArgument("support threshold must be nonnegative");
  }
}

double estimate_noise_variance(const Image& r_y, const Image& psf_sq_r_x) {
  require_same_shape(r_y, psf_sq_r_x, "noise variance update");
  double acc = 0.0;
  for (std::size_t i = 0; i < r_y.size(); ++i) acc += r_y[i] - psf_sq_r_x[i];
  return std::max(acc / static_cast<double>(r_y.size()), 0.0);
}

double estimate_noise_variance(const Image& r_y, const PsfSq& op, const Image& r_x) {
  return estimate_noise_variance(r_y, apply(op, r_x));
}

Image data_gradient(const Image& r_x, double s, const Image& r_y, const PsfSq& op) {
  require_same_shape(r_x, r_y, "data gradient");
  Image residual = apply(op, r_x);
  for (std::size_t i = 0; i < residual.size(); ++i) residual[i] += s - r_y[i];
  return apply_adjoint(op, residual);
}

double data_term(const Image& r_x, double s, const Image& r_y, const PsfSq& op) {
  require_same_shape(r_x, r_y, "data term");
  return half_residual_sq(r_y, apply(op, r_x), s);
}

PgStep pg_step(const Image& r_x, double s, const Image& r_y, const PsfSq& op, const SolverConfig& cfg, double theta,
               double denoiser_scale) {
  Image z = forward_step(r_x, s, r_y, op, cfg.tau * cfg.lambda);
  if (!all_finite(z)) throw DivergenceError("gradient step produced non-finite values");

  PgStep out{z, Image{}, std::nullopt};
  if (!cfg.is_pnp()) {
    out.next = cfg.prox.apply(z, theta);
    return out;
  }

  const double c = denoiser_scale;
  Image scaled = z;
  if (c != 1.0) {
    for (auto& v : scaled.pixels()) v /= c;
  }
  DenoiseResult d = cfg.denoiser->denoise(scaled, cfg.sigma);
  if (!d.image.same_shape(z)) throw InvalidArgument("denoiser returned an image of a different shape");
  if (!all_finite(d.image)) throw DivergenceError("denoiser returned non-finite values");
  if (c != 1.0) {
    for (auto& v : d.image.pixels()) v *= c;
  }
  out.next = std::move(d.image);
  if (d.potential) out.potential = c * c * *d.potential;
  return out;
}

std::optional<double> eval_objective(const Image& r_x, const Image& z, double s, const Image& r_y, const PsfSq& op,
                                     const ObjectiveTerms& terms) {
  const double data = terms.data_weight * data_term(r_x, s, r_y, op);
  if (terms.prox) return data + terms.penalty_weight * terms.prox->penalty(r_x);
  if (!terms.potential) return std::nullopt;
  require_same_shape(r_x, z, "objective");
  return data + *terms.potential - 0.5 * squared_distance(z, r_x);
}

SupportResult solve_support(const CovarianceImage& r_y, const Psf& psf, const SolverConfig& cfg) {
  return solve_support(r_y.image, squared_psf_operator(psf), cfg);
}

SupportResult solve_support(const Image& r_y, const PsfSq& op, const SolverConfig& config) {
  config.validate();
  r_y.require_finite("auto-covariance");
  if (r_y.empty()) throw InvalidArgument("empty auto-covariance image");
  if (std::any_of(r_y.pixels().begin(), r_y.pixels().end(), [](double v) { return v < 0.0; })) {
    throw InvalidArgument("auto-covariance image has negative entries");
  }

  SupportResult result;
  SolverConfig cfg = config;
  const std::size_t h = r_y.height(), w = r_y.width();

  PsfSq work = op;
  const NormEstimate norm = squared_operator_norm(op.kernel, h, w);
  double lipschitz = norm.value;
  if (!norm.converged) result.warnings.push_back("operator norm power iteration did not converge");
  if (cfg.normalize_operator && norm.value > 0.0) {
    result.operator_scale = std::sqrt(norm.value);
    work.kernel = op.kernel.scaled(1.0 / result.operator_scale);
    lipschitz = 1.0;
  }
  result.operator_norm_sq = lipschitz;
  if (cfg.tau * cfg.lambda * lipschitz > 1.0 + 1e-12) {
    const double shrunk = 1.0 / (cfg.lambda * lipschitz);
    std::ostringstream msg;
    msg << "tau*lambda*L = " << cfg.tau * cfg.lambda * lipschitz << " > 1; tau reduced from " << cfg.tau << " to "
        << shrunk;
    result.warnings.push_back(msg.str());
    cfg.tau = shrunk;
  }
  result.effective_tau = cfg.tau;
  const double step = cfg.tau * cfg.lambda;

  Image u(h, w);
  if (cfg.initial_estimate) {
    require_same_shape(*cfg.initial_estimate, r_y, "initial estimate");
    u = *cfg.initial_estimate;
    for (auto& v : u.pixels()) v *= result.operator_scale;
  }
  Image a_u = apply(work, u);
  double reference = squared_norm(u);

  double theta = 0.0;
  double rho = 0.0;
  if (!cfg.is_pnp()) {
    if (cfg.penalty_relative) {
      const Image z1 = forward_step(u, estimate_noise_variance(r_y, a_u), r_y, work, step);
      theta = relative_theta(cfg.prox.kind, cfg.penalty, max_value(z1));
    } else {
      theta = step * cfg.penalty;
    }
    rho = theta / step;
    result.threshold_theta = theta;
  } else {
    const DenoiserCapabilities caps = cfg.denoiser->capabilities();
    result.objective_available = caps.returns_potential;
    if (!caps.is_exact_prox) {
      result.warnings.push_back("denoiser " + cfg.denoiser->name() +
                                " is not a known proximal map; convergence assumes its potential is bounded below "
                                "with a Lipschitz gradient, which is not checked");
    }
  }

  double c = 1.0;
  double s = 0.0;
  double running_min = std::numeric_limits<double>::infinity();
  for (std::size_t k = 1; k <= cfg.max_iters; ++k) {
    try {
      s = estimate_noise_variance(r_y, a_u);

      if (k == 1 && cfg.is_pnp() && cfg.normalize_denoiser_input) {
        const double peak = max_value(forward_step(u, s, r_y, work, step));
        c = peak > 0.0 ? peak : 1.0;
        result.denoiser_scale = c;
      }

      PgStep st = pg_step(u, s, r_y, work, cfg, theta, c);
      Image a_next = apply(work, st.next);

      TraceRecord rec;
      rec.iteration = k;
      rec.noise_variance = s;
      rec.data_term = half_residual_sq(r_y, a_next, s);
      if (cfg.is_pnp()) {
        rec.objective = st.potential ? step * rec.data_term + *st.potential - 0.5 * squared_distance(st.z, st.next)
                                     : std::numeric_limits<double>::quiet_NaN();
      } else {
        rec.objective = cfg.lambda * (rec.data_term + rho * cfg.prox.penalty(st.next));
      }

      const double change = squared_distance(st.next, u);
      if (k == 1 && reference == 0.0) reference = squared_norm(st.next);
      rec.relative_change = reference > 0.0 ? change / reference : (change == 0.0 ? 0.0 : change);
      running_min = std::min(running_min, rec.relative_change);
      rec.running_min_change = running_min;
      result.trace.push_back(rec);

      u = std::move(st.next);
      a_u = std::move(a_next);
      result.iterations = k;
      if (running_min < cfg.tol) {
        result.converged = true;
        break;
      }
    } catch (const SolveAborted&) {
      throw;
    } catch (const Error& e) {
      std::ostringstream msg;
      msg << "support solve aborted at iteration " << k << ": " << e.what();
      throw SolveAborted(e.code(), msg.str(), std::move(result.trace));
    }
  }

  result.noise_variance = estimate_noise_variance(r_y, a_u);

  Image estimate = u;
  for (auto& v : estimate.pixels()) v = std::max(v / result.operator_scale, 0.0);
  result.support_threshold =
      cfg.support_threshold ? *cfg.support_threshold : (cfg.is_pnp() ? kPnpThresholdFraction * max_value(estimate) : 0.0);
  result.support_mask = Image(h, w);
  for (std::size_t i = 0; i < estimate.size(); ++i) {
    if (estimate[i] > result.support_threshold) {
      result.support.push_back(i);
      result.support_mask[i] = 1.0;
    }
  }
  result.estimate = CovarianceImage{std::move(estimate), 0};
  return result;
}

}  // namespace fdecon
