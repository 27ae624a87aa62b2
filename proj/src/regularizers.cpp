#include "fdecon/regularizers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

#include "fdecon/error.hpp"
#include "fdecon/operators.hpp"

namespace fdecon {

namespace {

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) throw InvalidArgument(std::string(what) + " must be positive");
}

}  // namespace

Image prox_l1_nonneg(const Image& z, double theta) {
  require_positive(theta, "prox threshold");
  Image out = z;
  for (auto& v : out.pixels()) v = std::max(v - theta, 0.0);
  return out;
}

Image prox_l0_nonneg(const Image& z, double theta) {
  require_positive(theta, "prox threshold");
  const double threshold = std::sqrt(2.0 * theta);
  Image out = z;
  for (auto& v : out.pixels()) v = v > threshold ? v : 0.0;
  return out;
}

double l1_norm(const Image& x) {
  double total = 0.0;
  for (double v : x.pixels()) total += std::abs(v);
  return total;
}

double l0_count(const Image& x) {
  return static_cast<double>(std::count_if(x.pixels().begin(), x.pixels().end(), [](double v) { return v != 0.0; }));
}

Image ProxOperator::apply(const Image& z, double theta) const {
  return kind == ProxKind::L1 ? prox_l1_nonneg(z, theta) : prox_l0_nonneg(z, theta);
}

double ProxOperator::penalty(const Image& x) const { return kind == ProxKind::L1 ? l1_norm(x) : l0_count(x); }

std::string ProxOperator::name() const { return kind == ProxKind::L1 ? "l1" : "l0"; }

double total_variation(const Image& x) {
  const GradientField g = forward_gradient(x);
  double tv = 0.0;
  for (std::size_t i = 0; i < g.d_row.size(); ++i) tv += std::hypot(g.d_row[i], g.d_col[i]);
  return tv;
}

TvResult tv_denoise(const Image& z, double strength, std::size_t inner_iters, double gap_tol, TvDual* warm_start,
                    std::vector<double>* gap_history) {
  require_positive(strength, "TV strength");
  if (inner_iters == 0) throw InvalidArgument("TV inner iteration count must be positive");
  z.require_finite("TV input");

  const std::size_t h = z.height(), w = z.width(), n = z.size();
  const double z_sq = squared_norm(z);
  if (z_sq == 0.0) return TvResult{z, 0.0, 0.0, 0};

  std::vector<double> p_row(n, 0.0), p_col(n, 0.0);
  if (warm_start && warm_start->height == h && warm_start->width == w) {
    p_row = warm_start->p_row;
    p_col = warm_start->p_col;
  }
  GradientField p{std::move(p_row), std::move(p_col)};
  GradientField q = p;
  Image x(h, w), adj(h, w);

  double best_primal = std::numeric_limits<double>::infinity();
  double best_dual = -std::numeric_limits<double>::infinity();
  Image best_x = z;
  double gap = std::numeric_limits<double>::infinity();

  // x(p) = z - s ∇ᵀp; dual value ½‖z‖² - ½‖x(p)‖²; primal ½‖x - z‖² + s TV(x).
  auto evaluate = [&](const GradientField& dual_point) {
    adj = forward_gradient_adjoint(dual_point, h, w);
    for (std::size_t i = 0; i < n; ++i) x[i] = z[i] - strength * adj[i];
    const double dual = 0.5 * z_sq - 0.5 * squared_norm(x);
    double fit = 0.0;
    for (std::size_t i = 0; i < n; ++i) fit += (x[i] - z[i]) * (x[i] - z[i]);
    const double primal = 0.5 * fit + strength * total_variation(x);
    if (primal < best_primal) {
      best_primal = primal;
      best_x = x;
    }
    best_dual = std::max(best_dual, dual);
    gap = std::max(best_primal - best_dual, 0.0);
    if (gap_history) gap_history->push_back(gap);
  };

  evaluate(p);
  const double target = gap_tol * z_sq;
  const double step = 1.0 / (8.0 * strength);
  double t = 1.0;
  std::size_t k = 0;
  while (gap > target && k < inner_iters) {
    ++k;
    adj = forward_gradient_adjoint(q, h, w);
    for (std::size_t i = 0; i < n; ++i) x[i] = z[i] - strength * adj[i];
    const GradientField g = forward_gradient(x);
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    const double momentum = (t - 1.0) / t_next;
    for (std::size_t i = 0; i < n; ++i) {
      double a = q.d_row[i] + step * g.d_row[i];
      double b = q.d_col[i] + step * g.d_col[i];
      const double norm = std::hypot(a, b);
      if (norm > 1.0) {
        a /= norm;
        b /= norm;
      }
      q.d_row[i] = a + momentum * (a - p.d_row[i]);
      q.d_col[i] = b + momentum * (b - p.d_col[i]);
      p.d_row[i] = a;
      p.d_col[i] = b;
    }
    t = t_next;
    evaluate(p);
  }

  if (gap > target) {
    std::ostringstream msg;
    msg << "TV prox did not reach duality gap " << target << " in " << inner_iters << " iterations (gap " << gap
        << ")";
    throw ConvergenceError(msg.str());
  }
  if (warm_start) {
    warm_start->height = h;
    warm_start->width = w;
    warm_start->p_row = std::move(p.d_row);
    warm_start->p_col = std::move(p.d_col);
  }
  return TvResult{std::move(best_x), gap, best_primal, k};
}

TvDenoiser::TvDenoiser(double strength, std::size_t inner_iters, double gap_tol)
    : strength_(strength), inner_iters_(inner_iters), gap_tol_(gap_tol) {
  require_positive(strength, "TV strength");
  require_positive(gap_tol, "TV gap tolerance");
  if (inner_iters == 0) throw InvalidArgument("TV inner iteration count must be positive");
}

std::string TvDenoiser::name() const {
  std::ostringstream s;
  s << "tv(strength=" << strength_ << ")";
  return s.str();
}

DenoiseResult TvDenoiser::denoise(const Image& z, double /*sigma*/) {
  TvResult r = tv_denoise(z, strength_, inner_iters_, gap_tol_, &dual_);
  return DenoiseResult{std::move(r.image), r.envelope};
}

QuadraticStep quadratic_gradient_step_denoiser(const Image& z, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("quadratic denoiser alpha must lie in (0, 1)");
  Image out = z;
  for (auto& v : out.pixels()) v -= alpha * v;  // z - ∇R(z)
  return QuadraticStep{std::move(out), 0.5 * alpha * squared_norm(z)};
}

double quadratic_phi(const Image& w, double alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("quadratic denoiser alpha must lie in (0, 1)");
  Image pre = w;  // D⁻¹(w)
  for (auto& v : pre.pixels()) v /= (1.0 - alpha);
  double residual = 0.0;
  for (std::size_t i = 0; i < w.size(); ++i) residual += (pre[i] - w[i]) * (pre[i] - w[i]);
  return 0.5 * alpha * squared_norm(pre) - 0.5 * residual;
}

QuadraticDenoiser::QuadraticDenoiser(double alpha) : alpha_(alpha) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw InvalidArgument("quadratic denoiser alpha must lie in (0, 1)");
}

std::string QuadraticDenoiser::name() const {
  std::ostringstream s;
  s << "quadratic(alpha=" << alpha_ << ")";
  return s.str();
}

DenoiseResult QuadraticDenoiser::denoise(const Image& z, double /*sigma*/) {
  auto step = quadratic_gradient_step_denoiser(z, alpha_);
  return DenoiseResult{std::move(step.image), step.potential};
}

double tweedie_residual_check(double gamma, double sigma, const Image& z) {
  require_positive(gamma, "prior scale gamma");
  require_positive(sigma, "noise level sigma");
  const double g2 = gamma * gamma, s2 = sigma * sigma;
  const double shrink = g2 / (g2 + s2);
  double worst = 0.0;
  for (double v : z.pixels()) {
    const double residual = shrink * v - v;
    const double score = -v / (g2 + s2);  // ∇ log N(0, (γ²+σ²) Id)
    worst = std::max(worst, std::abs(residual - s2 * score));
  }
  return worst;
}

}  // namespace fdecon
