#include "fdecon/intensity_solver.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fdecon/error.hpp"
#include "fdecon/operators.hpp"

namespace fdecon {

namespace {

constexpr std::size_t kPowerIters = 200;
constexpr double kPowerTol = 1e-7;
// Power iteration approaches ‖H‖ from below.
constexpr double kLipschitzMargin = 1.01;

double sq(const std::vector<double>& v) {
  double acc = 0.0;
  for (double x : v) acc += x * x;
  return acc;
}

struct Iterate {
  std::vector<double> x;
  Image b;
};

struct Evaluation {
  double objective = 0.0;
  std::vector<double> gx;
  Image gb;
};

class JointProblem {
public:
  JointProblem(const RestrictedOperators& ops, const IntensityProblem& problem)
      : ops_(ops), problem_(problem), h_(ops.height()), w_(ops.width()) {}

  Evaluation evaluate(const Iterate& p) const {
    Image r = ops_.psi(p.x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += p.b[i] - problem_.mean_frame[i];
    const auto gx_edges = ops_.grad(p.x);
    const GradientField gb_field = forward_gradient(p.b);

    Evaluation e;
    e.objective = 0.5 * squared_norm(r) + 0.5 * problem_.mu * sq(gx_edges) +
                  0.5 * problem_.beta * (sq(gb_field.d_row) + sq(gb_field.d_col));
    e.gx = ops_.psi_adjoint(r);
    const auto smooth_x = ops_.grad_adjoint(gx_edges);
    for (std::size_t i = 0; i < e.gx.size(); ++i) e.gx[i] += problem_.mu * smooth_x[i];
    if (problem_.estimate_background) {
      e.gb = r;
      const Image smooth_b = forward_gradient_adjoint(gb_field, h_, w_);
      for (std::size_t i = 0; i < e.gb.size(); ++i) e.gb[i] += problem_.beta * smooth_b[i];
    } else {
      e.gb = Image(h_, w_);
    }
    return e;
  }

  // Largest eigenvalue of the joint Hessian by power iteration.
  double lipschitz() const {
    Iterate v{std::vector<double>(ops_.support_size(), 1.0), Image(h_, w_, problem_.estimate_background ? 1.0 : 0.0)};
    normalize(v);
    double value = 0.0;
    for (std::size_t k = 0; k < kPowerIters; ++k) {
      Iterate hv = hessian(v);
      const double rayleigh = inner(v, hv);
      const double norm = std::sqrt(inner(hv, hv));
      if (norm == 0.0) return 0.0;
      for (auto& a : hv.x) a /= norm;
      for (auto& a : hv.b.pixels()) a /= norm;
      v = std::move(hv);
      if (k > 0 && std::abs(rayleigh - value) <= kPowerTol * rayleigh) {
        value = rayleigh;
        break;
      }
      value = rayleigh;
    }
    return value;
  }

  double projected_gradient_norm(const Iterate& p, const Evaluation& e) const {
    double acc = 0.0;
    for (std::size_t i = 0; i < p.x.size(); ++i) {
      const double g = p.x[i] > 0.0 ? e.gx[i] : std::min(e.gx[i], 0.0);
      acc += g * g;
    }
    if (problem_.estimate_background) {
      for (std::size_t i = 0; i < p.b.size(); ++i) {
        const double g = p.b[i] > 0.0 ? e.gb[i] : std::min(e.gb[i], 0.0);
        acc += g * g;
      }
    }
    return std::sqrt(acc);
  }

  Iterate projected_step(const Iterate& p, const Evaluation& e, double step) const {
    Iterate out = p;
    for (std::size_t i = 0; i < out.x.size(); ++i) out.x[i] = std::max(out.x[i] - step * e.gx[i], 0.0);
    if (problem_.estimate_background) {
      for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] = std::max(out.b[i] - step * e.gb[i], 0.0);
    }
    return out;
  }

private:
  Iterate hessian(const Iterate& v) const {
    Image r = ops_.psi(v.x);
    for (std::size_t i = 0; i < r.size(); ++i) r[i] += v.b[i];
    Iterate out{ops_.psi_adjoint(r), Image(h_, w_)};
    const auto sx = ops_.grad_adjoint(ops_.grad(v.x));
    for (std::size_t i = 0; i < out.x.size(); ++i) out.x[i] += problem_.mu * sx[i];
    if (problem_.estimate_background) {
      const Image sb = forward_gradient_adjoint(forward_gradient(v.b), h_, w_);
      for (std::size_t i = 0; i < out.b.size(); ++i) out.b[i] = r[i] + problem_.beta * sb[i];
    }
    return out;
  }

  static double inner(const Iterate& a, const Iterate& b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.x.size(); ++i) acc += a.x[i] * b.x[i];
    return acc + dot(a.b, b.b);
  }

  static void normalize(Iterate& v) {
    const double n = std::sqrt(inner(v, v));
    for (auto& a : v.x) a /= n;
    for (auto& a : v.b.pixels()) a /= n;
  }

  const RestrictedOperators& ops_;
  const IntensityProblem& problem_;
  std::size_t h_, w_;
};

}  // namespace

RestrictedOperators::RestrictedOperators(const Psf& psf, std::vector<std::size_t> support, std::size_t height,
                                         std::size_t width)
    : kernel_(psf.kernel), support_(std::move(support)), height_(height), width_(width) {
  if (support_.empty()) throw InvalidArgument("support set is empty");
  std::sort(support_.begin(), support_.end());
  if (std::adjacent_find(support_.begin(), support_.end()) != support_.end()) {
    throw InvalidArgument("support set has duplicate indices");
  }
  if (support_.back() >= height * width) {
    throw InvalidArgument("support index " + std::to_string(support_.back()) + " is outside the image");
  }
  std::vector<std::size_t> slot(height * width, support_.size());
  for (std::size_t k = 0; k < support_.size(); ++k) slot[support_[k]] = k;
  for (std::size_t k = 0; k < support_.size(); ++k) {
    const std::size_t i = support_[k];
    const std::size_t r = i / width, c = i % width;
    if (r + 1 < height && slot[i + width] != support_.size()) edges_.emplace_back(k, slot[i + width]);
    if (c + 1 < width && slot[i + 1] != support_.size()) edges_.emplace_back(k, slot[i + 1]);
  }
}

Image RestrictedOperators::embed(const std::vector<double>& x) const {
  if (x.size() != support_.size()) throw InvalidArgument("vector length does not match the support size");
  Image out(height_, width_);
  for (std::size_t k = 0; k < x.size(); ++k) out[support_[k]] = x[k];
  return out;
}

std::vector<double> RestrictedOperators::gather(const Image& image) const {
  std::vector<double> out(support_.size());
  for (std::size_t k = 0; k < out.size(); ++k) out[k] = image[support_[k]];
  return out;
}

Image RestrictedOperators::psi(const std::vector<double>& x) const { return convolve(kernel_, embed(x)); }

std::vector<double> RestrictedOperators::psi_adjoint(const Image& y) const { return gather(correlate(kernel_, y)); }

std::vector<double> RestrictedOperators::grad(const std::vector<double>& x) const {
  std::vector<double> g(edges_.size());
  for (std::size_t e = 0; e < edges_.size(); ++e) g[e] = x[edges_[e].second] - x[edges_[e].first];
  return g;
}

std::vector<double> RestrictedOperators::grad_adjoint(const std::vector<double>& g) const {
  std::vector<double> out(support_.size(), 0.0);
  for (std::size_t e = 0; e < edges_.size(); ++e) {
    out[edges_[e].second] += g[e];
    out[edges_[e].first] -= g[e];
  }
  return out;
}

double default_smoothing_weight(const Psf& psf, const std::vector<std::size_t>& support, const Image& mean_frame) {
  RestrictedOperators ops(psf, support, mean_frame.height(), mean_frame.width());
  const auto back = ops.psi_adjoint(mean_frame);
  double peak = 0.0;
  for (double v : back) peak = std::max(peak, std::abs(v));
  return 0.1 * peak;
}

double intensity_objective(const RestrictedOperators& ops, const IntensityProblem& problem, const std::vector<double>& x,
                           const Image& b) {
  return JointProblem(ops, problem).evaluate(Iterate{x, b}).objective;
}

IntensityResult solve_intensity(const IntensityProblem& problem, const Psf& psf, const IntensityConfig& cfg) {
  problem.mean_frame.require_finite("mean frame");
  if (!(problem.mu > 0.0) || !(problem.beta > 0.0)) throw InvalidArgument("mu and beta must be positive");
  if (cfg.max_iters == 0 || !(cfg.tol > 0.0)) throw InvalidArgument("intensity solver needs max_iters > 0 and tol > 0");

  const std::size_t h = problem.mean_frame.height(), w = problem.mean_frame.width();
  RestrictedOperators ops(psf, problem.support, h, w);
  JointProblem joint(ops, problem);

  Image b0(h, w);
  if (!problem.estimate_background && problem.fixed_background) {
    require_same_shape(*problem.fixed_background, problem.mean_frame, "fixed background");
    b0 = *problem.fixed_background;
  }

  IntensityResult result;
  result.lipschitz = joint.lipschitz() * kLipschitzMargin;
  if (!(result.lipschitz > 0.0)) throw InternalError("intensity problem has a zero Hessian");
  const double step = 1.0 / result.lipschitz;

  Iterate x{std::vector<double>(ops.support_size(), 0.0), b0};
  Evaluation at_x = joint.evaluate(x);
  Iterate y = x;
  double t = 1.0;
  result.objective_trace.push_back(at_x.objective);

  double pg = joint.projected_gradient_norm(x, at_x);
  std::size_t k = 0;
  while (pg >= cfg.tol && k < cfg.max_iters) {
    ++k;
    const Evaluation at_y = cfg.accelerated && k > 1 ? joint.evaluate(y) : at_x;
    Iterate candidate = joint.projected_step(cfg.accelerated ? y : x, at_y, step);
    Evaluation at_c = joint.evaluate(candidate);
    if (cfg.accelerated && at_c.objective > at_x.objective) {
      // Momentum overshot: restart from x with a plain projected step.
      ++result.restarts;
      t = 1.0;
      candidate = joint.projected_step(x, at_x, step);
      at_c = joint.evaluate(candidate);
    }
    const double t_next = 0.5 * (1.0 + std::sqrt(1.0 + 4.0 * t * t));
    if (cfg.accelerated) {
      const double momentum = (t - 1.0) / t_next;
      y = candidate;
      for (std::size_t i = 0; i < y.x.size(); ++i) y.x[i] += momentum * (candidate.x[i] - x.x[i]);
      if (problem.estimate_background) {
        for (std::size_t i = 0; i < y.b.size(); ++i) y.b[i] += momentum * (candidate.b[i] - x.b[i]);
      }
    }
    t = t_next;
    x = std::move(candidate);
    at_x = std::move(at_c);
    result.objective_trace.push_back(at_x.objective);
    pg = joint.projected_gradient_norm(x, at_x);
  }

  result.iterations = k;
  result.converged = pg < cfg.tol;
  result.projected_gradient_norm = pg;
  result.objective = at_x.objective;
  result.intensity = ops.embed(x.x);
  result.x = std::move(x.x);
  result.background = std::move(x.b);
  return result;
}

}  // namespace fdecon
