#include <cmath>
#include <random>

#include "doctest.h"
#include "fdecon/error.hpp"
#include "fdecon/intensity_solver.hpp"
#include "fdecon/operators.hpp"
#include "helpers.hpp"
#include "kkt_oracle.hpp"

using namespace fdecon;

namespace {

Psf delta_psf() {
  Psf p;
  p.kernel = Kernel(Image(1, 1, 1.0));
  p.pixel_size_nm = 25.0;
  return p;
}

}  // namespace

TEST_CASE("restricted operators on the full grid") {
  const Psf psf = psf_from_fwhm(100.0, 25.0);
  const std::size_t h = 6, w = 7;
  std::vector<std::size_t> all(h * w);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  const RestrictedOperators ops(psf, all, h, w);
  const Image x = testing::random_image(h, w, 1);
  CHECK(testing::max_abs_difference(ops.psi(x.vector()), apply(psf, x)) == 0.0);
  CHECK(ops.edge_count() == (h - 1) * w + h * (w - 1));

  const GradientField full = forward_gradient(x);
  const auto g = ops.grad(x.vector());
  for (std::size_t e = 0; e < ops.edge_count(); ++e) {
    const auto [a, b] = ops.edges()[e];
    const double want = b == a + 1 ? full.d_col[a] : full.d_row[a];
    CHECK(g[e] == want);
  }
}

TEST_CASE("restricted operators on a single pixel") {
  const RestrictedOperators ops(psf_from_fwhm(100.0, 25.0), {10}, 5, 5);
  CHECK(ops.edge_count() == 0);
  CHECK(ops.grad({3.0}).empty());
  CHECK(ops.grad_adjoint({})[0] == 0.0);
}

TEST_CASE("restricted operator adjoints") {
  const Psf psf = psf_from_fwhm(120.0, 25.0);
  const std::vector<std::size_t> omega = {3, 4, 5, 12, 13, 20, 27, 28, 35, 50};
  const RestrictedOperators ops(psf, omega, 8, 8);
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(-1, 1);
  std::vector<double> x(omega.size()), g(ops.edge_count());
  for (auto& v : x) v = u(rng);
  for (auto& v : g) v = u(rng);
  const Image y = testing::random_image(8, 8, 6, -1, 1);

  const auto ax = ops.psi(x);
  const auto aty = ops.psi_adjoint(y);
  double rhs = 0;
  for (std::size_t i = 0; i < x.size(); ++i) rhs += x[i] * aty[i];
  CHECK(testing::relative_difference(dot(ax, y), rhs) < 1e-10);

  const auto dx = ops.grad(x);
  const auto dtg = ops.grad_adjoint(g);
  double l = 0, r = 0;
  for (std::size_t e = 0; e < g.size(); ++e) l += dx[e] * g[e];
  for (std::size_t i = 0; i < x.size(); ++i) r += x[i] * dtg[i];
  CHECK(testing::relative_difference(l, r) < 1e-10);
}

TEST_CASE("restricted operators reject bad supports") {
  const Psf psf = psf_from_fwhm(100.0, 25.0);
  CHECK_THROWS_AS(RestrictedOperators(psf, {1, 1}, 4, 4), InvalidArgument);
  CHECK_THROWS_AS(RestrictedOperators(psf, {16}, 4, 4), InvalidArgument);
}

TEST_CASE("noiseless single pixel with a delta psf") {
  Image mean(5, 5);
  mean(2, 1) = 7.25;
  IntensityProblem p;
  p.support = {2 * 5 + 1};
  p.mean_frame = mean;
  p.mu = 1.0;
  p.beta = 1.0;
  p.estimate_background = false;
  p.fixed_background = Image(5, 5);
  IntensityConfig cfg;
  cfg.tol = 1e-10;
  const IntensityResult r = solve_intensity(p, delta_psf(), cfg);
  CHECK(r.converged);
  CHECK(r.x[0] == doctest::Approx(7.25).epsilon(1e-10));
}

TEST_CASE("large smoothing weight flattens each component") {
  const Psf psf = psf_from_fwhm(100.0, 25.0);
  const std::size_t n = 10;
  const std::vector<std::size_t> omega = {22, 23, 24, 25, 33, 34, 71, 72, 73};
  Image mean = testing::random_image(n, n, 9, 0, 1);
  for (std::size_t i : omega) mean[i] += 5.0;
  IntensityProblem p;
  p.support = omega;
  p.mean_frame = mean;
  p.mu = 1e6;
  p.beta = 1.0;
  IntensityConfig cfg;
  cfg.max_iters = 200000;
  cfg.tol = 1e-6;
  const IntensityResult r = solve_intensity(p, psf, cfg);
  const RestrictedOperators ops(psf, omega, n, n);
  double avg = 0;
  for (double v : r.x) avg += v / r.x.size();
  double worst = 0;
  for (double d : ops.grad(r.x)) worst = std::max(worst, std::abs(d));
  CHECK(worst < 1e-3 * avg);
}

TEST_CASE("tiny instances match the active-set enumeration oracle") {
  int active_seen = 0;
  for (std::uint64_t seed = 0; seed < 6; ++seed) {
    const auto inst = kkt::random_instance(seed, seed % 2 == 0);
    IntensityConfig cfg;
    cfg.tol = 1e-9;
    cfg.max_iters = 200000;
    const IntensityResult r = solve_intensity(inst.problem, inst.psf, cfg);
    const kkt::Solution want = kkt::solve(inst);
    REQUIRE(want.found);
    CHECK(r.converged);
    CHECK(r.projected_gradient_norm < 1e-6);
    for (std::size_t i = 0; i < r.x.size(); ++i) CHECK(std::abs(r.x[i] - want.x[i]) < 1e-6);
    if (inst.problem.estimate_background) {
      for (std::size_t i = 0; i < r.background.size(); ++i) CHECK(std::abs(r.background[i] - want.b[i]) < 1e-6);
    }
    CHECK(r.objective == doctest::Approx(want.objective).epsilon(1e-9));
    active_seen += want.active_count > 0;
  }
  CHECK(active_seen > 0);
}

TEST_CASE("objective is monotone across restart segments and iterates are nonnegative") {
  const Psf psf = psf_from_fwhm(176.6, 25.0);
  const std::size_t n = 16;
  std::vector<std::size_t> omega;
  for (std::size_t i = 30; i < 200; i += 3) omega.push_back(i);
  Image mean = testing::random_image(n, n, 13, 0, 10);
  IntensityProblem p;
  p.support = omega;
  p.mean_frame = mean;
  p.mu = p.beta = default_smoothing_weight(psf, omega, mean);
  IntensityConfig cfg;
  cfg.max_iters = 3000;
  const IntensityResult r = solve_intensity(p, psf, cfg);
  for (std::size_t k = 1; k < r.objective_trace.size(); ++k) {
    CHECK(r.objective_trace[k] <= r.objective_trace[k - 1] * (1 + 1e-12) + 1e-12);
  }
  for (double v : r.x) CHECK(v >= 0.0);
  for (double v : r.background.pixels()) CHECK(v >= 0.0);

  IntensityConfig plain = cfg;
  plain.accelerated = false;
  const IntensityResult q = solve_intensity(p, psf, plain);
  for (std::size_t k = 1; k < q.objective_trace.size(); ++k) {
    CHECK(q.objective_trace[k] <= q.objective_trace[k - 1] * (1 + 1e-12) + 1e-12);
  }
}

TEST_CASE("default smoothing weight") {
  const Psf psf = psf_from_fwhm(100.0, 25.0);
  const Image mean = testing::random_image(8, 8, 4, 0, 3);
  const std::vector<std::size_t> omega = {9, 10, 30};
  const RestrictedOperators ops(psf, omega, 8, 8);
  double peak = 0;
  for (double v : ops.psi_adjoint(mean)) peak = std::max(peak, std::abs(v));
  CHECK(default_smoothing_weight(psf, omega, mean) == doctest::Approx(0.1 * peak));
}

TEST_CASE("smooth background with large beta") {
  // b ≡ 0 data, large β: b̂ is nearly constant and no larger than the mean residual.
  const Psf psf = psf_from_fwhm(100.0, 25.0);
  const std::size_t n = 12;
  const std::vector<std::size_t> omega = {40, 41, 52, 53, 100};
  Image x_true(n, n);
  for (std::size_t i : omega) x_true[i] = 20.0;
  const Image mean = apply(psf, x_true);
  IntensityProblem p;
  p.support = omega;
  p.mean_frame = mean;
  p.mu = 1.0;
  p.beta = 1e4;
  IntensityConfig cfg;
  cfg.max_iters = 100000;
  const IntensityResult r = solve_intensity(p, psf, cfg);
  const double spread = max_value(r.background) - *std::min_element(r.background.vector().begin(), r.background.vector().end());
  CHECK(spread < 1e-2);
  Image fit = apply(psf, r.intensity);
  double residual = 0;
  for (std::size_t i = 0; i < mean.size(); ++i) residual += (mean[i] - fit[i]) / mean.size();
  CHECK(max_value(r.background) <= std::max(residual, 0.0) + 1e-3);
}

TEST_CASE("invalid problems are rejected") {
  const Psf psf = psf_from_fwhm(100.0, 25.0);
  IntensityProblem p;
  p.support = {1};
  p.mean_frame = Image(4, 4, 1.0);
  p.mu = 0.0;
  p.beta = 1.0;
  CHECK_THROWS_AS(solve_intensity(p, psf), InvalidArgument);
}
