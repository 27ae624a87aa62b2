// Dense active-set enumeration for tiny intensity problems.
#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cstdint>
#include <random>
#include <vector>

#include "fdecon/intensity_solver.hpp"
#include "fdecon/operators.hpp"
#include "helpers.hpp"

namespace kkt {

struct Instance {
  fdecon::Psf psf;
  fdecon::IntensityProblem problem;
};

struct Solution {
  bool found = false;
  std::vector<double> x;
  std::vector<double> b;
  double objective = 0.0;
  int active_count = 0;
};

// n = 8, |Ω| = 5. Some true intensities are zero and the noise pushes them negative.
inline Instance random_instance(std::uint64_t seed, bool estimate_background) {
  const std::size_t n = 8;
  std::mt19937_64 rng(seed * 7919 + 3);
  Instance inst{fdecon::psf_from_fwhm(60.0, 25.0), {}};
  std::vector<std::size_t> all(n * n);
  for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
  std::shuffle(all.begin(), all.end(), rng);
  // At least one in-support neighbour pair.
  std::vector<std::size_t> omega = {all[0], all[0] % n + 1 < n ? all[0] + 1 : all[0] - 1};
  for (std::size_t i = 1; omega.size() < 5; ++i) {
    if (std::find(omega.begin(), omega.end(), all[i]) == omega.end()) omega.push_back(all[i]);
  }
  std::sort(omega.begin(), omega.end());

  std::uniform_real_distribution<double> amp(2.0, 10.0), noise(-1.5, 1.5);
  fdecon::Image x_true(n, n);
  for (std::size_t k = 0; k < omega.size(); ++k) x_true[omega[k]] = k % 2 == 0 ? amp(rng) : 0.0;
  fdecon::Image y = fdecon::apply(inst.psf, x_true);
  const double level = estimate_background ? 30.0 : 0.0;
  for (auto& v : y.pixels()) v += level + noise(rng);

  auto& p = inst.problem;
  p.support = omega;
  p.mean_frame = y;
  p.mu = 0.5;
  p.beta = 2.0;
  p.estimate_background = estimate_background;
  if (!estimate_background) p.fixed_background = fdecon::Image(n, n);
  return inst;
}

inline Solution solve(const Instance& inst) {
  const auto& p = inst.problem;
  const long h = static_cast<long>(p.mean_frame.height()), w = static_cast<long>(p.mean_frame.width());
  const long N = h * w, m = static_cast<long>(p.support.size());

  const Eigen::MatrixXd psi = testing::convolution_matrix(inst.psf.kernel, h, w);
  Eigen::MatrixXd A(N, m);
  for (long k = 0; k < m; ++k) A.col(k) = psi.col(static_cast<long>(p.support[k]));

  // Support edges: right and down neighbours with both ends in Ω.
  std::vector<std::pair<long, long>> edges;
  for (long a = 0; a < m; ++a) {
    for (long b = 0; b < m; ++b) {
      const long i = static_cast<long>(p.support[a]), j = static_cast<long>(p.support[b]);
      if ((j == i + 1 && i % w + 1 < w) || j == i + w) edges.push_back({a, b});
    }
  }
  Eigen::MatrixXd E = Eigen::MatrixXd::Zero(static_cast<long>(edges.size()), m);
  for (long e = 0; e < static_cast<long>(edges.size()); ++e) {
    E(e, edges[e].first) = -1.0;
    E(e, edges[e].second) = 1.0;
  }
  // Full forward differences for the background.
  Eigen::MatrixXd D = Eigen::MatrixXd::Zero(2 * N, N);
  for (long r = 0; r < h; ++r) {
    for (long c = 0; c < w; ++c) {
      const long i = r * w + c;
      if (r + 1 < h) {
        D(i, i) = -1;
        D(i, i + w) = 1;
      }
      if (c + 1 < w) {
        D(N + i, i) = -1;
        D(N + i, i + 1) = 1;
      }
    }
  }

  const Eigen::VectorXd y = testing::to_vector(p.mean_frame);
  const bool joint = p.estimate_background;
  const long nb = joint ? N : 0;
  Eigen::VectorXd b_fixed = Eigen::VectorXd::Zero(N);
  if (!joint && p.fixed_background) b_fixed = testing::to_vector(*p.fixed_background);

  // Quadratic ½vᵀHv - gᵀv + const over v = (x, b).
  Eigen::MatrixXd H = Eigen::MatrixXd::Zero(m + nb, m + nb);
  Eigen::VectorXd g(m + nb);
  H.topLeftCorner(m, m) = A.transpose() * A + p.mu * E.transpose() * E;
  g.head(m) = A.transpose() * (y - b_fixed);
  if (joint) {
    H.topRightCorner(m, N) = A.transpose();
    H.bottomLeftCorner(N, m) = A;
    H.bottomRightCorner(N, N) = Eigen::MatrixXd::Identity(N, N) + p.beta * D.transpose() * D;
    g.tail(N) = y;
  }

  auto objective = [&](const Eigen::VectorXd& v) {
    const Eigen::VectorXd x = v.head(m);
    const Eigen::VectorXd b = joint ? Eigen::VectorXd(v.tail(N)) : b_fixed;
    const Eigen::VectorXd r = A * x + b - y;
    return 0.5 * r.squaredNorm() + 0.5 * p.mu * (E * x).squaredNorm() + 0.5 * p.beta * (D * b).squaredNorm();
  };

  Solution best;
  for (unsigned mask = 0; mask < (1u << m); ++mask) {
    std::vector<long> free;
    for (long k = 0; k < m; ++k)
      if (mask & (1u << k)) free.push_back(k);
    for (long k = 0; k < nb; ++k) free.push_back(m + k);
    Eigen::MatrixXd Hf(free.size(), free.size());
    Eigen::VectorXd gf(free.size());
    for (std::size_t a = 0; a < free.size(); ++a) {
      gf(a) = g(free[a]);
      for (std::size_t b = 0; b < free.size(); ++b) Hf(a, b) = H(free[a], free[b]);
    }
    Eigen::VectorXd v = Eigen::VectorXd::Zero(m + nb);
    if (!free.empty()) {
      const Eigen::VectorXd sol = Hf.ldlt().solve(gf);
      for (std::size_t a = 0; a < free.size(); ++a) v(free[a]) = sol(a);
    }
    // Primal feasibility and dual feasibility on the clamped coordinates.
    if ((v.array() < 0.0).any()) continue;
    const Eigen::VectorXd grad = H * v - g;
    bool ok = true;
    for (long k = 0; k < m; ++k)
      if (!(mask & (1u << k)) && grad(k) < -1e-9) ok = false;
    if (!ok) continue;
    const double f = objective(v);
    if (!best.found || f < best.objective) {
      best.found = true;
      best.objective = f;
      best.x.assign(v.data(), v.data() + m);
      best.b.assign(N, 0.0);
      for (long i = 0; i < N; ++i) best.b[i] = joint ? v(m + i) : b_fixed(i);
      best.active_count = m - __builtin_popcount(mask);
    }
  }
  return best;
}

}  // namespace kkt
