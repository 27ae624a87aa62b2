#include <cmath>
#include <limits>

#include "doctest.h"
#include "fdecon/error.hpp"
#include "fdecon/imaging.hpp"
#include "fdecon/operators.hpp"
#include "helpers.hpp"

using namespace fdecon;
using testing::random_image;

TEST_CASE("psf sigma at 176.6 nm FWHM and 25 nm pixels") {
  const Psf psf = psf_from_fwhm(176.6, 25.0);
  // 176.6 / (25 · 2√(2 ln 2))
  CHECK(psf.sigma_px == doctest::Approx(3.0001).epsilon(1e-4));
  CHECK(psf.sigma_px == doctest::Approx(176.6 / (25.0 * 2.0 * std::sqrt(2.0 * std::log(2.0)))).epsilon(1e-14));
  CHECK(psf.kernel.radius() == static_cast<std::size_t>(std::ceil(4.0 * psf.sigma_px)));
}

TEST_CASE("unit sigma psf") {
  const double px = 10.0;
  const Psf psf = psf_from_fwhm(2.0 * std::sqrt(2.0 * std::log(2.0)) * px, px);
  CHECK(psf.sigma_px == doctest::Approx(1.0).epsilon(1e-15));
  CHECK(psf.kernel.size() == 9);
}

TEST_CASE("psf kernel sums to one and is symmetric") {
  for (double fwhm : {40.0, 176.6, 351.8}) {
    for (double px : {25.0, 100.0}) {
      const Psf psf = psf_from_fwhm(fwhm, px);
      const Image& k = psf.kernel.weights();
      CHECK(std::abs(sum(k) - 1.0) < 1e-12);
      const std::size_t n = k.height();
      for (std::size_t r = 0; r < n; ++r) {
        for (std::size_t c = 0; c < n; ++c) {
          CHECK(k(r, c) == k(n - 1 - r, c));
          CHECK(k(r, c) == k(r, n - 1 - c));
          CHECK(k(r, c) == k(c, r));
        }
      }
    }
  }
}

TEST_CASE("psf rejects invalid input") {
  CHECK_THROWS_AS(psf_from_fwhm(0.0, 25.0), InvalidArgument);
  CHECK_THROWS_AS(psf_from_fwhm(100.0, -1.0), InvalidArgument);
  CHECK_THROWS_AS(psf_from_fwhm(std::numeric_limits<double>::infinity(), 25.0), InvalidArgument);
}

TEST_CASE("images reject non-finite pixels") {
  std::vector<double> v(4, 1.0);
  v[2] = std::numeric_limits<double>::quiet_NaN();
  CHECK_THROWS_AS(Image(2, 2, v), InvalidArgument);
  CHECK_THROWS_AS(Image(2, 2, std::numeric_limits<double>::infinity()), InvalidArgument);
  CHECK_THROWS_AS(Image(2, 3, std::vector<double>(5)), InvalidArgument);
}

TEST_CASE("frame stacks reject invalid data") {
  CHECK_THROWS_AS(FrameStack(2, 2, 2, 25.0, 0.0, std::vector<float>(7)), InvalidArgument);
  CHECK_THROWS_AS(FrameStack(1, 2, 2, 25.0), InvalidArgument);
  std::vector<float> bad(8, 1.0f);
  bad[3] = std::numeric_limits<float>::quiet_NaN();
  CHECK_THROWS_AS(FrameStack(2, 2, 2, 25.0, 0.0, bad), InvalidArgument);
}

TEST_CASE("squared kernel examples") {
  const Kernel delta(Image(3, 3, std::vector<double>{0, 0, 0, 0, 1, 0, 0, 0, 0}));
  CHECK(delta.squared().weights() == delta.weights());

  const Kernel box(Image(3, 3, 1.0 / 9.0));
  const Kernel sq = box.squared();
  for (double v : sq.weights().pixels()) CHECK(v == doctest::Approx(1.0 / 81.0).epsilon(1e-15));
}

TEST_CASE("delta kernel is the identity") {
  const Kernel delta(Image(5, 5, std::vector<double>{0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 0, 1, 0, 0,
                                                     0, 0, 0, 0, 0, 0, 0, 0, 0, 0}));
  const Image x = random_image(9, 7, 3);
  CHECK(convolve(delta, x) == x);
  CHECK(correlate(delta, x) == x);
}

TEST_CASE("adjoint identity for psi and psi squared") {
  const Psf psf = psf_from_fwhm(176.6, 25.0);
  const PsfSq sq = squared_psf_operator(psf);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    const Image x = random_image(20, 17, 100 + seed, -1.0, 1.0);
    const Image y = random_image(20, 17, 200 + seed, -1.0, 1.0);
    CHECK(testing::relative_difference(dot(apply(psf, x), y), dot(x, apply_adjoint(psf, y))) < 1e-10);
    CHECK(testing::relative_difference(dot(apply(sq, x), y), dot(x, apply_adjoint(sq, y))) < 1e-10);
  }
  const Kernel k = testing::random_kernel(5, 11);
  const Image x = random_image(12, 12, 12, -1.0, 1.0), y = random_image(12, 12, 13, -1.0, 1.0);
  CHECK(testing::relative_difference(dot(convolve(k, x), y), dot(x, correlate(k, y))) < 1e-10);
}

TEST_CASE("psi squared equals the entrywise squared explicit matrix") {
  auto check_kernel = [](const Kernel& k) {
    const std::size_t n = 12;
    const Eigen::MatrixXd psi = testing::convolution_matrix(k, n, n);
    const Eigen::MatrixXd psi_sq = psi.cwiseProduct(psi);
    const Image x = random_image(n, n, 77, 0.0, 1.0);
    const Eigen::VectorXd want = psi_sq * testing::to_vector(x);
    const Eigen::VectorXd got = testing::to_vector(convolve(k.squared(), x));
    CHECK((want - got).lpNorm<Eigen::Infinity>() <= 1e-12 * want.lpNorm<Eigen::Infinity>());
    // The matrix oracle also reproduces Ψ itself.
    const Eigen::VectorXd psi_x = psi * testing::to_vector(x);
    CHECK((psi_x - testing::to_vector(convolve(k, x))).lpNorm<Eigen::Infinity>() < 1e-13);
  };
  check_kernel(testing::random_kernel(5, 5));
  check_kernel(psf_from_fwhm(100.0, 25.0).kernel);
}

TEST_CASE("operator norm by power iteration") {
  const Psf psf = psf_from_fwhm(176.6, 25.0);
  const Kernel sq = psf.kernel.squared();
  const NormEstimate est = squared_operator_norm(sq, 16, 16);
  CHECK(est.converged);
  CHECK(est.iterations <= 500);
  double k2 = 0.0;
  for (double v : psf.kernel.weights().pixels()) k2 += v * v;
  CHECK(est.value <= k2 * k2 * (1.0 + 1e-12));

  // Dense oracle: largest eigenvalue of MᵀM.
  const Eigen::MatrixXd m = testing::convolution_matrix(sq, 16, 16);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(m.transpose() * m);
  CHECK(est.value == doctest::Approx(eig.eigenvalues().maxCoeff()).epsilon(1e-6));
}

TEST_CASE("forward gradient adjoint") {
  const Image x = random_image(7, 9, 1, -1, 1);
  GradientField g{random_image(7, 9, 2, -1, 1).vector(), random_image(7, 9, 3, -1, 1).vector()};
  const GradientField gx = forward_gradient(x);
  double lhs = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) lhs += gx.d_row[i] * g.d_row[i] + gx.d_col[i] * g.d_col[i];
  CHECK(testing::relative_difference(lhs, dot(x, forward_gradient_adjoint(g, 7, 9))) < 1e-12);
}
