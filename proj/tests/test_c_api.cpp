#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "doctest.h"
#include "fdecon/fdecon.h"
#include "temp_dir.hpp"

namespace {

fdecon_sim_params small_params() {
  fdecon_sim_params p;
  fdecon_sim_params_default(&p);
  p.image_size_px = 24;
  p.n_filaments = 2;
  p.emitters_per_filament = 30;
  p.frames = 120;
  p.seed = 5;
  return p;
}

}  // namespace

TEST_CASE("status names and version") {
  CHECK(std::string(fdecon_status_name(FDECON_OK)) == "ok");
  CHECK(std::strlen(fdecon_status_name(FDECON_ERR_BRIDGE)) > 0);
  CHECK(std::strlen(fdecon_version()) > 0);
}

TEST_CASE("image handles") {
  const double data[6] = {1, 2, 3, 4, 5, 6};
  fdecon_image* img = nullptr;
  REQUIRE(fdecon_image_create(2, 3, data, &img) == FDECON_OK);
  CHECK(fdecon_image_height(img) == 2);
  CHECK(fdecon_image_width(img) == 3);
  CHECK(fdecon_image_data(img)[4] == 5.0);

  testing::TempDir dir;
  const std::string path = (dir / "a.fli").string();
  REQUIRE(fdecon_image_write(img, path.c_str()) == FDECON_OK);
  fdecon_image* back = nullptr;
  REQUIRE(fdecon_image_read(path.c_str(), &back) == FDECON_OK);
  CHECK(std::memcmp(fdecon_image_data(back), data, sizeof data) == 0);
  fdecon_image_destroy(back);
  fdecon_image_destroy(img);
  fdecon_image_destroy(nullptr);
}

TEST_CASE("errors set status and message") {
  fdecon_image* img = nullptr;
  CHECK(fdecon_image_create(0, 3, nullptr, &img) == FDECON_ERR_INVALID_ARGUMENT);
  CHECK(img == nullptr);
  CHECK(std::strlen(fdecon_last_error()) > 0);
  CHECK(fdecon_image_create(2, 2, nullptr, nullptr) == FDECON_ERR_INVALID_ARGUMENT);
  CHECK(fdecon_image_read("/nonexistent/x.fli", &img) == FDECON_ERR_IO);

  testing::TempDir dir;
  const std::string path = (dir / "junk.fli").string();
  const char junk[] = "not an image";
  REQUIRE(fdecon_write_file_atomic(path.c_str(), junk, sizeof junk) == FDECON_OK);
  CHECK(fdecon_image_read(path.c_str(), &img) == FDECON_ERR_FORMAT);
  CHECK(std::strlen(fdecon_last_error()) > 0);

  fdecon_psf* psf = nullptr;
  CHECK(fdecon_psf_create(-1.0, 25.0, 0, &psf) == FDECON_ERR_INVALID_ARGUMENT);
}

TEST_CASE("psf") {
  fdecon_psf* psf = nullptr;
  REQUIRE(fdecon_psf_create(176.6, 25.0, 0, &psf) == FDECON_OK);
  const double sigma = fdecon_psf_sigma_px(psf);
  CHECK(sigma == doctest::Approx(176.6 / 25.0 / (2 * std::sqrt(2 * std::log(2.0)))));
  CHECK(fdecon_psf_size(psf) == 2 * static_cast<std::size_t>(std::ceil(4 * sigma)) + 1);

  fdecon_image* x = nullptr;
  fdecon_image* y = nullptr;
  std::vector<double> delta(31 * 31, 0.0);
  delta[15 * 31 + 15] = 1.0;
  REQUIRE(fdecon_image_create(31, 31, delta.data(), &x) == FDECON_OK);
  REQUIRE(fdecon_psf_apply(psf, x, &y) == FDECON_OK);
  double total = 0;
  for (std::size_t i = 0; i < 31 * 31; ++i) total += fdecon_image_data(y)[i];
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
  fdecon_image_destroy(x);
  fdecon_image_destroy(y);
  fdecon_psf_destroy(psf);
}

TEST_CASE("simulate, covariance, support and intensity") {
  const fdecon_sim_params p = small_params();
  fdecon_simulation sim{};
  REQUIRE(fdecon_simulate(&p, &sim) == FDECON_OK);
  std::size_t T = 0, h = 0, w = 0;
  fdecon_stack_shape(sim.stack, &T, &h, &w);
  CHECK(T == 120);
  CHECK(h == 24);
  CHECK(fdecon_emitters_count(sim.emitters) == 60);

  fdecon_image* cov = nullptr;
  fdecon_image* mean = nullptr;
  REQUIRE(fdecon_auto_covariance(sim.stack, &cov) == FDECON_OK);
  REQUIRE(fdecon_temporal_mean(sim.stack, &mean) == FDECON_OK);

  fdecon_psf* psf = nullptr;
  REQUIRE(fdecon_psf_create(p.fwhm_nm, p.pixel_size_nm, 0, &psf) == FDECON_OK);
  fdecon_support_config cfg;
  fdecon_support_config_default(&cfg);
  cfg.max_iters = 300;
  fdecon_support_result* sr = nullptr;
  REQUIRE(fdecon_solve_support(cov, psf, &cfg, nullptr, &sr) == FDECON_OK);
  CHECK_FALSE(fdecon_support_result_aborted(sr));
  CHECK(fdecon_support_result_objective_available(sr));
  CHECK(fdecon_support_result_trace_length(sr) == fdecon_support_result_iterations(sr));
  const std::size_t m = fdecon_support_result_support_size(sr);
  REQUIRE(m > 0);
  CHECK(fdecon_support_result_noise_variance(sr) > 0.0);

  fdecon_match_summary ms{};
  REQUIRE(fdecon_jaccard_mask(fdecon_support_result_mask(sr), sim.emitters, 40.0, p.pixel_size_nm, &ms) == FDECON_OK);
  CHECK(ms.jaccard > 0.0);
  CHECK(ms.jaccard <= 1.0);

  fdecon_intensity_config icfg;
  fdecon_intensity_config_default(&icfg);
  icfg.max_iters = 500;
  fdecon_intensity_result* ir = nullptr;
  REQUIRE(fdecon_solve_intensity(mean, fdecon_support_result_support(sr), m, psf, &icfg, &ir) == FDECON_OK);
  CHECK(fdecon_intensity_result_mu(ir) > 0.0);
  CHECK(fdecon_intensity_result_iterations(ir) <= 500);
  double psnr = 0;
  REQUIRE(fdecon_psnr(fdecon_intensity_result_intensity(ir), sim.mean_emitter_image, 0.0, &psnr) == FDECON_OK);
  CHECK(std::isfinite(psnr));

  fdecon_intensity_result_destroy(ir);
  fdecon_support_result_destroy(sr);
  fdecon_psf_destroy(psf);
  fdecon_image_destroy(cov);
  fdecon_image_destroy(mean);
  fdecon_simulation_release(&sim);
  CHECK(sim.stack == nullptr);
}

TEST_CASE("bridge denoiser through the C interface") {
  const char* argv[] = {FDECON_FIXTURE_PATH, "scale", "--alpha", "0.5"};
  fdecon_denoiser* d = nullptr;
  REQUIRE(fdecon_denoiser_create_subprocess(argv, 4, 5000, &d) == FDECON_OK);
  CHECK(fdecon_denoiser_protocol_version(d) == 1);
  CHECK(fdecon_denoiser_returns_potential(d));

  const double data[4] = {2, -4, 1, 0.5};
  fdecon_image* z = nullptr;
  fdecon_image* out = nullptr;
  REQUIRE(fdecon_image_create(2, 2, data, &z) == FDECON_OK);
  double potential = 0;
  REQUIRE(fdecon_denoiser_apply(d, z, 0.1, &out, &potential) == FDECON_OK);
  CHECK(fdecon_image_data(out)[1] == -2.0);
  CHECK(potential == doctest::Approx(0.25 * (4 + 16 + 1 + 0.25)));
  std::size_t written = 0, read = 0;
  fdecon_denoiser_bridge_bytes(d, &written, &read);
  CHECK(written == 5 + 21 + 16);
  CHECK(read == 8 + 13 + 16);
  fdecon_image_destroy(out);
  fdecon_image_destroy(z);
  fdecon_denoiser_destroy(d);

  const char* missing[] = {"/nonexistent/denoiser"};
  CHECK(fdecon_denoiser_create_subprocess(missing, 1, 1000, &d) == FDECON_ERR_BRIDGE);
}

TEST_CASE("aborted solve still returns the partial trace") {
  const fdecon_sim_params p = small_params();
  fdecon_simulation sim{};
  fdecon_image* cov = nullptr;
  REQUIRE(fdecon_simulate(&p, &sim) == FDECON_OK);
  REQUIRE(fdecon_auto_covariance(sim.stack, &cov) == FDECON_OK);
  fdecon_psf* psf = nullptr;
  REQUIRE(fdecon_psf_create(p.fwhm_nm, p.pixel_size_nm, 0, &psf) == FDECON_OK);

  const char* argv[] = {FDECON_FIXTURE_PATH, "scale", "--die-after", "2"};
  fdecon_denoiser* d = nullptr;
  REQUIRE(fdecon_denoiser_create_subprocess(argv, 4, 5000, &d) == FDECON_OK);
  fdecon_support_config cfg;
  fdecon_support_config_default(&cfg);
  cfg.max_iters = 20;
  fdecon_support_result* sr = nullptr;
  CHECK(fdecon_solve_support(cov, psf, &cfg, d, &sr) == FDECON_ERR_BRIDGE);
  REQUIRE(sr != nullptr);
  CHECK(fdecon_support_result_aborted(sr));
  CHECK(fdecon_support_result_trace_length(sr) == 2);

  fdecon_support_result_destroy(sr);
  fdecon_denoiser_destroy(d);
  fdecon_psf_destroy(psf);
  fdecon_image_destroy(cov);
  fdecon_simulation_release(&sim);
}
