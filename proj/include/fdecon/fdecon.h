#ifndef FDECON_FDECON_H
#define FDECON_FDECON_H

/*
 * C interface to libfdecon. All objects are opaque handles created by a
 * *_create / *_read / solver call and released with the matching *_destroy.
 * Functions return FDECON_OK or an error status; the message of the most
 * recent failure on the calling thread is available from fdecon_last_error().
 * Borrowed pointers (e.g. fdecon_image_data) stay valid until the owning
 * handle is destroyed.
 */

#include <stddef.h>
#include <stdint.h>

#if defined(__GNUC__)
#define FDECON_API __attribute__((visibility("default")))
#else
#define FDECON_API
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum fdecon_status {
  FDECON_OK = 0,
  FDECON_ERR_INVALID_ARGUMENT = 1,
  FDECON_ERR_IO = 2,
  FDECON_ERR_FORMAT = 3,
  FDECON_ERR_CONVERGENCE = 4,
  FDECON_ERR_DIVERGENCE = 5,
  FDECON_ERR_BRIDGE = 6,
  FDECON_ERR_INTERNAL = 7
} fdecon_status;

FDECON_API const char* fdecon_last_error(void);
FDECON_API const char* fdecon_status_name(fdecon_status status);
FDECON_API const char* fdecon_version(void);

/* Images: row-major doubles. */
typedef struct fdecon_image fdecon_image;

/* data may be NULL for a zero image. */
FDECON_API fdecon_status fdecon_image_create(size_t height, size_t width, const double* data, fdecon_image** out);
FDECON_API void fdecon_image_destroy(fdecon_image* image);
FDECON_API size_t fdecon_image_height(const fdecon_image* image);
FDECON_API size_t fdecon_image_width(const fdecon_image* image);
FDECON_API const double* fdecon_image_data(const fdecon_image* image);

/* Lossless FLI1 image file (f64). */
FDECON_API fdecon_status fdecon_image_read(const char* path, fdecon_image** out);
FDECON_API fdecon_status fdecon_image_write(const fdecon_image* image, const char* path);

/* 16-bit graymap plus "<path>.json" sidecar. fixed_range = 0 scales min..max
 * of the image; otherwise [low, high] is used. */
FDECON_API fdecon_status fdecon_image_write_view(const fdecon_image* image, const char* path, int fixed_range,
                                                 double low, double high);
FDECON_API fdecon_status fdecon_image_read_view(const char* path, fdecon_image** out);

/* Frame stacks: T frames of float32, FLK1 on disk. */
typedef struct fdecon_stack fdecon_stack;

FDECON_API fdecon_status fdecon_stack_create(size_t frames, size_t height, size_t width, double pixel_size_nm,
                                             double fwhm_nm, const float* data, fdecon_stack** out);
FDECON_API void fdecon_stack_destroy(fdecon_stack* stack);
FDECON_API void fdecon_stack_shape(const fdecon_stack* stack, size_t* frames, size_t* height, size_t* width);
FDECON_API double fdecon_stack_pixel_size_nm(const fdecon_stack* stack);
FDECON_API double fdecon_stack_fwhm_nm(const fdecon_stack* stack);
FDECON_API const float* fdecon_stack_data(const fdecon_stack* stack);
FDECON_API fdecon_status fdecon_stack_read(const char* path, fdecon_stack** out);
FDECON_API fdecon_status fdecon_stack_write(const fdecon_stack* stack, const char* path);

/* Ground-truth emitter positions (nm). xy holds x0, y0, x1, y1, ... */
typedef struct fdecon_emitters fdecon_emitters;

FDECON_API fdecon_status fdecon_emitters_create(size_t count, const double* xy, double field_width_nm,
                                                double field_height_nm, fdecon_emitters** out);
FDECON_API void fdecon_emitters_destroy(fdecon_emitters* emitters);
FDECON_API size_t fdecon_emitters_count(const fdecon_emitters* emitters);
FDECON_API void fdecon_emitters_get(const fdecon_emitters* emitters, size_t index, double* x_nm, double* y_nm);
FDECON_API void fdecon_emitters_field(const fdecon_emitters* emitters, double* width_nm, double* height_nm);
FDECON_API fdecon_status fdecon_emitters_read(const char* path, fdecon_emitters** out);
FDECON_API fdecon_status fdecon_emitters_write(const fdecon_emitters* emitters, const char* path);

/* Gaussian PSF sampled on the pixel grid. radius_px = 0 picks ceil(4 sigma). */
typedef struct fdecon_psf fdecon_psf;

FDECON_API fdecon_status fdecon_psf_create(double fwhm_nm, double pixel_size_nm, size_t radius_px, fdecon_psf** out);
FDECON_API void fdecon_psf_destroy(fdecon_psf* psf);
FDECON_API double fdecon_psf_sigma_px(const fdecon_psf* psf);
FDECON_API size_t fdecon_psf_size(const fdecon_psf* psf);
FDECON_API fdecon_status fdecon_psf_apply(const fdecon_psf* psf, const fdecon_image* x, fdecon_image** out);

/* Simulation */
typedef enum fdecon_background_shape { FDECON_BACKGROUND_CONSTANT = 0, FDECON_BACKGROUND_RAISED_COSINE = 1 } fdecon_background_shape;

typedef struct fdecon_sim_params {
  size_t image_size_px;
  double pixel_size_nm;
  double fwhm_nm;
  size_t n_filaments;
  size_t emitters_per_filament;
  size_t frames;
  double rate_on;
  double rate_off;
  double mean_photons_on;
  double photon_jitter_fraction;
  double background_level;
  double background_bump;
  fdecon_background_shape background_shape;
  double noise_variance;
  uint64_t seed;
} fdecon_sim_params;

FDECON_API void fdecon_sim_params_default(fdecon_sim_params* params);

/* Any output pointer may be NULL. */
typedef struct fdecon_simulation {
  fdecon_stack* stack;
  fdecon_emitters* emitters;
  fdecon_image* mean_emitter_image;
  fdecon_image* support_mask;
  fdecon_image* background;
} fdecon_simulation;

FDECON_API fdecon_status fdecon_simulate(const fdecon_sim_params* params, fdecon_simulation* out);
FDECON_API void fdecon_simulation_release(fdecon_simulation* sim);

/* Per-pixel temporal mean and unbiased variance. */
FDECON_API fdecon_status fdecon_temporal_mean(const fdecon_stack* stack, fdecon_image** out);
FDECON_API fdecon_status fdecon_auto_covariance(const fdecon_stack* stack, fdecon_image** out);

/* Denoisers for the plug-and-play branch. */
typedef struct fdecon_denoiser fdecon_denoiser;

FDECON_API fdecon_status fdecon_denoiser_create_tv(double strength, size_t inner_iters, double gap_tol,
                                                   fdecon_denoiser** out);
FDECON_API fdecon_status fdecon_denoiser_create_quadratic(double alpha, fdecon_denoiser** out);
/* Spawns argv[0..argc) with stdin/stdout joined to a socket; handshakes. */
FDECON_API fdecon_status fdecon_denoiser_create_subprocess(const char* const* argv, size_t argc, int timeout_ms,
                                                           fdecon_denoiser** out);
FDECON_API fdecon_status fdecon_denoiser_create_tcp(const char* host, uint16_t port, int timeout_ms,
                                                    fdecon_denoiser** out);
FDECON_API void fdecon_denoiser_destroy(fdecon_denoiser* denoiser);
FDECON_API int fdecon_denoiser_returns_potential(const fdecon_denoiser* denoiser);
/* Protocol version for bridge denoisers, 0 otherwise. */
FDECON_API int fdecon_denoiser_protocol_version(const fdecon_denoiser* denoiser);
/* potential receives NaN when the denoiser exposes none; may be NULL. */
FDECON_API fdecon_status fdecon_denoiser_apply(fdecon_denoiser* denoiser, const fdecon_image* z, double sigma,
                                               fdecon_image** out, double* potential);
/* Bytes moved over a bridge connection so far; 0 for in-process denoisers. */
FDECON_API void fdecon_denoiser_bridge_bytes(const fdecon_denoiser* denoiser, size_t* written, size_t* read);

/* Support estimation */
typedef enum fdecon_prox { FDECON_PROX_L1 = 0, FDECON_PROX_L0 = 1 } fdecon_prox;

typedef struct fdecon_support_config {
  double tau;
  double lambda;
  size_t max_iters;
  double tol;
  fdecon_prox prox;
  double penalty;
  int penalty_relative;
  double sigma;
  int normalize_denoiser_input;
  double support_threshold; /* NaN selects the default */
  int normalize_operator;
} fdecon_support_config;

FDECON_API void fdecon_support_config_default(fdecon_support_config* cfg);

typedef struct fdecon_trace_record {
  size_t iteration;
  double objective; /* NaN when unavailable */
  double data_term;
  double relative_change;
  double running_min_change;
  double noise_variance;
} fdecon_trace_record;

typedef struct fdecon_support_result fdecon_support_result;

/* denoiser may be NULL (prox branch). When the solve aborts part way, an
 * error status is returned and *out still receives a result holding the
 * partial trace (fdecon_support_result_aborted returns 1). */
FDECON_API fdecon_status fdecon_solve_support(const fdecon_image* covariance, const fdecon_psf* psf,
                                              const fdecon_support_config* cfg, fdecon_denoiser* denoiser,
                                              fdecon_support_result** out);
FDECON_API void fdecon_support_result_destroy(fdecon_support_result* result);
FDECON_API int fdecon_support_result_aborted(const fdecon_support_result* result);
FDECON_API const fdecon_image* fdecon_support_result_estimate(const fdecon_support_result* result);
FDECON_API const fdecon_image* fdecon_support_result_mask(const fdecon_support_result* result);
FDECON_API size_t fdecon_support_result_support_size(const fdecon_support_result* result);
FDECON_API const size_t* fdecon_support_result_support(const fdecon_support_result* result);
FDECON_API double fdecon_support_result_noise_variance(const fdecon_support_result* result);
FDECON_API double fdecon_support_result_threshold(const fdecon_support_result* result);
FDECON_API size_t fdecon_support_result_iterations(const fdecon_support_result* result);
FDECON_API int fdecon_support_result_converged(const fdecon_support_result* result);
FDECON_API int fdecon_support_result_objective_available(const fdecon_support_result* result);
FDECON_API size_t fdecon_support_result_trace_length(const fdecon_support_result* result);
FDECON_API const fdecon_trace_record* fdecon_support_result_trace(const fdecon_support_result* result);
FDECON_API size_t fdecon_support_result_warning_count(const fdecon_support_result* result);
FDECON_API const char* fdecon_support_result_warning(const fdecon_support_result* result, size_t index);

/* Intensity estimation on a support */
typedef struct fdecon_intensity_config {
  double mu;   /* <= 0 selects 0.1 * max |Psi_Omega^T ybar| */
  double beta; /* <= 0 selects the same default */
  int estimate_background;
  size_t max_iters;
  double tol;
  int accelerated;
} fdecon_intensity_config;

FDECON_API void fdecon_intensity_config_default(fdecon_intensity_config* cfg);

typedef struct fdecon_intensity_result fdecon_intensity_result;

FDECON_API fdecon_status fdecon_solve_intensity(const fdecon_image* mean_frame, const size_t* support,
                                                size_t support_size, const fdecon_psf* psf,
                                                const fdecon_intensity_config* cfg, fdecon_intensity_result** out);
FDECON_API void fdecon_intensity_result_destroy(fdecon_intensity_result* result);
FDECON_API const fdecon_image* fdecon_intensity_result_intensity(const fdecon_intensity_result* result);
FDECON_API const fdecon_image* fdecon_intensity_result_background(const fdecon_intensity_result* result);
FDECON_API double fdecon_intensity_result_objective(const fdecon_intensity_result* result);
FDECON_API double fdecon_intensity_result_projected_gradient_norm(const fdecon_intensity_result* result);
FDECON_API size_t fdecon_intensity_result_iterations(const fdecon_intensity_result* result);
FDECON_API int fdecon_intensity_result_converged(const fdecon_intensity_result* result);
FDECON_API double fdecon_intensity_result_mu(const fdecon_intensity_result* result);
FDECON_API double fdecon_intensity_result_beta(const fdecon_intensity_result* result);

/* Metrics */
typedef struct fdecon_match_summary {
  double jaccard;
  size_t correct;
  size_t false_negatives;
  size_t false_positives;
  int degenerate;
} fdecon_match_summary;

/* Nonzero pixels of mask (as pixel centres) against ground truth reduced to
 * one point per occupied pixel. */
FDECON_API fdecon_status fdecon_jaccard_mask(const fdecon_image* mask, const fdecon_emitters* truth,
                                             double tolerance_nm, double pixel_size_nm, fdecon_match_summary* out);
FDECON_API fdecon_status fdecon_jaccard_points(const double* estimate_xy, size_t n_estimate, const double* truth_xy,
                                               size_t n_truth, double tolerance_nm, fdecon_match_summary* out);
/* peak <= 0 selects max(truth). +inf when the images are identical. */
FDECON_API fdecon_status fdecon_psnr(const fdecon_image* estimate, const fdecon_image* truth, double peak,
                                     double* out);

FDECON_API fdecon_status fdecon_write_file_atomic(const char* path, const void* data, size_t size);

#ifdef __cplusplus
}
#endif

#endif
