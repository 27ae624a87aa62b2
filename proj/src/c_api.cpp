#include "fdecon/fdecon.h"

#include <cmath>
#include <limits>
#include <memory>
#include <new>
#include <string>
#include <vector>

#include "fdecon/bridge.hpp"
#include "fdecon/covariance.hpp"
#include "fdecon/error.hpp"
#include "fdecon/intensity_solver.hpp"
#include "fdecon/io.hpp"
#include "fdecon/metrics.hpp"
#include "fdecon/operators.hpp"
#include "fdecon/simulator.hpp"
#include "fdecon/support_solver.hpp"

struct fdecon_image {
  fdecon::Image image;
};

struct fdecon_stack {
  fdecon::FrameStack stack;
};

struct fdecon_emitters {
  fdecon::EmitterSet set;
};

struct fdecon_psf {
  fdecon::Psf psf;
};

struct fdecon_denoiser {
  std::unique_ptr<fdecon::Denoiser> denoiser;
  fdecon::bridge::BridgeDenoiser* bridge = nullptr;
};

struct fdecon_support_result {
  fdecon::SupportResult result;
  fdecon_image estimate;
  fdecon_image mask;
  std::vector<fdecon_trace_record> trace;
  bool aborted = false;
};

struct fdecon_intensity_result {
  fdecon::IntensityResult result;
  fdecon_image intensity;
  fdecon_image background;
  double mu = 0.0;
  double beta = 0.0;
};

namespace {

thread_local std::string last_error;

fdecon_status to_status(fdecon::ErrorCode code) {
  switch (code) {
    case fdecon::ErrorCode::InvalidArgument: return FDECON_ERR_INVALID_ARGUMENT;
    case fdecon::ErrorCode::Io: return FDECON_ERR_IO;
    case fdecon::ErrorCode::Format: return FDECON_ERR_FORMAT;
    case fdecon::ErrorCode::Convergence: return FDECON_ERR_CONVERGENCE;
    case fdecon::ErrorCode::Divergence: return FDECON_ERR_DIVERGENCE;
    case fdecon::ErrorCode::Bridge: return FDECON_ERR_BRIDGE;
    case fdecon::ErrorCode::Internal: return FDECON_ERR_INTERNAL;
  }
  return FDECON_ERR_INTERNAL;
}

template <class F>
fdecon_status guarded(F&& body) {
  try {
    body();
    last_error.clear();
    return FDECON_OK;
  } catch (const fdecon::Error& e) {
    last_error = e.what();
    return to_status(e.code());
  } catch (const std::bad_alloc&) {
    last_error = "out of memory";
    return FDECON_ERR_INTERNAL;
  } catch (const std::exception& e) {
    last_error = e.what();
    return FDECON_ERR_INTERNAL;
  } catch (...) {
    last_error = "unknown exception";
    return FDECON_ERR_INTERNAL;
  }
}

template <class T>
void require(const T* p, const char* name) {
  if (!p) throw fdecon::InvalidArgument(std::string(name) + " is NULL");
}

fdecon_image* new_image(fdecon::Image image) { return new fdecon_image{std::move(image)}; }

fdecon_trace_record to_record(const fdecon::TraceRecord& r) {
  return fdecon_trace_record{r.iteration, r.objective, r.data_term, r.relative_change, r.running_min_change,
                             r.noise_variance};
}

}  // namespace

extern "C" {

const char* fdecon_last_error(void) { return last_error.c_str(); }

const char* fdecon_status_name(fdecon_status status) {
  switch (status) {
    case FDECON_OK: return "ok";
    case FDECON_ERR_INVALID_ARGUMENT: return "invalid argument";
    case FDECON_ERR_IO: return "i/o error";
    case FDECON_ERR_FORMAT: return "format error";
    case FDECON_ERR_CONVERGENCE: return "convergence failure";
    case FDECON_ERR_DIVERGENCE: return "divergence";
    case FDECON_ERR_BRIDGE: return "bridge error";
    case FDECON_ERR_INTERNAL: return "internal error";
  }
  return "unknown status";
}

const char* fdecon_version(void) { return "0.1.0"; }

fdecon_status fdecon_image_create(size_t height, size_t width, const double* data, fdecon_image** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    if (height == 0 || width == 0) throw fdecon::InvalidArgument("image dimensions must be positive");
    if (data) {
      *out = new_image(fdecon::Image(height, width, std::vector<double>(data, data + height * width)));
    } else {
      *out = new_image(fdecon::Image(height, width));
    }
  });
}

void fdecon_image_destroy(fdecon_image* image) { delete image; }
size_t fdecon_image_height(const fdecon_image* image) { return image ? image->image.height() : 0; }
size_t fdecon_image_width(const fdecon_image* image) { return image ? image->image.width() : 0; }
const double* fdecon_image_data(const fdecon_image* image) { return image ? image->image.vector().data() : nullptr; }

fdecon_status fdecon_image_read(const char* path, fdecon_image** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new_image(fdecon::read_image(path));
  });
}

fdecon_status fdecon_image_write(const fdecon_image* image, const char* path) {
  return guarded([&] {
    require(image, "image");
    require(path, "path");
    fdecon::write_image(path, image->image);
  });
}

fdecon_status fdecon_image_write_view(const fdecon_image* image, const char* path, int fixed_range, double low,
                                      double high) {
  return guarded([&] {
    require(image, "image");
    require(path, "path");
    fdecon::ViewRange range;
    if (fixed_range) range = fdecon::ViewRange{fdecon::ViewScaling::Fixed, low, high};
    fdecon::write_image_view(path, image->image, range);
  });
}

fdecon_status fdecon_image_read_view(const char* path, fdecon_image** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new_image(fdecon::read_image_view(path));
  });
}

fdecon_status fdecon_stack_create(size_t frames, size_t height, size_t width, double pixel_size_nm, double fwhm_nm,
                                  const float* data, fdecon_stack** out) {
  return guarded([&] {
    require(out, "out");
    *out = nullptr;
    if (height == 0 || width == 0) throw fdecon::InvalidArgument("image dimensions must be positive");
    if (data) {
      std::vector<float> values(data, data + frames * height * width);
      *out = new fdecon_stack{fdecon::FrameStack(frames, height, width, pixel_size_nm, fwhm_nm, std::move(values))};
    } else {
      *out = new fdecon_stack{fdecon::FrameStack(frames, height, width, pixel_size_nm, fwhm_nm)};
    }
  });
}

void fdecon_stack_destroy(fdecon_stack* stack) { delete stack; }

void fdecon_stack_shape(const fdecon_stack* stack, size_t* frames, size_t* height, size_t* width) {
  if (frames) *frames = stack ? stack->stack.frames() : 0;
  if (height) *height = stack ? stack->stack.height() : 0;
  if (width) *width = stack ? stack->stack.width() : 0;
}

double fdecon_stack_pixel_size_nm(const fdecon_stack* stack) { return stack ? stack->stack.pixel_size_nm() : 0.0; }
double fdecon_stack_fwhm_nm(const fdecon_stack* stack) { return stack ? stack->stack.fwhm_nm() : 0.0; }
const float* fdecon_stack_data(const fdecon_stack* stack) { return stack ? stack->stack.data().data() : nullptr; }

fdecon_status fdecon_stack_read(const char* path, fdecon_stack** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fdecon_stack{fdecon::read_stack(path)};
  });
}

fdecon_status fdecon_stack_write(const fdecon_stack* stack, const char* path) {
  return guarded([&] {
    require(stack, "stack");
    require(path, "path");
    fdecon::write_stack(path, stack->stack);
  });
}

fdecon_status fdecon_emitters_create(size_t count, const double* xy, double field_width_nm, double field_height_nm,
                                     fdecon_emitters** out) {
  return guarded([&] {
    require(out, "out");
    if (count > 0) require(xy, "xy");
    std::vector<fdecon::Point> points(count);
    for (size_t i = 0; i < count; ++i) points[i] = fdecon::Point{xy[2 * i], xy[2 * i + 1]};
    *out = new fdecon_emitters{fdecon::EmitterSet(std::move(points), field_width_nm, field_height_nm)};
  });
}

void fdecon_emitters_destroy(fdecon_emitters* emitters) { delete emitters; }
size_t fdecon_emitters_count(const fdecon_emitters* emitters) { return emitters ? emitters->set.size() : 0; }

void fdecon_emitters_get(const fdecon_emitters* emitters, size_t index, double* x_nm, double* y_nm) {
  if (!emitters || index >= emitters->set.size()) return;
  const auto& p = emitters->set.positions()[index];
  if (x_nm) *x_nm = p.x_nm;
  if (y_nm) *y_nm = p.y_nm;
}

void fdecon_emitters_field(const fdecon_emitters* emitters, double* width_nm, double* height_nm) {
  if (width_nm) *width_nm = emitters ? emitters->set.field_width_nm() : 0.0;
  if (height_nm) *height_nm = emitters ? emitters->set.field_height_nm() : 0.0;
}

fdecon_status fdecon_emitters_read(const char* path, fdecon_emitters** out) {
  return guarded([&] {
    require(path, "path");
    require(out, "out");
    *out = new fdecon_emitters{fdecon::read_emitters(path)};
  });
}

fdecon_status fdecon_emitters_write(const fdecon_emitters* emitters, const char* path) {
  return guarded([&] {
    require(emitters, "emitters");
    require(path, "path");
    fdecon::write_emitters(path, emitters->set);
  });
}

fdecon_status fdecon_psf_create(double fwhm_nm, double pixel_size_nm, size_t radius_px, fdecon_psf** out) {
  return guarded([&] {
    require(out, "out");
    *out = new fdecon_psf{fdecon::psf_from_fwhm(fwhm_nm, pixel_size_nm, radius_px)};
  });
}

void fdecon_psf_destroy(fdecon_psf* psf) { delete psf; }
double fdecon_psf_sigma_px(const fdecon_psf* psf) { return psf ? psf->psf.sigma_px : 0.0; }
size_t fdecon_psf_size(const fdecon_psf* psf) { return psf ? psf->psf.kernel.size() : 0; }

fdecon_status fdecon_psf_apply(const fdecon_psf* psf, const fdecon_image* x, fdecon_image** out) {
  return guarded([&] {
    require(psf, "psf");
    require(x, "x");
    require(out, "out");
    *out = new_image(fdecon::apply(psf->psf, x->image));
  });
}

void fdecon_sim_params_default(fdecon_sim_params* params) {
  if (!params) return;
  const fdecon::BlinkingParams blink;
  const fdecon::AcquisitionParams acq;
  *params = fdecon_sim_params{};
  params->image_size_px = 64;
  params->pixel_size_nm = 25.0;
  params->fwhm_nm = 176.6;
  params->n_filaments = 3;
  params->emitters_per_filament = 100;
  params->frames = acq.frames;
  params->rate_on = blink.rate_on;
  params->rate_off = blink.rate_off;
  params->mean_photons_on = blink.mean_photons_on;
  params->photon_jitter_fraction = blink.photon_jitter_fraction;
  params->background_level = 100.0;
  params->background_bump = 0.0;
  params->background_shape = FDECON_BACKGROUND_CONSTANT;
  params->noise_variance = 4.0;
  params->seed = 1;
}

fdecon_status fdecon_simulate(const fdecon_sim_params* params, fdecon_simulation* out) {
  return guarded([&] {
    require(params, "params");
    require(out, "out");
    *out = fdecon_simulation{};
    const fdecon::Psf psf = fdecon::psf_from_fwhm(params->fwhm_nm, params->pixel_size_nm);
    const double field = static_cast<double>(params->image_size_px) * params->pixel_size_nm;
    fdecon::EmitterSet emitters =
        fdecon::generate_filament_pattern(params->seed, field, params->n_filaments, params->emitters_per_filament);

    fdecon::BlinkingParams blink;
    blink.rate_on = params->rate_on;
    blink.rate_off = params->rate_off;
    blink.mean_photons_on = params->mean_photons_on;
    blink.photon_jitter_fraction = params->photon_jitter_fraction;
    const auto series = fdecon::simulate_blinking(emitters, blink, params->frames, params->seed);

    fdecon::AcquisitionParams acq;
    acq.frames = params->frames;
    acq.background_level = params->background_level;
    acq.background_bump = params->background_bump;
    acq.background_shape = params->background_shape == FDECON_BACKGROUND_RAISED_COSINE
                               ? fdecon::BackgroundShape::RaisedCosine
                               : fdecon::BackgroundShape::Constant;
    acq.noise_variance = params->noise_variance;
    acq.seed = params->seed;
    fdecon::RenderedAcquisition rendered = fdecon::render_stack(emitters, series, psf, acq, params->image_size_px);

    // Allocate everything before handing ownership out.
    auto stack = std::make_unique<fdecon_stack>(fdecon_stack{std::move(rendered.stack)});
    auto set = std::make_unique<fdecon_emitters>(fdecon_emitters{std::move(emitters)});
    auto mean = std::make_unique<fdecon_image>(fdecon_image{std::move(rendered.mean_emitter_image)});
    auto mask = std::make_unique<fdecon_image>(fdecon_image{std::move(rendered.support_mask)});
    auto background = std::make_unique<fdecon_image>(fdecon_image{std::move(rendered.background)});
    out->stack = stack.release();
    out->emitters = set.release();
    out->mean_emitter_image = mean.release();
    out->support_mask = mask.release();
    out->background = background.release();
  });
}

void fdecon_simulation_release(fdecon_simulation* sim) {
  if (!sim) return;
  fdecon_stack_destroy(sim->stack);
  fdecon_emitters_destroy(sim->emitters);
  fdecon_image_destroy(sim->mean_emitter_image);
  fdecon_image_destroy(sim->support_mask);
  fdecon_image_destroy(sim->background);
  *sim = fdecon_simulation{};
}

fdecon_status fdecon_temporal_mean(const fdecon_stack* stack, fdecon_image** out) {
  return guarded([&] {
    require(stack, "stack");
    require(out, "out");
    *out = new_image(fdecon::temporal_mean(stack->stack));
  });
}

fdecon_status fdecon_auto_covariance(const fdecon_stack* stack, fdecon_image** out) {
  return guarded([&] {
    require(stack, "stack");
    require(out, "out");
    *out = new_image(fdecon::auto_covariance(stack->stack).image);
  });
}

fdecon_status fdecon_denoiser_create_tv(double strength, size_t inner_iters, double gap_tol, fdecon_denoiser** out) {
  return guarded([&] {
    require(out, "out");
    *out = new fdecon_denoiser{std::make_unique<fdecon::TvDenoiser>(strength, inner_iters, gap_tol)};
  });
}

fdecon_status fdecon_denoiser_create_quadratic(double alpha, fdecon_denoiser** out) {
  return guarded([&] {
    require(out, "out");
    *out = new fdecon_denoiser{std::make_unique<fdecon::QuadraticDenoiser>(alpha)};
  });
}

fdecon_status fdecon_denoiser_create_subprocess(const char* const* argv, size_t argc, int timeout_ms,
                                                fdecon_denoiser** out) {
  return guarded([&] {
    require(argv, "argv");
    require(out, "out");
    fdecon::bridge::Endpoint endpoint;
    endpoint.transport = fdecon::bridge::Endpoint::Transport::Subprocess;
    for (size_t i = 0; i < argc; ++i) {
      require(argv[i], "argv entry");
      endpoint.command.emplace_back(argv[i]);
    }
    endpoint.timeout_ms = timeout_ms;
    auto bridge = std::make_unique<fdecon::bridge::BridgeDenoiser>(endpoint);
    auto* raw = bridge.get();
    *out = new fdecon_denoiser{std::move(bridge), raw};
  });
}

fdecon_status fdecon_denoiser_create_tcp(const char* host, uint16_t port, int timeout_ms, fdecon_denoiser** out) {
  return guarded([&] {
    require(host, "host");
    require(out, "out");
    fdecon::bridge::Endpoint endpoint;
    endpoint.transport = fdecon::bridge::Endpoint::Transport::Tcp;
    endpoint.host = host;
    endpoint.port = port;
    endpoint.timeout_ms = timeout_ms;
    auto bridge = std::make_unique<fdecon::bridge::BridgeDenoiser>(endpoint);
    auto* raw = bridge.get();
    *out = new fdecon_denoiser{std::move(bridge), raw};
  });
}

void fdecon_denoiser_destroy(fdecon_denoiser* denoiser) { delete denoiser; }

int fdecon_denoiser_returns_potential(const fdecon_denoiser* denoiser) {
  return denoiser && denoiser->denoiser->capabilities().returns_potential ? 1 : 0;
}

int fdecon_denoiser_protocol_version(const fdecon_denoiser* denoiser) {
  if (!denoiser || !denoiser->bridge) return 0;
  const auto& caps = denoiser->bridge->client().capabilities();
  return caps ? caps->version : 0;
}

fdecon_status fdecon_denoiser_apply(fdecon_denoiser* denoiser, const fdecon_image* z, double sigma,
                                    fdecon_image** out, double* potential) {
  return guarded([&] {
    require(denoiser, "denoiser");
    require(z, "z");
    require(out, "out");
    fdecon::DenoiseResult r = denoiser->denoiser->denoise(z->image, sigma);
    if (potential) *potential = r.potential ? *r.potential : std::numeric_limits<double>::quiet_NaN();
    *out = new_image(std::move(r.image));
  });
}

void fdecon_denoiser_bridge_bytes(const fdecon_denoiser* denoiser, size_t* written, size_t* read) {
  size_t w = 0, r = 0;
  if (denoiser && denoiser->bridge) {
    if (auto* socket = dynamic_cast<fdecon::bridge::SocketChannel*>(&denoiser->bridge->client().channel())) {
      w = socket->bytes_written();
      r = socket->bytes_read();
    }
  }
  if (written) *written = w;
  if (read) *read = r;
}

void fdecon_support_config_default(fdecon_support_config* cfg) {
  if (!cfg) return;
  const fdecon::SolverConfig d;
  *cfg = fdecon_support_config{};
  cfg->tau = d.tau;
  cfg->lambda = d.lambda;
  cfg->max_iters = d.max_iters;
  cfg->tol = d.tol;
  cfg->prox = d.prox.kind == fdecon::ProxKind::L1 ? FDECON_PROX_L1 : FDECON_PROX_L0;
  cfg->penalty = d.penalty;
  cfg->penalty_relative = d.penalty_relative ? 1 : 0;
  cfg->sigma = d.sigma;
  cfg->normalize_denoiser_input = d.normalize_denoiser_input ? 1 : 0;
  cfg->support_threshold = std::numeric_limits<double>::quiet_NaN();
  cfg->normalize_operator = d.normalize_operator ? 1 : 0;
}

fdecon_status fdecon_solve_support(const fdecon_image* covariance, const fdecon_psf* psf,
                                   const fdecon_support_config* cfg, fdecon_denoiser* denoiser,
                                   fdecon_support_result** out) {
  if (out) *out = nullptr;
  return guarded([&] {
    require(covariance, "covariance");
    require(psf, "psf");
    require(cfg, "cfg");
    require(out, "out");
    fdecon::SolverConfig c;
    c.tau = cfg->tau;
    c.lambda = cfg->lambda;
    c.max_iters = cfg->max_iters;
    c.tol = cfg->tol;
    c.prox = fdecon::ProxOperator{cfg->prox == FDECON_PROX_L0 ? fdecon::ProxKind::L0 : fdecon::ProxKind::L1};
    c.penalty = cfg->penalty;
    c.penalty_relative = cfg->penalty_relative != 0;
    c.denoiser = denoiser ? denoiser->denoiser.get() : nullptr;
    c.sigma = cfg->sigma;
    c.normalize_denoiser_input = cfg->normalize_denoiser_input != 0;
    if (!std::isnan(cfg->support_threshold)) c.support_threshold = cfg->support_threshold;
    c.normalize_operator = cfg->normalize_operator != 0;

    auto holder = std::make_unique<fdecon_support_result>();
    try {
      holder->result = fdecon::solve_support(covariance->image, fdecon::squared_psf_operator(psf->psf), c);
    } catch (const fdecon::SolveAborted& e) {
      holder->aborted = true;
      for (const auto& r : e.partial_trace) holder->trace.push_back(to_record(r));
      *out = holder.release();
      throw;
    }
    holder->estimate.image = holder->result.estimate.image;
    holder->mask.image = holder->result.support_mask;
    for (const auto& r : holder->result.trace) holder->trace.push_back(to_record(r));
    *out = holder.release();
  });
}

void fdecon_support_result_destroy(fdecon_support_result* result) { delete result; }
int fdecon_support_result_aborted(const fdecon_support_result* result) { return result && result->aborted ? 1 : 0; }

const fdecon_image* fdecon_support_result_estimate(const fdecon_support_result* result) {
  return result ? &result->estimate : nullptr;
}

const fdecon_image* fdecon_support_result_mask(const fdecon_support_result* result) {
  return result ? &result->mask : nullptr;
}

size_t fdecon_support_result_support_size(const fdecon_support_result* result) {
  return result ? result->result.support.size() : 0;
}

const size_t* fdecon_support_result_support(const fdecon_support_result* result) {
  return result ? result->result.support.data() : nullptr;
}

double fdecon_support_result_noise_variance(const fdecon_support_result* result) {
  return result ? result->result.noise_variance : 0.0;
}

double fdecon_support_result_threshold(const fdecon_support_result* result) {
  return result ? result->result.support_threshold : 0.0;
}

size_t fdecon_support_result_iterations(const fdecon_support_result* result) {
  return result ? result->result.iterations : 0;
}

int fdecon_support_result_converged(const fdecon_support_result* result) {
  return result && result->result.converged ? 1 : 0;
}

int fdecon_support_result_objective_available(const fdecon_support_result* result) {
  return result && result->result.objective_available ? 1 : 0;
}

size_t fdecon_support_result_trace_length(const fdecon_support_result* result) {
  return result ? result->trace.size() : 0;
}

const fdecon_trace_record* fdecon_support_result_trace(const fdecon_support_result* result) {
  return result ? result->trace.data() : nullptr;
}

size_t fdecon_support_result_warning_count(const fdecon_support_result* result) {
  return result ? result->result.warnings.size() : 0;
}

const char* fdecon_support_result_warning(const fdecon_support_result* result, size_t index) {
  if (!result || index >= result->result.warnings.size()) return nullptr;
  return result->result.warnings[index].c_str();
}

void fdecon_intensity_config_default(fdecon_intensity_config* cfg) {
  if (!cfg) return;
  const fdecon::IntensityConfig d;
  *cfg = fdecon_intensity_config{};
  cfg->mu = 0.0;
  cfg->beta = 0.0;
  cfg->estimate_background = 1;
  cfg->max_iters = d.max_iters;
  cfg->tol = d.tol;
  cfg->accelerated = d.accelerated ? 1 : 0;
}

fdecon_status fdecon_solve_intensity(const fdecon_image* mean_frame, const size_t* support, size_t support_size,
                                     const fdecon_psf* psf, const fdecon_intensity_config* cfg,
                                     fdecon_intensity_result** out) {
  return guarded([&] {
    require(mean_frame, "mean_frame");
    require(psf, "psf");
    require(cfg, "cfg");
    require(out, "out");
    *out = nullptr;
    if (support_size > 0) require(support, "support");
    std::vector<std::size_t> omega(support, support + support_size);

    fdecon::IntensityProblem problem;
    problem.support = omega;
    problem.mean_frame = mean_frame->image;
    const bool need_default = !(cfg->mu > 0.0) || !(cfg->beta > 0.0);
    const double fallback =
        need_default ? fdecon::default_smoothing_weight(psf->psf, omega, mean_frame->image) : 0.0;
    problem.mu = cfg->mu > 0.0 ? cfg->mu : fallback;
    problem.beta = cfg->beta > 0.0 ? cfg->beta : fallback;
    problem.estimate_background = cfg->estimate_background != 0;

    fdecon::IntensityConfig c;
    c.max_iters = cfg->max_iters;
    c.tol = cfg->tol;
    c.accelerated = cfg->accelerated != 0;

    auto holder = std::make_unique<fdecon_intensity_result>();
    holder->result = fdecon::solve_intensity(problem, psf->psf, c);
    holder->intensity.image = holder->result.intensity;
    holder->background.image = holder->result.background;
    holder->mu = problem.mu;
    holder->beta = problem.beta;
    *out = holder.release();
  });
}

void fdecon_intensity_result_destroy(fdecon_intensity_result* result) { delete result; }

const fdecon_image* fdecon_intensity_result_intensity(const fdecon_intensity_result* result) {
  return result ? &result->intensity : nullptr;
}

const fdecon_image* fdecon_intensity_result_background(const fdecon_intensity_result* result) {
  return result ? &result->background : nullptr;
}

double fdecon_intensity_result_objective(const fdecon_intensity_result* result) {
  return result ? result->result.objective : 0.0;
}

double fdecon_intensity_result_projected_gradient_norm(const fdecon_intensity_result* result) {
  return result ? result->result.projected_gradient_norm : 0.0;
}

size_t fdecon_intensity_result_iterations(const fdecon_intensity_result* result) {
  return result ? result->result.iterations : 0;
}

int fdecon_intensity_result_converged(const fdecon_intensity_result* result) {
  return result && result->result.converged ? 1 : 0;
}

double fdecon_intensity_result_mu(const fdecon_intensity_result* result) { return result ? result->mu : 0.0; }
double fdecon_intensity_result_beta(const fdecon_intensity_result* result) { return result ? result->beta : 0.0; }

namespace {

void fill_summary(const fdecon::JaccardResult& r, fdecon_match_summary* out) {
  out->jaccard = r.index;
  out->correct = r.report.correct;
  out->false_negatives = r.report.false_negatives;
  out->false_positives = r.report.false_positives;
  out->degenerate = r.report.degenerate ? 1 : 0;
}

std::vector<fdecon::Point> to_points(const double* xy, size_t n) {
  std::vector<fdecon::Point> out(n);
  for (size_t i = 0; i < n; ++i) out[i] = fdecon::Point{xy[2 * i], xy[2 * i + 1]};
  return out;
}

}  // namespace

fdecon_status fdecon_jaccard_mask(const fdecon_image* mask, const fdecon_emitters* truth, double tolerance_nm,
                                  double pixel_size_nm, fdecon_match_summary* out) {
  return guarded([&] {
    require(mask, "mask");
    require(truth, "truth");
    require(out, "out");
    fill_summary(fdecon::jaccard_index(mask->image, truth->set.positions(), tolerance_nm, pixel_size_nm), out);
  });
}

fdecon_status fdecon_jaccard_points(const double* estimate_xy, size_t n_estimate, const double* truth_xy,
                                    size_t n_truth, double tolerance_nm, fdecon_match_summary* out) {
  return guarded([&] {
    require(out, "out");
    if (n_estimate > 0) require(estimate_xy, "estimate_xy");
    if (n_truth > 0) require(truth_xy, "truth_xy");
    fill_summary(
        fdecon::jaccard_index(to_points(estimate_xy, n_estimate), to_points(truth_xy, n_truth), tolerance_nm), out);
  });
}

fdecon_status fdecon_psnr(const fdecon_image* estimate, const fdecon_image* truth, double peak, double* out) {
  return guarded([&] {
    require(estimate, "estimate");
    require(truth, "truth");
    require(out, "out");
    *out = fdecon::psnr(estimate->image, truth->image, peak > 0.0 ? std::optional<double>(peak) : std::nullopt);
  });
}

fdecon_status fdecon_write_file_atomic(const char* path, const void* data, size_t size) {
  return guarded([&] {
    require(path, "path");
    if (size > 0) require(data, "data");
    fdecon::write_file_atomic(path, std::span(static_cast<const std::uint8_t*>(data), size));
  });
}

}  // extern "C"
