#include "fdecon/simulator.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>

#include "fdecon/error.hpp"
#include "fdecon/operators.hpp"
#include "fdecon/random.hpp"

namespace fdecon {

namespace {

bool is_probability(double p) { return p >= 0.0 && p <= 1.0; }

constexpr std::size_t kCurveSamples = 2048;
constexpr int kEndpointTries = 64;

struct Vec2 {
  double x, y;
};

Vec2 bezier(const std::array<Vec2, 3>& p, double t) {
  const double u = 1.0 - t;
  return {u * u * p[0].x + 2 * u * t * p[1].x + t * t * p[2].x, u * u * p[0].y + 2 * u * t * p[1].y + t * t * p[2].y};
}

}  // namespace

void BlinkingParams::validate() const {
  if (!is_probability(rate_on) || !is_probability(rate_off)) {
    throw InvalidArgument("blinking rates must be probabilities in [0, 1]");
  }
  if (!(mean_photons_on > 0.0) || !std::isfinite(mean_photons_on)) {
    throw InvalidArgument("mean_photons_on must be positive");
  }
  if (!(photon_jitter_fraction >= 0.0 && photon_jitter_fraction < 1.0)) {
    throw InvalidArgument("photon_jitter_fraction must lie in [0, 1)");
  }
}

double BlinkingParams::stationary_on_fraction() const {
  const double total = rate_on + rate_off;
  return total > 0.0 ? rate_on / total : 0.5;
}

void AcquisitionParams::validate() const {
  if (frames < 2) throw InvalidArgument("an acquisition needs at least 2 frames");
  if (!(noise_variance >= 0.0) || !std::isfinite(noise_variance)) {
    throw InvalidArgument("noise variance must be nonnegative");
  }
  if (!(background_level >= 0.0) || !std::isfinite(background_level) || !(background_bump >= 0.0) ||
      !std::isfinite(background_bump)) {
    throw InvalidArgument("background level and bump must be nonnegative");
  }
}

EmitterSet generate_filament_pattern(std::uint64_t seed, double field_size_nm, std::size_t n_filaments,
                                     std::size_t emitters_per_filament) {
  if (n_filaments == 0 || emitters_per_filament == 0) {
    throw InvalidArgument("filament pattern needs at least one filament and one emitter per filament");
  }
  if (!(field_size_nm > 0.0) || !std::isfinite(field_size_nm)) {
    throw InvalidArgument("field size must be positive");
  }
  const double margin = kPatternMarginFraction * field_size_nm;
  const double span = field_size_nm - 2.0 * margin;

  std::vector<Point> positions;
  positions.reserve(n_filaments * emitters_per_filament);
  for (std::size_t f = 0; f < n_filaments; ++f) {
    CounterRng rng(seed, stream_id(StreamDomain::Pattern, f));
    auto draw = [&] { return Vec2{margin + span * rng.uniform(), margin + span * rng.uniform()}; };

    std::array<Vec2, 3> ctrl;
    ctrl[0] = draw();
    // Endpoints at least half the field apart so filaments cross the scene.
    for (int attempt = 0; attempt < kEndpointTries; ++attempt) {
      ctrl[2] = draw();
      if (std::hypot(ctrl[2].x - ctrl[0].x, ctrl[2].y - ctrl[0].y) >= 0.5 * span) break;
    }
    ctrl[1] = draw();

    std::vector<Vec2> samples(kCurveSamples + 1);
    std::vector<double> arc(kCurveSamples + 1, 0.0);
    for (std::size_t i = 0; i <= kCurveSamples; ++i) {
      samples[i] = bezier(ctrl, static_cast<double>(i) / kCurveSamples);
      if (i > 0) {
        arc[i] = arc[i - 1] + std::hypot(samples[i].x - samples[i - 1].x, samples[i].y - samples[i - 1].y);
      }
    }
    const double length = arc.back();

    std::size_t seg = 0;
    for (std::size_t k = 0; k < emitters_per_filament; ++k) {
      const double s = emitters_per_filament == 1
                           ? 0.5 * length
                           : length * static_cast<double>(k) / static_cast<double>(emitters_per_filament - 1);
      while (seg + 1 < kCurveSamples && arc[seg + 1] < s) ++seg;
      const double piece = arc[seg + 1] - arc[seg];
      const double w = piece > 0.0 ? std::clamp((s - arc[seg]) / piece, 0.0, 1.0) : 0.0;
      positions.push_back({samples[seg].x + w * (samples[seg + 1].x - samples[seg].x),
                           samples[seg].y + w * (samples[seg + 1].y - samples[seg].y)});
    }
  }
  return EmitterSet(std::move(positions), field_size_nm, field_size_nm);
}

BrightnessSeries simulate_blinking(const EmitterSet& emitters, const BlinkingParams& params, std::size_t frames,
                                   std::uint64_t seed) {
  params.validate();
  if (frames < 2) throw InvalidArgument("blinking series needs at least 2 frames");

  BrightnessSeries series;
  series.emitters = emitters.size();
  series.frames = frames;
  series.values.assign(series.emitters * frames, 0.0);
  const double p_on = params.stationary_on_fraction();
  const double jitter = params.photon_jitter_fraction;

  for (std::size_t e = 0; e < series.emitters; ++e) {
    CounterRng rng(seed, stream_id(StreamDomain::Blinking, e));
    bool on = rng.bernoulli(p_on);
    for (std::size_t t = 0; t < frames; ++t) {
      // Two draws per frame regardless of state keep the stream layout fixed.
      const double u = rng.uniform();
      const double flip = rng.uniform();
      if (on) series.values[e * frames + t] = params.mean_photons_on * (1.0 + jitter * (2.0 * u - 1.0));
      on = on ? !(flip < params.rate_off) : (flip < params.rate_on);
    }
  }
  return series;
}

std::size_t nearest_pixel(double coord_nm, double pixel_size_nm) {
  // Pixel i covers [i, i+1) * pixel_size with its centre at (i + 1/2) * pixel_size.
  return static_cast<std::size_t>(std::floor(coord_nm / pixel_size_nm));
}

Image make_background(const AcquisitionParams& acq, std::size_t n) {
  Image b(n, n, acq.background_level);
  if (acq.background_shape == BackgroundShape::RaisedCosine && acq.background_bump > 0.0) {
    std::vector<double> w(n);
    for (std::size_t i = 0; i < n; ++i) {
      w[i] = 0.5 * (1.0 - std::cos(2.0 * std::numbers::pi * (static_cast<double>(i) + 0.5) / static_cast<double>(n)));
    }
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t c = 0; c < n; ++c) b(r, c) += acq.background_bump * w[r] * w[c];
  }
  return b;
}

RenderedAcquisition render_stack(const EmitterSet& emitters, const BrightnessSeries& series, const Psf& psf,
                                 const AcquisitionParams& acq, std::size_t n) {
  acq.validate();
  if (n == 0) throw InvalidArgument("image size must be positive");
  if (series.frames != acq.frames) {
    throw InvalidArgument("brightness series has " + std::to_string(series.frames) + " frames, acquisition expects " +
                          std::to_string(acq.frames));
  }
  if (series.emitters != emitters.size()) throw InvalidArgument("brightness series does not match emitter count");

  std::vector<std::size_t> bins(emitters.size());
  Image mask(n, n);
  for (std::size_t e = 0; e < emitters.size(); ++e) {
    const auto& p = emitters.positions()[e];
    const std::size_t r = nearest_pixel(p.y_nm, psf.pixel_size_nm);
    const std::size_t c = nearest_pixel(p.x_nm, psf.pixel_size_nm);
    if (r >= n || c >= n) {
      throw InternalError("emitter " + std::to_string(e) + " bins outside the " + std::to_string(n) + "x" +
                          std::to_string(n) + " image");
    }
    bins[e] = r * n + c;
    mask[bins[e]] = 1.0;
  }

  const Image background = make_background(acq, n);
  const double noise_sd = std::sqrt(acq.noise_variance);
  FrameStack stack(acq.frames, n, n, psf.pixel_size_nm, psf.fwhm_nm);
  Image mean(n, n);

  for (std::size_t t = 0; t < acq.frames; ++t) {
    Image x(n, n);
    for (std::size_t e = 0; e < bins.size(); ++e) x[bins[e]] += series(e, t);
    for (std::size_t i = 0; i < x.size(); ++i) mean[i] += x[i];

    Image y = convolve(psf.kernel, x);
    auto frame = stack.frame(t);
    if (noise_sd > 0.0) {
      CounterRng rng(acq.seed, stream_id(StreamDomain::Noise, t));
      for (std::size_t i = 0; i < y.size(); ++i) frame[i] = static_cast<float>(y[i] + background[i] + noise_sd * rng.normal());
    } else {
      for (std::size_t i = 0; i < y.size(); ++i) frame[i] = static_cast<float>(y[i] + background[i]);
    }
  }
  for (auto& v : mean.pixels()) v /= static_cast<double>(acq.frames);

  return RenderedAcquisition{std::move(stack), std::move(mean), std::move(mask), background};
}

}  // namespace fdecon
