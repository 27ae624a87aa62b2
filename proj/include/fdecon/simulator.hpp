#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "fdecon/imaging.hpp"

namespace fdecon {

// Two-state (on/off) Markov blinking. Rates are per-frame transition
// probabilities: off -> on with rate_on, on -> off with rate_off.
struct BlinkingParams {
  double rate_on = 0.15;
  double rate_off = 0.35;
  double mean_photons_on = 400.0;
  // On-state brightness is mean_photons_on * (1 + u), u ~ U(-j, j).
  double photon_jitter_fraction = 0.1;

  void validate() const;
  // Stationary on-probability; 1/2 for the frozen chain rate_on = rate_off = 0.
  double stationary_on_fraction() const;
};

enum class BackgroundShape { Constant, RaisedCosine };

struct AcquisitionParams {
  std::size_t frames = 500;
  double background_level = 0.0;
  // Extra amplitude of a centred raised-cosine bump (RaisedCosine only).
  double background_bump = 0.0;
  BackgroundShape background_shape = BackgroundShape::Constant;
  double noise_variance = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

// Brightness of each emitter per frame, emitter-major.
struct BrightnessSeries {
  std::size_t emitters = 0;
  std::size_t frames = 0;
  std::vector<double> values;

  double operator()(std::size_t emitter, std::size_t t) const { return values[emitter * frames + t]; }
};

struct RenderedAcquisition {
  FrameStack stack;
  Image mean_emitter_image;  // x̄ = (1/T) Σ x_t
  Image support_mask;        // 1 where any emitter bins, else 0
  Image background;
};

// Margin kept free on each side of the field, as a fraction of its size.
inline constexpr double kPatternMarginFraction = 0.05;

// Filaments are quadratic Bezier curves through random control points in the
// margin-inset field; emitters sit at equal arc-length steps along each curve.
EmitterSet generate_filament_pattern(std::uint64_t seed, double field_size_nm, std::size_t n_filaments,
                                     std::size_t emitters_per_filament);

BrightnessSeries simulate_blinking(const EmitterSet& emitters, const BlinkingParams& params, std::size_t frames,
                                   std::uint64_t seed);

// Grid index of the pixel whose centre is nearest to a coordinate.
std::size_t nearest_pixel(double coord_nm, double pixel_size_nm);

Image make_background(const AcquisitionParams& acq, std::size_t image_size_px);

// y_t = Ψ x_t + b + n_t on an image_size_px square grid with the PSF's pixel size.
RenderedAcquisition render_stack(const EmitterSet& emitters, const BrightnessSeries& series, const Psf& psf,
                                 const AcquisitionParams& acq, std::size_t image_size_px);

}  // namespace fdecon
