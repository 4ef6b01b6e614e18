#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "harnet/image.hpp"

namespace harnet {

struct GaborParams {
  int orientations = 8;
  double wavelength_px = 6.0;
  double sigma_px = 2.5;
  double aspect = 0.5;
};

/// Even-symmetric, zero-mean Gabor kernel tuned to lines running at `line_angle`
/// radians from the x axis (the carrier oscillates across the line).
std::vector<double> gabor_kernel(const GaborParams& params, double line_angle, int& radius);

/// Response of every bank orientation at every pixel, orientation-major.
std::vector<std::vector<double>> gabor_bank_responses(const Angiogram& img, const GaborParams& params = {});

/// Maximum bank response, negative values clipped to zero, rescaled so the
/// peak maps to 255. A response that is zero everywhere yields zeros and a warning.
Angiogram gabor_enhance(const Angiogram& img, const GaborParams& params = {}, Diagnostics* diag = nullptr);

struct FrangiParams {
  std::vector<double> scales_px{1.0, 2.0, 3.0};
  double beta = 0.5;
  /// c = c_fraction * max Hessian norm at each scale.
  double c_fraction = 0.5;
};

/// Raw multi-scale vesselness (bright vessels), before renormalization.
std::vector<double> frangi_response(const Angiogram& img, const FrangiParams& params = {});

/// Vesselness rescaled so its maximum maps to 255; constant input gives zeros.
Angiogram frangi_vesselness(const Angiogram& img, const FrangiParams& params = {});

/// Normalised Gaussian blur, window radius ceil(3 sigma), clamped edges.
Angiogram gaussian_blur(const Angiogram& img, double sigma_px);

/// Edge-preserving bilateral filter over a ceil(3 * spatial_sigma) window with
/// clamped edges. range_sigma may be +inf (pure Gaussian blur).
Angiogram bilateral(const Angiogram& img, double spatial_sigma = 2.0, double range_sigma = 25.0);

/// Per-pixel median over a window x window neighbourhood with clamped edges.
Angiogram median_filter(const Angiogram& img, int window = 3);

struct NoiseParams {
  double mu = 0.001;
  double sigma = 0.001;
  std::uint64_t seed = 0;
};

/// clamp(img + N(mu, sigma^2), 0, 1) on a Unit image, one independent draw per pixel.
/// Parameters outside the sweep ranges (mu 0.001..0.1, sigma 0.001..0.05) only warn.
Angiogram add_gaussian_noise(const Angiogram& img, const NoiseParams& params, Diagnostics* diag = nullptr);

struct NoiseGrid {
  std::vector<double> mus;
  std::vector<double> sigmas;

  std::size_t size() const { return mus.size() * sigmas.size(); }
};

/// mu = 0.001 + 0.005 k up to 0.1 (20 values); sigma = 0.001 + 0.005 k up to 0.05 (10 values).
NoiseGrid default_noise_grid();

/// Per-entry seed from (base seed, mu index, sigma index).
std::uint64_t sweep_seed(std::uint64_t base, std::size_t mu_index, std::size_t sigma_index);

struct SweepEntry {
  NoiseParams params;
  std::size_t mu_index = 0;
  std::size_t sigma_index = 0;
  Angiogram noisy;
  /// Mean squared Raw255 intensity over the measurement region.
  double noise_intensity = 0.0;
};

/// Full Cartesian sweep over the grid (mu-major order).
std::vector<SweepEntry> noise_sweep(const Angiogram& denoised, const NoiseGrid& grid, std::uint64_t base_seed,
                                    const PixelRegion& region);

/// Denoising used before the sweep: Gabor enhancement then a 3x3 median; returns Unit scale.
Angiogram denoise_for_sweep(const Angiogram& raw, const GaborParams& gabor = {}, int median_window = 3);

/// splitmix64 step, used to derive independent seeds.
std::uint64_t mix_seed(std::uint64_t x);

}  // namespace harnet
