#include "harnet/baselines.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <numeric>
#include <random>

#include "harnet/metrics.hpp"

namespace harnet {

namespace {

int clampi(int v, int lo, int hi) { return v < lo ? lo : (v > hi ? hi : v); }

// 2-D correlation with a (2r+1)^2 kernel and clamped edges.
std::vector<double> correlate_clamped(const Angiogram& img, const std::vector<double>& kernel, int radius) {
  const int h = img.height(), w = img.width();
  const int k = 2 * radius + 1;
  std::vector<double> out(img.size(), 0.0);
  const auto px = img.pixels();
  std::vector<int> col_index(static_cast<std::size_t>(w + 2 * radius));
  for (int c = -radius; c < w + radius; ++c) col_index[c + radius] = clampi(c, 0, w - 1);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const double* row = px.data() + static_cast<std::size_t>(clampi(r + dy, 0, h - 1)) * w;
        const double* kr = kernel.data() + static_cast<std::size_t>(dy + radius) * k;
        const int* ci = col_index.data() + c;
        for (int j = 0; j < k; ++j) acc += kr[j] * row[ci[j]];
      }
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

// Separable pass: horizontal kernel kx then vertical kernel ky, clamped edges.
std::vector<double> separable_clamped(std::span<const double> px, int h, int w, const std::vector<double>& kx,
                                      const std::vector<double>& ky) {
  const int rx = static_cast<int>(kx.size() / 2);
  const int ry = static_cast<int>(ky.size() / 2);
  std::vector<double> tmp(px.size()), out(px.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -rx; j <= rx; ++j) acc += kx[j + rx] * px[static_cast<std::size_t>(r) * w + clampi(c + j, 0, w - 1)];
      tmp[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double acc = 0.0;
      for (int j = -ry; j <= ry; ++j) acc += ky[j + ry] * tmp[static_cast<std::size_t>(clampi(r + j, 0, h - 1)) * w + c];
      out[static_cast<std::size_t>(r) * w + c] = acc;
    }
  }
  return out;
}

std::vector<double> gaussian_1d(double sigma, int radius) {
  std::vector<double> g(2 * radius + 1);
  double s = 0.0;
  for (int i = -radius; i <= radius; ++i) {
    g[i + radius] = std::exp(-0.5 * i * i / (sigma * sigma));
    s += g[i + radius];
  }
  for (double& v : g) v /= s;
  return g;
}

Angiogram rescale_to_255(const Angiogram& img, std::vector<double> values, double peak) {
  for (double& v : values) v = std::clamp(v / peak * 255.0, 0.0, 255.0);
  return img.with_pixels(std::move(values), IntensityScale::Raw255);
}

}  // namespace

std::uint64_t mix_seed(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ull;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ull;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBull;
  return x ^ (x >> 31);
}

// -- Gabor -----------------------------------------------------------------------

std::vector<double> gabor_kernel(const GaborParams& p, double line_angle, int& radius) {
  radius = static_cast<int>(std::ceil(3.0 * std::max(p.sigma_px, p.sigma_px / p.aspect)));
  const int k = 2 * radius + 1;
  std::vector<double> kernel(static_cast<std::size_t>(k) * k);
  const double cs = std::cos(line_angle), sn = std::sin(line_angle);
  double mean = 0.0;
  for (int y = -radius; y <= radius; ++y) {
    for (int x = -radius; x <= radius; ++x) {
      const double across = -x * sn + y * cs;
      const double along = x * cs + y * sn;
      const double env = std::exp(-(across * across + p.aspect * p.aspect * along * along) / (2 * p.sigma_px * p.sigma_px));
      const double v = env * std::cos(2 * std::numbers::pi * across / p.wavelength_px);
      kernel[static_cast<std::size_t>(y + radius) * k + (x + radius)] = v;
      mean += v;
    }
  }
  mean /= static_cast<double>(kernel.size());
  // Zero mean (flat regions give no response), then unit L1 norm.
  double l1 = 0.0;
  for (double& v : kernel) {
    v -= mean;
    l1 += std::abs(v);
  }
  for (double& v : kernel) v /= l1;
  return kernel;
}

std::vector<std::vector<double>> gabor_bank_responses(const Angiogram& img, const GaborParams& params) {
  if (params.orientations < 1) throw usage_error("gabor: orientations must be >= 1");
  std::vector<std::vector<double>> out;
  for (int o = 0; o < params.orientations; ++o) {
    const double angle = std::numbers::pi * o / params.orientations;
    int radius = 0;
    const auto kernel = gabor_kernel(params, angle, radius);
    out.push_back(correlate_clamped(img, kernel, radius));
  }
  return out;
}

Angiogram gabor_enhance(const Angiogram& img, const GaborParams& params, Diagnostics* diag) {
  const auto bank = gabor_bank_responses(img, params);
  std::vector<double> best(img.size(), -std::numeric_limits<double>::infinity());
  for (const auto& resp : bank) {
    for (std::size_t i = 0; i < best.size(); ++i) best[i] = std::max(best[i], resp[i]);
  }
  double peak = 0.0;
  for (double& v : best) {
    v = std::max(v, 0.0);
    peak = std::max(peak, v);
  }
  if (!(peak > 1e-12)) {
    warn_if(diag, "gabor_enhance: flat response on '" + img.id() + "', output set to zero");
    return img.with_pixels(std::vector<double>(img.size(), 0.0), IntensityScale::Raw255);
  }
  return rescale_to_255(img, std::move(best), peak);
}

// -- Frangi ----------------------------------------------------------------------

std::vector<double> frangi_response(const Angiogram& img, const FrangiParams& params) {
  const int h = img.height(), w = img.width();
  std::vector<double> best(img.size(), 0.0);
  for (double sigma : params.scales_px) {
    const int radius = static_cast<int>(std::ceil(3.0 * sigma));
    const auto g = gaussian_1d(sigma, radius);
    std::vector<double> g1(g.size()), g2(g.size());
    for (int i = -radius; i <= radius; ++i) {
      const double x = i;
      g1[i + radius] = -x / (sigma * sigma) * g[i + radius];
      g2[i + radius] = (x * x / (sigma * sigma) - 1.0) / (sigma * sigma) * g[i + radius];
    }
    // Sampled second-derivative kernel: remove its DC term so flat regions give zero curvature.
    const double dc = std::accumulate(g2.begin(), g2.end(), 0.0) / static_cast<double>(g2.size());
    for (double& v : g2) v -= dc;
    const double norm = sigma * sigma;
    // Note: separable_clamped applies kx along columns (x) and ky along rows (y).
    auto dxx = separable_clamped(img.pixels(), h, w, g2, g);
    auto dyy = separable_clamped(img.pixels(), h, w, g, g2);
    auto dxy = separable_clamped(img.pixels(), h, w, g1, g1);
    std::vector<double> l1(img.size()), l2(img.size());
    double max_norm = 0.0;
    for (std::size_t i = 0; i < best.size(); ++i) {
      const double a = norm * dxx[i], b = norm * dxy[i], d = norm * dyy[i];
      const double tmp = std::sqrt((a - d) * (a - d) + 4 * b * b);
      double mu1 = 0.5 * (a + d + tmp), mu2 = 0.5 * (a + d - tmp);
      if (std::abs(mu1) > std::abs(mu2)) std::swap(mu1, mu2);
      l1[i] = mu1;
      l2[i] = mu2;
      max_norm = std::max(max_norm, std::sqrt(mu1 * mu1 + mu2 * mu2));
    }
    // Hessians at round-off level (flat input) carry no structure; c is relative and would amplify them.
    if (!(max_norm > 1e-9)) continue;
    const double c = params.c_fraction * max_norm;
    for (std::size_t i = 0; i < best.size(); ++i) {
      if (l2[i] >= 0.0) continue;  // bright tubes have strongly negative cross-curvature
      const double rb = l1[i] / l2[i];
      const double s2 = l1[i] * l1[i] + l2[i] * l2[i];
      const double v = std::exp(-rb * rb / (2 * params.beta * params.beta)) * (1.0 - std::exp(-s2 / (2 * c * c)));
      best[i] = std::max(best[i], v);
    }
  }
  return best;
}

Angiogram frangi_vesselness(const Angiogram& img, const FrangiParams& params) {
  auto v = frangi_response(img, params);
  const double peak = *std::max_element(v.begin(), v.end());
  if (!(peak > 0.0)) return img.with_pixels(std::vector<double>(img.size(), 0.0), IntensityScale::Raw255);
  return rescale_to_255(img, std::move(v), peak);
}

// -- smoothing filters -------------------------------------------------------------

Angiogram gaussian_blur(const Angiogram& img, double sigma_px) {
  if (!(sigma_px > 0.0)) return img;
  const int radius = static_cast<int>(std::ceil(3.0 * sigma_px));
  const auto g = gaussian_1d(sigma_px, radius);
  return img.with_pixels(clamp_to_scale(separable_clamped(img.pixels(), img.height(), img.width(), g, g), img.scale()));
}

Angiogram bilateral(const Angiogram& img, double spatial_sigma, double range_sigma) {
  if (!(spatial_sigma > 0.0) || !(range_sigma > 0.0)) throw usage_error("bilateral: sigmas must be positive");
  const int h = img.height(), w = img.width();
  const int radius = static_cast<int>(std::ceil(3.0 * spatial_sigma));
  const int k = 2 * radius + 1;
  std::vector<double> spatial(static_cast<std::size_t>(k) * k);
  for (int dy = -radius; dy <= radius; ++dy) {
    for (int dx = -radius; dx <= radius; ++dx) {
      spatial[static_cast<std::size_t>(dy + radius) * k + dx + radius] =
          std::exp(-0.5 * (dx * dx + dy * dy) / (spatial_sigma * spatial_sigma));
    }
  }
  const bool finite_range = std::isfinite(range_sigma);
  const double inv_range = finite_range ? 1.0 / (2.0 * range_sigma * range_sigma) : 0.0;
  std::vector<double> out(img.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const double center = img.at(r, c);
      double acc = 0.0, norm = 0.0;
      for (int dy = -radius; dy <= radius; ++dy) {
        const int rr = clampi(r + dy, 0, h - 1);
        for (int dx = -radius; dx <= radius; ++dx) {
          const double v = img.at(rr, clampi(c + dx, 0, w - 1));
          double wgt = spatial[static_cast<std::size_t>(dy + radius) * k + dx + radius];
          if (finite_range) wgt *= std::exp(-(v - center) * (v - center) * inv_range);
          acc += wgt * v;
          norm += wgt;
        }
      }
      out[static_cast<std::size_t>(r) * w + c] = acc / norm;
    }
  }
  return img.with_pixels(clamp_to_scale(std::move(out), img.scale()));
}

Angiogram median_filter(const Angiogram& img, int window) {
  if (window < 1 || window % 2 == 0) throw usage_error("median_filter: window must be odd and positive");
  const int h = img.height(), w = img.width();
  const int radius = window / 2;
  std::vector<double> out(img.size()), buf(static_cast<std::size_t>(window) * window);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      std::size_t n = 0;
      for (int dy = -radius; dy <= radius; ++dy) {
        for (int dx = -radius; dx <= radius; ++dx) buf[n++] = img.at(clampi(r + dy, 0, h - 1), clampi(c + dx, 0, w - 1));
      }
      std::nth_element(buf.begin(), buf.begin() + n / 2, buf.end());
      out[static_cast<std::size_t>(r) * w + c] = buf[n / 2];
    }
  }
  return img.with_pixels(std::move(out));
}

// -- noise ---------------------------------------------------------------------------

Angiogram add_gaussian_noise(const Angiogram& img, const NoiseParams& p, Diagnostics* diag) {
  if (img.scale() != IntensityScale::Unit) throw data_error("add_gaussian_noise expects a Unit-scale image");
  if (!(p.sigma >= 0.0) || !std::isfinite(p.mu)) throw usage_error("noise sigma must be non-negative and mu finite");
  constexpr double eps = 1e-12;
  if (p.mu < 0.001 - eps || p.mu > 0.1 + eps) warn_if(diag, "noise mu outside sweep range [0.001, 0.1]");
  if (p.sigma < 0.001 - eps || p.sigma > 0.05 + eps) warn_if(diag, "noise sigma outside sweep range [0.001, 0.05]");
  std::vector<double> out(img.pixels().begin(), img.pixels().end());
  if (p.sigma == 0.0) {
    for (double& v : out) v = std::clamp(v + p.mu, 0.0, 1.0);
  } else {
    std::mt19937_64 rng(p.seed);
    std::normal_distribution<double> dist(p.mu, p.sigma);
    for (double& v : out) v = std::clamp(v + dist(rng), 0.0, 1.0);
  }
  return img.with_pixels(std::move(out));
}

NoiseGrid default_noise_grid() {
  NoiseGrid grid;
  constexpr double tol = 1e-12;
  for (int k = 0;; ++k) {
    const double mu = 0.001 + 0.005 * k;
    if (mu > 0.1 + tol) break;
    grid.mus.push_back(mu);
  }
  for (int k = 0;; ++k) {
    const double sigma = 0.001 + 0.005 * k;
    if (sigma > 0.05 + tol) break;
    grid.sigmas.push_back(sigma);
  }
  return grid;
}

std::uint64_t sweep_seed(std::uint64_t base, std::size_t mu_index, std::size_t sigma_index) {
  return mix_seed(mix_seed(mix_seed(base) ^ (mu_index + 1)) ^ ((sigma_index + 1) << 20));
}

std::vector<SweepEntry> noise_sweep(const Angiogram& denoised, const NoiseGrid& grid, std::uint64_t base_seed,
                                    const PixelRegion& region) {
  std::vector<SweepEntry> entries;
  entries.reserve(grid.size());
  for (std::size_t i = 0; i < grid.mus.size(); ++i) {
    for (std::size_t j = 0; j < grid.sigmas.size(); ++j) {
      NoiseParams p{grid.mus[i], grid.sigmas[j], sweep_seed(base_seed, i, j)};
      Angiogram noisy = add_gaussian_noise(denoised, p);
      const double intensity = noise_intensity(to_raw255(noisy), region);
      entries.push_back({p, i, j, std::move(noisy), intensity});
    }
  }
  return entries;
}

Angiogram denoise_for_sweep(const Angiogram& raw, const GaborParams& gabor, int median_window) {
  const Angiogram enhanced = gabor_enhance(to_raw255(raw), gabor);
  return to_unit(median_filter(enhanced, median_window));
}

}  // namespace harnet
