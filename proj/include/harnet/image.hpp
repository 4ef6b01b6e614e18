#pragma once

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "harnet/error.hpp"

namespace harnet {

enum class IntensityScale { Raw255, Unit };

const char* to_string(IntensityScale scale);
IntensityScale parse_intensity_scale(const std::string& text);

/// Upper bound of the value range for a scale: 255 for Raw255, 1 for Unit.
double scale_max(IntensityScale scale);

/// Axis-aligned pixel rectangle.
struct Rect {
  int top = 0;
  int left = 0;
  int height = 0;
  int width = 0;

  long long area() const { return static_cast<long long>(height) * width; }
  bool operator==(const Rect&) const = default;
};

/**
 * A 2-D en-face angiogram.
 *
 * Pixels are stored row-major (index = row * width + col) as doubles. The
 * object is immutable after construction; every transformation returns a new
 * image. Construction validates that all values lie inside the declared
 * intensity range and that the field of view is positive.
 */
class Angiogram {
 public:
  Angiogram(int height, int width, std::vector<double> pixels, IntensityScale scale,
            double fov_mm, std::string id = {});

  /// Same metadata, new pixel buffer of the same dimensions.
  Angiogram with_pixels(std::vector<double> pixels) const;
  /// Same metadata and pixel buffer, new intensity scale (values must already fit).
  Angiogram with_pixels(std::vector<double> pixels, IntensityScale scale) const;
  Angiogram with_id(std::string id) const;

  int height() const { return height_; }
  int width() const { return width_; }
  std::size_t size() const { return pixels_.size(); }
  double at(int row, int col) const { return pixels_[static_cast<std::size_t>(row) * width_ + col]; }
  std::span<const double> pixels() const& { return pixels_; }
  std::span<const double> pixels() const&& = delete;
  IntensityScale scale() const { return scale_; }
  double fov_mm() const { return fov_mm_; }
  const std::string& id() const { return id_; }

  /// Physical pixel pitch; width-based by convention.
  double mm_per_pixel() const { return fov_mm_ / width_; }
  bool is_square() const { return height_ == width_; }

 private:
  int height_;
  int width_;
  std::vector<double> pixels_;
  IntensityScale scale_;
  double fov_mm_;
  std::string id_;
};

/// A set of in-bounds pixel coordinates on a host image grid.
class PixelRegion {
 public:
  struct Pixel {
    int row;
    int col;
    bool operator==(const Pixel&) const = default;
  };

  PixelRegion(int host_height, int host_width, std::vector<Pixel> pixels);

  /// Region from a row-major boolean mask of the host dimensions.
  static PixelRegion from_mask(int host_height, int host_width, const std::vector<bool>& mask);

  std::span<const Pixel> pixels() const& { return pixels_; }
  std::span<const Pixel> pixels() const&& = delete;
  std::size_t pixel_count() const { return pixels_.size(); }
  int host_height() const { return host_height_; }
  int host_width() const { return host_width_; }
  std::vector<bool> to_mask() const;

 private:
  int host_height_;
  int host_width_;
  std::vector<Pixel> pixels_;
};

/// Min-max normalization to [0,1]. A constant image yields zeros and a warning.
Angiogram normalize_unit(const Angiogram& img, Diagnostics* diag = nullptr);

/// Unit -> Raw255 by multiplying by 255 (no rounding). Raw255 input is returned as is.
Angiogram to_raw255(const Angiogram& img);
/// Raw255 -> Unit by dividing by 255 (no re-ranging). Unit input is returned as is.
Angiogram to_unit(const Angiogram& img);

/// Pixels whose centre lies within (diameter_mm / 2) / mm_per_pixel of `center`.
/// Throws if the disc crosses an image edge.
PixelRegion circular_region(const Angiogram& img, PixelRegion::Pixel center, double diameter_mm);

/// Geometric centre pixel (h/2, w/2), the default FAZ location.
PixelRegion::Pixel image_center(const Angiogram& img);

Angiogram crop(const Angiogram& img, const Rect& rect);

/// Clamp every pixel to the range of the image's declared scale.
std::vector<double> clamp_to_scale(std::vector<double> pixels, IntensityScale scale);

// -- file I/O ---------------------------------------------------------------
//
// Rasters are 8-bit single-channel PNG or binary PGM (P5), chosen by file
// extension. Metadata (id, fov_mm, intensity_scale) lives in a sidecar text
// file at "<path>.meta" with one key=value pair per line.

std::filesystem::path sidecar_path(const std::filesystem::path& image_path);

Angiogram load_image(const std::filesystem::path& path);
void save_image(const Angiogram& img, const std::filesystem::path& path);

/// Quantize to the 8-bit code stored on disk: round(v) for Raw255, round(v * 255) for Unit.
std::vector<unsigned char> quantize_8bit(const Angiogram& img);

}  // namespace harnet
