#pragma once

#include <optional>
#include <string>
#include <vector>

#include "harnet/image.hpp"

namespace harnet {

/// Binary raster, row-major, 0 or 1 per pixel.
struct BinaryGrid {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> cells;

  bool at(int r, int c) const { return cells[static_cast<std::size_t>(r) * width + c] != 0; }
  std::size_t count() const;
};

struct SkeletonMap {
  BinaryGrid grid;
  /// Maximal 8-connected components, each a list of row-major indices.
  std::vector<std::vector<int>> components;
};

struct MetricsReport {
  std::string id;
  double noise_intensity = 0.0;
  double contrast_rms = 0.0;
  double connectivity = 0.0;
  std::optional<double> false_flow_intensity;
  /// Region provenance: centre and diameter of the FAZ disc.
  int region_row = 0;
  int region_col = 0;
  double region_diameter_mm = 0.0;

  /// "id=... noise_intensity=... ..." single-line record.
  std::string to_record() const;
  static MetricsReport from_record(const std::string& line);
};

/// Mean of squared intensities over the region (Raw255 image).
double noise_intensity(const Angiogram& img, const PixelRegion& region);

/// Same formula evaluated on a reconstruction over a flow-free region.
double false_flow_intensity(const Angiogram& img, const PixelRegion& region);

/// Population standard deviation of all pixels (Raw255 image).
double rms_contrast(const Angiogram& img);

/// 256-bin histogram code of a Raw255 value: round(v) clamped to [0, 255].
int histogram_bin(double value);

/// Otsu threshold t over the 256-bin histogram: foreground is bin > t.
/// Maximises between-class variance exactly (integer arithmetic); ties go to
/// the lowest t. Throws on images occupying a single bin.
int otsu_threshold(const Angiogram& img);

BinaryGrid binarize(const Angiogram& img, int threshold);

/// Two-subiteration boundary peeling (Zhang-Suen) until no pixel is removable.
SkeletonMap skeletonize(const BinaryGrid& binary);

/// Maximal 8-connected components of the foreground.
std::vector<std::vector<int>> label_components(const BinaryGrid& grid);

/// Fraction of skeleton pixels that belong to components of at least `min_component` pixels.
/// An empty skeleton yields 0 with a warning.
double skeleton_connectivity(const SkeletonMap& skeleton, int min_component = 5, Diagnostics* diag = nullptr);

/// Otsu binarization, skeletonization, then skeleton_connectivity.
double connectivity(const Angiogram& img, Diagnostics* diag = nullptr);

struct MetricOptions {
  double region_diameter_mm = 0.3;
  /// FAZ centre; the image centre when unset.
  std::optional<PixelRegion::Pixel> center;
  int min_component = 5;
};

/// All three quality metrics on one image. Unit images are rescaled by 255 first.
MetricsReport evaluate_image(const Angiogram& img, const MetricOptions& options = {}, Diagnostics* diag = nullptr);

}  // namespace harnet
