#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "harnet/image.hpp"

namespace harnet {

/**
 * Similarity transform about the image centre.
 *
 * Maps a point p = (x, y) = (col, row) of the fixed image to the moving image:
 *
 *   T(p) = s * R(theta) * (p - c) + c + (tx, ty)
 *
 * where c is the centre of the grid ((w-1)/2, (h-1)/2). A moving image is
 * aligned to the fixed grid by sampling moving(T(p)).
 */
struct SimilarityTransform {
  double tx = 0.0;
  double ty = 0.0;
  double theta = 0.0;
  double scale = 1.0;

  static SimilarityTransform identity() { return {}; }

  /// Point map for a grid with centre (cx, cy).
  std::pair<double, double> apply(double x, double y, double cx, double cy) const;
  SimilarityTransform inverse() const;
  /// (this ∘ other)(p) = this(other(p)); both transforms share the same centre.
  SimilarityTransform compose(const SimilarityTransform& other) const;
};

/// Resample `moving` on its own grid through `t` (bilinear). Samples falling
/// outside the moving image are 0 and reported false in `valid` when given.
Angiogram warp(const Angiogram& moving, const SimilarityTransform& t,
               std::vector<bool>* valid = nullptr);

/// Bicubic resize by an integer factor (a = -0.5 kernel, clamped edges).
/// Output pixel (r, c) samples source position (r / factor, c / factor), so
/// source nodes are reproduced exactly. Results are clamped to the scale range.
Angiogram bicubic_upsample(const Angiogram& img, int factor);

/// Keep every `factor`-th pixel starting at (0, 0).
Angiogram decimate(const Angiogram& img, int factor);

struct RegistrationOptions {
  int levels = 3;
  /// Largest translation (full-resolution pixels) scanned before the pattern search.
  double max_shift_px = 12.0;
  double min_overlap_fraction = 0.25;
  int max_evaluations_per_level = 4000;
};

struct RegistrationResult {
  SimilarityTransform transform;
  double objective = 0.0;
  double identity_objective = 0.0;
  bool converged = true;
};

/// Mean squared difference between fixed(p) and moving(T(p)) over the overlap.
/// Returns +inf when the overlap is smaller than `min_overlap_fraction`.
double registration_objective(const Angiogram& moving, const Angiogram& fixed,
                              const SimilarityTransform& t, double min_overlap_fraction = 0.25);

/// Coarse-to-fine intensity registration of `moving` onto `fixed`.
RegistrationResult register_images(const Angiogram& moving, const Angiogram& fixed,
                                   const RegistrationOptions& options = {});

/// Pixels of `fixed` whose transformed position lands inside `moving`.
PixelRegion overlap_region(const Angiogram& moving, const Angiogram& fixed,
                           const SimilarityTransform& t);

/// Largest axis-aligned rectangle inside the region. Ties go to the smaller
/// top, then the smaller left, then the smaller height.
Rect max_inscribed_rect(const PixelRegion& region);

// -- patches ------------------------------------------------------------------

struct PatchPair {
  std::vector<float> input;
  std::vector<float> target;
};

struct PatchSet {
  int patch_size = 38;
  int stride = 19;
  std::string source_id;
  std::vector<PatchPair> patches;
};

/// Top-left anchors along one axis: 0, stride, 2*stride, ... plus a final
/// far-edge anchor at dim - size when the regular grid leaves pixels uncovered.
std::vector<int> patch_anchors(int dim, int size, int stride);

PatchSet extract_patches(const Angiogram& input, const Angiogram& target, int size = 38,
                         int stride = 19);

/// Binary dataset file: "HPCH", u32 version, u32 count, u32 patch size, then
/// per pair the input patch followed by the target patch as little-endian f32.
void save_patch_set(const PatchSet& set, const std::filesystem::path& path);
PatchSet load_patch_set(const std::filesystem::path& path);

// -- augmentation ---------------------------------------------------------------

enum class Dihedral { Identity, FlipHorizontal, FlipVertical, Transpose, Rotate90 };

/// Rotate90 is counter-clockwise: out(r, c) = in(c, w - 1 - r).
Angiogram apply_dihedral(const Angiogram& img, Dihedral op);

/// [original, h-flip, v-flip, transpose, rot90], each applied to both members.
std::vector<std::pair<Angiogram, Angiogram>> augment(const std::pair<Angiogram, Angiogram>& pair);

}  // namespace harnet
