#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "harnet/image.hpp"
#include "harnet/keyvalue.hpp"

namespace harnet {

struct VesselTreeSpec {
  std::uint64_t seed = 1;
  int branch_depth = 5;
  double branch_angle_jitter_deg = 20.0;
  double vessel_sigma_px = 1.1;
  /// Capillary segments per 100 square pixels.
  double capillary_density = 0.35;
  double faz_diameter_mm = 0.6;

  void validate() const;
};

/// Undersampling model applied to the clean rendering.
struct DegradationParams {
  int factor = 2;
  double blur_sigma_px = 0.6;
  double noise_sigma = 0.06;
};

struct SyntheticPair {
  Angiogram clean;
  Angiogram degraded;
};

/// Clean vessel tree with a flow-free FAZ disc at the centre, rendered with
/// Gaussian cross-sections and quantized to Raw255.
Angiogram render_vessel_tree(const VesselTreeSpec& spec, double fov_mm, int size_px, const std::string& id = {});

/// Decimate, bicubic-upsample back, blur, add noise, quantize. Geometry stays on the clean grid.
Angiogram degrade(const Angiogram& clean, const DegradationParams& params, std::uint64_t noise_seed);

SyntheticPair generate_pair(const VesselTreeSpec& spec, double fov_mm, int size_px,
                            const DegradationParams& degradation = {});

struct CorpusEntry {
  std::string id;
  std::uint64_t seed = 0;
  std::string clean_file;
  std::string degraded_file;
};

struct CorpusManifest {
  VesselTreeSpec spec;
  DegradationParams degradation;
  double fov_mm = 3.0;
  int size_px = 128;
  /// Pairs share one pixel grid; consumers may skip registration.
  bool aligned = true;
  std::vector<CorpusEntry> entries;

  KeyValueDoc to_doc() const;
  static CorpusManifest from_doc(const KeyValueDoc& doc);
};

struct CorpusOptions {
  double fov_mm = 3.0;
  int size_px = 128;
  DegradationParams degradation;
};

inline constexpr const char* kManifestName = "manifest.txt";

/// Per-pair tree seed derived from the master seed.
std::uint64_t pair_seed(std::uint64_t master_seed, std::size_t index);

/// Write n pairs and manifest.txt into out_dir (created if its parent exists).
CorpusManifest make_corpus(std::size_t n, const VesselTreeSpec& spec, const std::filesystem::path& out_dir,
                           const CorpusOptions& options = {});

CorpusManifest load_manifest(const std::filesystem::path& corpus_dir);

/// Re-render every pair listed in a manifest into out_dir.
void regenerate_corpus(const CorpusManifest& manifest, const std::filesystem::path& out_dir);

}  // namespace harnet
