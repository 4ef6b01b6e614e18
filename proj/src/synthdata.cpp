#include "harnet/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <cstdio>
#include <random>

#include "harnet/baselines.hpp"
#include "harnet/preprocess.hpp"

namespace harnet {

void VesselTreeSpec::validate() const {
  if (branch_depth < 1 || !(branch_angle_jitter_deg >= 0.0) || !(vessel_sigma_px > 0.0) ||
      !(capillary_density >= 0.0) || !(faz_diameter_mm > 0.0)) {
    throw usage_error("vessel tree spec values must be positive");
  }
}

namespace {

struct Canvas {
  int size;
  std::vector<double> v;

  // Gaussian-profile segment, combined with max.
  void segment(double x0, double y0, double x1, double y1, double sigma, double amp) {
    const double reach = 3.0 * sigma + 1.0;
    const int cmin = std::max(0, static_cast<int>(std::floor(std::min(x0, x1) - reach)));
    const int cmax = std::min(size - 1, static_cast<int>(std::ceil(std::max(x0, x1) + reach)));
    const int rmin = std::max(0, static_cast<int>(std::floor(std::min(y0, y1) - reach)));
    const int rmax = std::min(size - 1, static_cast<int>(std::ceil(std::max(y0, y1) + reach)));
    const double dx = x1 - x0, dy = y1 - y0;
    const double len2 = dx * dx + dy * dy;
    for (int r = rmin; r <= rmax; ++r) {
      for (int c = cmin; c <= cmax; ++c) {
        double t = len2 > 0 ? ((c - x0) * dx + (r - y0) * dy) / len2 : 0.0;
        t = std::clamp(t, 0.0, 1.0);
        const double ex = x0 + t * dx - c, ey = y0 + t * dy - r;
        const double val = amp * std::exp(-(ex * ex + ey * ey) / (2 * sigma * sigma));
        double& dst = v[static_cast<std::size_t>(r) * size + c];
        dst = std::max(dst, val);
      }
    }
  }
};

struct TreeGrower {
  Canvas& canvas;
  std::mt19937_64& rng;
  const VesselTreeSpec& spec;

  void grow(double x, double y, double angle, double length, double width, int depth) {
    if (depth > spec.branch_depth || length < 2.0) return;
    std::normal_distribution<double> wobble(0.0, 0.12);
    // Each branch is drawn as three slightly bending pieces.
    double cx = x, cy = y, a = angle;
    for (int piece = 0; piece < 3; ++piece) {
      a += wobble(rng);
      const double nx = cx + std::cos(a) * length / 3.0;
      const double ny = cy + std::sin(a) * length / 3.0;
      canvas.segment(cx, cy, nx, ny, spec.vessel_sigma_px * width, std::min(1.0, 0.55 + 0.45 * width));
      cx = nx;
      cy = ny;
    }
    const double n = canvas.size;
    if (cx < -0.1 * n || cy < -0.1 * n || cx > 1.1 * n || cy > 1.1 * n) return;
    std::uniform_real_distribution<double> jitter(-spec.branch_angle_jitter_deg, spec.branch_angle_jitter_deg);
    constexpr double deg = std::numbers::pi / 180.0;
    const double child_width = width * std::pow(2.0, -1.0 / 3.0);  // Murray's law for equal daughters
    grow(cx, cy, a + (28.0 + jitter(rng)) * deg, length * 0.78, child_width, depth + 1);
    grow(cx, cy, a - (28.0 + jitter(rng)) * deg, length * 0.78, child_width, depth + 1);
  }
};

}  // namespace

Angiogram render_vessel_tree(const VesselTreeSpec& spec, double fov_mm, int size_px, const std::string& id) {
  spec.validate();
  if (size_px < 8) throw usage_error("synthetic images must be at least 8 px");
  Canvas canvas{size_px, std::vector<double>(static_cast<std::size_t>(size_px) * size_px, 0.0)};
  std::mt19937_64 rng(mix_seed(spec.seed));
  const double n = size_px;
  const double centre = (n - 1) / 2.0;

  // Trunks enter from the border and head roughly towards the centre.
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int trunks = 5;
  const double phase = unit(rng) * 2 * std::numbers::pi;
  TreeGrower grower{canvas, rng, spec};
  for (int k = 0; k < trunks; ++k) {
    const double around = phase + 2 * std::numbers::pi * (k + 0.3 * (unit(rng) - 0.5)) / trunks;
    const double sx = centre + 0.62 * n * std::cos(around);
    const double sy = centre + 0.62 * n * std::sin(around);
    const double heading = around + std::numbers::pi + (unit(rng) - 0.5) * 0.6;
    grower.grow(sx, sy, heading, 0.34 * n, 1.0, 1);
  }

  // Capillaries: short bending walks that start on or near existing vessels.
  const int capillaries = static_cast<int>(std::round(spec.capillary_density * n * n / 100.0));
  std::normal_distribution<double> turn(0.0, 0.35);
  for (int k = 0; k < capillaries; ++k) {
    double x = unit(rng) * (n - 1), y = unit(rng) * (n - 1);
    double a = unit(rng) * 2 * std::numbers::pi;
    const int steps = 4 + static_cast<int>(unit(rng) * 5);
    for (int s = 0; s < steps; ++s) {
      a += turn(rng);
      const double nx = x + 3.0 * std::cos(a), ny = y + 3.0 * std::sin(a);
      canvas.segment(x, y, nx, ny, 0.55 * spec.vessel_sigma_px, 0.45);
      x = nx;
      y = ny;
    }
  }

  // Flow-free FAZ disc.
  const double faz_radius = (spec.faz_diameter_mm / 2.0) / (fov_mm / n);
  const int ci = size_px / 2;
  for (int r = 0; r < size_px; ++r) {
    for (int c = 0; c < size_px; ++c) {
      const double dr = r - ci, dc = c - ci;
      if (dr * dr + dc * dc <= faz_radius * faz_radius) canvas.v[static_cast<std::size_t>(r) * size_px + c] = 0.0;
    }
  }

  std::vector<double> px(canvas.v.size());
  for (std::size_t i = 0; i < px.size(); ++i) px[i] = std::clamp(std::round(canvas.v[i] * 255.0), 0.0, 255.0);
  return Angiogram(size_px, size_px, std::move(px), IntensityScale::Raw255, fov_mm, id);
}

Angiogram degrade(const Angiogram& clean, const DegradationParams& params, std::uint64_t noise_seed) {
  if (params.factor < 1 || clean.height() % params.factor != 0 || clean.width() % params.factor != 0) {
    throw usage_error("image size must be divisible by the degradation factor");
  }
  Angiogram unit = to_unit(clean);
  Angiogram resampled = bicubic_upsample(decimate(unit, params.factor), params.factor);
  Angiogram blurred = gaussian_blur(resampled, params.blur_sigma_px);
  std::vector<double> px(blurred.pixels().begin(), blurred.pixels().end());
  if (params.noise_sigma > 0.0) {
    std::mt19937_64 rng(noise_seed);
    std::normal_distribution<double> noise(0.0, params.noise_sigma);
    for (double& v : px) v += noise(rng);
  }
  for (double& v : px) v = std::clamp(std::round(v * 255.0), 0.0, 255.0);
  return Angiogram(clean.height(), clean.width(), std::move(px), IntensityScale::Raw255, clean.fov_mm(), clean.id());
}

SyntheticPair generate_pair(const VesselTreeSpec& spec, double fov_mm, int size_px, const DegradationParams& degradation) {
  const std::string base = "synth_" + std::to_string(spec.seed);
  Angiogram clean = render_vessel_tree(spec, fov_mm, size_px, base + "_clean");
  Angiogram degraded = degrade(clean, degradation, mix_seed(spec.seed ^ 0xD1B54A32D192ED03ull)).with_id(base + "_degraded");
  return {std::move(clean), std::move(degraded)};
}

std::uint64_t pair_seed(std::uint64_t master_seed, std::size_t index) { return mix_seed(master_seed + 0x1000 * (index + 1)); }

KeyValueDoc CorpusManifest::to_doc() const {
  KeyValueDoc doc;
  auto& top = doc.section("");
  top.set("format", "harnet-corpus");
  top.set("version", "1");
  top.set("count", std::to_string(entries.size()));
  top.set("fov_mm", format_double(fov_mm));
  top.set("size_px", std::to_string(size_px));
  top.set("aligned", aligned ? "1" : "0");
  auto& tree = doc.add_section("tree");
  tree.set("master_seed", std::to_string(spec.seed));
  tree.set("branch_depth", std::to_string(spec.branch_depth));
  tree.set("branch_angle_jitter_deg", format_double(spec.branch_angle_jitter_deg));
  tree.set("vessel_sigma_px", format_double(spec.vessel_sigma_px));
  tree.set("capillary_density", format_double(spec.capillary_density));
  tree.set("faz_diameter_mm", format_double(spec.faz_diameter_mm));
  auto& deg = doc.add_section("degradation");
  deg.set("factor", std::to_string(degradation.factor));
  deg.set("blur_sigma_px", format_double(degradation.blur_sigma_px));
  deg.set("noise_sigma", format_double(degradation.noise_sigma));
  for (const auto& e : entries) {
    auto& s = doc.add_section("pair");
    s.set("id", e.id);
    s.set("seed", std::to_string(e.seed));
    s.set("clean", e.clean_file);
    s.set("degraded", e.degraded_file);
  }
  return doc;
}

CorpusManifest CorpusManifest::from_doc(const KeyValueDoc& doc) {
  CorpusManifest m;
  const auto& top = doc.sections().front();
  if (top.require("format") != "harnet-corpus") throw data_error("not a corpus manifest");
  m.fov_mm = parse_double(top.require("fov_mm"), "fov_mm");
  m.size_px = static_cast<int>(parse_int(top.require("size_px"), "size_px"));
  m.aligned = parse_bool(top.require("aligned"), "aligned");
  const auto* tree = doc.find_section("tree");
  const auto* deg = doc.find_section("degradation");
  if (tree == nullptr || deg == nullptr) throw data_error("manifest lacks [tree] or [degradation]");
  m.spec.seed = static_cast<std::uint64_t>(std::stoull(tree->require("master_seed")));
  m.spec.branch_depth = static_cast<int>(parse_int(tree->require("branch_depth"), "branch_depth"));
  m.spec.branch_angle_jitter_deg = parse_double(tree->require("branch_angle_jitter_deg"), "branch_angle_jitter_deg");
  m.spec.vessel_sigma_px = parse_double(tree->require("vessel_sigma_px"), "vessel_sigma_px");
  m.spec.capillary_density = parse_double(tree->require("capillary_density"), "capillary_density");
  m.spec.faz_diameter_mm = parse_double(tree->require("faz_diameter_mm"), "faz_diameter_mm");
  m.degradation.factor = static_cast<int>(parse_int(deg->require("factor"), "factor"));
  m.degradation.blur_sigma_px = parse_double(deg->require("blur_sigma_px"), "blur_sigma_px");
  m.degradation.noise_sigma = parse_double(deg->require("noise_sigma"), "noise_sigma");
  for (const auto* s : doc.sections_named("pair")) {
    m.entries.push_back({s->require("id"), static_cast<std::uint64_t>(std::stoull(s->require("seed"))),
                         s->require("clean"), s->require("degraded")});
  }
  const auto count = parse_int(top.require("count"), "count");
  if (count != static_cast<long long>(m.entries.size())) throw data_error("manifest count does not match pair list");
  return m;
}

namespace {

void prepare_dir(const std::filesystem::path& dir) {
  namespace fs = std::filesystem;
  if (fs::is_directory(dir)) return;
  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw data_error("cannot create " + dir.string() + ": parent directory missing");
  std::error_code ec;
  fs::create_directory(dir, ec);
  if (ec) throw data_error("cannot create directory " + dir.string() + ": " + ec.message());
}

void write_pair(const CorpusManifest& m, const CorpusEntry& e, const std::filesystem::path& dir) {
  VesselTreeSpec spec = m.spec;
  spec.seed = e.seed;
  auto pair = generate_pair(spec, m.fov_mm, m.size_px, m.degradation);
  save_image(pair.clean.with_id(e.id + "_clean"), dir / e.clean_file);
  save_image(pair.degraded.with_id(e.id + "_degraded"), dir / e.degraded_file);
}

}  // namespace

CorpusManifest make_corpus(std::size_t n, const VesselTreeSpec& spec, const std::filesystem::path& out_dir,
                           const CorpusOptions& options) {
  spec.validate();
  prepare_dir(out_dir);
  CorpusManifest m;
  m.spec = spec;
  m.degradation = options.degradation;
  m.fov_mm = options.fov_mm;
  m.size_px = options.size_px;
  for (std::size_t i = 0; i < n; ++i) {
    char name[32];
    std::snprintf(name, sizeof(name), "pair_%04zu", i);
    const std::string id = name;
    m.entries.push_back({id, pair_seed(spec.seed, i), id + "_clean.png", id + "_degraded.png"});
  }
  regenerate_corpus(m, out_dir);
  return m;
}

void regenerate_corpus(const CorpusManifest& manifest, const std::filesystem::path& out_dir) {
  prepare_dir(out_dir);
  for (const auto& e : manifest.entries) write_pair(manifest, e, out_dir);
  write_file_atomic(out_dir / kManifestName, manifest.to_doc().serialize());
}

CorpusManifest load_manifest(const std::filesystem::path& corpus_dir) {
  const auto path = std::filesystem::is_directory(corpus_dir) ? corpus_dir / kManifestName : corpus_dir;
  if (!std::filesystem::exists(path)) throw data_error("corpus manifest not found: " + path.string());
  return CorpusManifest::from_doc(KeyValueDoc::load(path));
}

}  // namespace harnet
