#include "harnet/preprocess.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numbers>
#include <sstream>

#include "binary_io.hpp"
#include "harnet/keyvalue.hpp"

namespace harnet {

// -- similarity transform -------------------------------------------------------

std::pair<double, double> SimilarityTransform::apply(double x, double y, double cx, double cy) const {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  const double dx = x - cx;
  const double dy = y - cy;
  return {scale * (c * dx - s * dy) + cx + tx, scale * (s * dx + c * dy) + cy + ty};
}

SimilarityTransform SimilarityTransform::inverse() const {
  const double c = std::cos(-theta);
  const double s = std::sin(-theta);
  const double inv = 1.0 / scale;
  return {-inv * (c * tx - s * ty), -inv * (s * tx + c * ty), -theta, inv};
}

SimilarityTransform SimilarityTransform::compose(const SimilarityTransform& other) const {
  const double c = std::cos(theta);
  const double s = std::sin(theta);
  return {tx + scale * (c * other.tx - s * other.ty), ty + scale * (s * other.tx + c * other.ty),
          theta + other.theta, scale * other.scale};
}

namespace {

// Bilinear sample; false when (x, y) is outside [0, w-1] x [0, h-1].
bool sample_bilinear(std::span<const double> px, int h, int w, double x, double y, double& out) {
  if (!(x >= 0.0 && y >= 0.0 && x <= w - 1 && y <= h - 1)) return false;
  const int x0 = std::min(static_cast<int>(x), w - 1);
  const int y0 = std::min(static_cast<int>(y), h - 1);
  const int x1 = std::min(x0 + 1, w - 1);
  const int y1 = std::min(y0 + 1, h - 1);
  const double fx = x - x0;
  const double fy = y - y0;
  const double top = px[y0 * w + x0] * (1 - fx) + px[y0 * w + x1] * fx;
  const double bot = px[y1 * w + x0] * (1 - fx) + px[y1 * w + x1] * fx;
  out = top * (1 - fy) + bot * fy;
  return true;
}

// Plain grid used by the registration pyramid.
struct Grid {
  int h = 0;
  int w = 0;
  std::vector<double> px;
};

Grid to_grid(const Angiogram& img) {
  return {img.height(), img.width(), std::vector<double>(img.pixels().begin(), img.pixels().end())};
}

Grid half_resolution(const Grid& g) {
  Grid out{std::max(1, g.h / 2), std::max(1, g.w / 2), {}};
  out.px.resize(static_cast<std::size_t>(out.h) * out.w);
  for (int r = 0; r < out.h; ++r) {
    for (int c = 0; c < out.w; ++c) {
      const int r0 = std::min(2 * r, g.h - 1), r1 = std::min(2 * r + 1, g.h - 1);
      const int c0 = std::min(2 * c, g.w - 1), c1 = std::min(2 * c + 1, g.w - 1);
      out.px[r * out.w + c] =
          0.25 * (g.px[r0 * g.w + c0] + g.px[r0 * g.w + c1] + g.px[r1 * g.w + c0] + g.px[r1 * g.w + c1]);
    }
  }
  return out;
}

double grid_objective(const Grid& moving, const Grid& fixed, const SimilarityTransform& t,
                      double min_overlap) {
  const double cx = (fixed.w - 1) / 2.0;
  const double cy = (fixed.h - 1) / 2.0;
  const double ct = std::cos(t.theta) * t.scale;
  const double st = std::sin(t.theta) * t.scale;
  double sum = 0.0;
  long long count = 0;
  for (int r = 0; r < fixed.h; ++r) {
    const double dy = r - cy;
    for (int c = 0; c < fixed.w; ++c) {
      const double dx = c - cx;
      const double x = ct * dx - st * dy + cx + t.tx;
      const double y = st * dx + ct * dy + cy + t.ty;
      double v;
      if (!sample_bilinear(moving.px, moving.h, moving.w, x, y, v)) continue;
      const double d = v - fixed.px[r * fixed.w + c];
      sum += d * d;
      ++count;
    }
  }
  const double total = static_cast<double>(fixed.h) * fixed.w;
  if (count == 0 || count < min_overlap * total) return std::numeric_limits<double>::infinity();
  return sum / static_cast<double>(count);
}

// Parameter vector order: tx, ty, theta, scale.
SimilarityTransform from_params(const std::array<double, 4>& p) { return {p[0], p[1], p[2], p[3]}; }

struct SearchResult {
  std::array<double, 4> params;
  double value;
};

// Compass pattern search with step halving.
SearchResult pattern_search(const Grid& moving, const Grid& fixed, std::array<double, 4> params,
                            std::array<double, 4> steps, const std::array<double, 4>& min_steps,
                            double min_overlap, int max_evals) {
  double best = grid_objective(moving, fixed, from_params(params), min_overlap);
  int evals = 1;
  auto done = [&] {
    for (int k = 0; k < 4; ++k) {
      if (steps[k] >= min_steps[k]) return false;
    }
    return true;
  };
  while (!done() && evals < max_evals) {
    bool improved = false;
    for (int k = 0; k < 4 && evals < max_evals; ++k) {
      if (steps[k] < min_steps[k]) continue;
      for (double dir : {1.0, -1.0}) {
        auto trial = params;
        trial[k] += dir * steps[k];
        if (k == 3 && trial[3] <= 0.0) continue;
        const double v = grid_objective(moving, fixed, from_params(trial), min_overlap);
        ++evals;
        if (v < best) {
          best = v;
          params = trial;
          improved = true;
          break;
        }
      }
    }
    if (!improved) {
      for (auto& s : steps) s *= 0.5;
    }
  }
  return {params, best};
}

}  // namespace

Angiogram warp(const Angiogram& moving, const SimilarityTransform& t, std::vector<bool>* valid) {
  const int h = moving.height();
  const int w = moving.width();
  const double cx = (w - 1) / 2.0;
  const double cy = (h - 1) / 2.0;
  std::vector<double> out(static_cast<std::size_t>(h) * w, 0.0);
  if (valid != nullptr) valid->assign(out.size(), false);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      const auto [x, y] = t.apply(c, r, cx, cy);
      double v;
      if (sample_bilinear(moving.pixels(), h, w, x, y, v)) {
        out[r * w + c] = v;
        if (valid != nullptr) (*valid)[r * w + c] = true;
      }
    }
  }
  return moving.with_pixels(clamp_to_scale(std::move(out), moving.scale()));
}

double registration_objective(const Angiogram& moving, const Angiogram& fixed,
                              const SimilarityTransform& t, double min_overlap_fraction) {
  return grid_objective(to_grid(moving), to_grid(fixed), t, min_overlap_fraction);
}

RegistrationResult register_images(const Angiogram& moving, const Angiogram& fixed,
                                   const RegistrationOptions& options) {
  if (moving.scale() != IntensityScale::Unit || fixed.scale() != IntensityScale::Unit) {
    throw data_error("registration expects Unit-scale images");
  }
  const int levels = std::max(1, options.levels);
  std::vector<Grid> mov{to_grid(moving)};
  std::vector<Grid> fix{to_grid(fixed)};
  for (int l = 1; l < levels; ++l) {
    mov.push_back(half_resolution(mov.back()));
    fix.push_back(half_resolution(fix.back()));
  }

  RegistrationResult result;
  result.identity_objective =
      grid_objective(mov[0], fix[0], SimilarityTransform::identity(), options.min_overlap_fraction);

  // Integer translation scan at the coarsest level seeds the local search.
  const int top = levels - 1;
  const double level_scale = std::ldexp(1.0, top);
  const int reach = static_cast<int>(std::ceil(options.max_shift_px / level_scale));
  std::array<double, 4> params{0.0, 0.0, 0.0, 1.0};
  double best = grid_objective(mov[top], fix[top], from_params(params), options.min_overlap_fraction);
  for (int dy = -reach; dy <= reach; ++dy) {
    for (int dx = -reach; dx <= reach; ++dx) {
      const std::array<double, 4> p{double(dx), double(dy), 0.0, 1.0};
      const double v = grid_objective(mov[top], fix[top], from_params(p), options.min_overlap_fraction);
      if (v < best) {
        best = v;
        params = p;
      }
    }
  }

  constexpr double deg = std::numbers::pi / 180.0;
  for (int l = top; l >= 0; --l) {
    const bool coarsest = l == top;
    const std::array<double, 4> steps = coarsest ? std::array<double, 4>{1.0, 1.0, 1.0 * deg, 0.01}
                                                 : std::array<double, 4>{0.5, 0.5, 0.25 * deg, 0.0025};
    const std::array<double, 4> min_steps{0.005, 0.005, 0.0025 * deg, 2.5e-5};
    const auto found = pattern_search(mov[l], fix[l], params, steps, min_steps,
                                      options.min_overlap_fraction, options.max_evaluations_per_level);
    params = found.params;
    best = found.value;
    if (l > 0) {
      params[0] *= 2.0;
      params[1] *= 2.0;
    }
  }

  result.transform = from_params(params);
  result.objective = best;
  if (!(best < result.identity_objective)) {
    // No strict gain: keep identity. An exactly aligned pair still counts as converged.
    result.transform = SimilarityTransform::identity();
    result.objective = result.identity_objective;
    result.converged = result.identity_objective == 0.0;
  }
  return result;
}

PixelRegion overlap_region(const Angiogram& moving, const Angiogram& fixed, const SimilarityTransform& t) {
  const double cx = (fixed.width() - 1) / 2.0;
  const double cy = (fixed.height() - 1) / 2.0;
  std::vector<bool> mask(fixed.size(), false);
  for (int r = 0; r < fixed.height(); ++r) {
    for (int c = 0; c < fixed.width(); ++c) {
      const auto [x, y] = t.apply(c, r, cx, cy);
      mask[static_cast<std::size_t>(r) * fixed.width() + c] =
          x >= 0.0 && y >= 0.0 && x <= moving.width() - 1 && y <= moving.height() - 1;
    }
  }
  return PixelRegion::from_mask(fixed.height(), fixed.width(), mask);
}

Rect max_inscribed_rect(const PixelRegion& region) {
  const int h = region.host_height();
  const int w = region.host_width();
  const auto mask = region.to_mask();
  Rect best{0, 0, 0, 0};
  auto better = [&](const Rect& cand) {
    if (cand.area() != best.area()) return cand.area() > best.area();
    if (cand.top != best.top) return cand.top < best.top;
    if (cand.left != best.left) return cand.left < best.left;
    return cand.height < best.height;
  };
  std::vector<char> column_full(w);
  for (int top = 0; top < h; ++top) {
    // Rows below `top` can only shrink the area bound; stop once it cannot win.
    if (static_cast<long long>(h - top) * w < best.area()) break;
    std::fill(column_full.begin(), column_full.end(), 1);
    for (int bottom = top; bottom < h; ++bottom) {
      bool any = false;
      for (int c = 0; c < w; ++c) {
        column_full[c] = column_full[c] && mask[static_cast<std::size_t>(bottom) * w + c];
        any = any || column_full[c];
      }
      if (!any) break;
      int run_left = 0, run_len = 0, cur_left = 0, cur_len = 0;
      for (int c = 0; c < w; ++c) {
        if (column_full[c]) {
          if (cur_len == 0) cur_left = c;
          ++cur_len;
          if (cur_len > run_len) {
            run_len = cur_len;
            run_left = cur_left;
          }
        } else {
          cur_len = 0;
        }
      }
      const Rect cand{top, run_left, bottom - top + 1, run_len};
      if (better(cand)) best = cand;
    }
  }
  return best;
}

// -- patches ----------------------------------------------------------------------

std::vector<int> patch_anchors(int dim, int size, int stride) {
  if (size < 1 || stride < 1) throw usage_error("patch size and stride must be positive");
  if (dim < size) {
    throw data_error("image dimension " + std::to_string(dim) + " smaller than patch size " +
                     std::to_string(size));
  }
  std::vector<int> anchors;
  for (int a = 0; a + size <= dim; a += stride) anchors.push_back(a);
  if (anchors.back() + size < dim) anchors.push_back(dim - size);
  return anchors;
}

PatchSet extract_patches(const Angiogram& input, const Angiogram& target, int size, int stride) {
  if (input.height() != target.height() || input.width() != target.width()) {
    throw data_error("input and target dimensions differ");
  }
  if (input.scale() != IntensityScale::Unit || target.scale() != IntensityScale::Unit) {
    throw data_error("patch extraction expects Unit-scale images");
  }
  const auto rows = patch_anchors(input.height(), size, stride);
  const auto cols = patch_anchors(input.width(), size, stride);
  PatchSet set{size, stride, input.id(), {}};
  set.patches.reserve(rows.size() * cols.size());
  const std::size_t n = static_cast<std::size_t>(size) * size;
  for (int r0 : rows) {
    for (int c0 : cols) {
      PatchPair pair{std::vector<float>(n), std::vector<float>(n)};
      for (int r = 0; r < size; ++r) {
        for (int c = 0; c < size; ++c) {
          pair.input[r * size + c] = static_cast<float>(input.at(r0 + r, c0 + c));
          pair.target[r * size + c] = static_cast<float>(target.at(r0 + r, c0 + c));
        }
      }
      set.patches.push_back(std::move(pair));
    }
  }
  return set;
}

namespace {
constexpr char kPatchMagic[4] = {'H', 'P', 'C', 'H'};
constexpr std::uint32_t kPatchVersion = 1;
}  // namespace

void save_patch_set(const PatchSet& set, const std::filesystem::path& path) {
  std::string out(kPatchMagic, 4);
  binio::put<std::uint32_t>(out, kPatchVersion);
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.patches.size()));
  binio::put<std::uint32_t>(out, static_cast<std::uint32_t>(set.patch_size));
  const std::size_t n = static_cast<std::size_t>(set.patch_size) * set.patch_size;
  for (const auto& p : set.patches) {
    if (p.input.size() != n || p.target.size() != n) throw data_error("patch size mismatch");
    for (float v : p.input) binio::put(out, v);
    for (float v : p.target) binio::put(out, v);
  }
  write_file_atomic(path, out);
}

PatchSet load_patch_set(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  const std::string data = ss.str();
  binio::Reader reader(data, path.string());
  if (reader.bytes(4) != std::string_view(kPatchMagic, 4)) throw data_error(path.string() + ": bad magic");
  const auto version = reader.get<std::uint32_t>();
  if (version != kPatchVersion) throw data_error(path.string() + ": unsupported version " + std::to_string(version));
  const auto count = reader.get<std::uint32_t>();
  const auto size = reader.get<std::uint32_t>();
  PatchSet set{static_cast<int>(size), 0, path.stem().string(), {}};
  const std::size_t n = static_cast<std::size_t>(size) * size;
  set.patches.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    PatchPair p{std::vector<float>(n), std::vector<float>(n)};
    for (auto& v : p.input) v = reader.get<float>();
    for (auto& v : p.target) v = reader.get<float>();
    set.patches.push_back(std::move(p));
  }
  if (reader.remaining() != 0) throw data_error(path.string() + ": trailing bytes");
  return set;
}

// -- augmentation ---------------------------------------------------------------------

Angiogram apply_dihedral(const Angiogram& img, Dihedral op) {
  const int h = img.height();
  const int w = img.width();
  if ((op == Dihedral::Transpose || op == Dihedral::Rotate90) && h != w) {
    throw data_error("transpose/rotation requires a square image");
  }
  std::vector<double> out(img.size());
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < w; ++c) {
      double v = 0.0;
      switch (op) {
        case Dihedral::Identity: v = img.at(r, c); break;
        case Dihedral::FlipHorizontal: v = img.at(r, w - 1 - c); break;
        case Dihedral::FlipVertical: v = img.at(h - 1 - r, c); break;
        case Dihedral::Transpose: v = img.at(c, r); break;
        case Dihedral::Rotate90: v = img.at(c, w - 1 - r); break;
      }
      out[static_cast<std::size_t>(r) * w + c] = v;
    }
  }
  return img.with_pixels(std::move(out));
}

std::vector<std::pair<Angiogram, Angiogram>> augment(const std::pair<Angiogram, Angiogram>& pair) {
  const auto& [a, b] = pair;
  if (!a.is_square() || !b.is_square()) throw data_error("augmentation requires square images");
  std::vector<std::pair<Angiogram, Angiogram>> out;
  for (auto op : {Dihedral::Identity, Dihedral::FlipHorizontal, Dihedral::FlipVertical, Dihedral::Transpose,
                  Dihedral::Rotate90}) {
    out.emplace_back(apply_dihedral(a, op), apply_dihedral(b, op));
  }
  return out;
}

// -- resampling -------------------------------------------------------------------------

namespace {

double cubic_weight(double x) {
  constexpr double a = -0.5;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

}  // namespace

Angiogram bicubic_upsample(const Angiogram& img, int factor) {
  if (factor < 1) throw usage_error("upsampling factor must be >= 1");
  if (factor == 1) return img;
  const int h = img.height();
  const int w = img.width();
  const int oh = h * factor;
  const int ow = w * factor;

  struct Taps {
    int index[4];
    double weight[4];
  };
  auto taps_for = [factor](int dst, int n) {
    const double src = static_cast<double>(dst) / factor;
    const int base = static_cast<int>(std::floor(src));
    Taps t{};
    for (int k = 0; k < 4; ++k) {
      const int i = base - 1 + k;
      t.index[k] = std::clamp(i, 0, n - 1);
      t.weight[k] = cubic_weight(src - i);
    }
    return t;
  };
  std::vector<Taps> row_taps(oh), col_taps(ow);
  for (int r = 0; r < oh; ++r) row_taps[r] = taps_for(r, h);
  for (int c = 0; c < ow; ++c) col_taps[c] = taps_for(c, w);

  // Horizontal pass, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(h) * ow);
  for (int r = 0; r < h; ++r) {
    for (int c = 0; c < ow; ++c) {
      const auto& t = col_taps[c];
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.weight[k] * img.at(r, t.index[k]);
      tmp[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  std::vector<double> out(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r) {
    const auto& t = row_taps[r];
    for (int c = 0; c < ow; ++c) {
      double acc = 0.0;
      for (int k = 0; k < 4; ++k) acc += t.weight[k] * tmp[static_cast<std::size_t>(t.index[k]) * ow + c];
      out[static_cast<std::size_t>(r) * ow + c] = acc;
    }
  }
  return Angiogram(oh, ow, clamp_to_scale(std::move(out), img.scale()), img.scale(), img.fov_mm(), img.id());
}

Angiogram decimate(const Angiogram& img, int factor) {
  if (factor < 1) throw usage_error("decimation factor must be >= 1");
  const int oh = (img.height() + factor - 1) / factor;
  const int ow = (img.width() + factor - 1) / factor;
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(oh) * ow);
  for (int r = 0; r < oh; ++r) {
    for (int c = 0; c < ow; ++c) out.push_back(img.at(r * factor, c * factor));
  }
  return Angiogram(oh, ow, std::move(out), img.scale(), img.fov_mm(), img.id());
}

}  // namespace harnet
