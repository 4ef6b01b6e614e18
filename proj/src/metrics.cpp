#include "harnet/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <sstream>

#include "harnet/keyvalue.hpp"

namespace harnet {

std::size_t BinaryGrid::count() const {
  return static_cast<std::size_t>(std::count(cells.begin(), cells.end(), 1));
}

namespace {

void require_raw255(const Angiogram& img, const char* what) {
  if (img.scale() != IntensityScale::Raw255) {
    throw data_error(std::string(what) + " expects a Raw255 image ('" + img.id() + "')");
  }
}

void require_host(const Angiogram& img, const PixelRegion& region) {
  if (region.host_height() != img.height() || region.host_width() != img.width()) {
    throw data_error("region host dimensions do not match image '" + img.id() + "'");
  }
}

using u128 = unsigned __int128;

// Exact comparison of num1/den1 against num2/den2 for positive denominators.
int compare_fractions(u128 num1, u128 den1, u128 num2, u128 den2) {
  const u128 q1 = num1 / den1, q2 = num2 / den2;
  if (q1 != q2) return q1 < q2 ? -1 : 1;
  const u128 r1 = num1 % den1, r2 = num2 % den2;
  // r1/den1 vs r2/den2, both < 1; denominators are below 2^64 so products fit.
  const u128 lhs = r1 * den2, rhs = r2 * den1;
  if (lhs == rhs) return 0;
  return lhs < rhs ? -1 : 1;
}

}  // namespace

double noise_intensity(const Angiogram& img, const PixelRegion& region) {
  require_raw255(img, "noise_intensity");
  require_host(img, region);
  double acc = 0.0;
  for (const auto& p : region.pixels()) {
    const double v = img.at(p.row, p.col);
    acc += v * v;
  }
  return acc / static_cast<double>(region.pixel_count());
}

double false_flow_intensity(const Angiogram& img, const PixelRegion& region) {
  return noise_intensity(img, region);
}

double rms_contrast(const Angiogram& img) {
  require_raw255(img, "rms_contrast");
  const auto px = img.pixels();
  double mean = 0.0;
  for (double v : px) mean += v;
  mean /= static_cast<double>(px.size());
  double acc = 0.0;
  for (double v : px) acc += (v - mean) * (v - mean);
  return std::sqrt(acc / static_cast<double>(px.size()));
}

int histogram_bin(double value) { return static_cast<int>(std::clamp(std::lround(value), 0L, 255L)); }

int otsu_threshold(const Angiogram& img) {
  require_raw255(img, "otsu_threshold");
  std::array<std::uint64_t, 256> hist{};
  for (double v : img.pixels()) ++hist[histogram_bin(v)];
  const auto occupied = std::count_if(hist.begin(), hist.end(), [](std::uint64_t c) { return c > 0; });
  if (occupied < 2) throw data_error("otsu_threshold: image '" + img.id() + "' has a single intensity level");

  std::uint64_t total_n = 0, total_s = 0;
  for (int b = 0; b < 256; ++b) {
    total_n += hist[b];
    total_s += hist[b] * static_cast<std::uint64_t>(b);
  }
  // Between-class variance is proportional to (N*S0 - n0*S)^2 / (n0 * n1).
  int best_t = -1;
  u128 best_num = 0, best_den = 1;
  std::uint64_t n0 = 0, s0 = 0;
  for (int t = 0; t < 255; ++t) {
    n0 += hist[t];
    s0 += hist[t] * static_cast<std::uint64_t>(t);
    const std::uint64_t n1 = total_n - n0;
    if (n0 == 0 || n1 == 0) continue;
    const __int128 diff = static_cast<__int128>(total_n) * s0 - static_cast<__int128>(n0) * total_s;
    const u128 mag = static_cast<u128>(diff < 0 ? -diff : diff);
    const u128 num = mag * mag;
    const u128 den = static_cast<u128>(n0) * n1;
    if (best_t < 0 || compare_fractions(num, den, best_num, best_den) > 0) {
      best_t = t;
      best_num = num;
      best_den = den;
    }
  }
  return best_t;
}

BinaryGrid binarize(const Angiogram& img, int threshold) {
  BinaryGrid g{img.height(), img.width(), std::vector<unsigned char>(img.size(), 0)};
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) g.cells[i] = histogram_bin(px[i]) > threshold ? 1 : 0;
  return g;
}

SkeletonMap skeletonize(const BinaryGrid& binary) {
  const int h = binary.height;
  const int w = binary.width;
  std::vector<unsigned char> img = binary.cells;
  auto px = [&](int r, int c) -> int {
    if (r < 0 || c < 0 || r >= h || c >= w) return 0;
    return img[static_cast<std::size_t>(r) * w + c];
  };
  std::vector<int> removal;
  bool changed = true;
  while (changed) {
    changed = false;
    for (int pass = 0; pass < 2; ++pass) {
      removal.clear();
      for (int r = 0; r < h; ++r) {
        for (int c = 0; c < w; ++c) {
          if (!img[static_cast<std::size_t>(r) * w + c]) continue;
          // Neighbours clockwise from north: P2..P9.
          const int p[8] = {px(r - 1, c), px(r - 1, c + 1), px(r, c + 1), px(r + 1, c + 1),
                            px(r + 1, c), px(r + 1, c - 1), px(r, c - 1), px(r - 1, c - 1)};
          int count = 0, transitions = 0;
          for (int k = 0; k < 8; ++k) {
            count += p[k];
            if (p[k] == 0 && p[(k + 1) % 8] == 1) ++transitions;
          }
          if (count < 2 || count > 6 || transitions != 1) continue;
          const int n = p[0], e = p[2], s = p[4], wv = p[6];
          const bool ok = pass == 0 ? (n * e * s == 0 && e * s * wv == 0) : (n * e * wv == 0 && n * s * wv == 0);
          if (ok) removal.push_back(r * w + c);
        }
      }
      for (int idx : removal) img[idx] = 0;
      if (!removal.empty()) changed = true;
    }
  }
  SkeletonMap map;
  map.grid = {h, w, std::move(img)};
  map.components = label_components(map.grid);
  return map;
}

std::vector<std::vector<int>> label_components(const BinaryGrid& grid) {
  const int h = grid.height;
  const int w = grid.width;
  std::vector<char> visited(grid.cells.size(), 0);
  std::vector<std::vector<int>> comps;
  std::vector<int> stack;
  for (int start = 0; start < h * w; ++start) {
    if (!grid.cells[start] || visited[start]) continue;
    std::vector<int> comp;
    visited[start] = 1;
    stack.push_back(start);
    while (!stack.empty()) {
      const int idx = stack.back();
      stack.pop_back();
      comp.push_back(idx);
      const int r = idx / w, c = idx % w;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const int rr = r + dr, cc = c + dc;
          if (rr < 0 || cc < 0 || rr >= h || cc >= w) continue;
          const int n = rr * w + cc;
          if (grid.cells[n] && !visited[n]) {
            visited[n] = 1;
            stack.push_back(n);
          }
        }
      }
    }
    std::sort(comp.begin(), comp.end());
    comps.push_back(std::move(comp));
  }
  return comps;
}

double skeleton_connectivity(const SkeletonMap& skeleton, int min_component, Diagnostics* diag) {
  std::size_t total = 0, connected = 0;
  for (const auto& comp : skeleton.components) {
    total += comp.size();
    if (static_cast<int>(comp.size()) >= min_component) connected += comp.size();
  }
  if (total == 0) {
    warn_if(diag, "connectivity: empty skeleton");
    return 0.0;
  }
  return static_cast<double>(connected) / static_cast<double>(total);
}

double connectivity(const Angiogram& img, Diagnostics* diag) {
  const int t = otsu_threshold(img);
  return skeleton_connectivity(skeletonize(binarize(img, t)), 5, diag);
}

MetricsReport evaluate_image(const Angiogram& input, const MetricOptions& options, Diagnostics* diag) {
  const Angiogram img = to_raw255(input);
  const auto center = options.center.value_or(image_center(img));
  const auto region = circular_region(img, center, options.region_diameter_mm);
  MetricsReport report;
  report.id = img.id();
  report.region_row = center.row;
  report.region_col = center.col;
  report.region_diameter_mm = options.region_diameter_mm;
  report.noise_intensity = noise_intensity(img, region);
  report.contrast_rms = rms_contrast(img);
  const int t = otsu_threshold(img);
  report.connectivity = skeleton_connectivity(skeletonize(binarize(img, t)), options.min_component, diag);
  return report;
}

std::string MetricsReport::to_record() const {
  std::ostringstream out;
  out << "id=" << id << " noise_intensity=" << format_double(noise_intensity)
      << " contrast_rms=" << format_double(contrast_rms) << " connectivity=" << format_double(connectivity);
  if (false_flow_intensity) out << " false_flow_intensity=" << format_double(*false_flow_intensity);
  out << " region_row=" << region_row << " region_col=" << region_col
      << " region_diameter_mm=" << format_double(region_diameter_mm);
  return out.str();
}

MetricsReport MetricsReport::from_record(const std::string& line) {
  MetricsReport r;
  std::istringstream in(line);
  std::string tok;
  bool has_id = false;
  while (in >> tok) {
    const auto eq = tok.find('=');
    if (eq == std::string::npos) throw data_error("malformed metrics record token '" + tok + "'");
    const std::string key = tok.substr(0, eq);
    const std::string val = tok.substr(eq + 1);
    if (key == "id") {
      r.id = val;
      has_id = true;
    } else if (key == "noise_intensity") {
      r.noise_intensity = parse_double(val, key);
    } else if (key == "contrast_rms") {
      r.contrast_rms = parse_double(val, key);
    } else if (key == "connectivity") {
      r.connectivity = parse_double(val, key);
    } else if (key == "false_flow_intensity") {
      r.false_flow_intensity = parse_double(val, key);
    } else if (key == "region_row") {
      r.region_row = static_cast<int>(parse_int(val, key));
    } else if (key == "region_col") {
      r.region_col = static_cast<int>(parse_int(val, key));
    } else if (key == "region_diameter_mm") {
      r.region_diameter_mm = parse_double(val, key);
    }
  }
  if (!has_id) throw data_error("metrics record without id");
  return r;
}

}  // namespace harnet
