#include "harnet/image.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <memory>
#include <sstream>

#include "harnet/keyvalue.hpp"

namespace harnet {

const char* to_string(IntensityScale scale) {
  return scale == IntensityScale::Raw255 ? "Raw255" : "Unit";
}

IntensityScale parse_intensity_scale(const std::string& text) {
  if (text == "Raw255") return IntensityScale::Raw255;
  if (text == "Unit") return IntensityScale::Unit;
  throw data_error("unknown intensity_scale '" + text + "'");
}

double scale_max(IntensityScale scale) { return scale == IntensityScale::Raw255 ? 255.0 : 1.0; }

Angiogram::Angiogram(int height, int width, std::vector<double> pixels, IntensityScale scale,
                     double fov_mm, std::string id)
    : height_(height), width_(width), pixels_(std::move(pixels)), scale_(scale), fov_mm_(fov_mm),
      id_(std::move(id)) {
  if (height_ < 1 || width_ < 1) throw data_error("angiogram dimensions must be at least 1x1");
  if (pixels_.size() != static_cast<std::size_t>(height_) * width_) {
    throw data_error("pixel buffer size does not match " + std::to_string(height_) + "x" +
                     std::to_string(width_));
  }
  if (!(fov_mm_ > 0.0) || !std::isfinite(fov_mm_)) throw data_error("fov_mm must be positive");
  const double hi = scale_max(scale_);
  for (double v : pixels_) {
    if (!(v >= 0.0 && v <= hi)) {
      throw data_error("pixel value " + format_double(v) + " outside " + to_string(scale_) +
                       " range");
    }
  }
}

Angiogram Angiogram::with_pixels(std::vector<double> pixels) const {
  return Angiogram(height_, width_, std::move(pixels), scale_, fov_mm_, id_);
}

Angiogram Angiogram::with_pixels(std::vector<double> pixels, IntensityScale scale) const {
  return Angiogram(height_, width_, std::move(pixels), scale, fov_mm_, id_);
}

Angiogram Angiogram::with_id(std::string id) const {
  return Angiogram(height_, width_, pixels_, scale_, fov_mm_, std::move(id));
}

PixelRegion::PixelRegion(int host_height, int host_width, std::vector<Pixel> pixels)
    : host_height_(host_height), host_width_(host_width), pixels_(std::move(pixels)) {
  if (pixels_.empty()) throw data_error("pixel region is empty");
  for (const auto& p : pixels_) {
    if (p.row < 0 || p.col < 0 || p.row >= host_height_ || p.col >= host_width_) {
      throw data_error("region pixel (" + std::to_string(p.row) + "," + std::to_string(p.col) +
                       ") outside host image");
    }
  }
}

PixelRegion PixelRegion::from_mask(int host_height, int host_width, const std::vector<bool>& mask) {
  if (mask.size() != static_cast<std::size_t>(host_height) * host_width) {
    throw data_error("mask size does not match host dimensions");
  }
  std::vector<Pixel> px;
  for (int r = 0; r < host_height; ++r) {
    for (int c = 0; c < host_width; ++c) {
      if (mask[static_cast<std::size_t>(r) * host_width + c]) px.push_back({r, c});
    }
  }
  return PixelRegion(host_height, host_width, std::move(px));
}

std::vector<bool> PixelRegion::to_mask() const {
  std::vector<bool> mask(static_cast<std::size_t>(host_height_) * host_width_, false);
  for (const auto& p : pixels_) mask[static_cast<std::size_t>(p.row) * host_width_ + p.col] = true;
  return mask;
}

Angiogram normalize_unit(const Angiogram& img, Diagnostics* diag) {
  if (img.scale() != IntensityScale::Raw255) {
    throw data_error("normalize_unit expects a Raw255 image (" + img.id() + ")");
  }
  const auto px = img.pixels();
  const auto [lo_it, hi_it] = std::minmax_element(px.begin(), px.end());
  const double lo = *lo_it;
  const double hi = *hi_it;
  std::vector<double> out(px.size(), 0.0);
  if (hi == lo) {
    warn_if(diag, "normalize_unit: constant image '" + img.id() + "' mapped to zeros");
    return img.with_pixels(std::move(out), IntensityScale::Unit);
  }
  const double range = hi - lo;
  for (std::size_t i = 0; i < px.size(); ++i) out[i] = std::clamp((px[i] - lo) / range, 0.0, 1.0);
  return img.with_pixels(std::move(out), IntensityScale::Unit);
}

Angiogram to_raw255(const Angiogram& img) {
  if (img.scale() == IntensityScale::Raw255) return img;
  std::vector<double> out(img.pixels().begin(), img.pixels().end());
  for (double& v : out) v = std::min(v * 255.0, 255.0);
  return img.with_pixels(std::move(out), IntensityScale::Raw255);
}

Angiogram to_unit(const Angiogram& img) {
  if (img.scale() == IntensityScale::Unit) return img;
  std::vector<double> out(img.pixels().begin(), img.pixels().end());
  for (double& v : out) v = std::min(v / 255.0, 1.0);
  return img.with_pixels(std::move(out), IntensityScale::Unit);
}

PixelRegion circular_region(const Angiogram& img, PixelRegion::Pixel center, double diameter_mm) {
  if (!(diameter_mm > 0.0)) throw usage_error("region diameter must be positive");
  if (center.row < 0 || center.col < 0 || center.row >= img.height() || center.col >= img.width()) {
    throw usage_error("region center outside image");
  }
  const double radius = (diameter_mm / 2.0) / img.mm_per_pixel();
  const int reach = static_cast<int>(std::floor(radius));
  if (center.row - reach < 0) throw data_error("circular region crosses the top edge");
  if (center.row + reach >= img.height()) throw data_error("circular region crosses the bottom edge");
  if (center.col - reach < 0) throw data_error("circular region crosses the left edge");
  if (center.col + reach >= img.width()) throw data_error("circular region crosses the right edge");

  const double r2 = radius * radius;
  std::vector<PixelRegion::Pixel> px;
  for (int dr = -reach; dr <= reach; ++dr) {
    for (int dc = -reach; dc <= reach; ++dc) {
      if (static_cast<double>(dr * dr + dc * dc) <= r2) px.push_back({center.row + dr, center.col + dc});
    }
  }
  return PixelRegion(img.height(), img.width(), std::move(px));
}

PixelRegion::Pixel image_center(const Angiogram& img) { return {img.height() / 2, img.width() / 2}; }

Angiogram crop(const Angiogram& img, const Rect& rect) {
  if (rect.height < 1 || rect.width < 1 || rect.top < 0 || rect.left < 0 ||
      rect.top + rect.height > img.height() || rect.left + rect.width > img.width()) {
    throw data_error("crop rectangle outside image");
  }
  std::vector<double> out;
  out.reserve(static_cast<std::size_t>(rect.height) * rect.width);
  for (int r = rect.top; r < rect.top + rect.height; ++r) {
    for (int c = rect.left; c < rect.left + rect.width; ++c) out.push_back(img.at(r, c));
  }
  // Physical pitch is preserved, so the cropped field of view shrinks with the width.
  const double fov = img.mm_per_pixel() * rect.width;
  return Angiogram(rect.height, rect.width, std::move(out), img.scale(), fov, img.id());
}

std::vector<double> clamp_to_scale(std::vector<double> pixels, IntensityScale scale) {
  const double hi = scale_max(scale);
  for (double& v : pixels) v = std::isnan(v) ? 0.0 : std::clamp(v, 0.0, hi);
  return pixels;
}

// -- I/O ----------------------------------------------------------------------

namespace {

struct Raster {
  int height = 0;
  int width = 0;
  std::vector<unsigned char> bytes;
};

bool has_extension(const std::filesystem::path& path, const char* ext) {
  std::string e = path.extension().string();
  std::transform(e.begin(), e.end(), e.begin(), [](unsigned char ch) { return std::tolower(ch); });
  return e == ext;
}

Raster read_png(const std::filesystem::path& path) {
  std::unique_ptr<FILE, int (*)(FILE*)> fp(std::fopen(path.c_str(), "rb"), &std::fclose);
  if (!fp) throw data_error("cannot open " + path.string());
  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  png_infop info = png ? png_create_info_struct(png) : nullptr;
  if (png == nullptr || info == nullptr) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("libpng initialisation failed");
  }
  Raster raster;
  std::vector<png_bytep> rows;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error("corrupt PNG file " + path.string());
  }
  png_init_io(png, fp.get());
  png_read_info(png, info);
  const int color = png_get_color_type(png, info);
  const int depth = png_get_bit_depth(png, info);
  const int channels = png_get_channels(png, info);
  if (color != PNG_COLOR_TYPE_GRAY || channels != 1) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error(path.string() + ": expected single-channel grayscale, found " +
                     std::to_string(channels) + " channels");
  }
  if (depth != 8) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw data_error(path.string() + ": expected 8-bit samples, found " + std::to_string(depth));
  }
  raster.width = static_cast<int>(png_get_image_width(png, info));
  raster.height = static_cast<int>(png_get_image_height(png, info));
  raster.bytes.resize(static_cast<std::size_t>(raster.width) * raster.height);
  rows.resize(raster.height);
  for (int r = 0; r < raster.height; ++r) rows[r] = raster.bytes.data() + static_cast<std::size_t>(r) * raster.width;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);
  return raster;
}

std::string encode_png(const Raster& raster) {
  png_image image{};
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(raster.width);
  image.height = static_cast<png_uint_32>(raster.height);
  image.format = PNG_FORMAT_GRAY;
  png_alloc_size_t size = 0;
  if (!png_image_write_to_memory(&image, nullptr, &size, 0, raster.bytes.data(), 0, nullptr)) {
    throw data_error(std::string("PNG encode failed: ") + image.message);
  }
  std::string out(size, '\0');
  if (!png_image_write_to_memory(&image, out.data(), &size, 0, raster.bytes.data(), 0, nullptr)) {
    throw data_error(std::string("PNG encode failed: ") + image.message);
  }
  out.resize(size);
  return out;
}

// Reads one whitespace-delimited header token, skipping '#' comments.
std::string pgm_token(std::istream& in) {
  std::string tok;
  int ch;
  while ((ch = in.get()) != EOF) {
    if (ch == '#') {
      while ((ch = in.get()) != EOF && ch != '\n') {
      }
      continue;
    }
    if (std::isspace(ch)) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(static_cast<char>(ch));
  }
  return tok;
}

Raster read_pgm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw data_error("cannot open " + path.string());
  const std::string magic = pgm_token(in);
  if (magic == "P6" || magic == "P3") {
    throw data_error(path.string() + ": expected single-channel grayscale, found 3 channels");
  }
  if (magic != "P5") throw data_error(path.string() + ": not a binary PGM (P5) file");
  Raster raster;
  raster.width = static_cast<int>(parse_int(pgm_token(in), "PGM width"));
  raster.height = static_cast<int>(parse_int(pgm_token(in), "PGM height"));
  const long long maxval = parse_int(pgm_token(in), "PGM maxval");
  if (maxval != 255) throw data_error(path.string() + ": expected 8-bit samples (maxval 255)");
  if (raster.width < 1 || raster.height < 1) throw data_error(path.string() + ": empty raster");
  raster.bytes.resize(static_cast<std::size_t>(raster.width) * raster.height);
  in.read(reinterpret_cast<char*>(raster.bytes.data()), static_cast<std::streamsize>(raster.bytes.size()));
  if (in.gcount() != static_cast<std::streamsize>(raster.bytes.size())) {
    throw data_error(path.string() + ": truncated pixel data");
  }
  return raster;
}

std::string encode_pgm(const Raster& raster) {
  std::string out = "P5\n" + std::to_string(raster.width) + " " + std::to_string(raster.height) + "\n255\n";
  out.append(reinterpret_cast<const char*>(raster.bytes.data()), raster.bytes.size());
  return out;
}

}  // namespace

std::filesystem::path sidecar_path(const std::filesystem::path& image_path) {
  std::filesystem::path p = image_path;
  p += ".meta";
  return p;
}

std::vector<unsigned char> quantize_8bit(const Angiogram& img) {
  const double mul = img.scale() == IntensityScale::Unit ? 255.0 : 1.0;
  std::vector<unsigned char> out(img.size());
  const auto px = img.pixels();
  for (std::size_t i = 0; i < px.size(); ++i) {
    out[i] = static_cast<unsigned char>(std::clamp(std::lround(px[i] * mul), 0L, 255L));
  }
  return out;
}

Angiogram load_image(const std::filesystem::path& path) {
  Raster raster;
  if (has_extension(path, ".png")) {
    raster = read_png(path);
  } else if (has_extension(path, ".pgm")) {
    raster = read_pgm(path);
  } else {
    throw data_error("unsupported raster format: " + path.string());
  }
  if (raster.width != raster.height) {
    throw data_error(path.string() + ": non-square image " + std::to_string(raster.height) + "x" +
                     std::to_string(raster.width));
  }
  const auto meta_path = sidecar_path(path);
  if (!std::filesystem::exists(meta_path)) {
    throw data_error("missing metadata sidecar " + meta_path.string());
  }
  const auto doc = KeyValueDoc::load(meta_path);
  const auto& top = doc.sections().front();
  const std::string id = top.require("id");
  const double fov = parse_double(top.require("fov_mm"), "fov_mm");
  const IntensityScale scale = parse_intensity_scale(top.require("intensity_scale"));

  std::vector<double> px(raster.bytes.size());
  for (std::size_t i = 0; i < px.size(); ++i) {
    px[i] = scale == IntensityScale::Unit ? raster.bytes[i] / 255.0 : static_cast<double>(raster.bytes[i]);
  }
  return Angiogram(raster.height, raster.width, std::move(px), scale, fov, id);
}

void save_image(const Angiogram& img, const std::filesystem::path& path) {
  Raster raster{img.height(), img.width(), quantize_8bit(img)};
  std::string encoded;
  if (has_extension(path, ".png")) {
    encoded = encode_png(raster);
  } else if (has_extension(path, ".pgm")) {
    encoded = encode_pgm(raster);
  } else {
    throw data_error("unsupported raster format: " + path.string());
  }
  KeyValueDoc meta;
  auto& top = meta.section("");
  top.set("id", img.id());
  top.set("fov_mm", format_double(img.fov_mm()));
  top.set("intensity_scale", to_string(img.scale()));
  write_file_atomic(path, encoded);
  write_file_atomic(sidecar_path(path), meta.serialize());
}

}  // namespace harnet
