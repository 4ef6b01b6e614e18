#include "harnet/cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <ostream>
#include <sstream>

namespace harnet {

namespace fs = std::filesystem;

namespace {

struct Field {
  std::string section;
  std::string key;
  std::function<std::string()> get;
  std::function<void(const std::string&)> set;
};

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
  return s;
}

std::vector<double> split_doubles(const std::string& text, const std::string& what) {
  std::vector<double> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(parse_double(item, what));
  if (out.empty()) throw usage_error(what + " needs at least one value");
  return out;
}

Field dbl(std::string sec, std::string key, double& ref) {
  const std::string what = sec + "." + key;
  return {sec, key, [&ref] { return format_double(ref); },
          [&ref, what](const std::string& v) { ref = parse_double(v, what); }};
}

Field integer(std::string sec, std::string key, int& ref) {
  const std::string what = sec + "." + key;
  return {sec, key, [&ref] { return std::to_string(ref); }, [&ref, what](const std::string& v) {
            const long long x = parse_int(v, what);
            if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) {
              throw usage_error(what + " out of range");
            }
            ref = static_cast<int>(x);
          }};
}

Field int64(std::string sec, std::string key, long long& ref) {
  const std::string what = sec + "." + key;
  return {sec, key, [&ref] { return std::to_string(ref); },
          [&ref, what](const std::string& v) { ref = parse_int(v, what); }};
}

Field u64(std::string sec, std::string key, std::uint64_t& ref) {
  const std::string what = sec + "." + key;
  return {sec, key, [&ref] { return std::to_string(ref); }, [&ref, what](const std::string& v) {
            const long long x = parse_int(v, what);
            if (x < 0) throw usage_error(what + " must be non-negative");
            ref = static_cast<std::uint64_t>(x);
          }};
}

Field boolean(std::string sec, std::string key, bool& ref) {
  const std::string what = sec + "." + key;
  return {sec, key, [&ref] { return std::string(ref ? "1" : "0"); },
          [&ref, what](const std::string& v) { ref = parse_bool(v, what); }};
}

std::vector<Field> fields(RunConfig& c) {
  std::vector<Field> f;
  f.push_back(u64("run", "seed", c.seed));

  f.push_back(integer("model", "low_level_channels", c.model.low_level_channels));
  f.push_back(integer("model", "block_count", c.model.block_count));
  f.push_back(integer("model", "layers_per_block", c.model.layers_per_block));
  f.push_back(integer("model", "block_channels", c.model.block_channels));

  f.push_back(dbl("train", "lr", c.train.lr));
  f.push_back(integer("train", "batch_size", c.train.batch_size));
  f.push_back(integer("train", "max_epochs", c.train.max_epochs));
  f.push_back(int64("train", "max_steps", c.train.max_steps));
  f.push_back(integer("train", "steps_per_epoch", c.train.steps_per_epoch));
  f.push_back(dbl("train", "lr_factor", c.train.lr_factor));
  f.push_back(integer("train", "lr_patience", c.train.lr_patience));
  f.push_back(dbl("train", "min_lr", c.train.min_lr));
  f.push_back(dbl("train", "stop_delta", c.train.stop_delta));
  f.push_back(integer("train", "stop_patience", c.train.stop_patience));
  f.push_back(dbl("train", "ssim_c1", c.train.ssim_constants.c1));
  f.push_back(dbl("train", "ssim_c2", c.train.ssim_constants.c2));
  f.push_back(boolean("train", "overfit", c.overfit));

  f.push_back(integer("prepare", "patch_size", c.prepare.patch_size));
  f.push_back(integer("prepare", "stride", c.prepare.stride));
  f.push_back(boolean("prepare", "augment", c.prepare.augment));
  f.push_back(boolean("prepare", "bilateral_target", c.prepare.bilateral_target));
  f.push_back(dbl("prepare", "bilateral_spatial_sigma", c.prepare.bilateral_spatial_sigma));
  f.push_back(dbl("prepare", "bilateral_range_sigma", c.prepare.bilateral_range_sigma));
  f.push_back(boolean("prepare", "force_registration", c.prepare.force_registration));

  f.push_back(dbl("metrics", "region_diameter_mm", c.metrics.region_diameter_mm));
  f.push_back(integer("metrics", "min_component", c.metrics.min_component));
  auto center_field = [&c](const std::string& key, bool row) {
    return Field{"metrics", key,
                 [&c, row] {
                   if (!c.metrics.center) return std::string("auto");
                   return std::to_string(row ? c.metrics.center->row : c.metrics.center->col);
                 },
                 [&c, row, key](const std::string& v) {
                   if (v == "auto") {
                     c.metrics.center.reset();
                     return;
                   }
                   const int x = static_cast<int>(parse_int(v, "metrics." + key));
                   PixelRegion::Pixel p = c.metrics.center.value_or(PixelRegion::Pixel{-1, -1});
                   (row ? p.row : p.col) = x;
                   c.metrics.center = p;
                 }};
  };
  f.push_back(center_field("faz_row", true));
  f.push_back(center_field("faz_col", false));

  f.push_back(integer("gabor", "orientations", c.gabor.orientations));
  f.push_back(dbl("gabor", "wavelength_px", c.gabor.wavelength_px));
  f.push_back(dbl("gabor", "sigma_px", c.gabor.sigma_px));
  f.push_back(dbl("gabor", "aspect", c.gabor.aspect));

  f.push_back({"frangi", "scales_px", [&c] { return join_doubles(c.frangi.scales_px); },
               [&c](const std::string& v) { c.frangi.scales_px = split_doubles(v, "frangi.scales_px"); }});
  f.push_back(dbl("frangi", "beta", c.frangi.beta));
  f.push_back(dbl("frangi", "c_fraction", c.frangi.c_fraction));

  f.push_back(integer("synth", "size_px", c.corpus.size_px));
  f.push_back(dbl("synth", "fov_mm", c.corpus.fov_mm));
  f.push_back(integer("synth", "branch_depth", c.tree.branch_depth));
  f.push_back(dbl("synth", "branch_angle_jitter_deg", c.tree.branch_angle_jitter_deg));
  f.push_back(dbl("synth", "vessel_sigma_px", c.tree.vessel_sigma_px));
  f.push_back(dbl("synth", "capillary_density", c.tree.capillary_density));
  f.push_back(dbl("synth", "faz_diameter_mm", c.tree.faz_diameter_mm));
  f.push_back(integer("synth", "degradation_factor", c.corpus.degradation.factor));
  f.push_back(dbl("synth", "blur_sigma_px", c.corpus.degradation.blur_sigma_px));
  f.push_back(dbl("synth", "noise_sigma", c.corpus.degradation.noise_sigma));

  f.push_back(integer("falseflow", "images", c.falseflow.images));
  f.push_back(dbl("falseflow", "epsilon", c.falseflow.epsilon));
  f.push_back(integer("falseflow", "median_window", c.falseflow.median_window));
  return f;
}

}  // namespace

void RunConfig::apply(const KeyValueDoc& doc) {
  std::vector<Field> table = fields(*this);
  for (const auto& section : doc.sections()) {
    for (const auto& [key, value] : section.entries) {
      auto it = std::find_if(table.begin(), table.end(),
                             [&](const Field& f) { return f.section == section.name && f.key == key; });
      if (it == table.end()) {
        throw usage_error("unknown config key '" + key + "'" +
                          (section.name.empty() ? std::string() : " in [" + section.name + "]"));
      }
      it->set(value);
      if (section.name == "model") model_explicit = true;
    }
  }
  if (metrics.center && (metrics.center->row < 0 || metrics.center->col < 0)) {
    throw usage_error("metrics.faz_row and metrics.faz_col must be given together");
  }
}

KeyValueDoc RunConfig::to_doc() const {
  RunConfig copy = *this;
  KeyValueDoc doc;
  for (const Field& f : fields(copy)) doc.section(f.section).set(f.key, f.get());
  return doc;
}

std::string config_reference() {
  return "Config file keys and defaults (key=value under [section] headers):\n\n" +
         RunConfig{}.to_doc().serialize();
}

SummaryStat summarize(const std::vector<double>& values) {
  SummaryStat s;
  double sum = 0.0;
  for (double v : values) {
    if (std::isfinite(v)) {
      sum += v;
      ++s.n;
    }
  }
  if (s.n == 0) {
    s.mean = s.stddev = std::numeric_limits<double>::quiet_NaN();
    return s;
  }
  s.mean = sum / static_cast<double>(s.n);
  if (s.n > 1) {
    double ss = 0.0;
    for (double v : values) {
      if (std::isfinite(v)) ss += (v - s.mean) * (v - s.mean);
    }
    s.stddev = std::sqrt(ss / static_cast<double>(s.n - 1));
  }
  return s;
}

namespace {

struct Context {
  RunConfig config;
  fs::path out;
  std::ostream& log;
};

void ensure_out_dir(const fs::path& dir) {
  if (dir.empty()) throw usage_error("--out is required");
  if (fs::is_directory(dir)) return;
  if (fs::exists(dir)) throw data_error("output path " + dir.string() + " is not a directory");
  const fs::path parent = dir.has_parent_path() ? dir.parent_path() : fs::path(".");
  if (!fs::is_directory(parent)) throw data_error("cannot create " + dir.string() + ": parent directory missing");
  std::error_code ec;
  fs::create_directory(dir, ec);
  if (ec) throw data_error("cannot create " + dir.string() + ": " + ec.message());
}

void persist_config(const Context& ctx) {
  write_file_atomic(ctx.out / "config.txt", ctx.config.to_doc().serialize());
}

std::string tsv(double v) { return format_double(v); }

std::vector<fs::path> corpus_images(const fs::path& corpus, const std::string& which) {
  const CorpusManifest m = load_manifest(corpus);
  std::vector<fs::path> out;
  for (const CorpusEntry& e : m.entries) {
    if (which == "clean" || which == "all") out.push_back(corpus / e.clean_file);
    if (which == "degraded" || which == "all") out.push_back(corpus / e.degraded_file);
  }
  if (which != "clean" && which != "degraded" && which != "all") {
    throw usage_error("--which must be clean, degraded or all");
  }
  return out;
}

std::vector<fs::path> resolve_images(const std::vector<std::string>& images, const std::string& corpus,
                                     const std::string& which) {
  std::vector<fs::path> paths(images.begin(), images.end());
  if (!corpus.empty()) {
    for (fs::path& p : corpus_images(corpus, which)) paths.push_back(std::move(p));
  }
  if (paths.empty()) throw usage_error("no input images (give paths or --corpus)");
  return paths;
}

Model load_model(const Context& ctx, const std::string& checkpoint) {
  Model model = load_checkpoint(checkpoint);
  if (ctx.config.model_explicit && !(model.spec() == ctx.config.model)) {
    const ModelSpec& a = model.spec();
    const ModelSpec& b = ctx.config.model;
    throw data_error("checkpoint " + checkpoint + " has spec " + std::to_string(a.low_level_channels) + "/" +
                     std::to_string(a.block_count) + "x" + std::to_string(a.layers_per_block) + "/" +
                     std::to_string(a.block_channels) + " but the config asks for " +
                     std::to_string(b.low_level_channels) + "/" + std::to_string(b.block_count) + "x" +
                     std::to_string(b.layers_per_block) + "/" + std::to_string(b.block_channels));
  }
  return model;
}

/// Whole-image reconstruction of a Raw255 or Unit angiogram, returned in Unit scale.
Angiogram run_model(const Model& model, const Angiogram& img) {
  const Angiogram unit = img.scale() == IntensityScale::Raw255 ? normalize_unit(img) : img;
  return reconstruct(model, unit).with_id(img.id());
}

struct Evaluated {
  MetricsReport report;
  std::string status = "ok";
  std::string message;
};

Evaluated evaluate_one(const Angiogram& img, const MetricOptions& options) {
  Evaluated e;
  e.report.id = img.id();
  const Angiogram raw = img.scale() == IntensityScale::Raw255 ? img : to_raw255(img);
  const PixelRegion::Pixel c = options.center.value_or(image_center(raw));
  e.report.region_row = c.row;
  e.report.region_col = c.col;
  e.report.region_diameter_mm = options.region_diameter_mm;
  e.report.contrast_rms = rms_contrast(raw);
  const double nan = std::numeric_limits<double>::quiet_NaN();
  auto fail = [&e](const std::string& what, const Error& ex) {
    e.status = "error";
    e.message += (e.message.empty() ? "" : "; ") + what + ": " + ex.what();
  };
  try {
    e.report.noise_intensity = noise_intensity(raw, circular_region(raw, c, options.region_diameter_mm));
  } catch (const Error& ex) {
    e.report.noise_intensity = nan;
    fail("noise_intensity", ex);
  }
  try {
    const BinaryGrid bin = binarize(raw, otsu_threshold(raw));
    e.report.connectivity = skeleton_connectivity(skeletonize(bin), options.min_component);
  } catch (const Error& ex) {
    e.report.connectivity = nan;
    fail("connectivity", ex);
  }
  return e;
}

const char* kEvalHeader =
    "id\tstatus\tnoise_intensity\tcontrast_rms\tconnectivity\tregion_row\tregion_col\tregion_diameter_mm\tmessage\n";

std::string eval_row(const Evaluated& e) {
  const MetricsReport& r = e.report;
  return r.id + '\t' + e.status + '\t' + tsv(r.noise_intensity) + '\t' + tsv(r.contrast_rms) + '\t' +
         tsv(r.connectivity) + '\t' + std::to_string(r.region_row) + '\t' + std::to_string(r.region_col) + '\t' +
         tsv(r.region_diameter_mm) + '\t' + e.message + '\n';
}

// -- commands -----------------------------------------------------------------

void cmd_synth(Context& ctx, long long n) {
  if (n < 1) throw usage_error("--n must be at least 1");
  VesselTreeSpec spec = ctx.config.tree;
  spec.seed = ctx.config.seed;
  const CorpusManifest m = make_corpus(static_cast<std::size_t>(n), spec, ctx.out, ctx.config.corpus);
  persist_config(ctx);
  ctx.log << "wrote " << m.entries.size() << " pairs to " << ctx.out.string() << "\n";
}

void cmd_train(Context& ctx, const std::string& corpus) {
  RunConfig& c = ctx.config;
  const CorpusManifest manifest = load_manifest(corpus);
  Diagnostics diag;
  PatchSet patches = prepare_corpus_patches(manifest, corpus, c.prepare, &diag);
  TrainOptions opts = c.train;
  opts.seed = c.seed;
  if (c.overfit) {
    patches.patches.resize(1);
    opts = overfit_options(opts);
  }
  ctx.log << "training on " << patches.patches.size() << " patches of " << patches.patch_size << "x"
          << patches.patch_size << "\n";
  Model model = Model::build(c.model, c.seed);
  const TrainReport report = train_model(model, patches, opts);
  write_file_atomic(ctx.out / "loss_log.tsv", format_loss_log(report));
  save_checkpoint(model, ctx.out / "checkpoint.harn");
  persist_config(ctx);
  for (const std::string& w : diag.warnings) ctx.log << "warning: " << w << "\n";
  ctx.log << "epochs " << report.epochs.size() << ", steps " << report.steps << ", final loss "
          << (report.epochs.empty() ? 0.0 : report.epochs.back().loss) << "\n";
}

void cmd_reconstruct(Context& ctx, const std::string& checkpoint, const std::vector<fs::path>& images) {
  const Model model = load_model(ctx, checkpoint);
  std::string index = "input\toutput\theight\twidth\n";
  for (const fs::path& p : images) {
    const Angiogram img = load_image(p);
    const Angiogram rec = run_model(model, img);
    const fs::path dst = ctx.out / (p.stem().string() + "_recon.png");
    save_image(rec, dst);
    index += p.string() + '\t' + dst.filename().string() + '\t' + std::to_string(rec.height()) + '\t' +
             std::to_string(rec.width()) + '\n';
  }
  write_file_atomic(ctx.out / "reconstructions.tsv", index);
  persist_config(ctx);
  ctx.log << "reconstructed " << images.size() << " images\n";
}

void cmd_evaluate(Context& ctx, const std::vector<fs::path>& images) {
  std::string report = kEvalHeader;
  std::size_t failures = 0;
  for (const fs::path& p : images) {
    const Evaluated e = evaluate_one(load_image(p), ctx.config.metrics);
    if (e.status != "ok") ++failures;
    report += eval_row(e);
  }
  write_file_atomic(ctx.out / "metrics.tsv", report);
  persist_config(ctx);
  ctx.log << "evaluated " << images.size() << " images, " << failures << " with failures\n";
}

void cmd_compare(Context& ctx, const std::string& checkpoint, const std::vector<fs::path>& images) {
  const RunConfig& c = ctx.config;
  const Model model = load_model(ctx, checkpoint);
  const std::vector<std::string> methods{"Original", "Gabor", "Frangi", "HARNet"};
  std::vector<std::vector<Evaluated>> results(methods.size());
  std::string records = "method\t" + std::string(kEvalHeader);
  for (const fs::path& p : images) {
    const Angiogram img = load_image(p);
    const Angiogram raw = img.scale() == IntensityScale::Raw255 ? img : to_raw255(img);
    const std::vector<Angiogram> outputs{raw, gabor_enhance(raw, c.gabor), frangi_vesselness(raw, c.frangi),
                                         to_raw255(run_model(model, raw))};
    for (std::size_t m = 0; m < methods.size(); ++m) {
      Evaluated e = evaluate_one(outputs[m].with_id(raw.id()), c.metrics);
      records += methods[m] + '\t' + eval_row(e);
      results[m].push_back(std::move(e));
    }
  }
  std::string table =
      "method\tn\tnoise_mean\tnoise_std\tcontrast_mean\tcontrast_std\tconnectivity_mean\tconnectivity_std\n";
  for (std::size_t m = 0; m < methods.size(); ++m) {
    std::vector<double> noise, contrast, conn;
    for (const Evaluated& e : results[m]) {
      noise.push_back(e.report.noise_intensity);
      contrast.push_back(e.report.contrast_rms);
      conn.push_back(e.report.connectivity);
    }
    const SummaryStat a = summarize(noise), b = summarize(contrast), d = summarize(conn);
    table += methods[m] + '\t' + std::to_string(results[m].size()) + '\t' + tsv(a.mean) + '\t' + tsv(a.stddev) +
             '\t' + tsv(b.mean) + '\t' + tsv(b.stddev) + '\t' + tsv(d.mean) + '\t' + tsv(d.stddev) + '\n';
    ctx.log << methods[m] << ": noise " << a.mean << " +- " << a.stddev << ", contrast " << b.mean << " +- "
            << b.stddev << ", connectivity " << d.mean << " +- " << d.stddev << "\n";
  }
  write_file_atomic(ctx.out / "compare_records.tsv", records);
  write_file_atomic(ctx.out / "compare_table.tsv", table);
  persist_config(ctx);
}

void cmd_falseflow(Context& ctx, const std::string& checkpoint, const std::string& corpus) {
  const RunConfig& c = ctx.config;
  const Model model = load_model(ctx, checkpoint);
  const CorpusManifest manifest = load_manifest(corpus);
  const int k = c.falseflow.images;
  if (k < 1) throw usage_error("falseflow.images must be at least 1");
  if (manifest.entries.size() < static_cast<std::size_t>(k)) {
    throw data_error("corpus has " + std::to_string(manifest.entries.size()) + " pairs, falseflow needs " +
                     std::to_string(k));
  }
  const NoiseGrid grid = default_noise_grid();
  const double eps = c.falseflow.epsilon;

  struct Point {
    double noise;
    double flow;
  };
  std::vector<Point> sweep_points;
  double baseline_max_noise = 0.0;
  std::string rows =
      "kind\timage_id\tmu_index\tsigma_index\tmu\tsigma\tseed\tnoise_intensity\tfalse_flow_intensity\n";
  for (int i = 0; i < k; ++i) {
    const Angiogram raw = load_image(fs::path(corpus) / manifest.entries[static_cast<std::size_t>(i)].clean_file);
    const Angiogram denoised = denoise_for_sweep(raw, c.gabor, c.falseflow.median_window);
    const PixelRegion region =
        circular_region(denoised, c.metrics.center.value_or(image_center(denoised)), c.metrics.region_diameter_mm);
    const double base_noise = noise_intensity(to_raw255(denoised), region);
    const double base_flow = false_flow_intensity(to_raw255(reconstruct(model, denoised)), region);
    baseline_max_noise = std::max(baseline_max_noise, base_noise);
    rows += "baseline\t" + raw.id() + "\t-1\t-1\t0\t0\t0\t" + tsv(base_noise) + '\t' + tsv(base_flow) + '\n';

    const std::uint64_t base_seed = mix_seed(c.seed + static_cast<std::uint64_t>(i));
    for (const SweepEntry& e : noise_sweep(denoised, grid, base_seed, region)) {
      const double flow = false_flow_intensity(to_raw255(reconstruct(model, e.noisy)), region);
      sweep_points.push_back({e.noise_intensity, flow});
      rows += "sweep\t" + raw.id() + '\t' + std::to_string(e.mu_index) + '\t' + std::to_string(e.sigma_index) +
              '\t' + tsv(e.params.mu) + '\t' + tsv(e.params.sigma) + '\t' + std::to_string(e.params.seed) + '\t' +
              tsv(e.noise_intensity) + '\t' + tsv(flow) + '\n';
    }
  }

  // Largest input noise among clean entries, and the largest level below which every entry is clean.
  double max_clean = std::numeric_limits<double>::quiet_NaN();
  std::size_t clean_count = 0;
  for (const Point& p : sweep_points) {
    if (p.flow < eps) {
      ++clean_count;
      max_clean = std::isnan(max_clean) ? p.noise : std::max(max_clean, p.noise);
    }
  }
  std::vector<Point> sorted = sweep_points;
  std::sort(sorted.begin(), sorted.end(), [](const Point& a, const Point& b) { return a.noise < b.noise; });
  double threshold = std::numeric_limits<double>::quiet_NaN();
  for (const Point& p : sorted) {
    if (!(p.flow < eps)) break;
    threshold = p.noise;
  }

  KeyValueDoc summary;
  auto& s = summary.section("");
  s.set("images", std::to_string(k));
  s.set("sweep_entries", std::to_string(sweep_points.size()));
  s.set("epsilon", tsv(eps));
  s.set("baseline_max_noise_intensity", tsv(baseline_max_noise));
  s.set("false_flow_free_entries", std::to_string(clean_count));
  s.set("max_noise_with_no_false_flow", tsv(max_clean));
  s.set("false_flow_free_below", tsv(threshold));
  write_file_atomic(ctx.out / "falseflow.tsv", rows);
  write_file_atomic(ctx.out / "falseflow_summary.txt", summary.serialize());
  persist_config(ctx);
  ctx.log << "sweep entries " << sweep_points.size() << ", max noise with no false flow " << max_clean
          << ", false-flow free below " << threshold << "\n";
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Residual reconstruction of undersampled OCT angiograms"};
  app.footer(config_reference());
  app.require_subcommand(1);
  app.fallthrough();

  std::string config_path;
  std::optional<long long> seed;
  std::string out_dir;
  app.add_option("--config", config_path, "Config file (key=value with [section] headers)");
  app.add_option("--seed", seed, "Master seed (overrides [run] seed)");
  app.add_option("--out", out_dir, "Output directory (created if its parent exists)");

  long long n = 0;
  auto* synth = app.add_subcommand("synth", "Generate a synthetic paired corpus");
  synth->add_option("--n", n, "Number of pairs")->required();

  std::string corpus, checkpoint, which = "degraded";
  long long epochs = -1, max_steps = -1;
  bool overfit = false;
  std::vector<std::string> images;
  auto* train = app.add_subcommand("train", "Train a model on a corpus");
  train->add_option("--corpus", corpus, "Corpus directory")->required();
  train->add_option("--epochs", epochs, "Maximum epochs (overrides [train] max_epochs)");
  train->add_option("--max-steps", max_steps, "Maximum optimizer steps (overrides [train] max_steps)");
  train->add_flag("--overfit", overfit, "Fit a single patch with batch size 1");

  auto* recon = app.add_subcommand("reconstruct", "Reconstruct whole images");
  recon->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  recon->add_option("--corpus", corpus, "Take images from a corpus");
  recon->add_option("--which", which, "Corpus member: clean, degraded or all");
  recon->add_option("images", images, "Image files");

  auto* evaluate = app.add_subcommand("evaluate", "Noise, contrast and connectivity per image");
  evaluate->add_option("--corpus", corpus, "Take images from a corpus");
  evaluate->add_option("--which", which, "Corpus member: clean, degraded or all");
  evaluate->add_option("images", images, "Image files");

  auto* compare = app.add_subcommand("compare", "Original, Gabor, Frangi and model side by side");
  compare->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  compare->add_option("--corpus", corpus, "Take images from a corpus");
  compare->add_option("--which", which, "Corpus member: clean, degraded or all");
  compare->add_option("images", images, "Image files");

  auto* falseflow = app.add_subcommand("falseflow", "Noise sweep false-flow experiment");
  falseflow->add_option("--checkpoint", checkpoint, "Checkpoint file")->required();
  falseflow->add_option("--corpus", corpus, "Corpus whose clean images are swept")->required();

  std::vector<std::string> argv_rev(args.rbegin(), args.rend());
  try {
    app.parse(argv_rev);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Usage);
  }

  try {
    Context ctx{RunConfig{}, fs::path(out_dir), out};
    if (!config_path.empty()) ctx.config.apply(KeyValueDoc::load(config_path));
    if (seed) {
      if (*seed < 0) throw usage_error("--seed must be non-negative");
      ctx.config.seed = static_cast<std::uint64_t>(*seed);
    }
    if (epochs >= 0) ctx.config.train.max_epochs = static_cast<int>(epochs);
    if (max_steps >= 0) ctx.config.train.max_steps = max_steps;
    if (overfit) ctx.config.overfit = true;
    ctx.config.model.validate();

    ensure_out_dir(ctx.out);
    if (synth->parsed()) {
      cmd_synth(ctx, n);
    } else if (train->parsed()) {
      cmd_train(ctx, corpus);
    } else if (recon->parsed()) {
      cmd_reconstruct(ctx, checkpoint, resolve_images(images, corpus, which));
    } else if (evaluate->parsed()) {
      cmd_evaluate(ctx, resolve_images(images, corpus, which));
    } else if (compare->parsed()) {
      cmd_compare(ctx, checkpoint, resolve_images(images, corpus, which));
    } else if (falseflow->parsed()) {
      cmd_falseflow(ctx, checkpoint, corpus);
    }
  } catch (const Error& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return static_cast<int>(ErrorKind::Data);
  }
  return 0;
}

}  // namespace harnet
