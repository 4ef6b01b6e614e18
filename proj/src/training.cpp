#include "harnet/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "harnet/baselines.hpp"

namespace harnet {

PreparedPair prepare_pair(const Angiogram& degraded, const Angiogram& clean, bool aligned,
                          const PrepareOptions& options, Diagnostics* diag) {
  if (degraded.scale() != IntensityScale::Raw255 || clean.scale() != IntensityScale::Raw255) {
    throw usage_error("training pairs must be Raw255 images");
  }
  if (degraded.height() != clean.height() || degraded.width() != clean.width()) {
    throw data_error("pair " + degraded.id() + " / " + clean.id() + " differ in size");
  }
  Angiogram input = degraded;
  Angiogram target = clean;
  Rect rect{0, 0, clean.height(), clean.width()};
  bool registered = false;
  if (!aligned || options.force_registration) {
    const Angiogram moving = to_unit(degraded);
    const Angiogram fixed = to_unit(clean);
    const RegistrationResult reg = register_images(moving, fixed);
    const Angiogram warped = warp(degraded, reg.transform);
    rect = max_inscribed_rect(overlap_region(moving, fixed, reg.transform));
    input = warped;
    registered = true;
  }
  if (rect.height < options.patch_size || rect.width < options.patch_size) {
    throw data_error("overlap of " + degraded.id() + " is smaller than one patch");
  }
  input = crop(input, rect);
  target = crop(target, rect);
  if (options.bilateral_target) {
    target = bilateral(target, options.bilateral_spatial_sigma, options.bilateral_range_sigma);
  }
  return {normalize_unit(input, diag), normalize_unit(target, diag), rect, registered};
}

PatchSet prepare_corpus_patches(const CorpusManifest& manifest, const std::filesystem::path& corpus_dir,
                                const PrepareOptions& options, Diagnostics* diag) {
  if (manifest.entries.empty()) throw data_error("corpus " + corpus_dir.string() + " has no pairs");
  PatchSet out;
  out.patch_size = options.patch_size;
  out.stride = options.stride;
  out.source_id = corpus_dir.filename().string();
  for (const CorpusEntry& entry : manifest.entries) {
    const Angiogram clean = load_image(corpus_dir / entry.clean_file);
    const Angiogram degraded = load_image(corpus_dir / entry.degraded_file);
    PreparedPair prepared = prepare_pair(degraded, clean, manifest.aligned, options, diag);
    std::vector<std::pair<Angiogram, Angiogram>> variants;
    if (options.augment && prepared.input.is_square()) {
      variants = augment({prepared.input, prepared.target});
    } else {
      variants.emplace_back(prepared.input, prepared.target);
    }
    for (const auto& [in, tg] : variants) {
      PatchSet part = extract_patches(in, tg, options.patch_size, options.stride);
      for (PatchPair& p : part.patches) out.patches.push_back(std::move(p));
    }
  }
  return out;
}

TrainReport train_model(Model& model, const PatchSet& patches, const TrainOptions& options,
                        const EpochCallback& on_epoch) {
  if (patches.patches.empty()) throw data_error("no training patches");
  if (options.batch_size < 1 || options.max_epochs < 1 || !(options.lr > 0.0)) {
    throw usage_error("batch size, epoch count and learning rate must be positive");
  }
  const int s = patches.patch_size;
  const std::size_t area = static_cast<std::size_t>(s) * s;
  for (const PatchPair& p : patches.patches) {
    if (p.input.size() != area || p.target.size() != area) throw data_error("patch size mismatch");
  }

  std::vector<nn::Tensor> params = model.parameters();
  nn::AdamState<float> adam;
  adam.lr = options.lr;
  nn::PlateauSchedule schedule(options.lr);
  schedule.factor = options.lr_factor;
  schedule.patience_epochs = options.lr_patience;
  schedule.min_lr = options.min_lr;
  schedule.stop_delta = options.stop_delta;
  schedule.stop_patience = options.stop_patience;

  std::vector<std::size_t> order(patches.patches.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(mix_seed(options.seed));

  TrainReport report;
  const std::size_t batch = static_cast<std::size_t>(options.batch_size);
  const std::size_t batches_per_epoch =
      options.steps_per_epoch > 0 ? static_cast<std::size_t>(options.steps_per_epoch) : (order.size() + batch - 1) / batch;
  std::size_t cursor = order.size();  // forces a shuffle before the first batch
  for (int epoch = 1; epoch <= options.max_epochs; ++epoch) {
    double loss_sum = 0.0, mse_sum = 0.0, ssim_sum = 0.0;
    std::size_t seen = 0;
    bool step_cap = false;
    if (options.steps_per_epoch <= 0) cursor = order.size();
    for (std::size_t b = 0; b < batches_per_epoch; ++b) {
      if (options.max_steps > 0 && report.steps >= options.max_steps) {
        step_cap = true;
        break;
      }
      if (cursor >= order.size()) {
        std::shuffle(order.begin(), order.end(), rng);
        cursor = 0;
      }
      const std::size_t start = cursor;
      const std::size_t end = std::min(order.size(), start + batch);
      cursor = end;
      const int n = static_cast<int>(end - start);
      std::vector<float> xin(static_cast<std::size_t>(n) * area), ytg(xin.size());
      for (int k = 0; k < n; ++k) {
        const PatchPair& p = patches.patches[order[start + k]];
        std::copy(p.input.begin(), p.input.end(), xin.begin() + static_cast<std::ptrdiff_t>(k * area));
        std::copy(p.target.begin(), p.target.end(), ytg.begin() + static_cast<std::ptrdiff_t>(k * area));
      }
      const nn::Tensor x = nn::Tensor::from_data({n, 1, s, s}, std::move(xin));
      const nn::Tensor y = nn::Tensor::from_data({n, 1, s, s}, std::move(ytg));
      for (nn::Tensor& p : params) p.zero_grad();
      const CombinedLoss<float> loss = combined_loss(model.forward(x), y, options.ssim_constants);
      if (!std::isfinite(loss.breakdown.total)) {
        throw numerical_error("non-finite loss at epoch " + std::to_string(epoch) + ", step " +
                              std::to_string(report.steps + 1));
      }
      nn::backward(loss.total);
      nn::adam_step(std::span<nn::Tensor>(params), adam);
      ++report.steps;
      loss_sum += loss.breakdown.total * n;
      mse_sum += loss.breakdown.mse * n;
      ssim_sum += loss.breakdown.ssim * n;
      seen += static_cast<std::size_t>(n);
    }
    if (seen == 0) break;
    EpochRecord rec;
    rec.epoch = epoch;
    rec.lr = adam.lr;
    rec.loss = loss_sum / static_cast<double>(seen);
    rec.mse = mse_sum / static_cast<double>(seen);
    rec.ssim = ssim_sum / static_cast<double>(seen);
    const nn::ScheduleDecision decision = schedule.on_epoch_end(rec.loss);
    rec.best_loss = schedule.best_loss;
    adam.lr = decision.lr;
    report.epochs.push_back(rec);
    if (on_epoch) on_epoch(rec);
    if (decision.stop) {
      report.stopped_by_schedule = true;
      break;
    }
    if (step_cap) break;
  }
  report.final_lr = adam.lr;
  if (!report.epochs.empty()) {
    model.metadata.epochs = static_cast<std::uint32_t>(report.epochs.size());
    model.metadata.final_loss = report.epochs.back().loss;
  }
  model.metadata.seed = options.seed;
  return report;
}

TrainOptions overfit_options(TrainOptions base) {
  base.batch_size = 1;
  if (base.max_steps <= 0) base.max_steps = 2000;
  if (base.steps_per_epoch <= 0) base.steps_per_epoch = 100;
  base.max_epochs = static_cast<int>((base.max_steps + base.steps_per_epoch - 1) / base.steps_per_epoch);
  return base;
}

std::string format_loss_log(const TrainReport& report) {
  std::ostringstream os;
  os << "epoch\tlr\tloss\tmse\tssim\tbest_loss\n";
  for (const EpochRecord& r : report.epochs) {
    os << r.epoch << '\t' << format_double(r.lr) << '\t' << format_double(r.loss) << '\t' << format_double(r.mse)
       << '\t' << format_double(r.ssim) << '\t' << format_double(r.best_loss) << '\n';
  }
  return os.str();
}

}  // namespace harnet
