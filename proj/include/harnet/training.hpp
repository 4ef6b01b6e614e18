#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "harnet/losses.hpp"
#include "harnet/model.hpp"
#include "harnet/preprocess.hpp"
#include "harnet/synthdata.hpp"

namespace harnet {

struct PrepareOptions {
  int patch_size = 38;
  int stride = 19;
  bool augment = true;
  /// Smooth the ground truth with a bilateral filter before normalisation.
  bool bilateral_target = true;
  double bilateral_spatial_sigma = 2.0;
  double bilateral_range_sigma = 25.0;
  /// Register degraded onto clean even when the manifest says the pair is aligned.
  bool force_registration = false;
};

/// One training pair after registration, cropping and [0,1] normalisation.
struct PreparedPair {
  Angiogram input;
  Angiogram target;
  Rect crop;
  bool registered = false;
};

/// Register (when needed), crop to the maximum inscribed rectangle of the
/// overlap, filter the target and normalise both members.
PreparedPair prepare_pair(const Angiogram& degraded, const Angiogram& clean, bool aligned,
                          const PrepareOptions& options, Diagnostics* diag = nullptr);

/// Prepared, augmented and tiled patches for every pair of a corpus.
PatchSet prepare_corpus_patches(const CorpusManifest& manifest, const std::filesystem::path& corpus_dir,
                                const PrepareOptions& options, Diagnostics* diag = nullptr);

struct TrainOptions {
  double lr = 0.01;
  int batch_size = 128;
  int max_epochs = 50;
  /// Hard cap on optimizer steps; 0 means no cap.
  long long max_steps = 0;
  /// Batches per epoch drawn from a cycling shuffled stream; 0 means one pass over the patches.
  int steps_per_epoch = 0;
  std::uint64_t seed = 0;
  SsimConstants ssim_constants;
  double lr_factor = 0.1;
  int lr_patience = 2;
  double min_lr = 1e-6;
  double stop_delta = 1e-5;
  int stop_patience = 3;
};

struct EpochRecord {
  int epoch = 0;
  double lr = 0.0;  // rate used during the epoch
  double loss = 0.0;
  double mse = 0.0;
  double ssim = 0.0;
  double best_loss = 0.0;
};

struct TrainReport {
  std::vector<EpochRecord> epochs;
  long long steps = 0;
  bool stopped_by_schedule = false;
  double final_lr = 0.0;
};

/// Single-patch mode: batch 1, at most 2000 steps, epochs of 100 steps.
TrainOptions overfit_options(TrainOptions base);

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Mini-batch Adam on MSE + (1 - SSIM) with the plateau schedule applied at
/// each epoch end. Throws a numerical error on a non-finite loss.
TrainReport train_model(Model& model, const PatchSet& patches, const TrainOptions& options,
                        const EpochCallback& on_epoch = {});

/// Tab-separated loss log with a header row.
std::string format_loss_log(const TrainReport& report);

}  // namespace harnet
