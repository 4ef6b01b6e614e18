#pragma once

#include "harnet/tensor.hpp"

namespace harnet {

/// SSIM stabilising constants. The defaults are used literally as additive
/// terms; `literature()` gives the (K * L)^2 form for comparison runs.
struct SsimConstants {
  double c1 = 0.01;
  double c2 = 0.03;

  static SsimConstants printed() { return {0.01, 0.03}; }
  static SsimConstants literature(double dynamic_range = 1.0) {
    return {(0.01 * dynamic_range) * (0.01 * dynamic_range), (0.03 * dynamic_range) * (0.03 * dynamic_range)};
  }
};

struct LossBreakdown {
  double mse = 0.0;
  double ssim = 0.0;
  double total = 0.0;
};

/// Mean squared difference over every element (batch included).
template <class T>
nn::BasicTensor<T> mse_loss(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& y);

/**
 * Global structural similarity.
 *
 * Statistics are whole-sample moments with population (1/N) variance:
 *
 *   SSIM = (2 mx my + C1) / (mx^2 + my^2 + C1) * (2 sxy + C2) / (sx^2 + sy^2 + C2)
 *
 * For NCHW input each batch sample is one statistic window and the result is
 * the batch mean; any other rank is treated as a single sample.
 */
template <class T>
nn::BasicTensor<T> ssim(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& y,
                        const SsimConstants& constants = {});

template <class T>
struct CombinedLoss {
  nn::BasicTensor<T> total;  // MSE + (1 - SSIM), differentiable
  LossBreakdown breakdown;
};

template <class T>
CombinedLoss<T> combined_loss(const nn::BasicTensor<T>& x, const nn::BasicTensor<T>& y,
                              const SsimConstants& constants = {});

}  // namespace harnet
