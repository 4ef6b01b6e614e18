#pragma once

#include <cstdlib>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "harnet/image.hpp"
#include "harnet/tensor.hpp"

namespace harnet::testing {

/// Fresh scratch directory under HARNET_TEST_TMP (or the system temp dir).
inline std::filesystem::path scratch_dir(const std::string& name) {
  const char* root = std::getenv("HARNET_TEST_TMP");
  std::filesystem::path base = root ? std::filesystem::path(root) : std::filesystem::temp_directory_path() / "harnet_tests";
  std::filesystem::path dir = base / name;
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline std::vector<double> random_values(std::size_t n, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(n);
  for (double& x : v) x = u(rng);
  return v;
}

inline Angiogram random_raw(int h, int w, std::mt19937_64& rng, double fov = 3.0) {
  std::uniform_int_distribution<int> u(0, 255);
  std::vector<double> px(static_cast<std::size_t>(h) * w);
  for (double& x : px) x = u(rng);
  return Angiogram(h, w, std::move(px), IntensityScale::Raw255, fov, "random");
}

inline Angiogram filled(int h, int w, double value, IntensityScale scale = IntensityScale::Raw255, double fov = 3.0) {
  return Angiogram(h, w, std::vector<double>(static_cast<std::size_t>(h) * w, value), scale, fov, "filled");
}

/// Norm-wise relative error max|a - n| / max|n| between analytic and central
/// finite-difference gradients of a scalar function of several double tensors.
template <class F>
double gradient_error(F&& f, std::vector<nn::Tensor64> inputs, double step = 1e-6) {
  for (auto& t : inputs) t.zero_grad();
  nn::Tensor64 out = f(inputs);
  nn::backward(out);
  double worst_diff = 0.0, scale = 0.0;
  for (auto& t : inputs) {
    if (!t.requires_grad()) continue;
    std::vector<double> analytic(t.grad().begin(), t.grad().end());
    if (analytic.empty()) analytic.assign(t.numel(), 0.0);
    auto data = t.mutable_data();
    for (std::size_t i = 0; i < data.size(); ++i) {
      const double keep = data[i];
      data[i] = keep + step;
      double up;
      double down;
      {
        nn::NoGradGuard guard;
        up = f(inputs).item();
        data[i] = keep - step;
        down = f(inputs).item();
      }
      data[i] = keep;
      const double numeric = (up - down) / (2 * step);
      worst_diff = std::max(worst_diff, std::abs(analytic[i] - numeric));
      scale = std::max(scale, std::abs(numeric));
    }
  }
  return worst_diff / std::max(scale, 1e-12);
}

inline nn::Tensor64 random_tensor(const nn::Shape& shape, std::mt19937_64& rng, bool requires_grad = true,
                                  double lo = -1.0, double hi = 1.0) {
  return nn::Tensor64::from_data(shape, random_values(nn::numel(shape), rng, lo, hi), requires_grad);
}

}  // namespace harnet::testing
