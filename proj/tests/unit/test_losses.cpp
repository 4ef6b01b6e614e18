#include <doctest.h>

#include <cmath>
#include <random>

#include "harnet/error.hpp"
#include "harnet/losses.hpp"
#include "support.hpp"

using namespace harnet;
using namespace harnet::nn;
using harnet::testing::gradient_error;
using harnet::testing::random_tensor;

namespace {

// Direct scalar evaluation of the structural similarity formula.
double ssim_oracle(const std::vector<double>& x, const std::vector<double>& y, double c1, double c2) {
  const double n = static_cast<double>(x.size());
  double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= n;
  my /= n;
  double vx = 0, vy = 0, cxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    vx += (x[i] - mx) * (x[i] - mx);
    vy += (y[i] - my) * (y[i] - my);
    cxy += (x[i] - mx) * (y[i] - my);
  }
  vx /= n;
  vy /= n;
  cxy /= n;
  return (2 * mx * my + c1) / (mx * mx + my * my + c1) * (2 * cxy + c2) / (vx + vy + c2);
}

std::vector<double> values(const Tensor64& t) { return {t.data().begin(), t.data().end()}; }

}  // namespace

TEST_CASE("mse examples") {
  std::mt19937_64 rng(1);
  auto x = random_tensor({1, 1, 4, 4}, rng, false);
  CHECK(mse_loss(x, x).item() == 0.0);
  CHECK(mse_loss(Tensor64::zeros({3, 3}), Tensor64::full({3, 3}, 1.0)).item() == 1.0);
  CHECK(mse_loss(Tensor64::from_data({2}, {0.0, 1.0}), Tensor64::from_data({2}, {1.0, 3.0})).item() == 2.5);
  CHECK_THROWS_AS(mse_loss(Tensor64::zeros({2}), Tensor64::zeros({3})), Error);
}

TEST_CASE("ssim constant images") {
  const double s = ssim(Tensor64::zeros({1, 1, 4, 4}), Tensor64::full({1, 1, 4, 4}, 1.0)).item();
  CHECK(s == doctest::Approx(0.01 / 1.01).epsilon(1e-12));
  CHECK(std::abs(s - 0.0099009900990099) < 1e-6);
  CHECK(ssim(Tensor64::full({4, 4}, 0.3), Tensor64::full({4, 4}, 0.3)).item() == doctest::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("ssim identity, symmetry and an inverted pair") {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 20; ++i) {
    auto x = random_tensor({1, 1, 8, 8}, rng, false, 0.0, 1.0);
    auto y = random_tensor({1, 1, 8, 8}, rng, false, 0.0, 1.0);
    CHECK(std::abs(ssim(x, x).item() - 1.0) < 1e-9);
    CHECK(ssim(x, y).item() == ssim(y, x).item());
    CHECK(ssim(x, y).item() == doctest::Approx(ssim_oracle(values(x), values(y), 0.01, 0.03)).epsilon(1e-12));
  }
  auto x = random_tensor({1, 1, 8, 8}, rng, false, 0.0, 1.0);
  std::vector<double> inv(x.numel());
  for (std::size_t i = 0; i < inv.size(); ++i) inv[i] = 1.0 - x.data()[i];
  const double s = ssim(x, Tensor64::from_data(x.shape(), inv)).item();
  CHECK(s == doctest::Approx(ssim_oracle(values(x), inv, 0.01, 0.03)).epsilon(1e-12));
  CHECK(s < 0.0);
}

TEST_CASE("ssim batch is the mean of per-sample values") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({3, 1, 5, 5}, rng, false, 0.0, 1.0);
  auto y = random_tensor({3, 1, 5, 5}, rng, false, 0.0, 1.0);
  double expected = 0.0;
  for (int b = 0; b < 3; ++b) {
    std::vector<double> xs(x.data().begin() + b * 25, x.data().begin() + (b + 1) * 25);
    std::vector<double> ys(y.data().begin() + b * 25, y.data().begin() + (b + 1) * 25);
    expected += ssim_oracle(xs, ys, 0.01, 0.03) / 3;
  }
  CHECK(ssim(x, y).item() == doctest::Approx(expected).epsilon(1e-12));
}

TEST_CASE("literature constants are the squared form") {
  const auto c = SsimConstants::literature();
  CHECK(c.c1 == doctest::Approx(1e-4));
  CHECK(c.c2 == doctest::Approx(9e-4));
  std::mt19937_64 rng(4);
  auto x = random_tensor({1, 1, 6, 6}, rng, false, 0.0, 1.0);
  auto y = random_tensor({1, 1, 6, 6}, rng, false, 0.0, 1.0);
  CHECK(ssim(x, y, c).item() == doctest::Approx(ssim_oracle(values(x), values(y), 1e-4, 9e-4)).epsilon(1e-12));
}

TEST_CASE("combined loss composes its parts") {
  auto zero = Tensor64::zeros({1, 1, 4, 4});
  auto one = Tensor64::full({1, 1, 4, 4}, 1.0);
  const auto c = combined_loss(zero, one);
  CHECK(c.breakdown.mse == 1.0);
  CHECK(c.breakdown.ssim == doctest::Approx(0.01 / 1.01));
  CHECK(std::abs(c.breakdown.total - (1.0 + 1.0 - 0.01 / 1.01)) < 1e-7);
  CHECK(std::abs(c.total.item() - c.breakdown.total) < 1e-12);

  std::mt19937_64 rng(5);
  auto x = random_tensor({2, 1, 6, 6}, rng, false, 0.0, 1.0);
  CHECK(std::abs(combined_loss(x, x).breakdown.total) < 1e-12);
}

TEST_CASE("loss gradients match finite differences on 8x8 pairs") {
  std::mt19937_64 rng(6);
  for (int trial = 0; trial < 3; ++trial) {
    std::vector<Tensor64> in{random_tensor({1, 1, 8, 8}, rng, true, 0.0, 1.0),
                             random_tensor({1, 1, 8, 8}, rng, true, 0.0, 1.0)};
    CHECK(gradient_error([](auto& t) { return mse_loss(t[0], t[1]); }, in) < 1e-3);
    CHECK(gradient_error([](auto& t) { return ssim(t[0], t[1]); }, in) < 1e-3);
    CHECK(gradient_error([](auto& t) { return combined_loss(t[0], t[1]).total; }, in) < 1e-3);
    CHECK(gradient_error([](auto& t) { return ssim(t[0], t[1], SsimConstants::literature()); }, in) < 1e-3);
  }
  std::vector<Tensor64> batch{random_tensor({3, 1, 8, 8}, rng, true, 0.0, 1.0),
                              random_tensor({3, 1, 8, 8}, rng, true, 0.0, 1.0)};
  CHECK(gradient_error([](auto& t) { return combined_loss(t[0], t[1]).total; }, batch) < 1e-3);
}

TEST_CASE("float and double losses agree") {
  std::mt19937_64 rng(7);
  auto x = random_tensor({2, 1, 8, 8}, rng, false, 0.0, 1.0);
  auto y = random_tensor({2, 1, 8, 8}, rng, false, 0.0, 1.0);
  const double d = combined_loss(x, y).breakdown.total;
  const double f = combined_loss(cast<float>(x), cast<float>(y)).breakdown.total;
  CHECK(std::abs(d - f) < 1e-5);
}
