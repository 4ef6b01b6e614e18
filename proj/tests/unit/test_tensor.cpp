#include <doctest.h>

#include <cmath>
#include <random>

#include "harnet/error.hpp"
#include "harnet/tensor.hpp"
#include "support.hpp"

using namespace harnet;
using namespace harnet::nn;
using harnet::testing::gradient_error;
using harnet::testing::random_tensor;

namespace {

// Direct sliding-window sum, zero padding 1.
std::vector<double> naive_conv(const std::vector<double>& x, int n, int cin, int h, int w, const std::vector<double>& k,
                               int cout, const std::vector<double>& b) {
  std::vector<double> out(static_cast<std::size_t>(n) * cout * h * w, 0.0);
  for (int s = 0; s < n; ++s)
    for (int o = 0; o < cout; ++o)
      for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
          double acc = b[o];
          for (int i = 0; i < cin; ++i)
            for (int dr = -1; dr <= 1; ++dr)
              for (int dc = -1; dc <= 1; ++dc) {
                const int rr = r + dr, cc = c + dc;
                if (rr < 0 || rr >= h || cc < 0 || cc >= w) continue;
                acc += x[((s * cin + i) * h + rr) * w + cc] * k[((o * cin + i) * 3 + dr + 1) * 3 + dc + 1];
              }
          out[((s * cout + o) * h + r) * w + c] = acc;
        }
  return out;
}

}  // namespace

TEST_CASE("conv2d all-ones window sums") {
  auto x = Tensor64::full({1, 1, 5, 5}, 1.0);
  auto k = Tensor64::full({1, 1, 3, 3}, 1.0);
  auto b = Tensor64::zeros({1});
  auto y = conv2d(x, k, b);
  CHECK(y.shape() == Shape{1, 1, 5, 5});
  CHECK(y.data()[2 * 5 + 2] == 9.0);
  CHECK(y.data()[0 * 5 + 2] == 6.0);
  CHECK(y.data()[0] == 4.0);
  CHECK(y.data()[24] == 4.0);
}

TEST_CASE("conv2d delta kernel and bias-only cases") {
  std::mt19937_64 rng(3);
  auto x = random_tensor({2, 1, 6, 7}, rng, false);
  std::vector<double> delta(9, 0.0);
  delta[4] = 1.0;
  auto y = conv2d(x, Tensor64::from_data({1, 1, 3, 3}, delta), Tensor64::zeros({1}));
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  auto z = conv2d(x, Tensor64::zeros({3, 1, 3, 3}), Tensor64::from_data({3}, {0.5, -1.0, 2.0}));
  CHECK(z.shape() == Shape{2, 3, 6, 7});
  for (int o = 0; o < 3; ++o) CHECK(z.data()[static_cast<std::size_t>(o) * 42 + 17] == std::vector<double>{0.5, -1.0, 2.0}[o]);
}

TEST_CASE("conv2d matches a direct sliding-window oracle") {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5; ++trial) {
    const int n = 1 + trial % 2, cin = 1 + trial, cout = 2 + trial % 3, h = 4 + trial, w = 9 - trial;
    auto x = random_tensor({n, cin, h, w}, rng, false);
    auto k = random_tensor({cout, cin, 3, 3}, rng, false);
    auto b = random_tensor({cout}, rng, false);
    auto y = conv2d(x, k, b);
    auto ref = naive_conv({x.data().begin(), x.data().end()}, n, cin, h, w, {k.data().begin(), k.data().end()}, cout,
                          {b.data().begin(), b.data().end()});
    for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == doctest::Approx(ref[i]).epsilon(1e-12));
  }
}

TEST_CASE("conv2d shape errors name both shapes") {
  auto x = Tensor64::zeros({1, 2, 4, 4});
  auto k = Tensor64::zeros({1, 3, 3, 3});
  try {
    conv2d(x, k, Tensor64::zeros({1}));
    FAIL("expected a shape error");
  } catch (const Error& e) {
    const std::string msg = e.what();
    CHECK(msg.find("(1,2,4,4)") != std::string::npos);
    CHECK(msg.find("(1,3,3,3)") != std::string::npos);
  }
}

TEST_CASE("conv2d is linear for zero bias") {
  std::mt19937_64 rng(5);
  auto a = random_tensor({1, 2, 6, 6}, rng, false);
  auto b = random_tensor({1, 2, 6, 6}, rng, false);
  auto k = random_tensor({3, 2, 3, 3}, rng, false);
  auto zero = Tensor64::zeros({3});
  const double alpha = 0.7, beta = -1.3;
  std::vector<double> mix(a.numel());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = alpha * a.data()[i] + beta * b.data()[i];
  auto lhs = conv2d(Tensor64::from_data(a.shape(), mix), k, zero);
  auto ya = conv2d(a, k, zero), yb = conv2d(b, k, zero);
  for (std::size_t i = 0; i < lhs.numel(); ++i) {
    CHECK(std::abs(lhs.data()[i] - (alpha * ya.data()[i] + beta * yb.data()[i])) < 1e-5);
  }
}

TEST_CASE("relu values and subgradient") {
  auto x = Tensor64::from_data({3}, {-1.0, 0.0, 2.0}, true);
  auto y = relu(x);
  CHECK(std::vector<double>(y.data().begin(), y.data().end()) == std::vector<double>{0.0, 0.0, 2.0});
  backward(sum(y));
  CHECK(std::vector<double>(x.grad().begin(), x.grad().end()) == std::vector<double>{0.0, 0.0, 1.0});

  auto neg = relu(Tensor64::full({4}, -3.0));
  for (double v : neg.data()) CHECK(v == 0.0);
}

TEST_CASE("concat shapes, slicing inverse and gradient routing") {
  auto a = Tensor::zeros({1, 64, 3, 3});
  auto b = Tensor::zeros({1, 128, 3, 3});
  CHECK(concat_channels(a, b).shape() == Shape{1, 192, 3, 3});

  std::mt19937_64 rng(2);
  auto p = random_tensor({2, 2, 3, 4}, rng);
  auto q = random_tensor({2, 3, 3, 4}, rng);
  auto cat = concat_channels(p, q);
  auto p2 = slice_channels(cat, 0, 2);
  auto q2 = slice_channels(cat, 2, 3);
  CHECK(std::equal(p.data().begin(), p.data().end(), p2.data().begin()));
  CHECK(std::equal(q.data().begin(), q.data().end(), q2.data().begin()));

  backward(sum(cat));
  for (double g : p.grad()) CHECK(g == 1.0);
  for (double g : q.grad()) CHECK(g == 1.0);

  CHECK_THROWS_AS(concat_channels(Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({1, 1, 3, 4})), Error);
}

TEST_CASE("backward: linear map, accumulation and scalar requirement") {
  std::mt19937_64 rng(4);
  auto w = random_tensor({2, 3}, rng);
  auto x = random_tensor({2, 3}, rng, false);
  backward(sum(mul(w, x)));
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == x.data()[i]);
  backward(sum(mul(w, x)));
  for (std::size_t i = 0; i < w.numel(); ++i) CHECK(w.grad()[i] == 2 * x.data()[i]);

  CHECK_THROWS_AS(backward(mul(w, x)), Error);
}

TEST_CASE("finite-difference checks per op") {
  std::mt19937_64 rng(17);
  const double tol = 1e-3;
  SUBCASE("conv2d") {
    std::vector<Tensor64> in{random_tensor({2, 2, 8, 8}, rng), random_tensor({3, 2, 3, 3}, rng),
                             random_tensor({3}, rng)};
    auto weight = random_tensor({2, 3, 8, 8}, rng, false);
    CHECK(gradient_error([&](auto& t) { return sum(mul(conv2d(t[0], t[1], t[2]), weight)); }, in) < tol);
  }
  SUBCASE("relu") {
    std::vector<Tensor64> in{random_tensor({1, 1, 8, 8}, rng)};
    auto weight = random_tensor({1, 1, 8, 8}, rng, false);
    CHECK(gradient_error([&](auto& t) { return sum(mul(relu(t[0]), weight)); }, in) < tol);
  }
  SUBCASE("concat") {
    std::vector<Tensor64> in{random_tensor({1, 2, 8, 8}, rng), random_tensor({1, 1, 8, 8}, rng)};
    auto weight = random_tensor({1, 3, 8, 8}, rng, false);
    CHECK(gradient_error([&](auto& t) { return sum(mul(concat_channels(t[0], t[1]), weight)); }, in) < tol);
  }
  SUBCASE("add and mean") {
    std::vector<Tensor64> in{random_tensor({1, 1, 8, 8}, rng), random_tensor({1, 1, 8, 8}, rng)};
    CHECK(gradient_error([&](auto& t) { return mean(mul(add(t[0], t[1]), t[0])); }, in) < tol);
  }
}

TEST_CASE("two-layer conv+relu net, finite differences with step 1e-3") {
  std::mt19937_64 rng(23);
  std::vector<Tensor64> in{random_tensor({1, 1, 8, 8}, rng), random_tensor({4, 1, 3, 3}, rng),
                           random_tensor({4}, rng), random_tensor({1, 4, 3, 3}, rng), random_tensor({1}, rng)};
  auto target = random_tensor({1, 1, 8, 8}, rng, false);
  auto net = [&](auto& t) {
    auto h = relu(conv2d(t[0], t[1], t[2]));
    auto y = conv2d(h, t[3], t[4]);
    return sum(mul(y, target));
  };
  CHECK(gradient_error(net, in, 1e-3) < 1e-3);
}

TEST_CASE("random composite graphs pass finite-difference checks in checked mode") {
  set_checked_mode(true);
  for (std::uint64_t seed : {31u, 32u, 33u}) {
    std::mt19937_64 rng(seed);
    std::vector<Tensor64> in{random_tensor({2, 1, 8, 8}, rng), random_tensor({3, 1, 3, 3}, rng),
                             random_tensor({3}, rng), random_tensor({2, 4, 3, 3}, rng), random_tensor({2}, rng)};
    auto net = [](auto& t) {
      auto h = relu(conv2d(t[0], t[1], t[2]));
      auto cat = concat_channels(h, t[0]);
      auto y = conv2d(cat, t[3], t[4]);
      auto z = add(slice_channels(y, 0, 1), t[0]);
      return mean(mul(z, relu(slice_channels(y, 1, 1))));
    };
    CHECK(gradient_error(net, in) < 1e-3);
  }
  set_checked_mode(false);
}

TEST_CASE("checked mode rejects non-finite outputs") {
  set_checked_mode(true);
  auto x = Tensor64::from_data({2}, {1.0, std::numeric_limits<double>::infinity()});
  CHECK_THROWS_AS(relu(x), Error);
  set_checked_mode(false);
  CHECK_NOTHROW(relu(x));
}

TEST_CASE("no-grad guard records nothing") {
  auto w = Tensor64::full({2}, 1.0, true);
  Tensor64 y;
  {
    NoGradGuard guard;
    CHECK_FALSE(grad_enabled());
    y = sum(mul(w, w));
  }
  CHECK(grad_enabled());
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("adam: zero gradient is a no-op but counts the step") {
  auto w = Tensor::from_data({3}, {1.0f, -2.0f, 0.5f}, true);
  AdamState<float> st;
  std::vector<Tensor> params{w};
  adam_step(std::span<Tensor>(params), st);
  CHECK(st.step == 1);
  CHECK(w.data()[0] == 1.0f);
  CHECK(w.data()[1] == -2.0f);
}

TEST_CASE("adam: first step from fresh state moves by about lr against the gradient") {
  auto w = Tensor64::from_data({3}, {0.0, 0.0, 0.0}, true);
  auto g = w.grad_accumulator();
  g[0] = 3.0;
  g[1] = -0.2;
  g[2] = 1e-3;
  AdamState<double> st;
  std::vector<Tensor64> params{w};
  adam_step(std::span<Tensor64>(params), st);
  // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps).
  CHECK(w.data()[0] == doctest::Approx(-0.01 * 3.0 / (3.0 + 1e-8)).epsilon(1e-12));
  CHECK(w.data()[1] == doctest::Approx(0.01 * 0.2 / (0.2 + 1e-8)).epsilon(1e-12));
  CHECK(w.data()[2] == doctest::Approx(-0.01 * 1e-3 / (1e-3 + 1e-8)).epsilon(1e-12));
}

TEST_CASE("adam: 500 steps on w^2 from 1 reach |w| < 1e-2") {
  auto w = Tensor64::from_data({1}, {1.0}, true);
  AdamState<double> st;
  std::vector<Tensor64> params{w};
  for (int i = 0; i < 500; ++i) {
    w.zero_grad();
    backward(mul(w, w));
    adam_step(std::span<Tensor64>(params), st);
  }
  CHECK(std::abs(w.data()[0]) < 1e-2);
}

TEST_CASE("schedule: monotone improvement keeps lr") {
  PlateauSchedule s(0.01);
  for (double l : {1.0, 0.9, 0.8}) {
    auto d = s.on_epoch_end(l);
    CHECK(d.lr == 0.01);
    CHECK_FALSE(d.stop);
  }
}

TEST_CASE("schedule: constant loss trace") {
  PlateauSchedule s(0.01);
  auto d1 = s.on_epoch_end(1.0);
  auto d2 = s.on_epoch_end(1.0);
  auto d3 = s.on_epoch_end(1.0);
  auto d4 = s.on_epoch_end(1.0);
  CHECK(d1.lr == 0.01);
  CHECK(d2.lr == 0.01);
  CHECK(d3.lr == doctest::Approx(0.001));
  CHECK(d3.reduced);
  CHECK_FALSE(d3.stop);
  CHECK(d4.stop);
  CHECK(s.stopped);
}

TEST_CASE("schedule: decay floors at 1e-6 and the stop flag is monotone") {
  PlateauSchedule s(0.01);
  // Slowly rising losses never improve and never look flat to the stop rule.
  double loss = 1.0;
  std::vector<double> lrs;
  for (int e = 0; e < 30; ++e) {
    auto d = s.on_epoch_end(loss);
    loss += 1e-3;
    lrs.push_back(d.lr);
    CHECK(d.lr >= 1e-6);
  }
  CHECK(lrs.back() == doctest::Approx(1e-6));
  CHECK_FALSE(s.stopped);

  PlateauSchedule floor(1e-6);
  for (int e = 0; e < 6; ++e) CHECK(floor.on_epoch_end(2.0 + e * 1e-3).lr == 1e-6);

  PlateauSchedule t(0.01);
  for (int e = 0; e < 4; ++e) t.on_epoch_end(0.5);
  CHECK(t.stopped);
  CHECK(t.on_epoch_end(0.1).stop);
}

TEST_CASE("schedule rejects non-finite losses") {
  PlateauSchedule s(0.01);
  CHECK_THROWS_AS(s.on_epoch_end(std::nan("")), Error);
}

TEST_CASE("forward determinism") {
  std::mt19937_64 rng(8);
  auto x = cast<float>(random_tensor({1, 2, 9, 9}, rng, false));
  auto k = cast<float>(random_tensor({3, 2, 3, 3}, rng, false));
  auto b = cast<float>(random_tensor({3}, rng, false));
  auto y1 = conv2d(x, k, b), y2 = conv2d(x, k, b);
  CHECK(std::equal(y1.data().begin(), y1.data().end(), y2.data().begin()));
}
