#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "harnet/error.hpp"
#include "harnet/preprocess.hpp"
#include "support.hpp"
#include "textures.hpp"

using namespace harnet;
using harnet::testing::scratch_dir;

namespace {

Angiogram grid3(std::vector<double> v) { return Angiogram(3, 3, std::move(v), IntensityScale::Raw255, 3.0); }
std::vector<double> px(const Angiogram& a) { return {a.pixels().begin(), a.pixels().end()}; }

}  // namespace

TEST_CASE("similarity transform algebra") {
  std::mt19937_64 rng(1);
  std::uniform_real_distribution<double> u(-1, 1);
  for (int i = 0; i < 20; ++i) {
    SimilarityTransform t{8 * u(rng), 8 * u(rng), 0.1 * u(rng), 1 + 0.05 * u(rng)};
    const auto id = t.compose(t.inverse());
    CHECK(std::abs(id.tx) < 1e-9);
    CHECK(std::abs(id.ty) < 1e-9);
    CHECK(std::abs(id.theta) < 1e-9);
    CHECK(std::abs(id.scale - 1) < 1e-9);
    SimilarityTransform g{3 * u(rng), 3 * u(rng), 0.1 * u(rng), 1 + 0.05 * u(rng)};
    const auto tg = t.compose(g);
    const auto [gx, gy] = g.apply(5.0, -2.0, 10.0, 12.0);
    const auto [ex, ey] = t.apply(gx, gy, 10.0, 12.0);
    const auto [cx, cy] = tg.apply(5.0, -2.0, 10.0, 12.0);
    CHECK(cx == doctest::Approx(ex).epsilon(1e-12));
    CHECK(cy == doctest::Approx(ey).epsilon(1e-12));
  }
}

TEST_CASE("bicubic examples") {
  const auto c = harnet::testing::filled(5, 5, 0.37, IntensityScale::Unit);
  const auto cu = bicubic_upsample(c, 2);
  for (double v : cu.pixels()) CHECK(v == doctest::Approx(0.37).epsilon(1e-14));

  std::mt19937_64 rng(2);
  const auto r = harnet::testing::random_raw(6, 6, rng);
  CHECK(px(bicubic_upsample(r, 1)) == px(r));

  std::vector<double> ramp(16);
  for (int i = 0; i < 16; ++i) ramp[i] = 10.0 * (i / 4) + 3.0 * (i % 4);
  const Angiogram src(4, 4, ramp, IntensityScale::Raw255, 3.0);
  const auto up = bicubic_upsample(src, 2);
  CHECK(up.height() == 8);
  CHECK(up.fov_mm() == 3.0);
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) CHECK(up.at(2 * i, 2 * j) == doctest::Approx(src.at(i, j)).epsilon(1e-12));
  // Interior midpoint of a linear ramp: the a = -0.5 kernel reproduces linear functions.
  CHECK(up.at(3, 3) == doctest::Approx(10.0 * 1.5 + 3.0 * 1.5).epsilon(1e-12));
  CHECK(px(decimate(up, 2)) == px(bicubic_upsample(src, 1)));
}

TEST_CASE("self-registration returns identity") {
  const auto img = harnet::testing::texture(64, 5, {});
  const auto r = register_images(img, img);
  CHECK(std::abs(r.transform.tx) < 1e-3);
  CHECK(std::abs(r.transform.ty) < 1e-3);
  CHECK(std::abs(r.transform.theta) < 1e-3);
  CHECK(std::abs(r.transform.scale - 1) < 1e-3);
}

TEST_CASE("registration recovers known transforms") {
  const std::vector<SimilarityTransform> cases{
      {5.0, -3.0, 0.0, 1.0},
      {0.0, 0.0, 2.0 * std::numbers::pi / 180, 1.02},
      {-7.5, 4.25, -3.0 * std::numbers::pi / 180, 0.97},
  };
  for (const auto& t : cases) {
    const auto fixed = harnet::testing::texture(64, 9, {});
    const auto moving = harnet::testing::texture(64, 9, t);
    const auto r = register_images(moving, fixed);
    CHECK(std::abs(r.transform.tx - t.tx) < 0.5);
    CHECK(std::abs(r.transform.ty - t.ty) < 0.5);
    CHECK(std::abs(r.transform.theta - t.theta) * 180 / std::numbers::pi < 0.2);
    CHECK(std::abs(r.transform.scale - t.scale) < 0.005);
    CHECK(r.objective <= r.identity_objective);
  }
}

TEST_CASE("registration falls back to identity without overlap gain") {
  const auto blank = harnet::testing::filled(32, 32, 0.5, IntensityScale::Unit);
  const auto r = register_images(blank, blank);
  CHECK(r.transform.tx == 0.0);
  CHECK(r.transform.scale == 1.0);

  RegistrationOptions no_budget;
  no_budget.max_shift_px = 0.0;
  no_budget.max_evaluations_per_level = 0;
  const auto fixed = harnet::testing::texture(32, 3, {});
  const auto moving = harnet::testing::texture(32, 3, SimilarityTransform{2.0, 1.0, 0.0, 1.0});
  const auto stuck = register_images(moving, fixed, no_budget);
  CHECK_FALSE(stuck.converged);
  CHECK(stuck.transform.tx == 0.0);
  CHECK(stuck.objective == stuck.identity_objective);
  CHECK_THROWS_AS(register_images(harnet::testing::filled(8, 8, 9.0), harnet::testing::filled(8, 8, 9.0)), Error);
}

TEST_CASE("max_inscribed_rect: full frame and L shape") {
  std::vector<bool> full(12 * 9, true);
  CHECK(max_inscribed_rect(PixelRegion::from_mask(12, 9, full)) == Rect{0, 0, 12, 9});

  std::vector<bool> l(15 * 15, false);
  for (int r = 0; r < 15; ++r)
    for (int c = 0; c < 15; ++c)
      if ((r < 10 && c < 10) || (r >= 5 && c >= 5)) l[static_cast<std::size_t>(r) * 15 + c] = true;
  const Rect rect = max_inscribed_rect(PixelRegion::from_mask(15, 15, l));
  CHECK(rect == harnet::testing::exhaustive_rect(15, 15, l));
  CHECK(rect.area() == 100);
}

TEST_CASE("max_inscribed_rect matches exhaustive search") {
  std::mt19937_64 rng(4);
  for (int t = 0; t < 10; ++t) {
    const int h = 5 + static_cast<int>(rng() % 20), w = 5 + static_cast<int>(rng() % 20);
    auto mask = harnet::testing::random_mask(h, w, rng);
    CHECK(max_inscribed_rect(PixelRegion::from_mask(h, w, mask)) == harnet::testing::exhaustive_rect(h, w, mask));
  }
  // Overlap of a 45-degree rotation.
  const auto a = harnet::testing::filled(31, 31, 0.5, IntensityScale::Unit);
  const auto region = overlap_region(a, a, SimilarityTransform{0, 0, std::numbers::pi / 4, 1.0});
  CHECK(max_inscribed_rect(region) == harnet::testing::exhaustive_rect(31, 31, region.to_mask()));
}

TEST_CASE("patch tiling counts and coverage") {
  CHECK(patch_anchors(38, 38, 19) == std::vector<int>{0});
  CHECK(patch_anchors(76, 38, 19) == std::vector<int>{0, 19, 38});
  CHECK(patch_anchors(100, 38, 19) == std::vector<int>{0, 19, 38, 57, 62});
  for (int dim : {38, 50, 76, 100, 133}) {
    std::vector<int> cover(dim, 0);
    for (int a : patch_anchors(dim, 38, 19)) {
      CHECK(a >= 0);
      CHECK(a + 38 <= dim);
      for (int i = a; i < a + 38; ++i) ++cover[i];
    }
    CHECK(std::count(cover.begin(), cover.end(), 0) == 0);
  }
  const auto img = harnet::testing::filled(100, 100, 0.5, IntensityScale::Unit);
  const auto set = extract_patches(img, img);
  CHECK(set.patches.size() == 25);
  CHECK(set.patches[0].input.size() == 38u * 38u);
  CHECK(extract_patches(harnet::testing::filled(76, 76, 0.5, IntensityScale::Unit),
                        harnet::testing::filled(76, 76, 0.5, IntensityScale::Unit))
            .patches.size() == 9);
  CHECK_THROWS_AS(extract_patches(harnet::testing::filled(30, 30, 0.5, IntensityScale::Unit),
                                  harnet::testing::filled(30, 30, 0.5, IntensityScale::Unit)),
                  Error);
}

TEST_CASE("patches are aligned crops") {
  std::mt19937_64 rng(6);
  const auto in = to_unit(harnet::testing::random_raw(57, 57, rng));
  const auto tg = to_unit(harnet::testing::random_raw(57, 57, rng));
  const auto set = extract_patches(in, tg);
  REQUIRE(set.patches.size() == 4);
  const auto& last = set.patches.back();  // anchor (19, 19)
  CHECK(last.input[0] == static_cast<float>(in.at(19, 19)));
  CHECK(last.target[37 * 38 + 37] == static_cast<float>(tg.at(56, 56)));
}

TEST_CASE("patch set file round trip") {
  const auto dir = scratch_dir("patchset");
  std::mt19937_64 rng(7);
  const auto in = to_unit(harnet::testing::random_raw(40, 40, rng));
  const auto set = extract_patches(in, in, 38, 19);
  save_patch_set(set, dir / "p.bin");
  const auto back = load_patch_set(dir / "p.bin");
  CHECK(back.patch_size == 38);
  REQUIRE(back.patches.size() == set.patches.size());
  CHECK(back.patches[1].input == set.patches[1].input);
  std::filesystem::resize_file(dir / "p.bin", 100);
  CHECK_THROWS_AS(load_patch_set(dir / "p.bin"), Error);
}

TEST_CASE("dihedral transforms of a 3x3 marker") {
  const auto m = grid3({1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(px(apply_dihedral(m, Dihedral::Identity)) == std::vector<double>{1, 2, 3, 4, 5, 6, 7, 8, 9});
  CHECK(px(apply_dihedral(m, Dihedral::FlipHorizontal)) == std::vector<double>{3, 2, 1, 6, 5, 4, 9, 8, 7});
  CHECK(px(apply_dihedral(m, Dihedral::FlipVertical)) == std::vector<double>{7, 8, 9, 4, 5, 6, 1, 2, 3});
  CHECK(px(apply_dihedral(m, Dihedral::Transpose)) == std::vector<double>{1, 4, 7, 2, 5, 8, 3, 6, 9});
  CHECK(px(apply_dihedral(m, Dihedral::Rotate90)) == std::vector<double>{3, 6, 9, 2, 5, 8, 1, 4, 7});
  CHECK(px(apply_dihedral(apply_dihedral(m, Dihedral::FlipHorizontal), Dihedral::FlipHorizontal)) == px(m));
}

TEST_CASE("augment") {
  const auto sym = grid3({1, 2, 1, 2, 5, 2, 1, 2, 1});
  for (const auto& [a, b] : augment({sym, sym})) {
    CHECK(px(a) == px(sym));
    CHECK(px(b) == px(sym));
  }
  std::mt19937_64 rng(8);
  const auto x = harnet::testing::random_raw(7, 7, rng);
  const auto y = harnet::testing::random_raw(7, 7, rng);
  const auto out = augment({x, y});
  REQUIRE(out.size() == 5);
  auto sorted = [](std::vector<double> v) {
    std::sort(v.begin(), v.end());
    return v;
  };
  for (const auto& [a, b] : out) {
    CHECK(sorted(px(a)) == sorted(px(x)));
    CHECK(sorted(px(b)) == sorted(px(y)));
  }
  CHECK(px(out[4].second) == px(apply_dihedral(y, Dihedral::Rotate90)));
  CHECK_THROWS_AS(augment({harnet::testing::filled(3, 4, 1.0), harnet::testing::filled(3, 4, 1.0)}), Error);
}
