#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

#include "tskd/metrics/metrics.hpp"

using namespace tskd::metrics;

namespace {

BinaryGrid square(int size, int y0, int x0, int side) {
  BinaryGrid g(size, size);
  for (int y = y0; y < y0 + side; ++y)
    for (int x = x0; x < x0 + side; ++x) g.set(y, x);
  return g;
}

}  // namespace

TEST_SUITE("metrics") {
  TEST_CASE("dice and iou on hand-counted masks") {
    auto a = square(8, 0, 0, 4);  // 16 px
    auto b = square(8, 2, 2, 4);  // 16 px, overlap 4
    CHECK(dice({a, b}).value == doctest::Approx(8.0 / 32.0));
    CHECK(iou({a, b}).value == doctest::Approx(4.0 / 28.0));
    BinaryGrid e(8, 8);
    const auto both_empty = dice({e, e});
    CHECK(both_empty.skipped);
    CHECK(both_empty.value == 1.0);
    CHECK(dice({a, e}).value == 0.0);
  }

  TEST_CASE("percentile interpolates linearly") {
    CHECK(percentile({1, 2, 3, 4, 5}, 50) == 3.0);
    CHECK(percentile({0, 10}, 95) == doctest::Approx(9.5));
    CHECK(percentile({7}, 95) == 7.0);
  }

  TEST_CASE("boundary of a filled square is its outline") {
    const auto pts = boundary_pixels(square(8, 1, 1, 5));
    CHECK(pts.size() == 16u);
    const auto full = boundary_pixels(square(3, 0, 0, 3));
    CHECK(full.size() == 8u);
  }

  TEST_CASE("distance transform matches brute force with anisotropic spacing") {
    std::mt19937_64 rng(3);
    for (int trial = 0; trial < 20; ++trial) {
      BinaryGrid g(9, 11);
      for (int k = 0; k < 4; ++k) g.set(static_cast<int>(rng() % 9), static_cast<int>(rng() % 11));
      const double sy = 0.5 + trial * 0.1, sx = 1.3;
      const auto dt = distance_transform(g, sy, sx);
      for (int y = 0; y < 9; ++y)
        for (int x = 0; x < 11; ++x) {
          double best = std::numeric_limits<double>::infinity();
          for (int v = 0; v < 9; ++v)
            for (int u = 0; u < 11; ++u)
              if (g.at(v, u)) best = std::min(best, std::hypot((v - y) * sy, (u - x) * sx));
          CHECK(dt[static_cast<std::size_t>(y * 11 + x)] == doctest::Approx(best).epsilon(1e-12));
        }
    }
    CHECK(std::isinf(distance_transform(BinaryGrid(3, 3))[0]));
  }

  TEST_CASE("hd95 of identical masks is zero and of empty masks undefined") {
    auto a = square(16, 3, 3, 6);
    CHECK(*hd95({a, a}) == 0.0);
    CHECK_FALSE(hd95({a, BinaryGrid(16, 16)}).has_value());
  }

  TEST_CASE("hd95 of a shifted square scales with spacing") {
    auto a = square(32, 4, 4, 10), b = square(32, 4, 10, 10);
    const double unit = *hd95({a, b});
    CHECK(unit > 0.0);
    CHECK(*hd95({a, b, 2.0, 2.0}) == doctest::Approx(2 * unit));
    CHECK(*hd95({a, b}, HdMode::max_directed) >= unit - 1e-12);
  }

  TEST_CASE("miou averages only classes present") {
    ClassGrid p{2, 2, {0, 1, 1, 0}}, r{2, 2, {0, 1, 0, 0}};
    const auto m = miou(p, r, 3);
    CHECK(m.classes_used == 1);
    CHECK(m.value == doctest::Approx(0.5));
  }

  TEST_CASE("psnr law") {
    CHECK(psnr_from_mse(109.4084, 255.0) == doctest::Approx(27.741).epsilon(1e-3));
    CHECK(std::isinf(psnr_from_mse(0.0)));
    std::vector<double> a{0, 10, 20, 30}, b{1, 12, 20, 27};
    const auto r = psnr_mse(a, b);
    CHECK(r.mse == doctest::Approx((1 + 4 + 0 + 9) / 4.0));
    CHECK(r.psnr_db == doctest::Approx(10 * std::log10(255.0 * 255.0 / 3.5)));
    CHECK_THROWS(psnr_from_mse(-1.0));
  }

  TEST_CASE("evaluate skips classes empty in both masks") {
    ClassGrid p1{2, 2, {1, 1, 0, 0}}, r1{2, 2, {1, 0, 0, 0}};
    ClassGrid p2{2, 2, {2, 2, 0, 0}}, r2{2, 2, {2, 2, 0, 0}};
    const auto rep = evaluate({p1, p2}, {r1, r2}, 3, {"bg", "a", "b"});
    REQUIRE(rep.per_class.size() == 2u);
    CHECK(rep.per_class[0].dice_samples == 1);
    CHECK(rep.per_class[0].skipped == 1);
    CHECK(rep.per_class[0].dice == doctest::Approx(2.0 / 3.0));
    CHECK(rep.per_class[1].dice == doctest::Approx(1.0));
    CHECK(rep.mean_dice == doctest::Approx((2.0 / 3.0 + 1.0) / 2));
    CHECK(rep.to_csv().rfind("class,dice,hd95,iou,flags", 0) == 0);
  }
}
