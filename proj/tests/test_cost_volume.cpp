#include <doctest.h>

#include "amnet/cost_volume.hpp"
#include "support.hpp"

using namespace amnet;
using amnet::test::contract;
using amnet::test::jacobian_error;
using amnet::test::random64;

namespace {

double rshift(const Tensor64& r, Index n, Index c, Index y, Index x, Index d) {
  const Index xs = x - d;
  if (y < 0 || y >= r.dim(2) || xs < 0 || xs >= r.dim(3)) return 0.0;
  return r.at({n, c, y, xs});
}

double lval(const Tensor64& l, Index n, Index c, Index y, Index x) {
  if (y < 0 || y >= l.dim(2) || x < 0 || x >= l.dim(3)) return 0.0;
  return l.at({n, c, y, x});
}

}  // namespace

TEST_CASE("shift_align examples") {
  const Tensor64 row(Shape{1, 1, 1, 4}, {1, 2, 3, 4});
  const auto s0 = shift_align(row, 0);
  CHECK(std::equal(row.data().begin(), row.data().end(), s0.features.data().begin()));
  CHECK(s0.valid_columns == std::vector<std::uint8_t>{1, 1, 1, 1});

  const auto s2 = shift_align(row, 2);
  CHECK(s2.features.vec() == std::vector<double>{0, 0, 1, 2});
  CHECK(s2.valid_columns == std::vector<std::uint8_t>{0, 0, 1, 1});

  const auto s4 = shift_align(row, 4);
  for (double v : s4.features.data()) CHECK(v == 0.0);
  CHECK(s4.valid_columns == std::vector<std::uint8_t>{0, 0, 0, 0});
  CHECK_THROWS(shift_align(row, -1));
}

TEST_CASE("sub-volume depths") {
  Rng rng(1);
  const auto l = random64({1, 3, 4, 6}, rng), r = random64({1, 3, 4, 6}, rng);
  CHECK(concat_volume(l, r, 3).data.shape() == Shape{1, 6, 4, 4, 6});
  CHECK(distance_volume(l, r, 3).data.shape() == Shape{1, 3, 4, 4, 6});
  CHECK(correlation_volume(l, r, 3, 1).data.shape() == Shape{1, 3, 4, 4, 6});
  CHECK(build_ecv(l, r, 3, 0).data.shape() == Shape{1, 12, 4, 4, 6});
  CostVolumeParts parts;
  parts.concat = false;
  CHECK(build_ecv(l, r, 3, 0, parts).data.shape() == Shape{1, 6, 4, 4, 6});
}

TEST_CASE("disparity levels at feature scale") {
  CHECK(feature_levels(192, 4) == 48);
  CHECK(feature_levels(32, 4) == 8);
}

TEST_CASE("concat volume") {
  Rng rng(2);
  const auto l = random64({1, 2, 4, 6}, rng), r = random64({1, 2, 4, 6}, rng);
  const auto v = concat_volume(l, r, 3).data;
  SUBCASE("level 0 is the plain concatenation") {
    for (Index c = 0; c < 2; ++c)
      for (Index y = 0; y < 4; ++y)
        for (Index x = 0; x < 6; ++x) {
          CHECK(v.at({0, c, 0, y, x}) == l.at({0, c, y, x}));
          CHECK(v.at({0, 2 + c, 0, y, x}) == r.at({0, c, y, x}));
        }
  }
  SUBCASE("matches a per-level loop exactly") {
    for (Index ch = 0; ch < 4; ++ch)
      for (Index d = 0; d < 4; ++d)
        for (Index y = 0; y < 4; ++y)
          for (Index x = 0; x < 6; ++x) {
            const double want = ch < 2 ? l.at({0, ch, y, x}) : rshift(r, 0, ch - 2, y, x, d);
            CHECK(v.at({0, ch, d, y, x}) == want);
          }
  }
}

TEST_CASE("distance volume") {
  Rng rng(3);
  const auto l = random64({1, 3, 4, 8}, rng);
  SUBCASE("identical features give zero at level 0") {
    const auto v = distance_volume(l, l, 2).data;
    for (Index c = 0; c < 3; ++c)
      for (Index i = 0; i < 32; ++i) CHECK(v.data()[static_cast<std::size_t>((c * 3) * 32 + i)] == 0.0);
  }
  SUBCASE("non-negative") {
    const auto r = random64({1, 3, 4, 8}, rng);
    const auto v = distance_volume(l, r, 4).data;
    for (double x : v.data()) CHECK(x >= 0.0);
  }
  SUBCASE("right view shifted by d0 vanishes at level d0 on valid columns") {
    const Index d0 = 2;
    std::vector<double> rv(l.data().size());
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < 4; ++y)
        for (Index x = 0; x < 8; ++x)
          rv[static_cast<std::size_t>((c * 4 + y) * 8 + x)] = x + d0 < 8 ? l.at({0, c, y, x + d0}) : 0.5;
    const Tensor64 r(l.shape(), rv);
    const auto v = distance_volume(l, r, 4).data;
    for (Index c = 0; c < 3; ++c)
      for (Index y = 0; y < 4; ++y)
        for (Index x = d0; x < 8; ++x) CHECK(v.at({0, c, d0, y, x}) == 0.0);
  }
}

TEST_CASE("correlation volume") {
  Rng rng(4);
  SUBCASE("t=0 self-correlation at level 0 is the square") {
    const auto l = random64({1, 2, 3, 4}, rng);
    const auto v = correlation_volume(l, l, 1, 0).data;
    for (Index c = 0; c < 2; ++c)
      for (Index y = 0; y < 3; ++y)
        for (Index x = 0; x < 4; ++x) CHECK(v.at({0, c, 0, y, x}) == l.at({0, c, y, x}) * l.at({0, c, y, x}));
  }
  SUBCASE("t=1 matches the brute-force patch sum") {
    const auto l = random64({1, 2, 5, 5}, rng), r = random64({1, 2, 5, 5}, rng);
    const auto v = correlation_volume(l, r, 3, 1).data;
    for (Index c = 0; c < 2; ++c)
      for (Index d = 0; d < 4; ++d)
        for (Index y = 0; y < 5; ++y)
          for (Index x = 0; x < 5; ++x) {
            double acc = 0;
            for (Index oy = -1; oy <= 1; ++oy)
              for (Index ox = -1; ox <= 1; ++ox) acc += lval(l, 0, c, y + oy, x + ox) * rshift(r, 0, c, y + oy, x + ox, d);
            CHECK(v.at({0, c, d, y, x}) == acc);
          }
  }
  SUBCASE("patch larger than the map is rejected") {
    const auto l = random64({1, 1, 2, 2}, rng);
    CHECK_THROWS(correlation_volume(l, l, 1, 1));
  }
}

TEST_CASE("ECV is [concat | distance | correlation] along depth") {
  Rng rng(5);
  const auto l = random64({2, 3, 6, 6}, rng), r = random64({2, 3, 6, 6}, rng);
  const auto ecv = build_ecv(l, r, 3, 1).data;
  const auto a = concat_volume(l, r, 3).data, b = distance_volume(l, r, 3).data, c = correlation_volume(l, r, 3, 1).data;
  for (Index n = 0; n < 2; ++n)
    for (Index ch = 0; ch < 12; ++ch)
      for (Index d = 0; d < 4; ++d)
        for (Index y = 0; y < 6; ++y)
          for (Index x = 0; x < 6; ++x) {
            const double want = ch < 6 ? a.at({n, ch, d, y, x}) : ch < 9 ? b.at({n, ch - 6, d, y, x}) : c.at({n, ch - 9, d, y, x});
            CHECK(ecv.at({n, ch, d, y, x}) == want);
          }
}

TEST_CASE("zero-filled columns depend only on the left features") {
  Rng rng(6);
  const auto l = random64({1, 2, 3, 6}, rng);
  auto r = random64({1, 2, 3, 6}, rng);
  const auto before = build_ecv(l, r, 3, 0).data;
  // the last two right columns never align with a left column x < d for d >= 3
  for (Index c = 0; c < 2; ++c)
    for (Index y = 0; y < 3; ++y) r.data()[static_cast<std::size_t>((c * 3 + y) * 6 + 5)] += 10.0;
  const auto after = build_ecv(l, r, 3, 0).data;
  for (Index ch = 0; ch < 8; ++ch)
    for (Index d = 1; d < 4; ++d)
      for (Index y = 0; y < 3; ++y)
        for (Index x = 0; x < d; ++x) CHECK(before.at({0, ch, d, y, x}) == after.at({0, ch, d, y, x}));
}

TEST_CASE("argmin of the distance volume recovers a constant shift") {
  Rng rng(7);
  const Index W = 24, H = 6, C = 4, d0 = 3;
  const auto base = random64({1, C, H, W + d0}, rng);
  std::vector<double> lv, rv;
  for (Index c = 0; c < C; ++c)
    for (Index y = 0; y < H; ++y)
      for (Index x = 0; x < W; ++x) {
        lv.push_back(base.at({0, c, y, x}));       // left(x) = tex(x)
        rv.push_back(base.at({0, c, y, x + d0}));  // right(u) = tex(u + d0)
      }
  const Tensor64 l(Shape{1, C, H, W}, lv), r(Shape{1, C, H, W}, rv);
  const auto v = distance_volume(l, r, 6).data;
  int hits = 0, total = 0;
  for (Index y = 0; y < H; ++y)
    for (Index x = 6; x < W; ++x) {
      Index best = 0;
      double best_cost = 1e300;
      for (Index d = 0; d <= 6; ++d) {
        double cost = 0;
        for (Index c = 0; c < C; ++c) cost += v.at({0, c, d, y, x});
        if (cost < best_cost) {
          best_cost = cost;
          best = d;
        }
      }
      hits += best == d0;
      ++total;
    }
  CHECK(hits >= 0.95 * total);
}

TEST_CASE("ECV gradients match central differences") {
  Rng rng(8);
  auto l = random64({1, 2, 4, 5}, rng, -1, 1, true), r = random64({1, 2, 4, 5}, rng, -1, 1, true);
  for (int t : {0, 1}) {
    CHECK(jacobian_error([&] { return contract(build_ecv(l, r, 3, t).data); }, {l, r}) < 1e-4);
  }
}

TEST_CASE("sign-flip mutation is visible and reversible") {
  Rng rng(9);
  const auto l = random64({1, 1, 2, 3}, rng), r = random64({1, 1, 2, 3}, rng);
  fault_injection::set_distance_sign_flip(true);
  const auto flipped = distance_volume(l, r, 1).data;
  fault_injection::set_distance_sign_flip(false);
  const auto normal = distance_volume(l, r, 1).data;
  for (std::size_t i = 0; i < normal.data().size(); ++i) CHECK(flipped.data()[i] == -normal.data()[i]);
}

TEST_CASE("volume slice export") {
  Rng rng(10);
  const auto l = random64({1, 2, 3, 4}, rng), r = random64({1, 2, 3, 4}, rng);
  const auto v = build_ecv(l, r, 2, 0);
  const auto s = volume_slice(v, 0, 5, 1);
  REQUIRE(s.size() == 12);
  for (Index y = 0; y < 3; ++y)
    for (Index x = 0; x < 4; ++x) CHECK(s[static_cast<std::size_t>(y * 4 + x)] == v.data.at({0, 5, 1, y, x}));
  CHECK_THROWS(volume_slice(v, 0, 8, 0));
}
