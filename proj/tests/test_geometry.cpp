#include <doctest.h>

#include <cmath>

#include "mrd/geometry.hpp"
#include "mrd/rng.hpp"

using namespace mrd;

TEST_CASE("rotate_to_frame examples") {
  Dataset d;
  d.push_back(1.0, 2.0, 3.0, true);
  d.push_back(2.0, 0.0, 0.0, false);

  SUBCASE("identity frame") {
    const auto f = BoundaryFrame::from_normal({0.0, 0.0}, {0.0, 1.0});
    const Dataset r = rotate_to_frame(d, f);
    CHECK(r.r1[0] == doctest::Approx(2.0));
    CHECK(r.r2[0] == doctest::Approx(3.0));
    CHECK(r.y[0] == 1.0);
    CHECK(r.treated[0] == 1);
  }
  SUBCASE("normal (1,0) maps (2,3) to (-3,2)") {
    const auto f = BoundaryFrame::from_normal({0.0, 0.0}, {1.0, 0.0});
    CHECK(f.tangent.x == doctest::Approx(0.0));
    CHECK(f.tangent.y == doctest::Approx(-1.0));
    const Dataset r = rotate_to_frame(d, f);
    CHECK(r.r1[0] == doctest::Approx(-3.0).epsilon(1e-12));
    CHECK(r.r2[0] == doctest::Approx(2.0).epsilon(1e-12));
  }
  SUBCASE("boundary point maps to the origin") {
    const auto f = BoundaryFrame::from_normal({2.0, 3.0}, {0.6, 0.8});
    const Dataset r = rotate_to_frame(d, f);
    CHECK(std::abs(r.r1[0]) < 1e-12);
    CHECK(std::abs(r.r2[0]) < 1e-12);
  }
}

TEST_CASE("rotation is an isometry and inverts cleanly") {
  Rng rng(7);
  for (int rep = 0; rep < 50; ++rep) {
    const double ang = rng.uniform(0.0, 2.0 * M_PI);
    const auto f = BoundaryFrame::from_normal({rng.uniform(-5, 5), rng.uniform(-5, 5)},
                                              {std::cos(ang), std::sin(ang)});
    f.validate();
    const Vec2 a{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const Vec2 b{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    const Vec2 za = f.to_local(a);
    const Vec2 zb = f.to_local(b);
    CHECK(std::abs((za - zb).norm() - (a - b).norm()) < 1e-10);
    const Vec2 back = f.to_global(za);
    CHECK(std::abs(back.x - a.x) < 1e-10);
    CHECK(std::abs(back.y - a.y) < 1e-10);
  }
}

TEST_CASE("invalid frames are rejected") {
  BoundaryFrame bad{{0, 0}, {1, 0}, {1, 0}};  // parallel
  CHECK_THROWS_AS(bad.validate(), InvalidFrameError);
  Dataset d;
  d.push_back(0.0, 0.0, 0.0, false);
  CHECK_THROWS_AS(rotate_to_frame(d, bad), InvalidFrameError);
  CHECK_THROWS_AS(BoundaryFrame::from_normal({0, 0}, {0, 0}), InvalidFrameError);
}

TEST_CASE("region membership") {
  const RegionSpec inter{RegionKind::intersection, 0.0, 0.0};
  CHECK(region_contains(inter, {1.0, 1.0}));
  CHECK_FALSE(region_contains(inter, {-0.1, 5.0}));
  // boundary points count as control (open treatment region)
  CHECK_FALSE(region_contains(inter, {0.0, 5.0}));
  CHECK_FALSE(region_contains(inter, {0.0, 0.0}));

  const RegionSpec hs{RegionKind::half_sum, 0.0, 0.0};
  CHECK(region_contains(hs, {2.0, -1.0}));
  CHECK_FALSE(region_contains(hs, {1.0, -1.0}));

  const RegionSpec hp{RegionKind::half_plane, 0.0, 0.0};
  CHECK(region_contains(hp, {123.0, 0.5}));
  CHECK_FALSE(region_contains(hp, {123.0, 0.0}));
}

TEST_CASE("boundary_points on the intersection region") {
  const RegionSpec inter{RegionKind::intersection, 0.0, 0.0};
  const auto frames = boundary_points(inter, 2, 1.0);
  REQUIRE(frames.size() == 4);
  // bottom edge: r2 = 0, r1 > 0, normal (0,1)
  CHECK(frames[0].center.y == doctest::Approx(0.0));
  CHECK(frames[0].center.x > 0.0);
  CHECK(frames[0].normal.x == doctest::Approx(0.0));
  CHECK(frames[0].normal.y == doctest::Approx(1.0));
  // left edge: r1 = 0, r2 > 0, normal (1,0)
  CHECK(frames[2].center.x == doctest::Approx(0.0));
  CHECK(frames[2].center.y > 0.0);
  CHECK(frames[2].normal.x == doctest::Approx(1.0));
  // the corner is never returned
  for (const auto& f : frames)
    CHECK(f.center.norm() > 1e-9);
  // a nudge along the normal lands inside the region, against it outside
  for (const auto& f : frames) {
    const Vec2 in = f.center + 1e-6 * f.normal;
    const Vec2 out = f.center - 1e-6 * f.normal;
    CHECK(region_contains(inter, in));
    CHECK_FALSE(region_contains(inter, out));
  }
}

TEST_CASE("boundary_points on the half-sum region") {
  const RegionSpec hs{RegionKind::half_sum, 1.0, 2.0};
  const auto frames = boundary_points(hs, 5, 2.0);
  REQUIRE(frames.size() == 5);
  const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
  for (const auto& f : frames) {
    CHECK(f.normal.x == doctest::Approx(inv_sqrt2));
    CHECK(f.normal.y == doctest::Approx(inv_sqrt2));
    CHECK(f.center.x + f.center.y == doctest::Approx(3.0).epsilon(1e-12));
    CHECK(region_contains(hs, f.center + 1e-6 * f.normal));
    CHECK_FALSE(region_contains(hs, f.center - 1e-6 * f.normal));
  }
}

TEST_CASE("boundary_points rejects bad arguments") {
  CHECK_THROWS_AS(boundary_points({RegionKind::intersection, 0, 0}, 0),
                  InvalidArgumentError);
  CHECK_THROWS_AS(boundary_points({RegionKind::half_sum, 0, 0}, 3, -1.0),
                  InvalidArgumentError);
}
