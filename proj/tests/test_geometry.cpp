#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "fiberloop/errors.hpp"
#include "fiberloop/geometry.hpp"
#include "fiberloop/rng.hpp"

using namespace fiberloop;

namespace {

Centerline random_polyline(Rng& rng, int n) {
  Centerline c;
  Vec2 p{rng.uniform(-5, 5), rng.uniform(-5, 5)};
  c.points.push_back(p);
  for (int i = 1; i < n; ++i) {
    const double a = rng.uniform(0, 2 * M_PI);
    const double step = rng.uniform(0.2, 1.5);
    p += Vec2{step * std::cos(a), step * std::sin(a)};
    c.points.push_back(p);
  }
  return c;
}

Centerline semicircle(double radius, int n_points) {
  Centerline c;
  for (int i = 0; i < n_points; ++i) {
    const double a = M_PI * i / (n_points - 1.0);
    c.points.push_back({radius * std::cos(a), radius * std::sin(a)});
  }
  return c;
}

}  // namespace

TEST_CASE("resample: straight segment at uniform spacing") {
  Centerline line({{0, 0}, {10, 0}});
  Centerline out = resample(line, 5);
  REQUIRE(out.size() == 5);
  const double expected_x[] = {0.0, 2.5, 5.0, 7.5, 10.0};
  for (int i = 0; i < 5; ++i) {
    CHECK(out[i].x == doctest::Approx(expected_x[i]).epsilon(1e-12));
    CHECK(out[i].y == 0.0);
  }
}

TEST_CASE("resample: idempotent on already-uniform input") {
  Centerline line;
  for (int i = 0; i <= 8; ++i) line.points.push_back({0.5 * i, 1.25 * i});
  Centerline out = resample(line, line.size());
  for (std::size_t i = 0; i < line.size(); ++i) {
    CHECK(std::abs(out[i].x - line[i].x) < 1e-12);
    CHECK(std::abs(out[i].y - line[i].y) < 1e-12);
  }
}

TEST_CASE("resample: L-shaped polyline midpoint by arc-length walk") {
  Centerline line({{0, 0}, {3, 0}, {3, 4}});
  Centerline out = resample(line, 3);
  // Total length 7, midpoint at arc length 3.5 -> 0.5 up the vertical leg.
  CHECK(out[1].x == doctest::Approx(3.0).epsilon(1e-12));
  CHECK(out[1].y == doctest::Approx(0.5).epsilon(1e-12));
  CHECK(out[0].x == 0.0);
  CHECK(out[2].y == 4.0);
}

namespace {

// Independent arc-length walk used as the resampling oracle.
Vec2 point_at_arc(const Centerline& line, double s) {
  double walked = 0.0;
  for (std::size_t i = 1; i < line.size(); ++i) {
    const double len = distance(line[i - 1], line[i]);
    if (walked + len >= s || i + 1 == line.size()) {
      const double u = len > 0.0 ? std::min(1.0, (s - walked) / len) : 0.0;
      return line[i - 1] + (line[i] - line[i - 1]) * u;
    }
    walked += len;
  }
  return line.points.back();
}

}  // namespace

TEST_CASE("resample: points sit at uniform arc positions along the input") {
  Rng rng(stream_seed(11, "resample"));
  for (int trial = 0; trial < 25; ++trial) {
    Centerline line = random_polyline(rng, 4 + static_cast<int>(rng.uniform_index(20)));
    const std::size_t m = 2 + rng.uniform_index(40);
    Centerline out = resample(line, m);
    REQUIRE(out.size() == m);

    // Each output point matches the oracle's walk to j/(m-1) of the total
    // input arc length; uniform spacing and length preservation both follow.
    const double total = line.arc_length();
    for (std::size_t j = 0; j < m; ++j) {
      const double s = total * static_cast<double>(j) / static_cast<double>(m - 1);
      const Vec2 want = point_at_arc(line, s);
      CHECK(distance(out[j], want) <= 1e-9 * total);
    }
    // Endpoints preserved exactly.
    CHECK(out.points.front().x == line.points.front().x);
    CHECK(out.points.back().y == line.points.back().y);
  }
}

TEST_CASE("resample: degenerate line rejected") {
  Centerline tiny({{0, 0}, {1e-10, 0}});
  CHECK_THROWS_AS(resample(tiny, 4), DegenerateLine);
  Centerline ok({{0, 0}, {1, 0}});
  CHECK_THROWS_AS(resample(ok, 1), InvariantViolation);
}

TEST_CASE("homography: identity and translation") {
  Centerline line({{1, 2}, {3, -4}, {0.5, 0.25}});
  Centerline same = apply_homography(Homography::identity(), line);
  for (std::size_t i = 0; i < line.size(); ++i) {
    CHECK(same[i].x == line[i].x);
    CHECK(same[i].y == line[i].y);
  }
  Centerline moved = apply_homography(Homography::translation(2.5, -1.0), line);
  for (std::size_t i = 0; i < line.size(); ++i) {
    CHECK(moved[i].x == doctest::Approx(line[i].x + 2.5));
    CHECK(moved[i].y == doctest::Approx(line[i].y - 1.0));
  }
}

TEST_CASE("homography: composition matches sequential application") {
  Rng rng(stream_seed(12, "homography"));
  for (int trial = 0; trial < 20; ++trial) {
    std::array<double, 9> a{}, b{};
    for (int i = 0; i < 9; ++i) {
      a[i] = rng.uniform(-1, 1);
      b[i] = rng.uniform(-1, 1);
    }
    // Keep them solidly invertible and affine-dominant.
    a[0] += 2;
    a[4] += 2;
    a[8] = 1 + 0.05 * a[8];
    b[0] += 2;
    b[4] += 2;
    b[8] = 1 + 0.05 * b[8];
    Homography h1(a), h2(b);
    Homography combo = h1.compose(h2);

    Centerline pts = random_polyline(rng, 6);
    Centerline once = apply_homography(combo, pts);
    Centerline twice = apply_homography(h1, apply_homography(h2, pts));
    for (std::size_t i = 0; i < pts.size(); ++i) {
      CHECK(std::abs(once[i].x - twice[i].x) < 1e-10);
      CHECK(std::abs(once[i].y - twice[i].y) < 1e-10);
    }
  }
}

TEST_CASE("homography: associativity") {
  Rng rng(stream_seed(13, "assoc"));
  for (int trial = 0; trial < 10; ++trial) {
    auto mk = [&] {
      std::array<double, 9> m{};
      for (int i = 0; i < 9; ++i) m[i] = rng.uniform(-0.5, 0.5);
      m[0] += 2;
      m[4] += 2;
      m[8] = 1;
      return Homography(m);
    };
    Homography h1 = mk(), h2 = mk(), h3 = mk();
    auto left = h1.compose(h2).compose(h3).entries();
    auto right = h1.compose(h2.compose(h3)).entries();
    for (int i = 0; i < 9; ++i) CHECK(std::abs(left[i] - right[i]) < 1e-10);
  }
}

TEST_CASE("homography: singular matrix and point at infinity rejected") {
  CHECK_THROWS_AS(Homography({1, 2, 3, 2, 4, 6, 0, 0, 1}), InvariantViolation);
  Homography h({1, 0, 0, 0, 1, 0, 1, 0, 1});  // w = x + 1
  Centerline at_inf({{-1.0, 0.0}, {1.0, 1.0}});
  CHECK_THROWS_AS(apply_homography(h, at_inf), PointAtInfinity);
}

TEST_CASE("shape_error: zero, uniform offset, single displaced point") {
  Centerline a, b;
  for (int i = 0; i < 10; ++i) {
    a.points.push_back({1.0 * i, 0.5 * i});
    b.points.push_back({1.0 * i, 0.5 * i});
  }
  ShapeError zero = shape_error(a, b);
  CHECK(zero.e_mean == 0.0);
  CHECK(zero.e_max == 0.0);
  CHECK(zero.epsilon == 0.0);

  Centerline shifted = b;
  for (auto& p : shifted.points) p += Vec2{0.3, 0.0};
  ShapeError uni = shape_error(shifted, b);
  CHECK(uni.e_mean == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(uni.e_max == doctest::Approx(0.3).epsilon(1e-12));
  CHECK(uni.epsilon == doctest::Approx(0.09).epsilon(1e-12));

  Centerline one = b;
  one.points[4] += Vec2{0.0, 1.0};
  ShapeError se = shape_error(one, b);
  CHECK(std::abs(se.e_max - 1.0) < 1e-12);
  CHECK(std::abs(se.e_mean - std::sqrt(0.1)) < 1e-12);
  CHECK(std::abs(se.epsilon - 0.55) < 1e-12);
}

TEST_CASE("shape_error: symmetric and translation invariant") {
  Rng rng(stream_seed(14, "shape-error"));
  for (int trial = 0; trial < 20; ++trial) {
    Centerline a = random_polyline(rng, 10);
    Centerline b = random_polyline(rng, 10);
    ShapeError ab = shape_error(a, b);
    ShapeError ba = shape_error(b, a);
    CHECK(ab.e_mean == ba.e_mean);
    CHECK(ab.e_max == ba.e_max);

    const Vec2 t{rng.uniform(-3, 3), rng.uniform(-3, 3)};
    Centerline at = a, bt = b;
    for (auto& p : at.points) p += t;
    for (auto& p : bt.points) p += t;
    ShapeError moved = shape_error(at, bt);
    CHECK(std::abs(moved.e_mean - ab.e_mean) < 1e-12);
    CHECK(std::abs(moved.e_max - ab.e_max) < 1e-12);
    CHECK(std::abs(moved.epsilon - ab.epsilon) < 1e-12);

    CHECK(ab.e_mean <= ab.e_max + 1e-15);
    CHECK(ab.epsilon ==
          doctest::Approx(0.5 * (ab.e_mean * ab.e_mean + ab.e_max * ab.e_max))
              .epsilon(1e-12));
  }
  Centerline a({{0, 0}, {1, 0}});
  Centerline c({{0, 0}, {1, 0}, {2, 0}});
  CHECK_THROWS_AS(shape_error(a, c), LengthMismatch);
}

TEST_CASE("bending_energy: straight line is zero") {
  Centerline line;
  for (int i = 0; i < 17; ++i) line.points.push_back({0.3 * i, 0.7 * i});
  CHECK(bending_energy(line) <= 1e-24);  // atan2 roundoff only
}

TEST_CASE("bending_energy: semicircle matches analytic curvature") {
  const double radius = 15.0 / M_PI;  // arc length 15 mm
  Centerline arc = semicircle(radius, 200);
  const double expected = 1.0 / (radius * radius);
  const double got = bending_energy(arc);
  CHECK(std::abs(got - expected) < 0.02 * expected);
}

TEST_CASE("bending_energy: refinement convergence") {
  const double radius = 4.0;
  const double coarse = bending_energy(semicircle(radius, 100));
  const double fine = bending_energy(semicircle(radius, 200));
  CHECK(std::abs(fine - coarse) < 0.01 * coarse);
}

TEST_CASE("bending_energy: rigid motion invariant") {
  Rng rng(stream_seed(15, "bend-rigid"));
  Centerline line = random_polyline(rng, 24);
  const double base = bending_energy(line);
  for (int trial = 0; trial < 10; ++trial) {
    const double a = rng.uniform(0, 2 * M_PI);
    const Vec2 t{rng.uniform(-10, 10), rng.uniform(-10, 10)};
    Centerline moved;
    for (const Vec2& p : line.points) {
      moved.points.push_back({p.x * std::cos(a) - p.y * std::sin(a) + t.x,
                              p.x * std::sin(a) + p.y * std::cos(a) + t.y});
    }
    CHECK(std::abs(bending_energy(moved) - base) < 1e-9 * base);
  }
}

TEST_CASE("bending_energy: degenerate inputs") {
  Centerline two({{0, 0}, {1, 0}});
  CHECK_THROWS_AS(bending_energy(two), DegenerateLine);
}

TEST_CASE("centerline validate rejects bad inputs") {
  Centerline solo({{1, 1}});
  CHECK_THROWS_AS(solo.validate(), InvariantViolation);
  Centerline dup({{0, 0}, {0, 0}, {1, 1}});
  CHECK_THROWS_AS(dup.validate(), InvariantViolation);
  Centerline inf({{0, 0}, {std::numeric_limits<double>::infinity(), 0}});
  CHECK_THROWS_AS(inf.validate(), InvariantViolation);
}
