#ifndef FIBERLOOP_GEOMETRY_HPP_
#define FIBERLOOP_GEOMETRY_HPP_

#include <array>
#include <cstddef>
#include <vector>

#include "fiberloop/vec2.hpp"

namespace fiberloop {

// Ordered planar point list in mm. The shared currency between physics,
// observation, reward, and metrics.
struct Centerline {
  std::vector<Vec2> points;

  Centerline() = default;
  explicit Centerline(std::vector<Vec2> pts) : points(std::move(pts)) {}

  std::size_t size() const { return points.size(); }
  const Vec2& operator[](std::size_t i) const { return points[i]; }
  Vec2& operator[](std::size_t i) { return points[i]; }

  double arc_length() const;

  // Throws InvariantViolation on non-finite coordinates, fewer than 2 points,
  // or coincident consecutive points (spacing <= 1e-9 mm).
  void validate() const;
};

// 3x3 projective transform. Bottom-right entry is normalized to 1 on
// construction; construction rejects non-invertible matrices.
class Homography {
 public:
  // Row-major entries.
  explicit Homography(const std::array<double, 9>& entries);

  static Homography identity();
  static Homography translation(double tx, double ty);

  const std::array<double, 9>& entries() const { return m_; }

  Vec2 apply(const Vec2& p) const;

  // this ∘ other: apply(other) first, then this.
  Homography compose(const Homography& other) const;

 private:
  std::array<double, 9> m_;
};

struct ShapeError {
  double e_mean = 0.0;  // mm, root of Eq. 6's mean squared deviation
  double e_max = 0.0;   // mm
  double epsilon = 0.0;  // mm^2, (e_mean^2 + e_max^2) / 2
};

// Resamples a polyline to m points at uniform arc-length spacing. The first
// and last input points are preserved exactly and every output point lies on
// an input segment.
Centerline resample(const Centerline& line, std::size_t m);

Centerline apply_homography(const Homography& h, const Centerline& pts);

// Mean and worst-case pointwise deviation between equal-length point lists.
ShapeError shape_error(const Centerline& current, const Centerline& target);

// Arc-length-averaged integral of squared curvature, (1/L) sum k_i^2 ds_i,
// with the turning-angle curvature estimate at interior vertices. Units are
// 1/mm^2.
double bending_energy(const Centerline& line);

}  // namespace fiberloop

#endif  // FIBERLOOP_GEOMETRY_HPP_
