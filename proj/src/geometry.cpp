#include "fiberloop/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "fiberloop/errors.hpp"

namespace fiberloop {

namespace {
constexpr double kMinSpacing = 1e-9;      // mm
constexpr double kDegenerateLength = 1e-9;  // mm
constexpr double kHomographyWTol = 1e-12;
constexpr double kHomographyDetTol = 1e-12;
}  // namespace

double Centerline::arc_length() const {
  double total = 0.0;
  for (std::size_t i = 1; i < points.size(); ++i) {
    total += distance(points[i - 1], points[i]);
  }
  return total;
}

void Centerline::validate() const {
  if (points.size() < 2) {
    throw InvariantViolation("centerline needs at least 2 points, got " +
                             std::to_string(points.size()));
  }
  for (std::size_t i = 0; i < points.size(); ++i) {
    if (!points[i].finite()) {
      throw InvariantViolation("centerline point " + std::to_string(i) +
                               " is not finite");
    }
    if (i > 0 && distance(points[i - 1], points[i]) <= kMinSpacing) {
      throw InvariantViolation("centerline points " + std::to_string(i - 1) +
                               " and " + std::to_string(i) + " coincide");
    }
  }
}

Homography::Homography(const std::array<double, 9>& entries) : m_(entries) {
  const double det = m_[0] * (m_[4] * m_[8] - m_[5] * m_[7]) -
                     m_[1] * (m_[3] * m_[8] - m_[5] * m_[6]) +
                     m_[2] * (m_[3] * m_[7] - m_[4] * m_[6]);
  if (!(std::abs(det) > kHomographyDetTol)) {
    throw InvariantViolation("homography is singular (|det| <= 1e-12)");
  }
  if (m_[8] != 1.0) {
    if (std::abs(m_[8]) <= kHomographyWTol) {
      throw InvariantViolation(
          "homography bottom-right entry is too close to zero to normalize");
    }
    for (double& v : m_) v /= m_[8];
    m_[8] = 1.0;
  }
}

Homography Homography::identity() {
  return Homography({1, 0, 0, 0, 1, 0, 0, 0, 1});
}

Homography Homography::translation(double tx, double ty) {
  return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1});
}

Vec2 Homography::apply(const Vec2& p) const {
  const double u = m_[0] * p.x + m_[1] * p.y + m_[2];
  const double v = m_[3] * p.x + m_[4] * p.y + m_[5];
  const double w = m_[6] * p.x + m_[7] * p.y + m_[8];
  if (std::abs(w) < kHomographyWTol) {
    throw PointAtInfinity("homogeneous w component vanished for point (" +
                          std::to_string(p.x) + ", " + std::to_string(p.y) +
                          ")");
  }
  return {u / w, v / w};
}

Homography Homography::compose(const Homography& other) const {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i) {
    for (int j = 0; j < 3; ++j) {
      double s = 0.0;
      for (int k = 0; k < 3; ++k) {
        s += m_[3 * i + k] * other.m_[3 * k + j];
      }
      r[3 * i + j] = s;
    }
  }
  return Homography(r);
}

Centerline resample(const Centerline& line, std::size_t m) {
  if (line.size() < 2) {
    throw InvariantViolation("resample needs at least 2 input points");
  }
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (!line[i].finite()) {
      throw InvariantViolation("resample input point " + std::to_string(i) +
                               " is not finite");
    }
  }
  if (m < 2) {
    throw InvariantViolation("resample needs m >= 2, got " +
                             std::to_string(m));
  }

  const std::size_t n = line.size();
  std::vector<double> cum(n, 0.0);
  for (std::size_t i = 1; i < n; ++i) {
    cum[i] = cum[i - 1] + distance(line[i - 1], line[i]);
  }
  const double total = cum[n - 1];
  if (total < kDegenerateLength) {
    throw DegenerateLine("polyline arc length below 1e-9 mm");
  }

  Centerline out;
  out.points.resize(m);
  out.points.front() = line.points.front();
  out.points.back() = line.points.back();

  std::size_t seg = 0;
  for (std::size_t j = 1; j + 1 < m; ++j) {
    const double target =
        total * static_cast<double>(j) / static_cast<double>(m - 1);
    while (seg + 2 < n && cum[seg + 1] < target) ++seg;
    const double seg_len = cum[seg + 1] - cum[seg];
    const double u = seg_len > 0.0 ? (target - cum[seg]) / seg_len : 0.0;
    out.points[j] = line[seg] + (line[seg + 1] - line[seg]) * u;
  }
  return out;
}

Centerline apply_homography(const Homography& h, const Centerline& pts) {
  Centerline out;
  out.points.reserve(pts.size());
  for (const Vec2& p : pts.points) {
    out.points.push_back(h.apply(p));
  }
  return out;
}

ShapeError shape_error(const Centerline& current, const Centerline& target) {
  if (current.size() != target.size()) {
    throw LengthMismatch("shape_error needs equal point counts, got " +
                         std::to_string(current.size()) + " vs " +
                         std::to_string(target.size()));
  }
  if (current.size() == 0) {
    throw LengthMismatch("shape_error on empty centerlines");
  }

  double sum_sq = 0.0;
  double max_sq = 0.0;
  for (std::size_t i = 0; i < current.size(); ++i) {
    const double d2 = (current[i] - target[i]).squared_norm();
    sum_sq += d2;
    max_sq = std::max(max_sq, d2);
  }
  const double mean_sq = sum_sq / static_cast<double>(current.size());

  ShapeError e;
  e.e_mean = std::sqrt(mean_sq);
  e.e_max = std::sqrt(max_sq);
  e.epsilon = 0.5 * (mean_sq + max_sq);
  return e;
}

double bending_energy(const Centerline& line) {
  if (line.size() < 3) {
    throw DegenerateLine("bending energy needs at least 3 points");
  }
  line.validate();

  const std::size_t n = line.size();
  double total_len = 0.0;
  std::vector<double> seg_len(n - 1);
  for (std::size_t i = 0; i + 1 < n; ++i) {
    seg_len[i] = distance(line[i], line[i + 1]);
    total_len += seg_len[i];
  }
  if (total_len < kDegenerateLength) {
    throw DegenerateLine("polyline arc length below 1e-9 mm");
  }

  double sum = 0.0;
  for (std::size_t i = 1; i + 1 < n; ++i) {
    const Vec2 a = line[i] - line[i - 1];
    const Vec2 b = line[i + 1] - line[i];
    const double turn = std::atan2(a.cross(b), a.dot(b));
    const double ds = 0.5 * (seg_len[i - 1] + seg_len[i]);
    const double kappa = turn / ds;
    sum += kappa * kappa * ds;
  }
  return sum / total_len;
}

}  // namespace fiberloop
