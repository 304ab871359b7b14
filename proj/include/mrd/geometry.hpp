#pragma once

#include <cmath>
#include <cstdint>
#include <vector>

#include "mrd/errors.hpp"

namespace mrd {

struct Vec2 {
  double x = 0.0;
  double y = 0.0;

  friend Vec2 operator+(Vec2 a, Vec2 b) { return {a.x + b.x, a.y + b.y}; }
  friend Vec2 operator-(Vec2 a, Vec2 b) { return {a.x - b.x, a.y - b.y}; }
  friend Vec2 operator*(double s, Vec2 a) { return {s * a.x, s * a.y}; }
  double dot(Vec2 o) const { return x * o.x + y * o.y; }
  double norm() const { return std::hypot(x, y); }
};

// Local chart at a boundary point: `normal` points into the treated region,
// `tangent` is the normal rotated by -90 degrees so that the matrix
// [tangent normal] is a rotation (det +1). In rotated coordinates the
// boundary is the z1-axis and treatment is the upper half-plane.
struct BoundaryFrame {
  Vec2 center;
  Vec2 tangent;
  Vec2 normal;

  static BoundaryFrame from_normal(Vec2 center, Vec2 normal) {
    const double n = normal.norm();
    if (!(n > 0.0) || !std::isfinite(n))
      throw InvalidFrameError("frame normal must be a finite nonzero vector");
    normal = (1.0 / n) * normal;
    return BoundaryFrame{center, Vec2{normal.y, -normal.x}, normal};
  }

  void validate(double tol = 1e-12) const {
    const double nt = tangent.norm();
    const double nn = normal.norm();
    const double det = tangent.x * normal.y - tangent.y * normal.x;
    if (std::abs(nt - 1.0) > tol || std::abs(nn - 1.0) > tol ||
        std::abs(tangent.dot(normal)) > tol || std::abs(det - 1.0) > tol)
      throw InvalidFrameError("frame is not a right-handed orthonormal pair");
  }

  // data coordinates -> local (z1, z2)
  Vec2 to_local(Vec2 r) const {
    const Vec2 u = r - center;
    return {tangent.dot(u), normal.dot(u)};
  }

  Vec2 to_global(Vec2 z) const {
    return {center.x + tangent.x * z.x + normal.x * z.y,
            center.y + tangent.y * z.x + normal.y * z.y};
  }
};

enum class RegionKind { intersection, half_sum, half_plane };

// Treatment regions are open sets; points exactly on the boundary count as
// control.
struct RegionSpec {
  RegionKind kind = RegionKind::intersection;
  double c1 = 0.0;
  double c2 = 0.0;
};

inline bool region_contains(const RegionSpec& spec, Vec2 r) {
  switch (spec.kind) {
    case RegionKind::intersection:
      return r.x > spec.c1 && r.y > spec.c2;
    case RegionKind::half_sum:
      return r.x + r.y > spec.c1 + spec.c2;
    case RegionKind::half_plane:
      return r.y > spec.c2;
  }
  return false;
}

// Column-oriented sample of (outcome, two running variables, treatment flag).
struct Dataset {
  std::vector<double> y;
  std::vector<double> r1;
  std::vector<double> r2;
  std::vector<std::uint8_t> treated;

  std::size_t size() const { return y.size(); }

  void push_back(double yi, double x1, double x2, bool d) {
    y.push_back(yi);
    r1.push_back(x1);
    r2.push_back(x2);
    treated.push_back(d ? 1 : 0);
  }

  void reserve(std::size_t n) {
    y.reserve(n);
    r1.reserve(n);
    r2.reserve(n);
    treated.reserve(n);
  }
};

// Isometry onto the frame's local chart. Outcomes and flags carry over.
inline Dataset rotate_to_frame(const Dataset& data, const BoundaryFrame& frame) {
  frame.validate();
  Dataset out;
  out.reserve(data.size());
  out.y = data.y;
  out.treated = data.treated;
  out.r1.resize(data.size());
  out.r2.resize(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Vec2 z = frame.to_local({data.r1[i], data.r2[i]});
    out.r1[i] = z.x;
    out.r2[i] = z.y;
  }
  return out;
}

// Equally spaced frames along each linear boundary segment, corner excluded.
// `extent` bounds the walk from the region's corner/center point.
inline std::vector<BoundaryFrame> boundary_points(const RegionSpec& spec,
                                                  int count,
                                                  double extent = 1.0) {
  if (count < 1) throw InvalidArgumentError("boundary_points: count must be >= 1");
  if (!(extent > 0.0)) throw InvalidArgumentError("boundary_points: extent must be > 0");
  std::vector<BoundaryFrame> frames;
  const Vec2 corner{spec.c1, spec.c2};
  switch (spec.kind) {
    case RegionKind::intersection: {
      // bottom edge {r1 > c1, r2 = c2}: treated side is above
      for (int k = 1; k <= count; ++k) {
        const double t = extent * k / count;
        frames.push_back(BoundaryFrame::from_normal(corner + Vec2{t, 0.0}, {0.0, 1.0}));
      }
      // left edge {r1 = c1, r2 > c2}: treated side is to the right
      for (int k = 1; k <= count; ++k) {
        const double t = extent * k / count;
        frames.push_back(BoundaryFrame::from_normal(corner + Vec2{0.0, t}, {1.0, 0.0}));
      }
      break;
    }
    case RegionKind::half_sum: {
      const double inv_sqrt2 = 1.0 / std::sqrt(2.0);
      const Vec2 dir{inv_sqrt2, -inv_sqrt2};
      const Vec2 normal{inv_sqrt2, inv_sqrt2};
      for (int k = 0; k < count; ++k) {
        const double t = count == 1 ? 0.0 : -extent + 2.0 * extent * k / (count - 1);
        frames.push_back(BoundaryFrame::from_normal(corner + t * dir, normal));
      }
      break;
    }
    case RegionKind::half_plane: {
      for (int k = 0; k < count; ++k) {
        const double t = count == 1 ? 0.0 : -extent + 2.0 * extent * k / (count - 1);
        frames.push_back(BoundaryFrame::from_normal({spec.c1 + t, spec.c2}, {0.0, 1.0}));
      }
      break;
    }
  }
  return frames;
}

}  // namespace mrd
