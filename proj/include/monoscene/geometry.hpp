#pragma once

#include <Eigen/Dense>
#include <array>
#include <cmath>
#include <vector>

#include "monoscene/errors.hpp"

namespace monoscene {

// Pixel convention: integer coordinates address pixel centers, origin at the
// top-left corner, y growing downward.

/// Homogeneous image point (w = 0 encodes a point at infinity).
using HPoint2 = Eigen::Vector3d;

template <typename T>
using HPoint2T = Eigen::Matrix<T, 3, 1>;

inline bool at_infinity(const HPoint2& p, double eps = 1e-12) {
  return std::abs(p.z()) <= eps * p.head<2>().norm();
}

/// Dehomogenize to pixel coordinates. Requires w != 0.
inline Eigen::Vector2d pixel_of(const HPoint2& p) {
  if (p.z() == 0.0) fail(Errc::DegenerateInput, "pixel_of: point at infinity");
  return p.head<2>() / p.z();
}

inline HPoint2 homogeneous(const Eigen::Vector2d& p) { return {p.x(), p.y(), 1.0}; }

/// Scale a homogeneous line so a^2 + b^2 = 1; residuals l.dot(p) are then
/// point-to-line distances in pixels for w = 1 points.
template <typename T>
Eigen::Matrix<T, 3, 1> normalized_line(const Eigen::Matrix<T, 3, 1>& l) {
  const T n = l.template head<2>().norm();
  if (n == T(0)) fail(Errc::DegenerateInput, "normalized_line: line at infinity");
  return l / n;
}

/// Line through two pixel points as a normalized homogeneous triple.
template <typename T>
Eigen::Matrix<T, 3, 1> line_coeffs(const Eigen::Matrix<T, 2, 1>& p,
                                   const Eigen::Matrix<T, 2, 1>& q) {
  const Eigen::Matrix<T, 3, 1> hp(p.x(), p.y(), T(1));
  const Eigen::Matrix<T, 3, 1> hq(q.x(), q.y(), T(1));
  const Eigen::Matrix<T, 3, 1> l = hp.cross(hq);
  if (l.template head<2>().norm() == T(0))
    fail(Errc::DegenerateInput, "line_coeffs: coincident points");
  return normalized_line(l);
}

template <typename T>
T point_line_distance(const Eigen::Matrix<T, 2, 1>& p, const Eigen::Matrix<T, 3, 1>& line) {
  const Eigen::Matrix<T, 3, 1> l = normalized_line(line);
  return std::abs(l.x() * p.x() + l.y() * p.y() + l.z());
}

/// 2D line segment with its supporting homogeneous line (a^2 + b^2 = 1).
struct LineSeg2 {
  Eigen::Vector2d p0;
  Eigen::Vector2d q0;
  Eigen::Vector3d line;
  double length = 0.0;

  Eigen::Vector2d midpoint() const { return 0.5 * (p0 + q0); }
  Eigen::Vector2d direction() const { return (q0 - p0) / length; }
};

/// Build a LineSeg2 from two distinct pixel points.
inline LineSeg2 line_through(const Eigen::Vector2d& p, const Eigen::Vector2d& q) {
  if ((p - q).norm() == 0.0) fail(Errc::DegenerateInput, "line_through: p == q");
  LineSeg2 s;
  s.p0 = p;
  s.q0 = q;
  s.line = line_coeffs<double>(p, q);
  s.length = (p - q).norm();
  return s;
}

/// Pinhole camera: principal point c, focal f (pixels), room-to-camera
/// rotation R, camera centered at (0, 0, h_cam) in room coordinates.
/// Camera frame: x right, y down, z forward. Room frame: z up.
struct CameraModel {
  double f = 0.0;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();
  double h_cam = 1.0;

  Eigen::Vector3d position() const { return {0.0, 0.0, h_cam}; }

  Eigen::Matrix3d K() const {
    Eigen::Matrix3d k = Eigen::Matrix3d::Identity();
    k(0, 0) = k(1, 1) = f;
    k(0, 2) = c.x();
    k(1, 2) = c.y();
    return k;
  }

  bool is_valid_rotation(double tol = 1e-9) const {
    return (R.transpose() * R - Eigen::Matrix3d::Identity()).norm() < tol &&
           std::abs(R.determinant() - 1.0) < tol;
  }
};

/// Perspective projection of a room-frame point (Proj[*]).
inline Eigen::Vector2d project(const CameraModel& cam, const Eigen::Vector3d& X) {
  const Eigen::Vector3d xc = cam.R * (X - cam.position());
  if (xc.z() <= 0.0) fail(Errc::BehindCamera, "project: nonpositive depth");
  return cam.c + cam.f * xc.head<2>() / xc.z();
}

inline double depth_of(const CameraModel& cam, const Eigen::Vector3d& X) {
  return (cam.R * (X - cam.position())).z();
}

/// Unit ray direction in room coordinates through a pixel.
inline Eigen::Vector3d backproject_ray(const CameraModel& cam, const Eigen::Vector2d& px) {
  const Eigen::Vector3d d_cam((px.x() - cam.c.x()) / cam.f, (px.y() - cam.c.y()) / cam.f, 1.0);
  return (cam.R.transpose() * d_cam).normalized();
}

/// Homogeneous vanishing point of room axis i (0, 1 horizontal; 2 vertical).
inline HPoint2 vanishing_point_of_axis(const CameraModel& cam, int axis) {
  const Eigen::Vector3d d = cam.R.col(axis);
  return HPoint2(cam.f * d.x() + cam.c.x() * d.z(), cam.f * d.y() + cam.c.y() * d.z(), d.z());
}

/// Indexed triangle mesh in model units. Canonical placement is centered in
/// x/y with min z at 0 (resting on the floor plane).
struct TriMesh {
  std::vector<Eigen::Vector3d> vertices;
  std::vector<std::array<int, 3>> triangles;

  void bounds(Eigen::Vector3d& lo, Eigen::Vector3d& hi) const {
    lo.setConstant(std::numeric_limits<double>::infinity());
    hi.setConstant(-std::numeric_limits<double>::infinity());
    for (const auto& v : vertices) {
      lo = lo.cwiseMin(v);
      hi = hi.cwiseMax(v);
    }
  }

  /// Translate so the x/y bbox center sits at the origin and min z is 0.
  void make_canonical() {
    if (vertices.empty()) return;
    Eigen::Vector3d lo, hi;
    bounds(lo, hi);
    const Eigen::Vector3d shift(0.5 * (lo.x() + hi.x()), 0.5 * (lo.y() + hi.y()), lo.z());
    for (auto& v : vertices) v -= shift;
  }

  bool indices_in_range() const {
    const int n = static_cast<int>(vertices.size());
    for (const auto& t : triangles)
      for (int k : t)
        if (k < 0 || k >= n) return false;
    return true;
  }
};

/// Area of a simple polygon (shoelace, positive for CCW in a y-down frame).
template <typename T>
T polygon_area(const std::vector<Eigen::Matrix<T, 2, 1>>& poly) {
  T a(0);
  const std::size_t n = poly.size();
  for (std::size_t i = 0; i < n; ++i) {
    const auto& p = poly[i];
    const auto& q = poly[(i + 1) % n];
    a += p.x() * q.y() - q.x() * p.y();
  }
  return a / T(2);
}

/// Sutherland-Hodgman clip of a convex-or-simple polygon against the
/// half-plane n.dot(x) <= d.
template <typename T>
std::vector<Eigen::Matrix<T, 2, 1>> clip_halfplane(
    const std::vector<Eigen::Matrix<T, 2, 1>>& poly, const Eigen::Matrix<T, 2, 1>& n, T d) {
  std::vector<Eigen::Matrix<T, 2, 1>> out;
  const std::size_t m = poly.size();
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = poly[i];
    const auto& b = poly[(i + 1) % m];
    const T da = n.dot(a) - d;
    const T db = n.dot(b) - d;
    if (da <= T(0)) out.push_back(a);
    if ((da < T(0) && db > T(0)) || (da > T(0) && db < T(0))) {
      const T t = da / (da - db);
      out.push_back(a + t * (b - a));
    }
  }
  return out;
}

/// Intersection-over-union of two z-aligned oriented boxes (yaw about z).
/// Exact: footprint polygon clipping times vertical overlap.
double box_iou_3d(const Eigen::Vector3d& center_a, const Eigen::Vector3d& dims_a, double yaw_a,
                  const Eigen::Vector3d& center_b, const Eigen::Vector3d& dims_b, double yaw_b);

}  // namespace monoscene
