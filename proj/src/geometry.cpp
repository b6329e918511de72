#include "monoscene/geometry.hpp"

namespace monoscene {

const char* errc_name(Errc c) {
  switch (c) {
    case Errc::DegenerateInput: return "DegenerateInput";
    case Errc::BehindCamera: return "BehindCamera";
    case Errc::DimensionMismatch: return "DimensionMismatch";
    case Errc::DegenerateCluster: return "DegenerateCluster";
    case Errc::NoFocalSolution: return "NoFocalSolution";
    case Errc::CalibrationFailed: return "CalibrationFailed";
    case Errc::NoProposal: return "NoProposal";
    case Errc::UnderConstrained: return "UnderConstrained";
    case Errc::OutOfRange: return "OutOfRange";
    case Errc::EmptyMask: return "EmptyMask";
    case Errc::SingularConfiguration: return "SingularConfiguration";
    case Errc::CyclicGraph: return "CyclicGraph";
    case Errc::ZeroNorm: return "ZeroNorm";
    case Errc::EmptyLibrary: return "EmptyLibrary";
    case Errc::RayParallelToPlane: return "RayParallelToPlane";
    case Errc::InfeasibleStart: return "InfeasibleStart";
    case Errc::MissingFile: return "MissingFile";
    case Errc::SchemaViolation: return "SchemaViolation";
    case Errc::InvariantViolation: return "InvariantViolation";
    case Errc::IdMismatch: return "IdMismatch";
    case Errc::PlacementRejection: return "PlacementRejection";
    case Errc::IoError: return "IoError";
  }
  return "UnknownError";
}

namespace {

std::vector<Eigen::Vector2d> box_footprint(const Eigen::Vector3d& center,
                                           const Eigen::Vector3d& dims, double yaw) {
  const double cs = std::cos(yaw), sn = std::sin(yaw);
  const double hx = 0.5 * dims.x(), hy = 0.5 * dims.y();
  std::vector<Eigen::Vector2d> poly;
  poly.reserve(4);
  const double sx[4] = {-1, 1, 1, -1};
  const double sy[4] = {-1, -1, 1, 1};
  for (int k = 0; k < 4; ++k) {
    const double lx = sx[k] * hx, ly = sy[k] * hy;
    poly.emplace_back(center.x() + cs * lx - sn * ly, center.y() + sn * lx + cs * ly);
  }
  return poly;
}

}  // namespace

double box_iou_3d(const Eigen::Vector3d& center_a, const Eigen::Vector3d& dims_a, double yaw_a,
                  const Eigen::Vector3d& center_b, const Eigen::Vector3d& dims_b, double yaw_b) {
  const double za0 = center_a.z() - 0.5 * dims_a.z(), za1 = center_a.z() + 0.5 * dims_a.z();
  const double zb0 = center_b.z() - 0.5 * dims_b.z(), zb1 = center_b.z() + 0.5 * dims_b.z();
  const double dz = std::min(za1, zb1) - std::max(za0, zb0);
  if (dz <= 0.0) return 0.0;

  auto poly = box_footprint(center_a, dims_a, yaw_a);
  const auto b = box_footprint(center_b, dims_b, yaw_b);
  // Clip A's footprint by B's four edges.
  for (int k = 0; k < 4 && !poly.empty(); ++k) {
    const Eigen::Vector2d p = b[k];
    const Eigen::Vector2d q = b[(k + 1) % 4];
    const Eigen::Vector2d e = q - p;
    // Inward normal for a CCW rectangle.
    const Eigen::Vector2d n(-e.y(), e.x());
    poly = clip_halfplane<double>(poly, -n, -n.dot(p));
  }
  if (poly.size() < 3) return 0.0;
  const double inter_area = std::abs(polygon_area<double>(poly));
  const double inter = inter_area * dz;
  const double va = dims_a.prod();
  const double vb = dims_b.prod();
  const double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace monoscene
