#pragma once

#include <array>
#include <optional>
#include <vector>

#include "monoscene/geometry.hpp"

namespace monoscene {

/// Line segments assigned to one vanishing point.
struct VpCluster {
  HPoint2 vp = HPoint2::Zero();
  std::vector<LineSeg2> members;

  int size() const { return static_cast<int>(members.size()); }
};

struct ClusterResult {
  std::array<VpCluster, 3> clusters;
  std::vector<LineSeg2> outliers;
};

/// Joint vanishing-point / camera estimate. vps are ordered by room axis
/// (x, y horizontal, then vertical); directions K^-1 * vp_i are pairwise
/// orthogonal on convergence.
struct CalibrationResult {
  std::array<HPoint2, 3> vps;
  CameraModel camera;
  double residual = 0.0;  // mean point-line distance over clustered lines, px
  int iterations = 0;
};

struct CalibrationOptions {
  double angle_thresh_deg = 4.0;   // cluster assignment threshold
  int max_iterations = 50;
  double residual_tol = 1e-4;      // stop when the mean residual changes less
  int seed_segment_count = 40;     // longest segments used for seed intersections
  int seed_candidate_count = 24;   // top-scored candidate points kept for triplets
};

/// Angle (degrees, in [0, 90]) between a segment and the direction from its
/// midpoint to the vanishing point.
double vp_alignment_angle_deg(const LineSeg2& seg, const HPoint2& vp);

/// Assign each line to the closest vanishing point under the threshold.
ClusterResult cluster_lines(const std::vector<LineSeg2>& lines, const std::array<HPoint2, 3>& vps,
                            double angle_thresh_deg);

/// Re-estimate a cluster's vanishing point as the eigenvector of L^T L with
/// the smallest eigenvalue, rows being sqrt(length)-weighted normalized line
/// triples. Never increases the weighted residual relative to the input vp.
HPoint2 refit_vp(const VpCluster& cluster);

/// Weighted residual eps^T eps of a unit-normalized vp against the cluster.
double cluster_residual(const VpCluster& cluster, const HPoint2& vp);

/// Recover intrinsics and the room-to-camera rotation from a Manhattan vp
/// triplet. Principal point is fixed to the image center; the focal comes
/// from orthogonality of finite vp pairs.
CameraModel camera_from_vps(const std::array<HPoint2, 3>& vps, int width, int height);

/// Alternate clustering, per-cluster refits and camera updates until the mean
/// residual stabilizes. Without an initial triplet, seeds come from a scored
/// search over pairwise intersections of the longest segments.
CalibrationResult joint_calibrate(const std::vector<LineSeg2>& lines, int width, int height,
                                  const std::optional<std::array<HPoint2, 3>>& init = std::nullopt,
                                  const CalibrationOptions& opts = {});

}  // namespace monoscene
