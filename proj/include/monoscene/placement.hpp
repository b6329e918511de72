#pragma once

#include <map>
#include <optional>
#include <vector>

#include "monoscene/dfo.hpp"
#include "monoscene/geometry.hpp"
#include "monoscene/layout.hpp"
#include "monoscene/mask.hpp"
#include "monoscene/metrology.hpp"
#include "monoscene/support.hpp"

namespace monoscene {

/// A posed model instance. The transform is R(theta) * S * (prescale * O) + p
/// with R(theta) the z-rotation and S = diag(s1*s3, s2*s3, s3); prescale is
/// fixed at initialization so the canonical mesh matches the solved height.
struct PlacedObject {
  int model_id = -1;
  double theta = 0.0;
  Eigen::Vector3d scale = Eigen::Vector3d::Ones();  // (s1, s2, s3)
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  double prescale = 1.0;
  const TriMesh* mesh = nullptr;

  Eigen::Matrix3d linear() const {
    const double cs = std::cos(theta), sn = std::sin(theta);
    Eigen::Matrix3d rot;
    rot << cs, -sn, 0, sn, cs, 0, 0, 0, 1;
    Eigen::Matrix3d s = Eigen::Matrix3d::Zero();
    s(0, 0) = scale.x() * scale.z();
    s(1, 1) = scale.y() * scale.z();
    s(2, 2) = scale.z();
    return rot * s * prescale;
  }

  Eigen::Vector3d transform(const Eigen::Vector3d& v) const { return linear() * v + position; }
  std::vector<Eigen::Vector3d> transformed_vertices() const;
  /// Axis-aligned bbox center/extent of the transformed vertices.
  void bounds(Eigen::Vector3d& lo, Eigen::Vector3d& hi) const;
};

/// Local frame of one rectangular support surface: origin vertex, two
/// orthogonal edges and the unit normal e1 x e2 / |e1 x e2|.
struct SupportSurfaceFrame {
  Eigen::Vector3d origin = Eigen::Vector3d::Zero();
  Eigen::Vector3d e1 = Eigen::Vector3d::UnitX();
  Eigen::Vector3d e2 = Eigen::Vector3d::UnitZ();
  Eigen::Vector3d normal = Eigen::Vector3d::UnitY();
  int side = 0;  // 1..4 for box sides

  /// Vertical side k (1..4) of a z-aligned box, outward normal.
  static SupportSurfaceFrame box_side(const Eigen::Vector3d& lo, const Eigen::Vector3d& hi,
                                      int side);
  /// Inner face of a room wall (normal pointing into the room).
  static SupportSurfaceFrame room_wall(const RoomLayout& room, int wall);
};

/// Back-project the mask's bottom-center pixel onto the horizontal plane at
/// the object's bottom altitude. Positions outside the room are clamped to
/// the nearest wall and flagged.
struct InitPosition {
  Eigen::Vector3d position = Eigen::Vector3d::Zero();
  bool clamped = false;
};
InitPosition init_position(const Mask& mask, double height, double altitude,
                           const CameraModel& cam, const RoomLayout& room);

/// Binary coverage of the projected mesh triangles at mask resolution.
/// Triangles are clipped to the near plane; a mesh entirely behind the
/// camera is an error.
Mask rasterize_silhouette(const PlacedObject& pose, const CameraModel& cam, int width,
                          int height);

/// Support-from-below test: the child's bbox center (x, y) inside the
/// parent's footprint and the child's minimum z at or above the parent's top.
bool check_below(const PlacedObject& child, const std::vector<Eigen::Vector3d>& parent_points,
                 double tol = 1e-9);

/// Support-from-behind test against a surface frame: tangential coordinates
/// of the center inside the rectangle and 2 (c - o) . n = range[(RSO)^T n].
bool check_behind(const PlacedObject& child, const SupportSurfaceFrame& frame, double tol = 1e-6);

struct PlacementCandidates {
  std::vector<int> model_ids;            // <= 5 retrieval candidates
  std::vector<const TriMesh*> meshes;    // parallel to model_ids
  std::vector<double> orientations;      // yaw grid (top-3 supplied or 8 uniform)
  bool other_category = false;           // widens the horizontal scale bounds
};

struct ObjectContext {
  int instance_id = -1;
  const Mask* mask = nullptr;
  double height = 0.0;    // solved H_i
  double altitude = 0.0;  // solved A_i (top)
  PlacementCandidates candidates;
};

struct RefineOptions {
  int iterations = 30;
  DfoMethod method = DfoMethod::TrustRegion;
  int threads = 1;
};

struct RefinedObject {
  int instance_id = -1;
  PlacedObject pose;
  double initial_iou = 0.0;
  double final_iou = 0.0;
  std::vector<double> iou_trace;  // best-so-far per iteration, non-decreasing
  int accepted_moves = 0;
  bool infeasible_start = false;
  bool position_clamped = false;
  int frame_side = 0;  // chosen wall/bbox side for behind supports
};

struct SceneGeometry {
  CameraModel camera;
  RoomLayout room;
  int width = 0;
  int height = 0;
  std::map<int, int> wall_side_of;  // layout wall instance id -> side 0..3
};

/// Contextual refinement: per object (in topological support order) grid
/// search over model x orientation (x side surface for behind supports) with
/// a bound-constrained derivative-free refinement of scale and position,
/// maximizing projected-silhouette IoU under the support constraints.
std::vector<RefinedObject> refine_scene(const std::vector<InstanceRef>& instances,
                                        const std::vector<ObjectContext>& objects,
                                        const SupportGraph& graph, const SceneGeometry& geo,
                                        const RefineOptions& opts = {});

}  // namespace monoscene
