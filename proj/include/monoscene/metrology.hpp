#pragma once

#include <map>
#include <optional>
#include <vector>

#include "monoscene/geometry.hpp"
#include "monoscene/layout.hpp"
#include "monoscene/mask.hpp"
#include "monoscene/support.hpp"

namespace monoscene {

/// An object's vertical extent in the image: the mask chord along a ray from
/// the vertical vanishing point.
struct HeightLine {
  Eigen::Vector2d top = Eigen::Vector2d::Zero();
  Eigen::Vector2d bottom = Eigen::Vector2d::Zero();
  int owner = -1;
};

/// Scan the mask boundary with rays from vp_v, estimate the Gaussian kernel
/// density of the ray radians (Silverman bandwidth), and return the longest
/// mask chord among the local-maximum rays. vp_v at infinity switches to
/// parallel rays indexed by perpendicular offset.
HeightLine extract_height_line(const Mask& mask, const HPoint2& vp_v);

/// Cross-ratio altitude of a point already mapped onto the reference line:
/// A = H_r * (|t_i - b_r| / |t_r - b_r|) * (|vp_v - t_r| / |vp_v - t_i|),
/// with the vp factor tending to 1 for vp_v at infinity.
double cross_ratio_altitude(const Eigen::Vector2d& t_i, const Eigen::Vector2d& b_r,
                            const Eigen::Vector2d& t_r, const HPoint2& vp_v, double H_r);

/// Transfer an image point onto the reference vertical line along the ground
/// direction: v = (foot x b_r) x horizon, mapped = (v x p) x (t_r x b_r).
/// `foot` is the image of the object's vertical line at floor level.
Eigen::Vector2d map_to_reference(const Eigen::Vector2d& p, const Eigen::Vector2d& foot,
                                 const Eigen::Vector2d& t_r, const Eigen::Vector2d& b_r,
                                 const Eigen::Vector3d& horizon);

struct ObjectHeight {
  double height = 0.0;     // H_i, meters
  double altitude = 0.0;   // A_i, top altitude above the floor
  bool clamped = false;    // replaced by the prior mean (outside mu +- 3 sigma)
  bool low_confidence = false;   // rough estimate (unknown behind surface)
  bool type_corrected = false;   // negative H flipped the edge to behind
  SupportType solved_type = SupportType::Below;
};

struct HeightSolution {
  std::vector<int> instance_ids;
  std::vector<ObjectHeight> objects;  // parallel to instance_ids

  const ObjectHeight* for_instance(int id) const {
    for (std::size_t i = 0; i < instance_ids.size(); ++i)
      if (instance_ids[i] == id) return &objects[i];
    return nullptr;
  }
};

struct MetrologyInputs {
  std::vector<InstanceRef> instances;
  std::vector<HeightLine> lines;  // parallel to non-layout instances order
  CameraModel camera;             // h_cam set from the layout fit
  RoomLayout layout;
  std::array<HPoint2, 3> vps;  // room-axis order, [2] vertical
  PriorTables priors;
  std::map<int, int> wall_side_of;  // layout wall instance id -> side 0..3
};

/// Solve object heights and top altitudes by the cross ratio in topological
/// support order. Occluded bottoms are handled through the parent altitude;
/// wall-supported objects use the altitude difference of their own top and
/// bottom; heights outside the 3-sigma prior interval are replaced by the
/// category mean and flagged.
HeightSolution solve_heights(const SupportGraph& graph, const MetrologyInputs& in);

}  // namespace monoscene
