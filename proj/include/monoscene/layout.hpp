#pragma once

#include <array>
#include <optional>
#include <vector>

#include "monoscene/geometry.hpp"
#include "monoscene/vanishing.hpp"

namespace monoscene {

/// Per-pixel layout edge likelihood in [0, 1].
struct EdgeMap {
  int width = 0;
  int height = 0;
  std::vector<float> intensity;

  EdgeMap() = default;
  EdgeMap(int w, int h) : width(w), height(h), intensity(static_cast<std::size_t>(w) * h, 0.f) {}
  float at(int x, int y) const { return intensity[static_cast<std::size_t>(y) * width + x]; }
  float& at(int x, int y) { return intensity[static_cast<std::size_t>(y) * width + x]; }
};

/// 3D room cuboid. The pipeline expresses it in the vanishing-point-aligned
/// room frame (yaw 0 there); the type keeps yaw for ground-truth scenes.
struct RoomLayout {
  Eigen::Vector3d corner = Eigen::Vector3d::Zero();  // minimum-coordinate corner
  Eigen::Vector3d sizes = Eigen::Vector3d::Zero();   // (W, D, H), all > 0
  double yaw = 0.0;

  Eigen::Vector3d center() const { return corner + 0.5 * sizes; }
};

enum class RegionLabel : std::uint8_t { Floor, Ceiling, WallLeft, WallMid, WallRight };

const char* region_name(RegionLabel r);

struct LabeledPolygon {
  RegionLabel label;
  std::vector<Eigen::Vector2d> points;
};

/// A full-image partition into floor / ceiling / up-to-3 wall regions.
///
/// Parameterized by up to four vanishing-point-consistent boundary lines: the
/// middle wall's floor and ceiling edges (through one horizontal vp) and the
/// left/right wall-wall junctions (through the vertical vp). Side-wall
/// floor/ceiling edges are derived through the other horizontal vp.
struct LayoutProposal {
  std::array<HPoint2, 3> vps;  // room-axis order, [2] vertical
  int mid_axis = 0;            // horizontal vp index of the mid-wall edges
  std::optional<Eigen::Vector3d> floor_mid;
  std::optional<Eigen::Vector3d> ceil_mid;
  std::optional<Eigen::Vector3d> junction_left;
  std::optional<Eigen::Vector3d> junction_right;

  // Derived at construction: per-strip floor/ceiling lines (0 left, 1 mid,
  // 2 right), oriented so eval > 0 is the floor side / below.
  std::array<std::optional<Eigen::Vector3d>, 3> floor_lines;
  std::array<std::optional<Eigen::Vector3d>, 3> ceil_lines;

  std::vector<LabeledPolygon> polygons;
  std::vector<LineSeg2> generating;
  double score = 0.0;      // band-normalized edge-map score
  double raw_score = 0.0;  // unnormalized intensity sum (kept for ablation)
  double strength = 0.0;   // total supporting segment length (generation rank)

  int strip_of(double x, double y) const;
  RegionLabel label_at(double x, double y) const;
  std::vector<std::uint8_t> signature(int width, int height) const;
  /// Region boundary pieces as clipped 2D segments (excluding image borders).
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> boundary_segments(int width,
                                                                             int height) const;
};

struct LayoutOptions {
  double intensity_thresh = 0.3;  // "high-intensity" edge-map level
  double coverage_frac = 0.6;     // fraction of a segment that must be high-intensity
  int max_proposals = 200;
  int max_lines_per_role = 8;
  double corner_attach_px = 12.0;  // max gap between segments forming a corner
  double band_px = 2.0;            // scoring band half-width
  double room_height = 3.0;
  double default_camera_height = 1.5;  // used when the ceiling is out of view
  double near_wall_margin = 0.15;      // meters behind the camera for the unseen wall
};

/// Generate deduplicated layout proposals from clustered segments, keeping at
/// most max_proposals ranked by supporting segment length.
std::vector<LayoutProposal> generate_proposals(const std::array<VpCluster, 3>& clusters,
                                               const EdgeMap& edge_map,
                                               const LayoutOptions& opts = {});

/// Mean edge-map intensity collected within band_px of the proposal boundary,
/// normalized by the boundary pixel count. Sets p.score and p.raw_score.
double score_proposal(LayoutProposal& p, const EdgeMap& edge_map, const LayoutOptions& opts = {});

/// Sort descending by score; ties break on the region-label signature.
void rank_proposals(std::vector<LayoutProposal>& proposals, int width, int height);

struct CuboidFit {
  RoomLayout layout;
  double camera_height = 0.0;
  double reproj_residual = 0.0;  // mean px distance of generating segments
  bool height_defaulted = false;    // ceiling unseen, camera height fell back
  bool depth_lower_bound = false;   // unseen near wall placed just behind camera
  bool width_lower_bound = false;   // a side wall clamped to the view frustum
};

/// Invert the proposal's boundary lines into a 3D cuboid with the room height
/// fixed; derives the camera height from the floor plane.
CuboidFit fit_cuboid(const LayoutProposal& best, const CameraModel& cam, int width, int height,
                     const LayoutOptions& opts = {});

}  // namespace monoscene
