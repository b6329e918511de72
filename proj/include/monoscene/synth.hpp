#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "monoscene/rng.hpp"
#include "monoscene/scene_io.hpp"

namespace monoscene {

/// Free-position pinhole camera used by the generator (the pipeline's
/// CameraModel pins the camera over the room origin; ground truth does not).
struct TruthCamera {
  double f = 500.0;
  Eigen::Vector2d c = Eigen::Vector2d::Zero();
  Eigen::Matrix3d R = Eigen::Matrix3d::Identity();  // world-to-camera
  Eigen::Vector3d position = Eigen::Vector3d::Zero();

  Eigen::Vector3d to_camera(const Eigen::Vector3d& X) const { return R * (X - position); }
  Eigen::Vector2d project(const Eigen::Vector3d& X) const {
    const Eigen::Vector3d x = to_camera(X);
    if (x.z() <= 0.0) fail(Errc::BehindCamera, "TruthCamera::project");
    return c + f * x.head<2>() / x.z();
  }
};

struct TruthParent {
  enum class Kind : int { Object = 0, Floor = 1, Ceiling = 2, Wall = 3 };
  Kind kind = Kind::Floor;
  int id = -1;    // object parent instance id
  int wall = -1;  // 0 x-lo, 1 x-hi, 2 y-lo, 3 y-hi (world frame)
};

struct TruthObject {
  int id = -1;
  int category = 0;
  int model_id = -1;
  double yaw = 0.0;
  double uniform_scale = 1.0;  // canonical mesh -> world
  Eigen::Vector3d position = Eigen::Vector3d::Zero();  // base center, world
  TruthParent parent;
  SupportType type = SupportType::Below;
  double height = 0.0;
  double top_altitude = 0.0;
  Eigen::Vector3d box_center = Eigen::Vector3d::Zero();
  Eigen::Vector3d box_dims = Eigen::Vector3d::Zero();
  double box_yaw = 0.0;
};

struct GroundTruthScene {
  std::uint64_t seed = 0;
  RoomLayout room;  // world frame, corner at the origin, yaw 0
  TruthCamera camera;
  std::array<HPoint2, 3> vps;  // room-axis order (x, y, vertical)
  std::vector<TruthObject> objects;
  std::vector<int> line_axis_labels;  // per bundle line: room axis 0/1/2, -1 clutter
};

struct SynthNoise {
  double line_sigma_px = 0.0;
  int clutter_lines = 0;
  double drop_line_prob = 0.0;
  int mask_morph = 0;  // <0 erode, >0 dilate cycles on object masks
  bool object_lines = true;
  bool inject_answers = true;
  bool exclude_truth_models = false;
  double descriptor_noise = 0.05;
};

struct SynthResult {
  GroundTruthScene truth;
  SceneBundle bundle;
};

/// Generate a ground-truth room and render it into a bundle through an
/// independently coded scanline rasterizer.
SynthResult make_scene(std::uint64_t seed, int n_objects, const SynthNoise& noise = {});

void save_truth(const GroundTruthScene& truth, const std::filesystem::path& path);
GroundTruthScene load_truth(const std::filesystem::path& path);

struct EvalMetrics {
  double layout_iou = 0.0;
  double vp_angle_error_deg = 0.0;
  double focal_rel_error = 0.0;
  double camera_height_error = 0.0;
  double support_accuracy = 0.0;  // all-four-questions criterion
  double mean_height_rel_error = 0.0;
  double mean_object_iou3d = 0.0;
  double mean_final_iou2d = 0.0;
  double map_015 = 0.0;
  std::vector<int> object_ids;
  std::vector<double> object_iou3d;
  std::vector<bool> support_correct;
};

/// Compare a pipeline result against ground truth. The estimated room frame
/// is aligned to the world by snapping the relative rotation to the nearest
/// quarter-turn about the vertical.
EvalMetrics evaluate(const SceneResult& result, const GroundTruthScene& truth);

struct Detection {
  int category = 0;
  double confidence = 0.0;
  double iou3d = 0.0;
};

/// VOC-style mean average precision over categories at the given 3D IoU
/// threshold; detections carry their matched ground-truth IoU.
double mean_average_precision(std::vector<Detection> detections, double iou_thresh);

/// Test hook: the generator's scanline rasterizer for one posed mesh
/// (independent of placement's edge-function rasterizer).
Mask synth_rasterize(const TriMesh& mesh, const Eigen::Matrix3d& linear,
                     const Eigen::Vector3d& position, const TruthCamera& cam, int width,
                     int height);

}  // namespace monoscene
