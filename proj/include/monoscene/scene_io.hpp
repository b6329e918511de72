#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "monoscene/layout.hpp"
#include "monoscene/metrology.hpp"
#include "monoscene/placement.hpp"
#include "monoscene/png_io.hpp"
#include "monoscene/retrieval.hpp"
#include "monoscene/support.hpp"
#include "monoscene/vanishing.hpp"

namespace monoscene {

/// One segmented object instance of the bundle.
struct InstanceData {
  int id = 0;
  int category = 0;
  Mask mask;
  Eigen::VectorXf query_descriptor;  // 2048-d shape descriptor of the image crop
  std::optional<InjectedAnswers> answers;
};

struct ModelEntry {
  int id = 0;
  std::string mesh_path;
  std::int64_t descriptor_offset = 0;  // byte offset into descriptors.bin
  int category = -1;
  std::vector<double> orientations;  // optional yaw candidates (radians)
  TriMesh mesh;                      // canonicalized on load
  ViewDescriptorSet descriptors;
};

/// All per-image inputs: masks, maps, line segments, model candidates, priors.
struct SceneBundle {
  int width = 0;
  int height = 0;
  std::vector<InstanceData> instances;
  EdgeMap edge_map;
  std::optional<GrayImage8> label_map;
  std::vector<LineSeg2> lines;
  std::vector<ModelEntry> models;
  PriorTables priors;
  std::filesystem::path root;
};

/// Load and fully validate a bundle directory; errors name the offending
/// file or field.
SceneBundle load_bundle(const std::filesystem::path& dir);

/// Write a bundle directory (scene.json, PNGs, lines.json, priors.json,
/// descriptor binaries, meshes). Deterministic byte output.
void save_bundle(const SceneBundle& bundle, const std::filesystem::path& dir);

enum class PipelineStage : int {
  Calibrate = 0,
  Layout = 1,
  Support = 2,
  Heights = 3,
  Retrieve = 4,
  Place = 5,
};

struct PipelineConfig {
  int iterations = 30;    // refinement budget per grid cell
  int top_models = 5;     // retrieval candidates
  int orientations = 8;   // uniform yaw grid when none supplied
  std::uint64_t seed = 0;
  double room_height = 3.0;
  int threads = 0;  // 0: min(8, hardware)
  DfoMethod method = DfoMethod::TrustRegion;
};

struct LayoutInstanceInfo {
  int id = -1;
  int category = -1;
  int wall_side = -1;  // 0..3 for walls, -1 otherwise
};

struct PhaseTimings {
  double calibrate = 0.0;
  double layout = 0.0;
  double support = 0.0;
  double heights = 0.0;
  double retrieval = 0.0;
  double refine = 0.0;
  double total = 0.0;
};

struct SceneResult {
  std::uint64_t seed = 0;
  PipelineStage completed = PipelineStage::Calibrate;

  CalibrationResult calib;
  CuboidFit layout_fit;
  LayoutProposal best_proposal;
  std::vector<LayoutInstanceInfo> layout_instances;
  std::vector<InstanceRef> all_instances;  // objects + layout instances
  SupportGraph graph;
  HeightSolution heights;
  std::vector<std::vector<RankedModel>> candidates;  // per object order
  std::vector<RefinedObject> objects;

  // Wall-clock per-phase timings. Reported separately and never serialized
  // into result.json so identical reruns stay bit-identical.
  PhaseTimings timings;
};

/// Run calibrate -> layout -> support -> heights -> retrieval -> placement.
/// Stage failures propagate as Error with a stage tag in the message.
SceneResult run_pipeline(const SceneBundle& bundle, const PipelineConfig& config,
                         PipelineStage until = PipelineStage::Place);

/// Serialize the result (without timings) with deterministic bytes.
std::string result_to_json(const SceneResult& result, const SceneBundle& bundle);
void save_result(const SceneResult& result, const SceneBundle& bundle,
                 const std::filesystem::path& path);

/// Rebuild a result from its JSON form; mesh references resolve against the
/// bundle's model table. Round trips everything evaluation needs.
SceneResult result_from_json_file(const std::filesystem::path& path, const SceneBundle& bundle);

/// Room shell (five faces, the wall nearest the camera omitted) plus one
/// named group per placed object; deterministic vertex order.
void export_obj_scene(const SceneResult& result, const SceneBundle& bundle,
                      const std::filesystem::path& path);

/// Atomic text write (temp file + rename).
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace monoscene
