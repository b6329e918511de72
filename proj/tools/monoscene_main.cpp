#include <cstdio>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "monoscene/scene_io.hpp"
#include "monoscene/synth.hpp"

using namespace monoscene;

namespace {

constexpr int kExitValidation = 2;
constexpr int kExitStage = 3;

void print_timings(const PhaseTimings& t) {
  std::printf("phase timings (s): calibrate %.3f  layout %.3f  support %.3f  heights %.3f  "
              "retrieval %.3f  refine %.3f  total %.3f\n",
              t.calibrate, t.layout, t.support, t.heights, t.retrieval, t.refine, t.total);
}

int run_stage(const std::string& bundle_dir, const std::string& out_path,
              const PipelineConfig& cfg, PipelineStage until) {
  SceneBundle bundle;
  try {
    bundle = load_bundle(bundle_dir);
  } catch (const Error& e) {
    std::cerr << "bundle validation failed: " << e.what() << "\n";
    return kExitValidation;
  }
  try {
    const SceneResult result = run_pipeline(bundle, cfg, until);
    if (!out_path.empty()) save_result(result, bundle, out_path);
    print_timings(result.timings);
    if (until == PipelineStage::Place && result.completed == PipelineStage::Place) {
      double mean_iou = 0.0;
      for (const auto& o : result.objects) mean_iou += o.final_iou;
      if (!result.objects.empty()) mean_iou /= static_cast<double>(result.objects.size());
      std::printf("objects %zu  mean silhouette IoU %.3f\n", result.objects.size(), mean_iou);
    }
  } catch (const Error& e) {
    std::cerr << "pipeline failed: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"monoscene: single-view indoor scene geometry engine"};
  app.require_subcommand(1);

  PipelineConfig cfg;
  std::string bundle_dir, out_path;

  auto add_common = [&](CLI::App* cmd, bool needs_out) {
    cmd->add_option("--bundle", bundle_dir, "scene bundle directory")->required();
    auto* out = cmd->add_option("--out", out_path, "output JSON path");
    if (needs_out) out->required();
    cmd->add_option("--iters", cfg.iterations, "refinement iterations per grid cell");
    cmd->add_option("--top-models", cfg.top_models, "retrieval candidates per object");
    cmd->add_option("--orientations", cfg.orientations, "uniform yaw grid size");
    cmd->add_option("--seed", cfg.seed, "seed recorded in the result");
    cmd->add_option("--room-height", cfg.room_height, "room height in meters");
    cmd->add_option("--threads", cfg.threads, "worker threads (0 = auto)");
  };

  struct StageCmd {
    const char* name;
    const char* help;
    PipelineStage stage;
  };
  const StageCmd stages[] = {
      {"calibrate", "joint vanishing-point / camera estimation", PipelineStage::Calibrate},
      {"layout", "layout proposals and 3D cuboid fit", PipelineStage::Layout},
      {"support", "support relation inference", PipelineStage::Support},
      {"heights", "cross-ratio height solve", PipelineStage::Heights},
      {"retrieve", "model candidate ranking", PipelineStage::Retrieve},
      {"place", "contextual placement refinement", PipelineStage::Place},
      {"pipeline", "full pipeline", PipelineStage::Place},
  };
  std::map<std::string, PipelineStage> stage_of;
  for (const auto& s : stages) {
    auto* cmd = app.add_subcommand(s.name, s.help);
    add_common(cmd, false);
    stage_of[s.name] = s.stage;
  }

  // synth
  std::string synth_out;
  std::uint64_t synth_seed = 0;
  int synth_objects = 8;
  SynthNoise noise;
  auto* synth_cmd = app.add_subcommand("synth", "generate a synthetic bundle + truth.json");
  synth_cmd->add_option("--out", synth_out, "output bundle directory")->required();
  synth_cmd->add_option("--seed", synth_seed, "generator seed");
  synth_cmd->add_option("--objects", synth_objects, "object count");
  synth_cmd->add_option("--line-noise", noise.line_sigma_px, "endpoint noise sigma (px)");
  synth_cmd->add_option("--clutter", noise.clutter_lines, "spurious clutter lines");
  synth_cmd->add_option("--drop-lines", noise.drop_line_prob, "line dropout probability");
  synth_cmd->add_option("--mask-morph", noise.mask_morph, "mask erosion(-)/dilation(+) radius");
  synth_cmd->add_flag("--no-answers", "omit injected ground-truth answers");
  synth_cmd->add_flag("--exclude-truth-models", "drop truth models from the library");

  // eval
  std::string eval_bundle, eval_result, eval_out;
  auto* eval_cmd = app.add_subcommand("eval", "score a result against truth.json");
  eval_cmd->add_option("--bundle", eval_bundle, "bundle directory (with truth.json)")->required();
  eval_cmd->add_option("--result", eval_result, "result.json path")->required();
  eval_cmd->add_option("--out", eval_out, "metrics JSON path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (synth_cmd->parsed()) {
      noise.inject_answers = synth_cmd->count("--no-answers") == 0;
      noise.exclude_truth_models = synth_cmd->count("--exclude-truth-models") > 0;
      const SynthResult sr = make_scene(synth_seed, synth_objects, noise);
      save_bundle(sr.bundle, synth_out);
      save_truth(sr.truth, std::filesystem::path(synth_out) / "truth.json");
      std::printf("wrote bundle with %zu objects, %zu lines, %zu models to %s\n",
                  sr.truth.objects.size(), sr.bundle.lines.size(), sr.bundle.models.size(),
                  synth_out.c_str());
      return 0;
    }
    if (eval_cmd->parsed()) {
      SceneBundle bundle;
      try {
        bundle = load_bundle(eval_bundle);
      } catch (const Error& e) {
        std::cerr << "bundle validation failed: " << e.what() << "\n";
        return kExitValidation;
      }
      const GroundTruthScene truth = load_truth(std::filesystem::path(eval_bundle) / "truth.json");
      const SceneResult result = result_from_json_file(eval_result, bundle);
      const EvalMetrics m = evaluate(result, truth);
      nlohmann::json j{{"layout_iou", m.layout_iou},
                       {"vp_angle_error_deg", m.vp_angle_error_deg},
                       {"focal_rel_error", m.focal_rel_error},
                       {"camera_height_error", m.camera_height_error},
                       {"support_accuracy", m.support_accuracy},
                       {"mean_height_rel_error", m.mean_height_rel_error},
                       {"mean_object_iou3d", m.mean_object_iou3d},
                       {"mean_final_iou2d", m.mean_final_iou2d},
                       {"map_015", m.map_015}};
      std::cout << j.dump(2) << "\n";
      if (!eval_out.empty()) write_text_atomic(eval_out, j.dump(2) + "\n");
      return 0;
    }
    for (const auto& [name, stage] : stage_of) {
      if (app.get_subcommand(name)->parsed()) return run_stage(bundle_dir, out_path, cfg, stage);
    }
  } catch (const Error& e) {
    std::cerr << e.what() << "\n";
    return kExitStage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitStage;
  }
  return 0;
}
