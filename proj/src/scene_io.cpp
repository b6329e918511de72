#include "monoscene/scene_io.hpp"

#include <chrono>
#include <cstring>
#include <fstream>

#include <json.hpp>

#include "monoscene/obj_io.hpp"
#include "monoscene/parallel.hpp"

namespace monoscene {

using nlohmann::json;

namespace {

json load_json_file(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, path.string());
  json j;
  try {
    in >> j;
  } catch (const json::exception& e) {
    fail(Errc::SchemaViolation, path.string() + ": " + e.what());
  }
  return j;
}

template <typename T>
T get_field(const json& j, const char* key, const std::string& where) {
  if (!j.contains(key)) fail(Errc::SchemaViolation, where + ": missing field '" + key + "'");
  try {
    return j.at(key).get<T>();
  } catch (const json::exception& e) {
    fail(Errc::SchemaViolation, where + ": field '" + key + "': " + e.what());
  }
}

std::vector<std::uint8_t> read_binary(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(Errc::MissingFile, path.string());
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in),
                                   std::istreambuf_iterator<char>());
}

void write_binary(const std::filesystem::path& path, const void* data, std::size_t bytes) {
  const auto tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) fail(Errc::IoError, "cannot open for write: " + tmp);
    out.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!out) fail(Errc::IoError, "write failed: " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

// Descriptor binaries are little-endian float32; this loader targets
// little-endian hosts.
Eigen::VectorXf floats_from_bytes(const std::uint8_t* data, std::size_t count) {
  Eigen::VectorXf v(static_cast<Eigen::Index>(count));
  std::memcpy(v.data(), data, count * sizeof(float));
  return v;
}

PriorTables priors_from_json(const json& j, const std::string& where) {
  PriorTables priors;
  const auto counts = get_field<json>(j, "support_count", where);
  if (counts.size() != kNumCategories)
    fail(Errc::SchemaViolation, where + ": support_count must have 40 rows");
  for (int c = 0; c < kNumCategories; ++c) {
    const auto& row = counts.at(static_cast<std::size_t>(c));
    if (row.size() != kNumCategories)
      fail(Errc::SchemaViolation, where + ": support_count row size");
    for (int p = 0; p < kNumCategories; ++p) {
      const auto& cell = row.at(static_cast<std::size_t>(p));
      if (cell.size() != 2) fail(Errc::SchemaViolation, where + ": support_count cell size");
      for (int t = 0; t < 2; ++t) {
        const double v = cell.at(static_cast<std::size_t>(t)).get<double>();
        if (!std::isfinite(v) || v < 0.0)
          fail(Errc::InvariantViolation, where + ": negative or non-finite support count");
        priors.count_ref(c, p, static_cast<SupportType>(t)) = v;
      }
    }
  }
  const auto height = get_field<json>(j, "height", where);
  if (height.size() != kNumCategories)
    fail(Errc::SchemaViolation, where + ": height must have 40 entries");
  for (int c = 0; c < kNumCategories; ++c) {
    const auto& e = height.at(static_cast<std::size_t>(c));
    if (e.is_null()) continue;
    const double mu = get_field<double>(e, "mu", where);
    const double sigma = get_field<double>(e, "sigma", where);
    if (!(sigma >= 0.0) || !std::isfinite(mu))
      fail(Errc::InvariantViolation, where + ": height prior needs sigma >= 0");
    priors.height_mu[static_cast<std::size_t>(c)] = mu;
    priors.height_sigma[static_cast<std::size_t>(c)] = sigma;
    priors.height_available[static_cast<std::size_t>(c)] = true;
  }
  return priors;
}

json priors_to_json(const PriorTables& priors) {
  json counts = json::array();
  for (int c = 0; c < kNumCategories; ++c) {
    json row = json::array();
    for (int p = 0; p < kNumCategories; ++p)
      row.push_back({priors.count(c, p, SupportType::Below),
                     priors.count(c, p, SupportType::Behind)});
    counts.push_back(std::move(row));
  }
  json height = json::array();
  for (int c = 0; c < kNumCategories; ++c) {
    if (!priors.height_available[static_cast<std::size_t>(c)]) {
      height.push_back(nullptr);
    } else {
      height.push_back({{"mu", priors.height_mu[static_cast<std::size_t>(c)]},
                        {"sigma", priors.height_sigma[static_cast<std::size_t>(c)]}});
    }
  }
  return json{{"support_count", std::move(counts)}, {"height", std::move(height)}};
}

}  // namespace

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
  write_binary(path, text.data(), text.size());
}

SceneBundle load_bundle(const std::filesystem::path& dir) {
  if (!std::filesystem::is_directory(dir)) fail(Errc::MissingFile, dir.string());
  const auto scene_path = dir / "scene.json";
  const json scene = load_json_file(scene_path);
  const std::string where = scene_path.string();

  SceneBundle b;
  b.root = dir;
  const json image = get_field<json>(scene, "image", where);
  b.width = get_field<int>(image, "width", where + ":image");
  b.height = get_field<int>(image, "height", where + ":image");
  if (b.width <= 0 || b.height <= 0)
    fail(Errc::InvariantViolation, where + ": image dims must be positive");

  // Instance id map: 16-bit PNG, pixel value = instance id + 1, 0 background.
  const auto masks_name = get_field<std::string>(scene, "masks", where);
  const GrayImage16 idmap = read_png_gray16(dir / masks_name);
  if (idmap.width != b.width || idmap.height != b.height)
    fail(Errc::InvariantViolation,
         (dir / masks_name).string() + ": instance mask dims differ from image dims");

  const json instances = get_field<json>(scene, "instances", where);
  if (instances.size() > static_cast<std::size_t>(kMaxInstances))
    fail(Errc::InvariantViolation,
         where + ": " + std::to_string(instances.size()) + " instances exceed the limit of 60");

  const auto queries_name = get_field<std::string>(scene, "query_descriptors", where);
  const auto query_bytes = read_binary(dir / queries_name);

  std::map<int, std::size_t> index_of_id;
  for (std::size_t i = 0; i < instances.size(); ++i) {
    const json& ij = instances.at(i);
    InstanceData inst;
    inst.id = get_field<int>(ij, "id", where + ":instances");
    inst.category = get_field<int>(ij, "category", where + ":instances");
    if (inst.id < 0 || inst.id >= kMaxInstances)
      fail(Errc::InvariantViolation, where + ": instance id " + std::to_string(inst.id));
    if (inst.category < 0 || inst.category >= kNumCategories)
      fail(Errc::InvariantViolation,
           where + ": instance " + std::to_string(inst.id) + " category out of range");
    if (index_of_id.count(inst.id))
      fail(Errc::InvariantViolation, where + ": duplicate instance id " + std::to_string(inst.id));
    const int di = get_field<int>(ij, "descriptor_index", where + ":instances");
    const std::size_t off = static_cast<std::size_t>(di) * kDescriptorDim * sizeof(float);
    if (di < 0 || off + kDescriptorDim * sizeof(float) > query_bytes.size())
      fail(Errc::InvariantViolation,
           (dir / queries_name).string() + ": descriptor_index " + std::to_string(di) +
               " out of range");
    inst.query_descriptor = floats_from_bytes(query_bytes.data() + off, kDescriptorDim);
    if (ij.contains("answers") && !ij.at("answers").is_null()) {
      const json& aj = ij.at("answers");
      InjectedAnswers ans;
      const auto rel = get_field<std::vector<int>>(aj, "relational", where + ":answers");
      const auto nonrel = get_field<std::vector<int>>(aj, "non_relational", where + ":answers");
      if (rel.size() != 4 || nonrel.size() != 4)
        fail(Errc::SchemaViolation, where + ": answers need 4 codes per group");
      std::copy(rel.begin(), rel.end(), ans.relational.begin());
      std::copy(nonrel.begin(), nonrel.end(), ans.non_relational.begin());
      for (int code : rel) (void)decode_answer({code});
      for (int code : nonrel) (void)decode_answer({code});
      if (aj.contains("parent_category_top5"))
        ans.parent_category_top5 = aj.at("parent_category_top5").get<std::vector<int>>();
      inst.answers = std::move(ans);
    }
    inst.mask = Mask(b.width, b.height);
    index_of_id[inst.id] = i;
    b.instances.push_back(std::move(inst));
  }

  for (int y = 0; y < b.height; ++y)
    for (int x = 0; x < b.width; ++x) {
      const std::uint16_t v = idmap.pixels[static_cast<std::size_t>(y) * b.width + x];
      if (v == 0) continue;
      const int id = static_cast<int>(v) - 1;
      const auto it = index_of_id.find(id);
      if (it == index_of_id.end())
        fail(Errc::InvariantViolation,
             (dir / masks_name).string() + ": pixel labels unknown instance id " +
                 std::to_string(id));
      b.instances[it->second].mask.set(x, y);
    }

  const auto edge_name = get_field<std::string>(scene, "edge_map", where);
  const GrayImage8 edge = read_png_gray8(dir / edge_name);
  if (edge.width != b.width || edge.height != b.height)
    fail(Errc::InvariantViolation, (dir / edge_name).string() + ": edge map dims");
  b.edge_map = EdgeMap(b.width, b.height);
  for (std::size_t i = 0; i < edge.pixels.size(); ++i)
    b.edge_map.intensity[i] = static_cast<float>(edge.pixels[i]) / 255.f;

  if (scene.contains("label_map") && !scene.at("label_map").is_null()) {
    const auto name = scene.at("label_map").get<std::string>();
    const GrayImage8 lm = read_png_gray8(dir / name);
    if (lm.width != b.width || lm.height != b.height)
      fail(Errc::InvariantViolation, (dir / name).string() + ": label map dims");
    b.label_map = lm;
  }

  const auto lines_name = get_field<std::string>(scene, "lines", where);
  const json lines = load_json_file(dir / lines_name);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    const auto& lj = lines.at(i);
    if (lj.size() != 2 || lj.at(0).size() != 2 || lj.at(1).size() != 2)
      fail(Errc::SchemaViolation, (dir / lines_name).string() + ": segment " + std::to_string(i));
    const Eigen::Vector2d p(lj.at(0).at(0).get<double>(), lj.at(0).at(1).get<double>());
    const Eigen::Vector2d q(lj.at(1).at(0).get<double>(), lj.at(1).at(1).get<double>());
    if ((p - q).norm() < 1e-12)
      fail(Errc::InvariantViolation,
           (dir / lines_name).string() + ": zero-length segment " + std::to_string(i));
    b.lines.push_back(line_through(p, q));
  }

  const json models = get_field<json>(scene, "models", where);
  const auto desc_name = get_field<std::string>(models, "descriptors", where + ":models");
  const auto desc_bytes = read_binary(dir / desc_name);
  const json entries = get_field<json>(models, "entries", where + ":models");
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const json& ej = entries.at(i);
    ModelEntry m;
    m.id = get_field<int>(ej, "id", where + ":models");
    m.mesh_path = get_field<std::string>(ej, "mesh", where + ":models");
    m.descriptor_offset = get_field<std::int64_t>(ej, "descriptor_offset", where + ":models");
    if (ej.contains("category")) m.category = ej.at("category").get<int>();
    if (ej.contains("orientations"))
      m.orientations = ej.at("orientations").get<std::vector<double>>();
    const std::size_t need = static_cast<std::size_t>(kDescriptorViews) * kDescriptorDim *
                             sizeof(float);
    if (m.descriptor_offset < 0 ||
        static_cast<std::size_t>(m.descriptor_offset) + need > desc_bytes.size())
      fail(Errc::InvariantViolation,
           (dir / desc_name).string() + ": descriptor_offset of model " + std::to_string(m.id));
    m.descriptors.model_id = m.id;
    m.descriptors.views.resize(kDescriptorViews, kDescriptorDim);
    std::memcpy(m.descriptors.views.data(),
                desc_bytes.data() + static_cast<std::size_t>(m.descriptor_offset), need);
    if (!m.descriptors.well_formed())
      fail(Errc::InvariantViolation,
           (dir / desc_name).string() + ": descriptors of model " + std::to_string(m.id) +
               " are malformed (need 32 finite non-zero views)");
    m.mesh = read_obj(dir / m.mesh_path);
    if (m.mesh.vertices.empty() || m.mesh.triangles.empty())
      fail(Errc::InvariantViolation, (dir / m.mesh_path).string() + ": empty mesh");
    m.mesh.make_canonical();
    b.models.push_back(std::move(m));
  }

  const auto priors_name = get_field<std::string>(scene, "priors", where);
  b.priors = priors_from_json(load_json_file(dir / priors_name), (dir / priors_name).string());
  return b;
}

void save_bundle(const SceneBundle& b, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::filesystem::create_directories(dir / "models");

  GrayImage16 idmap;
  idmap.width = b.width;
  idmap.height = b.height;
  idmap.pixels.assign(static_cast<std::size_t>(b.width) * b.height, 0);
  for (const auto& inst : b.instances)
    for (int y = 0; y < b.height; ++y)
      for (int x = 0; x < b.width; ++x)
        if (inst.mask.get(x, y))
          idmap.pixels[static_cast<std::size_t>(y) * b.width + x] =
              static_cast<std::uint16_t>(inst.id + 1);
  write_png_gray16(dir / "instances.png", idmap);

  GrayImage8 edge;
  edge.width = b.width;
  edge.height = b.height;
  edge.pixels.resize(static_cast<std::size_t>(b.width) * b.height);
  for (std::size_t i = 0; i < edge.pixels.size(); ++i)
    edge.pixels[i] = static_cast<std::uint8_t>(
        std::lround(std::clamp(b.edge_map.intensity[i], 0.f, 1.f) * 255.f));
  write_png_gray8(dir / "edge.png", edge);
  if (b.label_map) write_png_gray8(dir / "label.png", *b.label_map);

  json lines = json::array();
  for (const auto& seg : b.lines)
    lines.push_back({{seg.p0.x(), seg.p0.y()}, {seg.q0.x(), seg.q0.y()}});
  write_text_atomic(dir / "lines.json", lines.dump(2) + "\n");

  std::vector<float> queries(b.instances.size() * kDescriptorDim, 0.f);
  json instances = json::array();
  for (std::size_t i = 0; i < b.instances.size(); ++i) {
    const auto& inst = b.instances[i];
    std::memcpy(queries.data() + i * kDescriptorDim, inst.query_descriptor.data(),
                kDescriptorDim * sizeof(float));
    json ij{{"id", inst.id},
            {"category", inst.category},
            {"descriptor_index", static_cast<int>(i)}};
    if (inst.answers) {
      json aj{{"relational", inst.answers->relational},
              {"non_relational", inst.answers->non_relational}};
      if (!inst.answers->parent_category_top5.empty())
        aj["parent_category_top5"] = inst.answers->parent_category_top5;
      ij["answers"] = std::move(aj);
    }
    instances.push_back(std::move(ij));
  }
  write_binary(dir / "queries.bin", queries.data(), queries.size() * sizeof(float));

  std::vector<float> desc;
  json entries = json::array();
  for (const auto& m : b.models) {
    json ej{{"id", m.id},
            {"mesh", m.mesh_path},
            {"descriptor_offset",
             static_cast<std::int64_t>(desc.size() * sizeof(float))}};
    if (m.category >= 0) ej["category"] = m.category;
    if (!m.orientations.empty()) ej["orientations"] = m.orientations;
    entries.push_back(std::move(ej));
    const std::size_t base = desc.size();
    desc.resize(base + static_cast<std::size_t>(kDescriptorViews) * kDescriptorDim);
    std::memcpy(desc.data() + base, m.descriptors.views.data(),
                static_cast<std::size_t>(kDescriptorViews) * kDescriptorDim * sizeof(float));
    write_obj(dir / m.mesh_path, {ObjGroup::from_mesh("model", m.mesh)});
  }
  write_binary(dir / "descriptors.bin", desc.data(), desc.size() * sizeof(float));

  write_text_atomic(dir / "priors.json", priors_to_json(b.priors).dump(2) + "\n");

  json scene{{"schema_version", 1},
             {"image", {{"width", b.width}, {"height", b.height}}},
             {"masks", "instances.png"},
             {"edge_map", "edge.png"},
             {"lines", "lines.json"},
             {"query_descriptors", "queries.bin"},
             {"instances", std::move(instances)},
             {"models", {{"descriptors", "descriptors.bin"}, {"entries", std::move(entries)}}},
             {"priors", "priors.json"}};
  if (b.label_map) scene["label_map"] = "label.png";
  write_text_atomic(dir / "scene.json", scene.dump(2) + "\n");
}

namespace {

struct StageClock {
  std::chrono::steady_clock::time_point t = std::chrono::steady_clock::now();
  double lap() {
    const auto now = std::chrono::steady_clock::now();
    const double s = std::chrono::duration<double>(now - t).count();
    t = now;
    return s;
  }
};

[[noreturn]] void stage_fail(const char* stage, const Error& e) {
  throw Error(e.code(), std::string("stage ") + stage + ": " + e.what());
}

}  // namespace

SceneResult run_pipeline(const SceneBundle& bundle, const PipelineConfig& config,
                         PipelineStage until) {
  SceneResult res;
  res.seed = config.seed;
  const int threads = config.threads > 0 ? config.threads : default_thread_count();
  StageClock clock;
  StageClock total;

  try {
    res.calib = joint_calibrate(bundle.lines, bundle.width, bundle.height);
  } catch (const Error& e) {
    stage_fail("calibrate", e);
  }
  res.timings.calibrate = clock.lap();
  res.completed = PipelineStage::Calibrate;
  if (until == PipelineStage::Calibrate) return res;

  LayoutOptions lopts;
  lopts.room_height = config.room_height;
  try {
    auto clustered = cluster_lines(bundle.lines, res.calib.vps, 4.0);
    auto proposals = generate_proposals(clustered.clusters, bundle.edge_map, lopts);
    parallel_for(static_cast<int>(proposals.size()), threads,
                 [&](int i) { score_proposal(proposals[static_cast<std::size_t>(i)], bundle.edge_map, lopts); });
    rank_proposals(proposals, bundle.width, bundle.height);
    bool fitted = false;
    for (auto& p : proposals) {
      try {
        res.layout_fit = fit_cuboid(p, res.calib.camera, bundle.width, bundle.height, lopts);
        res.best_proposal = p;
        fitted = true;
        break;
      } catch (const Error&) {
        continue;
      }
    }
    if (!fitted) fail(Errc::UnderConstrained, "no proposal admits a cuboid fit");
    res.calib.camera.h_cam = res.layout_fit.camera_height;
  } catch (const Error& e) {
    stage_fail("layout", e);
  }
  res.timings.layout = clock.lap();
  res.completed = PipelineStage::Layout;
  if (until == PipelineStage::Layout) return res;

  // Layout instances (floor, ceiling, visible walls) join the instance set
  // with masks taken from the winning proposal's regions.
  std::vector<Mask> all_masks;
  try {
    int next_id = 0;
    for (const auto& inst : bundle.instances) next_id = std::max(next_id, inst.id + 1);

    for (const auto& inst : bundle.instances) {
      res.all_instances.push_back({inst.id, inst.category, false});
      all_masks.push_back(inst.mask);
    }

    std::map<RegionLabel, Mask> region_masks;
    for (int y = 0; y < bundle.height; ++y)
      for (int x = 0; x < bundle.width; ++x) {
        const RegionLabel l = res.best_proposal.label_at(x, y);
        auto it = region_masks.find(l);
        if (it == region_masks.end())
          it = region_masks.emplace(l, Mask(bundle.width, bundle.height)).first;
        it->second.set(x, y);
      }

    const int m = res.best_proposal.mid_axis;
    const int o = 1 - m;
    auto wall_side_of = [&](RegionLabel label) {
      // Wall indexing follows SupportSurfaceFrame::room_wall: 0 x-lo, 1 x-hi,
      // 2 y-lo, 3 y-hi. The mid strip is the far wall along axis o.
      const RoomLayout& room = res.layout_fit.layout;
      const double o_lo = room.corner[o];
      const double o_hi = room.corner[o] + room.sizes[o];
      const bool far_is_lo = std::abs(o_lo) > std::abs(o_hi);
      if (label == RegionLabel::WallMid) return o == 0 ? (far_is_lo ? 0 : 1) : (far_is_lo ? 2 : 3);
      // Side walls run along axis o; decide image left/right by projecting a
      // point on each near the far wall.
      const double probe_o = 0.9 * (far_is_lo ? o_lo : o_hi);
      CameraModel cam = res.calib.camera;
      cam.h_cam = res.layout_fit.camera_height;
      auto probe_x = [&](double am) {
        Eigen::Vector3d p = Eigen::Vector3d::Zero();
        p[m] = am;
        p[o] = probe_o;
        p[2] = 0.5 * room.sizes.z();
        const Eigen::Vector3d xc = cam.R * (p - cam.position());
        return xc.z() > 1e-6 ? cam.c.x() + cam.f * xc.x() / xc.z()
                             : std::numeric_limits<double>::quiet_NaN();
      };
      const double x_lo = probe_x(room.corner[m]);
      const double x_hi = probe_x(room.corner[m] + room.sizes[m]);
      bool left_is_lo = true;
      if (std::isfinite(x_lo) && std::isfinite(x_hi)) left_is_lo = x_lo < x_hi;
      const bool is_lo = (label == RegionLabel::WallLeft) == left_is_lo;
      return m == 0 ? (is_lo ? 0 : 1) : (is_lo ? 2 : 3);
    };

    auto add_layout_instance = [&](int category, RegionLabel label, int wall_side) {
      if (next_id >= kMaxInstances)
        fail(Errc::InvariantViolation, "instance budget exhausted by layout instances");
      LayoutInstanceInfo info;
      info.id = next_id++;
      info.category = category;
      info.wall_side = wall_side;
      res.layout_instances.push_back(info);
      res.all_instances.push_back({info.id, category, true});
      const auto it = region_masks.find(label);
      all_masks.push_back(it == region_masks.end() ? Mask(bundle.width, bundle.height)
                                                   : it->second);
    };
    add_layout_instance(kCategoryFloor, RegionLabel::Floor, -1);
    add_layout_instance(kCategoryCeiling, RegionLabel::Ceiling, -1);
    for (const RegionLabel wl : {RegionLabel::WallLeft, RegionLabel::WallMid,
                                 RegionLabel::WallRight})
      if (region_masks.count(wl) && region_masks[wl].any())
        add_layout_instance(kCategoryWall, wl, wall_side_of(wl));

    std::vector<std::optional<InjectedAnswers>> answers;
    for (const auto& inst : bundle.instances) answers.push_back(inst.answers);
    answers.resize(res.all_instances.size());

    const int floor_id = res.layout_instances.front().id;
    res.graph = infer_support_graph(res.all_instances, all_masks, answers, bundle.priors,
                                    floor_id);

    // Rebind wall parents to the wall region actually touching the child;
    // Eq-1 ties between identical wall categories cannot see geometry.
    for (auto& e : res.graph.edges) {
      bool parent_is_wall = false;
      for (const auto& li : res.layout_instances)
        if (li.id == e.parent && li.category == kCategoryWall) parent_is_wall = true;
      if (!parent_is_wall) continue;
      std::size_t child_idx = 0;
      for (std::size_t i = 0; i < res.all_instances.size(); ++i)
        if (res.all_instances[i].id == e.child) child_idx = i;
      const Mask child_dilated = all_masks[child_idx].dilated(5);
      int best_wall = e.parent;
      std::size_t best_overlap = 0;
      for (std::size_t i = 0; i < res.all_instances.size(); ++i) {
        if (!res.all_instances[i].is_layout) continue;
        bool is_wall = false;
        for (const auto& li : res.layout_instances)
          if (li.id == res.all_instances[i].id && li.category == kCategoryWall) is_wall = true;
        if (!is_wall) continue;
        const std::size_t overlap = child_dilated.intersection_count(all_masks[i]);
        if (overlap > best_overlap) {
          best_overlap = overlap;
          best_wall = res.all_instances[i].id;
        }
      }
      e.parent = best_wall;
    }
  } catch (const Error& e) {
    stage_fail("support", e);
  }
  res.timings.support = clock.lap();
  res.completed = PipelineStage::Support;
  if (until == PipelineStage::Support) return res;

  try {
    MetrologyInputs min;
    min.instances = res.all_instances;
    min.camera = res.calib.camera;
    min.layout = res.layout_fit.layout;
    min.vps = res.calib.vps;
    min.priors = bundle.priors;
    for (const auto& li : res.layout_instances)
      if (li.wall_side >= 0) min.wall_side_of[li.id] = li.wall_side;
    min.lines.resize(bundle.instances.size());
    parallel_for(static_cast<int>(bundle.instances.size()), threads, [&](int i) {
      min.lines[static_cast<std::size_t>(i)] =
          extract_height_line(bundle.instances[static_cast<std::size_t>(i)].mask,
                              res.calib.vps[2]);
      min.lines[static_cast<std::size_t>(i)].owner = bundle.instances[static_cast<std::size_t>(i)].id;
    });
    res.heights = solve_heights(res.graph, min);
    // Apply support-type corrections discovered by the sign check.
    for (std::size_t i = 0; i < res.heights.instance_ids.size(); ++i) {
      if (!res.heights.objects[i].type_corrected) continue;
      for (auto& e : res.graph.edges)
        if (e.child == res.heights.instance_ids[i]) e.type = res.heights.objects[i].solved_type;
    }
  } catch (const Error& e) {
    stage_fail("heights", e);
  }
  res.timings.heights = clock.lap();
  res.completed = PipelineStage::Heights;
  if (until == PipelineStage::Heights) return res;

  std::vector<ViewDescriptorSet> library;
  try {
    for (const auto& m : bundle.models) library.push_back(m.descriptors);
    const int k = std::min<int>(config.top_models, static_cast<int>(library.size()));
    res.candidates.resize(bundle.instances.size());
    parallel_for(static_cast<int>(bundle.instances.size()), threads, [&](int i) {
      res.candidates[static_cast<std::size_t>(i)] =
          top_k(bundle.instances[static_cast<std::size_t>(i)].query_descriptor, library, k);
    });
  } catch (const Error& e) {
    stage_fail("retrieve", e);
  }
  res.timings.retrieval = clock.lap();
  res.completed = PipelineStage::Retrieve;
  if (until == PipelineStage::Retrieve) return res;

  try {
    std::map<int, const ModelEntry*> model_of;
    for (const auto& m : bundle.models) model_of[m.id] = &m;

    std::vector<ObjectContext> contexts;
    for (std::size_t i = 0; i < bundle.instances.size(); ++i) {
      const auto& inst = bundle.instances[i];
      ObjectContext ctx;
      ctx.instance_id = inst.id;
      ctx.mask = &inst.mask;
      const ObjectHeight* oh = res.heights.for_instance(inst.id);
      if (!oh) continue;
      ctx.height = oh->height;
      ctx.altitude = oh->altitude;
      ctx.candidates.other_category = is_other_category(inst.category);
      for (const auto& rm : res.candidates[i]) {
        const ModelEntry* me = model_of.at(rm.model_id);
        ctx.candidates.model_ids.push_back(me->id);
        ctx.candidates.meshes.push_back(&me->mesh);
      }
      // Orientation grid: supplied candidates are trimmed to the top-3,
      // otherwise a uniform yaw grid.
      const ModelEntry* top = model_of.at(res.candidates[i].front().model_id);
      if (!top->orientations.empty()) {
        ctx.candidates.orientations = top->orientations;
        if (ctx.candidates.orientations.size() > 3) ctx.candidates.orientations.resize(3);
      } else {
        for (int k = 0; k < config.orientations; ++k)
          ctx.candidates.orientations.push_back(2.0 * M_PI * k / config.orientations);
      }
      contexts.push_back(ctx);
    }

    SceneGeometry geo;
    geo.camera = res.calib.camera;
    geo.room = res.layout_fit.layout;
    geo.width = bundle.width;
    geo.height = bundle.height;
    for (const auto& li : res.layout_instances)
      if (li.wall_side >= 0) geo.wall_side_of[li.id] = li.wall_side;
    RefineOptions ropts;
    ropts.iterations = config.iterations;
    ropts.method = config.method;
    ropts.threads = threads;
    res.objects = refine_scene(res.all_instances, contexts, res.graph, geo, ropts);
  } catch (const Error& e) {
    stage_fail("place", e);
  }
  res.timings.refine = clock.lap();
  res.completed = PipelineStage::Place;
  res.timings.total = total.lap();
  return res;
}

namespace {

json vec3(const Eigen::Vector3d& v) { return json{v.x(), v.y(), v.z()}; }

}  // namespace

std::string result_to_json(const SceneResult& res, const SceneBundle& bundle) {
  json j;
  j["seed"] = res.seed;
  j["completed_stage"] = static_cast<int>(res.completed);

  json cam;
  cam["f"] = res.calib.camera.f;
  cam["c"] = {res.calib.camera.c.x(), res.calib.camera.c.y()};
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    rot.push_back({res.calib.camera.R(r, 0), res.calib.camera.R(r, 1), res.calib.camera.R(r, 2)});
  cam["R"] = std::move(rot);
  cam["h_cam"] = res.calib.camera.h_cam;
  j["camera"] = std::move(cam);
  j["vps"] = {vec3(res.calib.vps[0]), vec3(res.calib.vps[1]), vec3(res.calib.vps[2])};
  j["calibration"] = {{"residual", res.calib.residual}, {"iterations", res.calib.iterations}};

  if (res.completed >= PipelineStage::Layout) {
    j["layout"] = {{"corner", vec3(res.layout_fit.layout.corner)},
                   {"sizes", vec3(res.layout_fit.layout.sizes)},
                   {"yaw", res.layout_fit.layout.yaw},
                   {"camera_height", res.layout_fit.camera_height},
                   {"reproj_residual", res.layout_fit.reproj_residual},
                   {"height_defaulted", res.layout_fit.height_defaulted},
                   {"depth_lower_bound", res.layout_fit.depth_lower_bound},
                   {"width_lower_bound", res.layout_fit.width_lower_bound},
                   {"proposal_score", res.best_proposal.score}};
  }
  if (res.completed >= PipelineStage::Support) {
    json li = json::array();
    for (const auto& l : res.layout_instances)
      li.push_back({{"id", l.id}, {"category", l.category}, {"wall_side", l.wall_side}});
    j["layout_instances"] = std::move(li);
    json edges = json::array();
    for (const auto& e : res.graph.edges)
      edges.push_back({{"child", e.child},
                       {"parent", e.parent},
                       {"type", e.type == SupportType::Below ? "below" : "behind"},
                       {"prior", e.prior},
                       {"from_answers", e.from_answers}});
    j["support"] = std::move(edges);
  }
  if (res.completed >= PipelineStage::Heights) {
    json hs = json::array();
    for (std::size_t i = 0; i < res.heights.instance_ids.size(); ++i) {
      const auto& oh = res.heights.objects[i];
      hs.push_back({{"id", res.heights.instance_ids[i]},
                    {"height", oh.height},
                    {"altitude", oh.altitude},
                    {"clamped", oh.clamped},
                    {"low_confidence", oh.low_confidence},
                    {"type_corrected", oh.type_corrected}});
    }
    j["heights"] = std::move(hs);
  }
  if (res.completed >= PipelineStage::Retrieve) {
    json cands = json::array();
    for (std::size_t i = 0; i < res.candidates.size(); ++i) {
      json models = json::array();
      for (const auto& rm : res.candidates[i])
        models.push_back({{"model", rm.model_id}, {"similarity", rm.similarity}});
      cands.push_back({{"id", bundle.instances[i].id}, {"models", std::move(models)}});
    }
    j["retrieval"] = std::move(cands);
  }
  if (res.completed >= PipelineStage::Place) {
    json objs = json::array();
    double iou_sum = 0.0;
    for (const auto& ro : res.objects) {
      objs.push_back({{"id", ro.instance_id},
                      {"model", ro.pose.model_id},
                      {"theta", ro.pose.theta},
                      {"scale", vec3(ro.pose.scale)},
                      {"prescale", ro.pose.prescale},
                      {"position", vec3(ro.pose.position)},
                      {"initial_iou", ro.initial_iou},
                      {"iou", ro.final_iou},
                      {"trace", ro.iou_trace},
                      {"accepted_moves", ro.accepted_moves},
                      {"infeasible_start", ro.infeasible_start},
                      {"position_clamped", ro.position_clamped},
                      {"frame_side", ro.frame_side}});
      iou_sum += ro.final_iou;
    }
    j["objects"] = std::move(objs);
    j["metrics"] = {
        {"mean_final_iou", res.objects.empty() ? 0.0 : iou_sum / res.objects.size()},
        {"calibration_residual", res.calib.residual},
        {"layout_reproj_residual", res.layout_fit.reproj_residual}};
  }
  return j.dump(2) + "\n";
}

void save_result(const SceneResult& result, const SceneBundle& bundle,
                 const std::filesystem::path& path) {
  write_text_atomic(path, result_to_json(result, bundle));
}

SceneResult result_from_json_file(const std::filesystem::path& path, const SceneBundle& bundle) {
  const json j = load_json_file(path);
  const std::string where = path.string();
  SceneResult res;
  res.seed = get_field<std::uint64_t>(j, "seed", where);
  res.completed = static_cast<PipelineStage>(get_field<int>(j, "completed_stage", where));

  const json cam = get_field<json>(j, "camera", where);
  res.calib.camera.f = get_field<double>(cam, "f", where);
  res.calib.camera.c = Eigen::Vector2d(cam.at("c").at(0).get<double>(),
                                       cam.at("c").at(1).get<double>());
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      res.calib.camera.R(r, c) =
          cam.at("R").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  res.calib.camera.h_cam = get_field<double>(cam, "h_cam", where);
  for (int i = 0; i < 3; ++i)
    for (int k = 0; k < 3; ++k)
      res.calib.vps[static_cast<std::size_t>(i)][k] =
          j.at("vps").at(static_cast<std::size_t>(i)).at(static_cast<std::size_t>(k)).get<double>();
  res.calib.residual = j.at("calibration").at("residual").get<double>();
  res.calib.iterations = j.at("calibration").at("iterations").get<int>();

  for (const auto& inst : bundle.instances)
    res.all_instances.push_back({inst.id, inst.category, false});

  if (j.contains("layout")) {
    const json& lj = j.at("layout");
    for (int i = 0; i < 3; ++i) {
      res.layout_fit.layout.corner[i] = lj.at("corner").at(static_cast<std::size_t>(i)).get<double>();
      res.layout_fit.layout.sizes[i] = lj.at("sizes").at(static_cast<std::size_t>(i)).get<double>();
    }
    res.layout_fit.layout.yaw = lj.at("yaw").get<double>();
    res.layout_fit.camera_height = lj.at("camera_height").get<double>();
    res.layout_fit.reproj_residual = lj.at("reproj_residual").get<double>();
  }
  if (j.contains("layout_instances")) {
    for (const auto& lij : j.at("layout_instances")) {
      LayoutInstanceInfo li;
      li.id = lij.at("id").get<int>();
      li.category = lij.at("category").get<int>();
      li.wall_side = lij.at("wall_side").get<int>();
      res.layout_instances.push_back(li);
      res.all_instances.push_back({li.id, li.category, true});
    }
  }
  if (j.contains("support")) {
    for (const auto& ej : j.at("support")) {
      SupportEdge e;
      e.child = ej.at("child").get<int>();
      e.parent = ej.at("parent").get<int>();
      e.type = ej.at("type").get<std::string>() == "below" ? SupportType::Below
                                                           : SupportType::Behind;
      e.prior = ej.at("prior").get<double>();
      e.from_answers = ej.at("from_answers").get<bool>();
      res.graph.edges.push_back(e);
    }
  }
  if (j.contains("heights")) {
    for (const auto& hj : j.at("heights")) {
      res.heights.instance_ids.push_back(hj.at("id").get<int>());
      ObjectHeight oh;
      oh.height = hj.at("height").get<double>();
      oh.altitude = hj.at("altitude").get<double>();
      oh.clamped = hj.at("clamped").get<bool>();
      oh.low_confidence = hj.at("low_confidence").get<bool>();
      oh.type_corrected = hj.at("type_corrected").get<bool>();
      res.heights.objects.push_back(oh);
    }
  }
  if (j.contains("objects")) {
    std::map<int, const ModelEntry*> model_of;
    for (const auto& m : bundle.models) model_of[m.id] = &m;
    for (const auto& oj : j.at("objects")) {
      RefinedObject ro;
      ro.instance_id = oj.at("id").get<int>();
      ro.pose.model_id = oj.at("model").get<int>();
      ro.pose.theta = oj.at("theta").get<double>();
      for (int i = 0; i < 3; ++i) {
        ro.pose.scale[i] = oj.at("scale").at(static_cast<std::size_t>(i)).get<double>();
        ro.pose.position[i] = oj.at("position").at(static_cast<std::size_t>(i)).get<double>();
      }
      ro.pose.prescale = oj.at("prescale").get<double>();
      const auto mit = model_of.find(ro.pose.model_id);
      ro.pose.mesh = mit == model_of.end() ? nullptr : &mit->second->mesh;
      ro.initial_iou = oj.at("initial_iou").get<double>();
      ro.final_iou = oj.at("iou").get<double>();
      ro.iou_trace = oj.at("trace").get<std::vector<double>>();
      ro.accepted_moves = oj.at("accepted_moves").get<int>();
      ro.infeasible_start = oj.at("infeasible_start").get<bool>();
      ro.position_clamped = oj.at("position_clamped").get<bool>();
      ro.frame_side = oj.at("frame_side").get<int>();
      res.objects.push_back(std::move(ro));
    }
  }
  return res;
}

void export_obj_scene(const SceneResult& res, const SceneBundle& bundle,
                      const std::filesystem::path& path) {
  std::vector<ObjGroup> groups;
  {
    const Eigen::Vector3d lo = res.layout_fit.layout.corner;
    const Eigen::Vector3d hi = lo + res.layout_fit.layout.sizes;
    ObjGroup room;
    room.name = "room";
    room.vertices = {{lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()},
                     {hi.x(), hi.y(), lo.z()}, {lo.x(), hi.y(), lo.z()},
                     {lo.x(), lo.y(), hi.z()}, {hi.x(), lo.y(), hi.z()},
                     {hi.x(), hi.y(), hi.z()}, {lo.x(), hi.y(), hi.z()}};
    // Quads per box face; the wall nearest the camera is omitted so the
    // interior stays visible.
    struct Face {
      int idx[4];
      int wall;  // matches SupportSurfaceFrame::room_wall, -1 floor/ceiling
    };
    const Face faces[6] = {{{0, 1, 2, 3}, -1}, {{4, 5, 6, 7}, -1}, {{0, 3, 7, 4}, 0},
                           {{1, 2, 6, 5}, 1},  {{0, 1, 5, 4}, 2},  {{3, 2, 6, 7}, 3}};
    const Eigen::Vector3d cam_pos = res.calib.camera.position();
    int nearest = 0;
    double best = std::numeric_limits<double>::infinity();
    const double wall_pos[4] = {lo.x(), hi.x(), lo.y(), hi.y()};
    for (int wallk = 0; wallk < 4; ++wallk) {
      const double d = wallk < 2 ? std::abs(cam_pos.x() - wall_pos[wallk])
                                 : std::abs(cam_pos.y() - wall_pos[wallk]);
      if (d < best) {
        best = d;
        nearest = wallk;
      }
    }
    for (const auto& f : faces) {
      if (f.wall == nearest) continue;
      room.faces.push_back({f.idx[0], f.idx[1], f.idx[2], f.idx[3]});
    }
    groups.push_back(std::move(room));
  }

  std::vector<const RefinedObject*> sorted;
  for (const auto& ro : res.objects) sorted.push_back(&ro);
  std::sort(sorted.begin(), sorted.end(),
            [](const RefinedObject* a, const RefinedObject* b) {
              return a->instance_id < b->instance_id;
            });
  for (const RefinedObject* ro : sorted) {
    if (!ro->pose.mesh) continue;
    ObjGroup g;
    g.name = "obj_" + std::to_string(ro->instance_id);
    g.vertices = ro->pose.transformed_vertices();
    for (const auto& t : ro->pose.mesh->triangles) g.faces.push_back({t[0], t[1], t[2]});
    groups.push_back(std::move(g));
  }
  write_obj(path, groups);
}

}  // namespace monoscene
