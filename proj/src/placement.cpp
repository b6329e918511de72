#include "monoscene/placement.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "monoscene/parallel.hpp"

namespace monoscene {

std::vector<Eigen::Vector3d> PlacedObject::transformed_vertices() const {
  std::vector<Eigen::Vector3d> out;
  if (!mesh) return out;
  out.reserve(mesh->vertices.size());
  const Eigen::Matrix3d lin = linear();
  for (const auto& v : mesh->vertices) out.push_back(lin * v + position);
  return out;
}

void PlacedObject::bounds(Eigen::Vector3d& lo, Eigen::Vector3d& hi) const {
  lo.setConstant(std::numeric_limits<double>::infinity());
  hi.setConstant(-std::numeric_limits<double>::infinity());
  const Eigen::Matrix3d lin = linear();
  for (const auto& v : mesh->vertices) {
    const Eigen::Vector3d t = lin * v + position;
    lo = lo.cwiseMin(t);
    hi = hi.cwiseMax(t);
  }
}

SupportSurfaceFrame SupportSurfaceFrame::box_side(const Eigen::Vector3d& lo,
                                                  const Eigen::Vector3d& hi, int side) {
  const Eigen::Vector3d d = hi - lo;
  SupportSurfaceFrame f;
  f.side = side;
  f.e2 = Eigen::Vector3d(0, 0, d.z());
  switch (side) {
    case 1:  // y = lo.y, outward -y
      f.origin = lo;
      f.e1 = Eigen::Vector3d(d.x(), 0, 0);
      break;
    case 2:  // x = hi.x, outward +x
      f.origin = Eigen::Vector3d(hi.x(), lo.y(), lo.z());
      f.e1 = Eigen::Vector3d(0, d.y(), 0);
      break;
    case 3:  // y = hi.y, outward +y
      f.origin = Eigen::Vector3d(hi.x(), hi.y(), lo.z());
      f.e1 = Eigen::Vector3d(-d.x(), 0, 0);
      break;
    case 4:  // x = lo.x, outward -x
      f.origin = Eigen::Vector3d(lo.x(), hi.y(), lo.z());
      f.e1 = Eigen::Vector3d(0, -d.y(), 0);
      break;
    default:
      fail(Errc::OutOfRange, "box_side: side must be 1..4");
  }
  f.normal = f.e1.cross(f.e2).normalized();
  return f;
}

SupportSurfaceFrame SupportSurfaceFrame::room_wall(const RoomLayout& room, int wall) {
  const Eigen::Vector3d lo = room.corner;
  const Eigen::Vector3d hi = room.corner + room.sizes;
  // Walls with inward normals: box sides flipped inside out.
  switch (wall) {
    case 0: {  // x = lo.x
      SupportSurfaceFrame f;
      f.side = wall + 1;
      f.origin = lo;
      f.e1 = Eigen::Vector3d(0, room.sizes.y(), 0);
      f.e2 = Eigen::Vector3d(0, 0, room.sizes.z());
      f.normal = f.e1.cross(f.e2).normalized();
      return f;
    }
    case 1: {  // x = hi.x
      SupportSurfaceFrame f;
      f.side = wall + 1;
      f.origin = Eigen::Vector3d(hi.x(), hi.y(), lo.z());
      f.e1 = Eigen::Vector3d(0, -room.sizes.y(), 0);
      f.e2 = Eigen::Vector3d(0, 0, room.sizes.z());
      f.normal = f.e1.cross(f.e2).normalized();
      return f;
    }
    case 2: {  // y = lo.y
      SupportSurfaceFrame f;
      f.side = wall + 1;
      f.origin = Eigen::Vector3d(hi.x(), lo.y(), lo.z());
      f.e1 = Eigen::Vector3d(-room.sizes.x(), 0, 0);
      f.e2 = Eigen::Vector3d(0, 0, room.sizes.z());
      f.normal = f.e1.cross(f.e2).normalized();
      return f;
    }
    case 3: {  // y = hi.y
      SupportSurfaceFrame f;
      f.side = wall + 1;
      f.origin = Eigen::Vector3d(lo.x(), hi.y(), lo.z());
      f.e1 = Eigen::Vector3d(room.sizes.x(), 0, 0);
      f.e2 = Eigen::Vector3d(0, 0, room.sizes.z());
      f.normal = f.e1.cross(f.e2).normalized();
      return f;
    }
  }
  fail(Errc::OutOfRange, "room_wall: wall must be 0..3");
}

InitPosition init_position(const Mask& mask, double height, double altitude,
                           const CameraModel& cam, const RoomLayout& room) {
  int x0, y0, x1, y1;
  if (!mask.bbox(x0, y0, x1, y1)) fail(Errc::EmptyMask, "init_position: empty mask");
  // Bottom-center pixel: the occupied span center of the lowest row.
  int bx0 = mask.width(), bx1 = -1;
  for (int x = 0; x < mask.width(); ++x)
    if (mask.get(x, y1)) {
      bx0 = std::min(bx0, x);
      bx1 = std::max(bx1, x);
    }
  const Eigen::Vector2d px(0.5 * (bx0 + bx1), y1);

  const double plane_z = altitude - height;  // bottom altitude
  const Eigen::Vector3d d = backproject_ray(cam, px);
  if (std::abs(d.z()) < 1e-12) fail(Errc::RayParallelToPlane, "init_position");

  InitPosition out;
  const double t = (plane_z - cam.h_cam) / d.z();
  if (t <= 0.0) {
    out.position = Eigen::Vector3d(0.0, 0.0, plane_z);
    out.clamped = true;
  } else {
    const Eigen::Vector3d hit = cam.position() + t * d;
    out.position = Eigen::Vector3d(hit.x(), hit.y(), plane_z);
  }
  const Eigen::Vector3d lo = room.corner, hi = room.corner + room.sizes;
  for (int a = 0; a < 2; ++a) {
    if (out.position[a] < lo[a]) {
      out.position[a] = lo[a];
      out.clamped = true;
    }
    if (out.position[a] > hi[a]) {
      out.position[a] = hi[a];
      out.clamped = true;
    }
  }
  return out;
}

namespace {

/// Shared fill core: clip one camera-space triangle to the near plane,
/// project and set covered pixel centers.
void fill_triangle(Mask& target, const CameraModel& cam,
                   const std::array<Eigen::Vector3d, 3>& cam_pts) {
  constexpr double kNear = 1e-4;
  std::vector<Eigen::Vector3d> poly;
  for (int i = 0; i < 3; ++i) {
    const Eigen::Vector3d& a = cam_pts[static_cast<std::size_t>(i)];
    const Eigen::Vector3d& b = cam_pts[static_cast<std::size_t>((i + 1) % 3)];
    if (a.z() >= kNear) poly.push_back(a);
    if ((a.z() >= kNear) != (b.z() >= kNear)) {
      const double t = (kNear - a.z()) / (b.z() - a.z());
      poly.push_back(a + t * (b - a));
    }
  }
  if (poly.size() < 3) return;

  std::vector<Eigen::Vector2d> px;
  px.reserve(poly.size());
  for (const auto& p : poly) px.emplace_back(cam.c + cam.f * p.head<2>() / p.z());

  double area = 0.0;
  const std::size_t m = px.size();
  for (std::size_t i = 0; i < m; ++i) {
    const auto& a = px[i];
    const auto& b = px[(i + 1) % m];
    area += a.x() * b.y() - b.x() * a.y();
  }
  if (std::abs(area) < 1e-12) return;
  const double orient = area > 0 ? 1.0 : -1.0;

  double fx0 = px[0].x(), fx1 = px[0].x(), fy0 = px[0].y(), fy1 = px[0].y();
  for (const auto& p : px) {
    fx0 = std::min(fx0, p.x());
    fx1 = std::max(fx1, p.x());
    fy0 = std::min(fy0, p.y());
    fy1 = std::max(fy1, p.y());
  }
  const int x0 = std::max(0, static_cast<int>(std::ceil(fx0 - 0.5)));
  const int x1 = std::min(target.width() - 1, static_cast<int>(std::floor(fx1 + 0.5)));
  const int y0 = std::max(0, static_cast<int>(std::ceil(fy0 - 0.5)));
  const int y1 = std::min(target.height() - 1, static_cast<int>(std::floor(fy1 + 0.5)));

  for (int y = y0; y <= y1; ++y)
    for (int x = x0; x <= x1; ++x) {
      bool inside = true;
      for (std::size_t i = 0; i < m && inside; ++i) {
        const auto& a = px[i];
        const auto& b = px[(i + 1) % m];
        const double cross = (b.x() - a.x()) * (y - a.y()) - (b.y() - a.y()) * (x - a.x());
        inside = orient * cross >= -1e-9;
      }
      if (inside) target.set(x, y);
    }
}

void rasterize_into(Mask& target, const PlacedObject& pose, const CameraModel& cam) {
  const Eigen::Matrix3d lin = pose.linear();
  std::vector<Eigen::Vector3d> cam_pts;
  cam_pts.reserve(pose.mesh->vertices.size());
  bool any_front = false;
  for (const auto& v : pose.mesh->vertices) {
    const Eigen::Vector3d p = cam.R * (lin * v + pose.position - cam.position());
    any_front = any_front || p.z() > 0.0;
    cam_pts.push_back(p);
  }
  if (!any_front) fail(Errc::BehindCamera, "rasterize_silhouette: mesh behind camera");
  for (const auto& tri : pose.mesh->triangles)
    fill_triangle(target, cam,
                  {cam_pts[static_cast<std::size_t>(tri[0])],
                   cam_pts[static_cast<std::size_t>(tri[1])],
                   cam_pts[static_cast<std::size_t>(tri[2])]});
}

}  // namespace

Mask rasterize_silhouette(const PlacedObject& pose, const CameraModel& cam, int width,
                          int height) {
  Mask out(width, height);
  rasterize_into(out, pose, cam);
  return out;
}

bool check_below(const PlacedObject& child, const std::vector<Eigen::Vector3d>& parent_points,
                 double tol) {
  if (parent_points.empty()) return false;
  Eigen::Vector3d plo = parent_points.front(), phi = parent_points.front();
  for (const auto& p : parent_points) {
    plo = plo.cwiseMin(p);
    phi = phi.cwiseMax(p);
  }
  Eigen::Vector3d clo, chi;
  child.bounds(clo, chi);
  const Eigen::Vector3d center = 0.5 * (clo + chi);
  return center.x() >= plo.x() - tol && center.x() <= phi.x() + tol &&
         center.y() >= plo.y() - tol && center.y() <= phi.y() + tol &&
         clo.z() >= phi.z() - tol;
}

bool check_behind(const PlacedObject& child, const SupportSurfaceFrame& frame, double tol) {
  Eigen::Vector3d clo, chi;
  child.bounds(clo, chi);
  const Eigen::Vector3d c = 0.5 * (clo + chi);
  const Eigen::Vector3d rel = c - frame.origin;
  for (const Eigen::Vector3d* e : {&frame.e1, &frame.e2}) {
    const double t = rel.dot(*e);
    if (t < -1e-9 || t > e->squaredNorm() + 1e-9) return false;
  }
  // Extent of the linear-transformed model along the normal (translation-free).
  const Eigen::Matrix3d lin = child.linear();
  double mn = std::numeric_limits<double>::infinity(), mx = -mn;
  for (const auto& v : child.mesh->vertices) {
    const double t = (lin * v).dot(frame.normal);
    mn = std::min(mn, t);
    mx = std::max(mx, t);
  }
  return std::abs(2.0 * rel.dot(frame.normal) - (mx - mn)) <= tol;
}

namespace {

struct ParentGeometry {
  bool below_floor = false;                         // supported by the room floor
  std::vector<Eigen::Vector3d> points;              // transformed parent points (below)
  std::vector<SupportSurfaceFrame> behind_frames;   // candidate side surfaces
  bool valid = true;
};

ParentGeometry parent_geometry(const SupportEdge& edge,
                               const std::map<int, const InstanceRef*>& ref_of,
                               const std::map<int, PlacedObject>& placed,
                               const std::map<int, int>& wall_of, const RoomLayout& room) {
  ParentGeometry pg;
  const auto it = ref_of.find(edge.parent);
  const InstanceRef* parent = it == ref_of.end() ? nullptr : it->second;
  SupportType type = edge.type;
  if (parent && parent->is_layout &&
      (parent->category == kCategoryFloor || parent->category == kCategoryCeiling))
    type = SupportType::Below;

  if (type == SupportType::Below) {
    if (!parent || parent->is_layout) {
      pg.below_floor = true;
      const Eigen::Vector3d lo = room.corner;
      const Eigen::Vector3d hi = room.corner + room.sizes;
      pg.points = {{lo.x(), lo.y(), lo.z()},
                   {hi.x(), lo.y(), lo.z()},
                   {hi.x(), hi.y(), lo.z()},
                   {lo.x(), hi.y(), lo.z()}};
    } else {
      const auto pit = placed.find(edge.parent);
      if (pit == placed.end()) {
        pg.valid = false;
        return pg;
      }
      pg.points = pit->second.transformed_vertices();
      if (pg.points.empty()) pg.valid = false;
    }
  } else {
    if (parent && parent->is_layout) {
      const auto wit = wall_of.find(edge.parent);
      if (wit != wall_of.end()) {
        pg.behind_frames.push_back(SupportSurfaceFrame::room_wall(room, wit->second));
      } else {
        // Behind an unknown layout surface: offer all four walls.
        for (int wallk = 0; wallk < 4; ++wallk)
          pg.behind_frames.push_back(SupportSurfaceFrame::room_wall(room, wallk));
      }
    } else {
      const auto pit = placed.find(edge.parent);
      if (pit == placed.end()) {
        pg.valid = false;
        return pg;
      }
      Eigen::Vector3d lo, hi;
      pit->second.bounds(lo, hi);
      for (int side = 1; side <= 4; ++side)
        pg.behind_frames.push_back(SupportSurfaceFrame::box_side(lo, hi, side));
    }
  }
  return pg;
}

double yaw_facing_normal(const Eigen::Vector3d& n) {
  // Rotate the model +y axis onto the outward normal.
  return std::atan2(-n.x(), n.y());
}

}  // namespace

std::vector<RefinedObject> refine_scene(const std::vector<InstanceRef>& instances,
                                        const std::vector<ObjectContext>& objects,
                                        const SupportGraph& graph, const SceneGeometry& geo,
                                        const RefineOptions& opts) {
  std::map<int, const InstanceRef*> ref_of;
  for (const auto& r : instances) ref_of[r.id] = &r;
  std::map<int, const ObjectContext*> ctx_of;
  for (const auto& c : objects) ctx_of[c.instance_id] = &c;
  const std::map<int, int>& wall_of = geo.wall_side_of;

  const auto order = topological_order(instances, graph);
  std::map<int, PlacedObject> placed;
  std::vector<RefinedObject> results;

  for (int id : order) {
    const auto cit = ctx_of.find(id);
    if (cit == ctx_of.end()) continue;
    const ObjectContext& ctx = *cit->second;
    const SupportEdge* edge = graph.edge_for(id);
    if (!edge || !ctx.mask || ctx.candidates.model_ids.empty()) continue;

    const ParentGeometry pg = parent_geometry(*edge, ref_of, placed, wall_of, geo.room);
    const InitPosition init = init_position(*ctx.mask, ctx.height, ctx.altitude, geo.camera,
                                            geo.room);

    struct Cell {
      int model_idx, orient_idx, frame_idx;
    };
    std::vector<Cell> cells;
    const bool behind = !pg.behind_frames.empty();
    const int n_orient =
        behind ? 1 : std::max<std::size_t>(1, ctx.candidates.orientations.size());
    const int n_frames = behind ? static_cast<int>(pg.behind_frames.size()) : 1;
    for (int mi = 0; mi < static_cast<int>(ctx.candidates.model_ids.size()); ++mi)
      for (int oi = 0; oi < n_orient; ++oi)
        for (int fi = 0; fi < n_frames; ++fi) cells.push_back({mi, oi, fi});

    // Scale bounds: common categories stay near the retrieved shape; `other`
    // cuboids get wide horizontal freedom.
    const double s12_lo = ctx.candidates.other_category ? 0.1 : 0.8;
    const double s12_hi = ctx.candidates.other_category ? 10.0 : 1.2;
    Eigen::VectorXd lower(6), upper(6);
    lower << s12_lo, s12_lo, 0.9, geo.room.corner.x() - 1.0, geo.room.corner.y() - 1.0, -0.5;
    upper << s12_hi, s12_hi, 1.1, geo.room.corner.x() + geo.room.sizes.x() + 1.0,
        geo.room.corner.y() + geo.room.sizes.y() + 1.0, geo.room.sizes.z() + 0.5;

    struct CellResult {
      double iou = -1.0;
      double initial_iou = 0.0;
      PlacedObject pose;
      std::vector<double> trace;
      int accepted = 0;
      bool infeasible = false;
    };
    std::vector<CellResult> cell_results(cells.size());

    parallel_for(static_cast<int>(cells.size()), opts.threads, [&](int ci) {
      const Cell& cell = cells[static_cast<std::size_t>(ci)];
      const TriMesh* mesh = ctx.candidates.meshes[static_cast<std::size_t>(cell.model_idx)];
      if (!mesh || mesh->vertices.empty()) return;

      Eigen::Vector3d mlo, mhi;
      mesh->bounds(mlo, mhi);
      const double mesh_h = std::max(mhi.z() - mlo.z(), 1e-6);

      PlacedObject base;
      base.model_id = ctx.candidates.model_ids[static_cast<std::size_t>(cell.model_idx)];
      base.mesh = mesh;
      base.prescale = std::max(ctx.height, 1e-3) / mesh_h;
      base.theta = behind
                       ? yaw_facing_normal(
                             pg.behind_frames[static_cast<std::size_t>(cell.frame_idx)].normal)
                       : ctx.candidates.orientations.empty()
                             ? 0.0
                             : ctx.candidates.orientations[static_cast<std::size_t>(cell.orient_idx)];
      base.position = init.position;

      auto pose_of = [&](const Eigen::VectorXd& x) {
        PlacedObject p = base;
        p.scale = Eigen::Vector3d(x[0], x[1], x[2]);
        p.position = Eigen::Vector3d(x[3], x[4], x[5]);
        return p;
      };

      auto project_feasible = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        PlacedObject p = pose_of(x);
        Eigen::Vector3d lo, hi;
        p.bounds(lo, hi);
        Eigen::Vector3d center = 0.5 * (lo + hi);
        Eigen::VectorXd y = x;
        if (behind) {
          const auto& fr = pg.behind_frames[static_cast<std::size_t>(cell.frame_idx)];
          Eigen::Vector3d shift = Eigen::Vector3d::Zero();
          const Eigen::Vector3d rel = center - fr.origin;
          for (const Eigen::Vector3d* e : {&fr.e1, &fr.e2}) {
            const double len2 = e->squaredNorm();
            if (len2 < 1e-12) continue;
            const double t = rel.dot(*e);
            const double tc = std::clamp(t, 0.0, len2);
            shift += (tc - t) / len2 * (*e);
          }
          // Attachment: the center sits half the normal extent off the surface.
          const Eigen::Matrix3d lin = p.linear();
          double mn = std::numeric_limits<double>::infinity(), mx = -mn;
          for (const auto& v : mesh->vertices) {
            const double t = (lin * v).dot(fr.normal);
            mn = std::min(mn, t);
            mx = std::max(mx, t);
          }
          const double want = 0.5 * (mx - mn);
          shift += (want - rel.dot(fr.normal)) * fr.normal;
          center += shift;
          y[3] = p.position.x() + shift.x();
          y[4] = p.position.y() + shift.y();
          y[5] = p.position.z() + shift.z();
        } else if (!pg.points.empty()) {
          Eigen::Vector3d plo = pg.points.front(), phi = pg.points.front();
          for (const auto& q : pg.points) {
            plo = plo.cwiseMin(q);
            phi = phi.cwiseMax(q);
          }
          Eigen::Vector3d shift = Eigen::Vector3d::Zero();
          shift.x() = std::clamp(center.x(), plo.x(), phi.x()) - center.x();
          shift.y() = std::clamp(center.y(), plo.y(), phi.y()) - center.y();
          if (lo.z() + shift.z() < phi.z()) shift.z() = phi.z() - lo.z();
          y[3] = p.position.x() + shift.x();
          y[4] = p.position.y() + shift.y();
          y[5] = p.position.z() + shift.z();
        }
        return y;
      };

      Mask scratch(geo.width, geo.height);
      auto objective = [&](const Eigen::VectorXd& x) {
        scratch.clear_all();
        try {
          rasterize_into(scratch, pose_of(x), geo.camera);
        } catch (const Error&) {
          return 0.0;  // fully behind the camera scores nothing
        }
        return mask_iou(scratch, *ctx.mask);
      };

      Eigen::VectorXd x0(6);
      x0 << 1.0, 1.0, 1.0, init.position.x(), init.position.y(), init.position.z();

      DfoOptions dopts;
      dopts.max_iterations = opts.iterations;
      dopts.method = opts.method;
      const DfoResult r = dfo_maximize(objective, x0, lower, upper, project_feasible, dopts);

      CellResult& cr = cell_results[static_cast<std::size_t>(ci)];
      // The projected start is the reference for improvement reporting.
      Eigen::VectorXd start = project_feasible(x0.cwiseMax(lower).cwiseMin(upper));
      cr.initial_iou = objective(start);
      cr.iou = r.value;
      cr.pose = pose_of(r.x);
      cr.trace = r.trace;
      cr.accepted = r.accepted_moves;
    });

    // Deterministic reduction: best IoU, then model id, orientation, frame.
    int best = -1;
    for (int ci = 0; ci < static_cast<int>(cells.size()); ++ci) {
      if (cell_results[static_cast<std::size_t>(ci)].iou < 0) continue;
      if (best < 0 ||
          cell_results[static_cast<std::size_t>(ci)].iou >
              cell_results[static_cast<std::size_t>(best)].iou)
        best = ci;
    }

    RefinedObject out;
    out.instance_id = id;
    out.position_clamped = init.clamped;
    if (best < 0) {
      // No rasterizable candidate: keep the initial estimate, flagged.
      out.infeasible_start = true;
      PlacedObject p;
      p.model_id = ctx.candidates.model_ids.front();
      p.mesh = ctx.candidates.meshes.front();
      p.position = init.position;
      out.pose = p;
      results.push_back(out);
      placed[id] = out.pose;
      continue;
    }
    const CellResult& win = cell_results[static_cast<std::size_t>(best)];
    out.pose = win.pose;
    out.initial_iou = win.initial_iou;
    out.final_iou = win.iou;
    out.iou_trace = win.trace;
    out.accepted_moves = win.accepted;
    out.frame_side = behind ? pg.behind_frames[static_cast<std::size_t>(cells[static_cast<std::size_t>(best)].frame_idx)].side : 0;
    results.push_back(out);
    placed[id] = out.pose;
  }
  return results;
}

}  // namespace monoscene
