#include "monoscene/metrology.hpp"

#include <algorithm>
#include <cmath>
#include <map>

namespace monoscene {

namespace {

double silverman_bandwidth(const std::vector<double>& sample) {
  const std::size_t n = sample.size();
  if (n < 2) return 0.0;
  double mean = 0.0;
  for (double v : sample) mean += v;
  mean /= static_cast<double>(n);
  double var = 0.0;
  for (double v : sample) var += (v - mean) * (v - mean);
  var /= static_cast<double>(n - 1);
  const double sd = std::sqrt(var);

  std::vector<double> sorted = sample;
  std::sort(sorted.begin(), sorted.end());
  const double q1 = sorted[static_cast<std::size_t>(0.25 * (n - 1))];
  const double q3 = sorted[static_cast<std::size_t>(0.75 * (n - 1))];
  const double spread = std::min(sd, (q3 - q1) / 1.34);
  return 0.9 * spread * std::pow(static_cast<double>(n), -0.2);
}

/// Longest contiguous in-mask run along the ray p(t) = origin + t * dir,
/// sampled at half-pixel steps over [t0, t1]. Returns chord endpoints.
bool longest_chord(const Mask& mask, const Eigen::Vector2d& origin, const Eigen::Vector2d& dir,
                   double t0, double t1, Eigen::Vector2d& a, Eigen::Vector2d& b, double& len) {
  const double step = 0.5;
  const int n = static_cast<int>((t1 - t0) / step) + 1;
  double best_start = 0, best_end = -1;
  double run_start = 0;
  bool in_run = false;
  int gap = 0;
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + i * step;
    const Eigen::Vector2d p = origin + t * dir;
    const int x = static_cast<int>(std::lround(p.x()));
    const int y = static_cast<int>(std::lround(p.y()));
    const bool inside = mask.contains(x, y);
    if (inside) {
      if (!in_run) {
        in_run = true;
        run_start = t;
      }
      gap = 0;
      if (t - run_start > best_end - best_start) {
        best_start = run_start;
        best_end = t;
      }
    } else if (in_run) {
      // Tolerate a single missing sample (boundary aliasing).
      if (++gap > 1) in_run = false;
    }
  }
  if (best_end < best_start) return false;
  a = origin + best_start * dir;
  b = origin + best_end * dir;
  len = best_end - best_start;
  return true;
}

/// First and last in-mask samples along the ray: the full chord between the
/// extreme boundary crossings, bridging interior gaps of compound shapes.
bool mask_extent_along_ray(const Mask& mask, const Eigen::Vector2d& origin,
                           const Eigen::Vector2d& dir, double t0, double t1, Eigen::Vector2d& a,
                           Eigen::Vector2d& b) {
  const double step = 0.5;
  const int n = static_cast<int>((t1 - t0) / step) + 1;
  double first = 0, last = -1;
  bool any = false;
  for (int i = 0; i <= n; ++i) {
    const double t = t0 + i * step;
    const Eigen::Vector2d p = origin + t * dir;
    if (mask.contains(static_cast<int>(std::lround(p.x())),
                      static_cast<int>(std::lround(p.y())))) {
      if (!any) first = t;
      last = t;
      any = true;
    }
  }
  if (!any) return false;
  a = origin + first * dir;
  b = origin + last * dir;
  return true;
}

/// Sample values worth testing as rays: around each local maximum of the
/// kernel density, every distinct sample within one bandwidth. The density
/// locates candidate ray families; the caller's longest-intersection rule
/// picks within them, so a peak shifted by background mass cannot lose an
/// exact edge ray.
std::vector<double> kde_ray_candidates(const std::vector<double>& sample, double bandwidth) {
  std::vector<double> out;
  if (sample.empty()) return out;
  std::vector<double> sorted = sample;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end(),
                           [](double a, double b) { return std::abs(a - b) < 1e-9; }),
               sorted.end());
  const double lo_s = sorted.front(), hi_s = sorted.back();
  if (bandwidth <= 1e-12 || hi_s - lo_s < 1e-12) return {sorted.front()};

  const double lo = lo_s - bandwidth, hi = hi_s + bandwidth;
  const int grid = 256;
  std::vector<double> density(grid + 1, 0.0);
  for (int i = 0; i <= grid; ++i) {
    const double x = lo + (hi - lo) * i / grid;
    double d = 0.0;
    for (double s : sample) {
      const double u = (x - s) / bandwidth;
      d += std::exp(-0.5 * u * u);
    }
    density[static_cast<std::size_t>(i)] = d;
  }
  for (int i = 0; i <= grid; ++i) {
    const double d = density[static_cast<std::size_t>(i)];
    const double prev = i > 0 ? density[static_cast<std::size_t>(i - 1)] : -1.0;
    const double next = i < grid ? density[static_cast<std::size_t>(i + 1)] : -1.0;
    if (d < prev || d < next) continue;
    const double x = lo + (hi - lo) * i / grid;
    const auto first = std::lower_bound(sorted.begin(), sorted.end(), x - bandwidth);
    const auto last = std::upper_bound(sorted.begin(), sorted.end(), x + bandwidth);
    const auto count = static_cast<std::size_t>(last - first);
    const std::size_t stride = std::max<std::size_t>(1, count / 64);
    for (auto it = first; it < last; it += static_cast<std::ptrdiff_t>(stride))
      out.push_back(*it);
  }
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

}  // namespace

HeightLine extract_height_line(const Mask& mask, const HPoint2& vp_v) {
  const auto boundary = mask.boundary_pixels();
  if (boundary.empty()) fail(Errc::EmptyMask, "extract_height_line: empty mask");

  // The chord is measured on the boundary: rays grazing a silhouette edge
  // produce long runs, rays crossing the interior only touch the boundary at
  // two points. That pins the height line to an actual vertical edge. Runs
  // are traced on a 1 px dilation so rasterization stair-steps do not break
  // them; endpoints shrink back onto true boundary pixels afterwards.
  Mask boundary_exact(mask.width(), mask.height());
  for (const auto& [x, y] : boundary) boundary_exact.set(x, y);
  const Mask boundary_mask = boundary_exact.dilated(1);

  auto shrink_to_boundary = [&](Eigen::Vector2d& endpoint, const Eigen::Vector2d& inward) {
    for (int i = 0; i <= 4; ++i) {
      const Eigen::Vector2d s = endpoint + 0.5 * i * inward;
      if (boundary_exact.contains(static_cast<int>(std::lround(s.x())),
                                  static_cast<int>(std::lround(s.y())))) {
        endpoint = s;
        return;
      }
    }
  };

  HeightLine line;
  int bx0, by0, bx1, by1;
  mask.bbox(bx0, by0, bx1, by1);

  // Candidate rays are scored by their boundary run: a ray along a vertical
  // silhouette edge accumulates a long run, a ray crossing the interior only
  // touches the boundary twice. The height line is the full mask extent
  // along the winning ray.
  struct RayChord {
    double run = 0.0;
    Eigen::Vector2d a, b;
    double extent = 0.0;
  };
  std::vector<RayChord> chords;
  auto consider = [&](const Eigen::Vector2d& origin, const Eigen::Vector2d& dir, double t0,
                      double t1) {
    RayChord rc;
    Eigen::Vector2d ra, rb;
    if (!longest_chord(boundary_mask, origin, dir, t0, t1, ra, rb, rc.run)) return;
    if (!mask_extent_along_ray(mask, origin, dir, t0, t1, rc.a, rc.b)) return;
    rc.extent = (rc.b - rc.a).norm();
    // Rays grazing just outside the silhouette have long dilated-boundary
    // runs but almost no mask extent.
    if (rc.extent < rc.run - 2.0) return;
    chords.push_back(rc);
  };

  const bool infinite = at_infinity(vp_v);
  Eigen::Vector2d best_a, best_b;
  bool chord_found = false;
  bool a_near_vp = true;  // chord endpoint a sits at smaller ray parameter

  if (!infinite) {
    const Eigen::Vector2d vp = pixel_of(vp_v);
    // Rebase radians around the mean boundary direction to avoid wrap.
    Eigen::Vector2d mean_dir = Eigen::Vector2d::Zero();
    for (const auto& [x, y] : boundary)
      mean_dir += (Eigen::Vector2d(x, y) - vp).normalized();
    if (mean_dir.norm() < 1e-12) mean_dir = Eigen::Vector2d(0, 1);
    mean_dir.normalize();

    std::vector<double> radians;
    radians.reserve(boundary.size());
    double tmin = std::numeric_limits<double>::infinity(), tmax = 0.0;
    for (const auto& [x, y] : boundary) {
      const Eigen::Vector2d d = Eigen::Vector2d(x, y) - vp;
      radians.push_back(std::atan2(mean_dir.x() * d.y() - mean_dir.y() * d.x(), mean_dir.dot(d)));
      tmin = std::min(tmin, d.norm());
      tmax = std::max(tmax, d.norm());
    }
    for (double theta : kde_ray_candidates(radians, silverman_bandwidth(radians))) {
      const double cs = std::cos(theta), sn = std::sin(theta);
      const Eigen::Vector2d dir(cs * mean_dir.x() - sn * mean_dir.y(),
                                sn * mean_dir.x() + cs * mean_dir.y());
      consider(vp, dir, std::max(0.0, tmin - 2.0), tmax + 2.0);
    }
  } else {
    Eigen::Vector2d dir = vp_v.head<2>().normalized();
    if (dir.y() > 0) dir = -dir;  // point image-up
    a_near_vp = false;            // a is at the smaller parameter along "up"
    const Eigen::Vector2d perp(-dir.y(), dir.x());
    std::vector<double> offsets;
    offsets.reserve(boundary.size());
    for (const auto& [x, y] : boundary) offsets.push_back(perp.dot(Eigen::Vector2d(x, y)));
    const double reach = 2.0 * (mask.width() + mask.height());
    for (double off : kde_ray_candidates(offsets, silverman_bandwidth(offsets)))
      consider(off * perp, dir, -reach, reach);
  }

  if (!chords.empty()) {
    const RayChord* pick = &chords.front();
    for (const auto& rc : chords)
      if (rc.run > pick->run) pick = &rc;
    best_a = pick->a;
    best_b = pick->b;
    chord_found = true;
    if ((best_b - best_a).norm() > 0.5) {
      const Eigen::Vector2d inward = (best_b - best_a).normalized();
      shrink_to_boundary(best_a, inward);
      shrink_to_boundary(best_b, -inward);
    }
  }
  if (!chord_found) {
    // Single-pixel masks and similar degenerate chords.
    best_a = best_b = Eigen::Vector2d(boundary.front().first, boundary.front().second);
  }

  if (!infinite) {
    // vp_v.z() > 0: the pixel is the image of the up direction, so the far
    // endpoint along the ray is the bottom; reversed for a downward vp.
    const bool vp_is_up = vp_v.z() > 0.0;
    line.top = (vp_is_up == a_near_vp) ? best_a : best_b;
    line.bottom = (vp_is_up == a_near_vp) ? best_b : best_a;
  } else {
    line.top = best_b;  // chords run along the image-up direction
    line.bottom = best_a;
  }
  return line;
}

double cross_ratio_altitude(const Eigen::Vector2d& t_i, const Eigen::Vector2d& b_r,
                            const Eigen::Vector2d& t_r, const HPoint2& vp_v, double H_r) {
  const double ref_len = (t_r - b_r).norm();
  if (ref_len < 1e-12) fail(Errc::SingularConfiguration, "cross_ratio_altitude: t_r == b_r");
  double vp_factor = 1.0;
  if (!at_infinity(vp_v)) {
    const Eigen::Vector2d vp = pixel_of(vp_v);
    const double d_ti = (vp - t_i).norm();
    if (d_ti < 1e-12) fail(Errc::SingularConfiguration, "cross_ratio_altitude: t_i at vp_v");
    vp_factor = (vp - t_r).norm() / d_ti;
  }
  return H_r * ((t_i - b_r).norm() / ref_len) * vp_factor;
}

Eigen::Vector2d map_to_reference(const Eigen::Vector2d& p, const Eigen::Vector2d& foot,
                                 const Eigen::Vector2d& t_r, const Eigen::Vector2d& b_r,
                                 const Eigen::Vector3d& horizon) {
  if ((foot - b_r).norm() < 1e-9) return p;  // already on the reference vertical
  const Eigen::Vector3d ground = homogeneous(foot).cross(homogeneous(b_r));
  const Eigen::Vector3d v = ground.cross(horizon);
  const Eigen::Vector3d ref = homogeneous(t_r).cross(homogeneous(b_r));
  const Eigen::Vector3d mapped = v.cross(homogeneous(p)).cross(ref);
  if (std::abs(mapped.z()) < 1e-12 * mapped.head<2>().norm())
    fail(Errc::SingularConfiguration, "map_to_reference: mapped point at infinity");
  return mapped.head<2>() / mapped.z();
}

namespace {

struct ReferenceLine {
  Eigen::Vector2d t_r, b_r;
  Eigen::Vector3d image_line;
};

/// Visible room-corner vertical edges projected to image lines.
std::vector<ReferenceLine> reference_lines(const CameraModel& cam, const RoomLayout& layout) {
  std::vector<ReferenceLine> refs;
  const double H = layout.sizes.z();
  const double xs[2] = {layout.corner.x(), layout.corner.x() + layout.sizes.x()};
  const double ys[2] = {layout.corner.y(), layout.corner.y() + layout.sizes.y()};
  for (double x : xs)
    for (double y : ys) {
      const Eigen::Vector3d bottom(x, y, layout.corner.z());
      const Eigen::Vector3d top(x, y, layout.corner.z() + H);
      if (depth_of(cam, bottom) < 0.05 || depth_of(cam, top) < 0.05) continue;
      ReferenceLine r;
      r.b_r = project(cam, bottom);
      r.t_r = project(cam, top);
      if ((r.t_r - r.b_r).norm() < 1.0) continue;
      r.image_line = line_coeffs<double>(r.t_r, r.b_r);
      refs.push_back(r);
    }
  return refs;
}

Eigen::Vector2d foot_from_altitude(const CameraModel& cam, const Eigen::Vector2d& px,
                                   double altitude) {
  const Eigen::Vector3d d = backproject_ray(cam, px);
  const double dz = d.z();
  if (std::abs(dz) < 1e-12) fail(Errc::RayParallelToPlane, "foot_from_altitude");
  const double t = (altitude - cam.h_cam) / dz;
  const Eigen::Vector3d hit = cam.position() + t * d;
  return project(cam, Eigen::Vector3d(hit.x(), hit.y(), 0.0));
}

}  // namespace

HeightSolution solve_heights(const SupportGraph& graph, const MetrologyInputs& in) {
  HeightSolution sol;
  const double H_r = in.layout.sizes.z();
  const HPoint2& vp_v = in.vps[2];
  Eigen::Vector3d horizon = in.vps[0].cross(in.vps[1]);
  if (horizon.head<2>().norm() < 1e-12)
    fail(Errc::SingularConfiguration, "solve_heights: degenerate horizon");
  horizon = normalized_line(horizon);

  const auto refs = reference_lines(in.camera, in.layout);
  if (refs.empty()) fail(Errc::UnderConstrained, "solve_heights: no visible reference line");

  // Wall-floor junction image lines of the fitted cuboid, per wall side
  // (0 x-lo, 1 x-hi, 2 y-lo, 3 y-hi), for wall-supported objects whose
  // vertical line lies in a wall plane.
  std::array<std::optional<Eigen::Vector3d>, 4> floor_junctions;
  {
    const Eigen::Vector3d lo = in.layout.corner;
    const Eigen::Vector3d hi = in.layout.corner + in.layout.sizes;
    const Eigen::Vector3d ends[4][2] = {
        {{lo.x(), lo.y(), lo.z()}, {lo.x(), hi.y(), lo.z()}},
        {{hi.x(), lo.y(), lo.z()}, {hi.x(), hi.y(), lo.z()}},
        {{lo.x(), lo.y(), lo.z()}, {hi.x(), lo.y(), lo.z()}},
        {{lo.x(), hi.y(), lo.z()}, {hi.x(), hi.y(), lo.z()}}};
    for (int k = 0; k < 4; ++k) {
      const Eigen::Vector3d a = ends[k][0], b = ends[k][1];
      if (depth_of(in.camera, a) < 0.05 || depth_of(in.camera, b) < 0.05) continue;
      const Eigen::Vector2d pa = project(in.camera, a), pb = project(in.camera, b);
      if ((pa - pb).norm() < 1.0) continue;
      floor_junctions[static_cast<std::size_t>(k)] = line_coeffs<double>(pa, pb);
    }
  }

  std::map<int, const HeightLine*> line_of;
  std::map<int, const InstanceRef*> ref_of;
  std::size_t li = 0;
  for (const auto& inst : in.instances) {
    ref_of[inst.id] = &inst;
    if (!inst.is_layout) {
      if (li >= in.lines.size()) fail(Errc::DimensionMismatch, "solve_heights: missing lines");
      line_of[inst.id] = &in.lines[li++];
    }
  }

  const auto order = topological_order(in.instances, graph);

  std::map<int, double> top_altitude;  // solved A_i per object id
  auto pick_reference = [&](const Eigen::Vector2d& mid) -> const ReferenceLine& {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < refs.size(); ++i) {
      const double d = point_line_distance<double>(mid, refs[i].image_line);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return refs[best];
  };

  auto altitude_of = [&](const Eigen::Vector2d& p, const Eigen::Vector2d& foot,
                         const ReferenceLine& ref) {
    const Eigen::Vector2d mapped = map_to_reference(p, foot, ref.t_r, ref.b_r, horizon);
    return cross_ratio_altitude(mapped, ref.b_r, ref.t_r, vp_v, H_r);
  };

  for (int id : order) {
    const InstanceRef* inst = ref_of[id];
    if (!inst || inst->is_layout) continue;
    const SupportEdge* edge = graph.edge_for(id);
    const HeightLine* hl = line_of[id];
    if (!edge || !hl) fail(Errc::UnderConstrained, "solve_heights: instance without edge/line");

    ObjectHeight oh;
    oh.solved_type = edge->type;
    const ReferenceLine& ref = pick_reference(0.5 * (hl->top + hl->bottom));
    const InstanceRef* parent = ref_of.count(edge->parent) ? ref_of[edge->parent] : nullptr;

    auto solve_below = [&](double parent_alt) {
      // The bottom sits at the parent's altitude whether or not it is
      // visible, which is exactly the occluded-bottom substitution.
      const Eigen::Vector2d foot = foot_from_altitude(in.camera, hl->bottom, parent_alt);
      oh.altitude = altitude_of(hl->top, foot, ref);
      oh.height = oh.altitude - parent_alt;
    };
    auto solve_behind = [&](int wall_side) {
      Eigen::Vector2d foot;
      bool have_foot = false;
      if (wall_side >= 0 && floor_junctions[static_cast<std::size_t>(wall_side)]) {
        // The object's vertical line lies in the wall plane; its floor foot
        // is the intersection with that wall's floor junction.
        const Eigen::Vector3d own_line =
            (hl->top - hl->bottom).norm() > 1e-9
                ? line_coeffs<double>(hl->top, hl->bottom)
                : normalized_line(Eigen::Vector3d(vp_v.cross(homogeneous(hl->bottom))));
        const Eigen::Vector3d hit =
            own_line.cross(*floor_junctions[static_cast<std::size_t>(wall_side)]);
        if (std::abs(hit.z()) > 1e-12 * hit.head<2>().norm()) {
          foot = hit.head<2>() / hit.z();
          have_foot = true;
        }
      }
      if (!have_foot) {
        // Support from an unknown surface: the rough floor-plane estimate.
        foot = foot_from_altitude(in.camera, hl->bottom, 0.0);
        oh.low_confidence = true;
      }
      const double a_top = altitude_of(hl->top, foot, ref);
      const double a_bottom = altitude_of(hl->bottom, foot, ref);
      oh.altitude = a_top;
      oh.height = a_top - a_bottom;
    };

    int parent_wall = -1;
    if (parent && parent->is_layout && parent->category == kCategoryWall) {
      const auto wit = in.wall_side_of.find(parent->id);
      if (wit != in.wall_side_of.end()) parent_wall = wit->second;
    }

    if (edge->type == SupportType::Below) {
      double parent_alt = 0.0;
      bool known = true;
      if (parent && !parent->is_layout) {
        const auto it = top_altitude.find(edge->parent);
        known = it != top_altitude.end();
        parent_alt = known ? it->second : 0.0;
      } else if (parent && parent->category != kCategoryFloor) {
        known = false;  // below-support by a wall/ceiling is ill-posed
      }
      if (!known) oh.low_confidence = true;
      solve_below(parent_alt);
      if (oh.height < -1e-9) {
        // A negative height contradicts support from below.
        oh.type_corrected = true;
        oh.solved_type = SupportType::Behind;
        solve_behind(parent_wall);
      }
    } else {
      solve_behind(parent_wall);
    }

    // 3-sigma prior clamp on the height/room-height ratio.
    const int cat = inst->category;
    if (in.priors.height_available[static_cast<std::size_t>(cat)]) {
      const double mu = in.priors.height_mu[static_cast<std::size_t>(cat)];
      const double sigma = in.priors.height_sigma[static_cast<std::size_t>(cat)];
      const double ratio = oh.height / H_r;
      if (ratio < mu - 3 * sigma || ratio > mu + 3 * sigma) {
        oh.height = mu * H_r;
        oh.clamped = true;
        if (oh.solved_type == SupportType::Below) {
          double parent_alt = 0.0;
          if (parent && !parent->is_layout && top_altitude.count(edge->parent))
            parent_alt = top_altitude[edge->parent];
          oh.altitude = parent_alt + oh.height;
        }
      }
    }
    if (oh.height < 0.0) oh.height = 0.0;

    top_altitude[id] = oh.altitude;
    sol.instance_ids.push_back(id);
    sol.objects.push_back(oh);
  }
  return sol;
}

}  // namespace monoscene
