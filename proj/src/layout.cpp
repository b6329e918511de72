#include "monoscene/layout.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "monoscene/mask.hpp"

namespace monoscene {

const char* region_name(RegionLabel r) {
  switch (r) {
    case RegionLabel::Floor: return "floor";
    case RegionLabel::Ceiling: return "ceiling";
    case RegionLabel::WallLeft: return "wall_left";
    case RegionLabel::WallMid: return "wall_mid";
    case RegionLabel::WallRight: return "wall_right";
  }
  return "?";
}

namespace {

double eval(const Eigen::Vector3d& l, double x, double y) { return l.x() * x + l.y() * y + l.z(); }

// Orient a junction line so eval grows to the right (a > 0).
std::optional<Eigen::Vector3d> orient_junction(const Eigen::Vector3d& l) {
  Eigen::Vector3d n = normalized_line(l);
  if (std::abs(n.x()) < 0.05) return std::nullopt;  // junctions must be near-vertical
  return n.x() > 0 ? n : Eigen::Vector3d(-n);
}

// Orient a floor/ceiling edge so eval grows downward (b > 0).
std::optional<Eigen::Vector3d> orient_horizontal(const Eigen::Vector3d& l) {
  Eigen::Vector3d n = normalized_line(l);
  if (std::abs(n.y()) < 0.05) return std::nullopt;
  return n.y() > 0 ? n : Eigen::Vector3d(-n);
}

double x_at(const Eigen::Vector3d& l, double y) { return -(l.y() * y + l.z()) / l.x(); }
double y_at(const Eigen::Vector3d& l, double x) { return -(l.x() * x + l.z()) / l.y(); }

// Clip segment [p, q] to the halfplane n.dot(r) + d <= 0.
bool clip_segment(Eigen::Vector2d& p, Eigen::Vector2d& q, const Eigen::Vector2d& n, double d) {
  double fp = n.dot(p) + d;
  double fq = n.dot(q) + d;
  if (fp > 0 && fq > 0) return false;
  if (fp <= 0 && fq <= 0) return true;
  const double t = fp / (fp - fq);
  const Eigen::Vector2d m = p + t * (q - p);
  if (fp > 0)
    p = m;
  else
    q = m;
  return true;
}

// Two far-apart points on a line, later clipped to the image.
void span_points(const Eigen::Vector3d& l, double extent, Eigen::Vector2d& p,
                 Eigen::Vector2d& q) {
  const Eigen::Vector2d dir(-l.y(), l.x());
  // A point on the line nearest the origin.
  const Eigen::Vector2d base = -l.z() * Eigen::Vector2d(l.x(), l.y());
  p = base - extent * dir;
  q = base + extent * dir;
}

bool clip_to_image(Eigen::Vector2d& p, Eigen::Vector2d& q, int w, int h) {
  return clip_segment(p, q, {-1, 0}, -0.5) && clip_segment(p, q, {1, 0}, -(w - 0.5)) &&
         clip_segment(p, q, {0, -1}, -0.5) && clip_segment(p, q, {0, 1}, -(h - 0.5));
}

}  // namespace

int LayoutProposal::strip_of(double x, double y) const {
  if (junction_left && eval(*junction_left, x, y) < 0.0) return 0;
  if (junction_right && eval(*junction_right, x, y) > 0.0) return 2;
  return 1;
}

RegionLabel LayoutProposal::label_at(double x, double y) const {
  const int s = strip_of(x, y);
  if (floor_lines[s] && eval(*floor_lines[s], x, y) > 0.0) return RegionLabel::Floor;
  if (ceil_lines[s] && eval(*ceil_lines[s], x, y) < 0.0) return RegionLabel::Ceiling;
  return s == 0 ? RegionLabel::WallLeft : (s == 1 ? RegionLabel::WallMid : RegionLabel::WallRight);
}

std::vector<std::uint8_t> LayoutProposal::signature(int width, int height) const {
  const int sx = std::max(1, width / 32);
  const int sy = std::max(1, height / 24);
  std::vector<std::uint8_t> sig;
  sig.reserve(static_cast<std::size_t>((width / sx + 1) * (height / sy + 1)));
  for (int y = 0; y < height; y += sy)
    for (int x = 0; x < width; x += sx)
      sig.push_back(static_cast<std::uint8_t>(label_at(x, y)));
  return sig;
}

std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> LayoutProposal::boundary_segments(
    int width, int height) const {
  std::vector<std::pair<Eigen::Vector2d, Eigen::Vector2d>> out;
  const double extent = 4.0 * (width + height);

  auto clip_strip = [&](Eigen::Vector2d& p, Eigen::Vector2d& q, int strip) {
    if (strip == 0)
      return junction_left ? clip_segment(p, q, junction_left->head<2>(), junction_left->z())
                           : true;
    bool ok = true;
    if (strip >= 1 && junction_left && strip == 1)
      ok = clip_segment(p, q, -junction_left->head<2>(), -junction_left->z());
    if (!ok) return false;
    if (strip == 1 && junction_right)
      ok = clip_segment(p, q, junction_right->head<2>(), junction_right->z());
    if (strip == 2 && junction_right)
      ok = clip_segment(p, q, -junction_right->head<2>(), -junction_right->z());
    return ok;
  };

  const std::array<bool, 3> strip_present = {junction_left.has_value(), true,
                                             junction_right.has_value()};
  for (int s = 0; s < 3; ++s) {
    if (!strip_present[s]) continue;
    for (const auto* lines : {&floor_lines, &ceil_lines}) {
      if (!(*lines)[s]) continue;
      Eigen::Vector2d p, q;
      span_points(*(*lines)[s], extent, p, q);
      if (clip_strip(p, q, s) && clip_to_image(p, q, width, height) && (p - q).norm() > 0.5)
        out.emplace_back(p, q);
    }
  }
  for (const auto& j : {junction_left, junction_right}) {
    if (!j) continue;
    Eigen::Vector2d p, q;
    span_points(*j, extent, p, q);
    bool ok = true;
    if (floor_mid) ok = clip_segment(p, q, floor_mid->head<2>(), floor_mid->z());
    if (ok && ceil_mid) ok = clip_segment(p, q, -ceil_mid->head<2>(), -ceil_mid->z());
    if (ok && clip_to_image(p, q, width, height) && (p - q).norm() > 0.5) out.emplace_back(p, q);
  }
  return out;
}

namespace {

struct Candidate {
  Eigen::Vector3d line;
  double strength = 0.0;
  Eigen::Vector2d b0, b1;  // extreme in-image points, for deduplication
  std::vector<LineSeg2> support;
};

bool segment_passes_edge_filter(const LineSeg2& seg, const EdgeMap& em,
                                const LayoutOptions& opts) {
  const int n = std::max(2, static_cast<int>(std::ceil(seg.length)));
  int hits = 0;
  for (int i = 0; i <= n; ++i) {
    const Eigen::Vector2d p = seg.p0 + (static_cast<double>(i) / n) * (seg.q0 - seg.p0);
    const int x = static_cast<int>(std::lround(p.x()));
    const int y = static_cast<int>(std::lround(p.y()));
    if (x >= 0 && x < em.width && y >= 0 && y < em.height &&
        em.at(x, y) >= opts.intensity_thresh)
      ++hits;
  }
  return hits >= opts.coverage_frac * (n + 1);
}

bool in_image_span(const Eigen::Vector3d& line, int w, int h, Eigen::Vector2d& b0,
                   Eigen::Vector2d& b1) {
  Eigen::Vector2d p, q;
  span_points(line, 4.0 * (w + h), p, q);
  if (!clip_to_image(p, q, w, h) || (p - q).norm() < 2.0) return false;
  b0 = p;
  b1 = q;
  return true;
}

void add_candidate(std::vector<Candidate>& cands, const Eigen::Vector3d& line, double strength,
                   const std::vector<LineSeg2>& support, int w, int h) {
  Eigen::Vector2d b0, b1;
  if (!in_image_span(line, w, h, b0, b1)) return;
  for (auto& c : cands) {
    const bool same = ((c.b0 - b0).norm() < 1.5 && (c.b1 - b1).norm() < 1.5) ||
                      ((c.b0 - b1).norm() < 1.5 && (c.b1 - b0).norm() < 1.5);
    if (same) {
      c.strength += strength;
      c.support.insert(c.support.end(), support.begin(), support.end());
      return;
    }
  }
  Candidate c;
  c.line = line;
  c.strength = strength;
  c.b0 = b0;
  c.b1 = b1;
  c.support = support;
  cands.push_back(std::move(c));
}

Eigen::Vector3d snap_through_vp(const HPoint2& vp, const Eigen::Vector2d& point) {
  const Eigen::Vector3d l = vp.cross(homogeneous(point));
  return normalized_line(l);
}

double segment_gap(const LineSeg2& seg, const Eigen::Vector2d& p) {
  const Eigen::Vector2d d = seg.q0 - seg.p0;
  const double t = std::clamp(d.dot(p - seg.p0) / d.squaredNorm(), 0.0, 1.0);
  return (seg.p0 + t * d - p).norm();
}

void sort_and_cap(std::vector<Candidate>& cands, int cap) {
  std::stable_sort(cands.begin(), cands.end(),
                   [](const Candidate& a, const Candidate& b) { return a.strength > b.strength; });
  if (static_cast<int>(cands.size()) > cap) cands.resize(static_cast<std::size_t>(cap));
}

struct CandidateSets {
  std::array<std::vector<Candidate>, 2> floor;  // per horizontal axis
  std::array<std::vector<Candidate>, 2> ceil;
  std::vector<Candidate> junction;
};

CandidateSets build_candidates(const std::array<VpCluster, 3>& clusters,
                               const std::vector<std::vector<LineSeg2>>& usable, int w, int h,
                               const LayoutOptions& opts) {
  CandidateSets sets;
  const HPoint2& vp_v = clusters[2].vp;

  // Horizon and the floor-side sign: the vertical vanishing point lies on the
  // floor side for a camera that is not upside down.
  Eigen::Vector3d horizon;
  double floor_sign = 1.0;
  bool have_horizon = false;
  {
    const Eigen::Vector3d cross = clusters[0].vp.cross(clusters[1].vp);
    if (cross.head<2>().norm() > 1e-12) {
      horizon = normalized_line(cross);
      have_horizon = true;
      Eigen::Vector2d probe;
      if (!at_infinity(vp_v)) {
        probe = pixel_of(vp_v);
      } else {
        Eigen::Vector2d dir = vp_v.head<2>().normalized();
        if (dir.y() < 0) dir = -dir;
        probe = Eigen::Vector2d(0.5 * w, 0.5 * h) + 1e5 * dir;
      }
      floor_sign = eval(horizon, probe.x(), probe.y()) >= 0 ? 1.0 : -1.0;
    }
  }
  auto is_floor_side = [&](const Eigen::Vector2d& p) {
    if (!have_horizon) return p.y() > 0.5 * h;
    return floor_sign * eval(horizon, p.x(), p.y()) > 0;
  };

  auto add_horizontal = [&](int axis, const Eigen::Vector3d& line, double strength,
                            const std::vector<LineSeg2>& support) {
    Eigen::Vector2d b0, b1;
    if (!in_image_span(line, w, h, b0, b1)) return;
    auto& dst = is_floor_side(0.5 * (b0 + b1)) ? sets.floor[axis] : sets.ceil[axis];
    add_candidate(dst, line, strength, support, w, h);
  };

  // Direct candidates: cluster members snapped exactly through their vp.
  for (int axis = 0; axis < 2; ++axis)
    for (const auto& seg : usable[axis])
      add_horizontal(axis, snap_through_vp(clusters[axis].vp, seg.midpoint()), seg.length, {seg});
  for (const auto& seg : usable[2])
    add_candidate(sets.junction, snap_through_vp(vp_v, seg.midpoint()), seg.length, {seg}, w, h);

  // Inferred candidates: connect a vanishing point with corner intersections
  // of segments from the two other clusters.
  auto corner_pairs = [&](int ca, int cb, auto&& emit) {
    const auto& sa = usable[ca];
    const auto& sb = usable[cb];
    const int na = std::min<int>(12, static_cast<int>(sa.size()));
    const int nb = std::min<int>(12, static_cast<int>(sb.size()));
    for (int i = 0; i < na; ++i)
      for (int j = 0; j < nb; ++j) {
        const Eigen::Vector3d q = sa[i].line.cross(sb[j].line);
        if (std::abs(q.z()) < 1e-9 * q.head<2>().norm()) continue;
        const Eigen::Vector2d p = q.head<2>() / q.z();
        if (segment_gap(sa[i], p) > opts.corner_attach_px ||
            segment_gap(sb[j], p) > opts.corner_attach_px)
          continue;
        emit(p, 0.5 * std::min(sa[i].length, sb[j].length),
             std::vector<LineSeg2>{sa[i], sb[j]});
      }
  };
  for (int axis = 0; axis < 2; ++axis) {
    corner_pairs(1 - axis, 2, [&](const Eigen::Vector2d& p, double s,
                                  const std::vector<LineSeg2>& sup) {
      add_horizontal(axis, snap_through_vp(clusters[axis].vp, p), s, sup);
    });
  }
  corner_pairs(0, 1, [&](const Eigen::Vector2d& p, double s, const std::vector<LineSeg2>& sup) {
    add_candidate(sets.junction, snap_through_vp(vp_v, p), s, sup, w, h);
  });

  for (int axis = 0; axis < 2; ++axis) {
    sort_and_cap(sets.floor[axis], opts.max_lines_per_role);
    sort_and_cap(sets.ceil[axis], opts.max_lines_per_role);
  }
  sort_and_cap(sets.junction, opts.max_lines_per_role);
  return sets;
}

/// Derive per-strip lines and run geometric sanity checks. Returns false for
/// combinations that do not produce a valid partition.
bool finalize_proposal(LayoutProposal& p, int w, int h) {
  if (!p.floor_mid && !p.ceil_mid) return false;

  if (p.junction_left) {
    auto j = orient_junction(*p.junction_left);
    if (!j) return false;
    p.junction_left = *j;
  }
  if (p.junction_right) {
    auto j = orient_junction(*p.junction_right);
    if (!j) return false;
    p.junction_right = *j;
  }
  if (p.junction_left && p.junction_right) {
    if (x_at(*p.junction_left, 0) >= x_at(*p.junction_right, 0) - 2.0) return false;
    if (x_at(*p.junction_left, h - 1.0) >= x_at(*p.junction_right, h - 1.0) - 2.0) return false;
  }
  if (p.floor_mid) {
    auto l = orient_horizontal(*p.floor_mid);
    if (!l) return false;
    p.floor_mid = *l;
  }
  if (p.ceil_mid) {
    auto l = orient_horizontal(*p.ceil_mid);
    if (!l) return false;
    p.ceil_mid = *l;
  }

  p.floor_lines = {std::nullopt, p.floor_mid, std::nullopt};
  p.ceil_lines = {std::nullopt, p.ceil_mid, std::nullopt};

  const HPoint2& vp_other = p.vps[1 - p.mid_axis];
  auto derive_side = [&](const std::optional<Eigen::Vector3d>& mid,
                         const Eigen::Vector3d& junction,
                         std::optional<Eigen::Vector3d>& out) -> bool {
    if (!mid) {
      out = std::nullopt;
      return true;
    }
    const Eigen::Vector3d corner = mid->cross(junction);
    if (std::abs(corner.z()) < 1e-9 * corner.head<2>().norm()) return false;
    auto side = orient_horizontal(vp_other.cross(corner / corner.z()));
    if (!side) return false;
    out = *side;
    return true;
  };
  if (p.junction_left) {
    if (!derive_side(p.floor_mid, *p.junction_left, p.floor_lines[0])) return false;
    if (!derive_side(p.ceil_mid, *p.junction_left, p.ceil_lines[0])) return false;
  }
  if (p.junction_right) {
    if (!derive_side(p.floor_mid, *p.junction_right, p.floor_lines[2])) return false;
    if (!derive_side(p.ceil_mid, *p.junction_right, p.ceil_lines[2])) return false;
  }

  // Floor must stay below the ceiling within every present strip.
  const std::array<bool, 3> strip_present = {p.junction_left.has_value(), true,
                                             p.junction_right.has_value()};
  for (int s = 0; s < 3; ++s) {
    if (!strip_present[s] || !p.floor_lines[s] || !p.ceil_lines[s]) continue;
    double x0 = 0, x1 = w - 1.0;
    if (s == 0 && p.junction_left) x1 = std::min(x1, x_at(*p.junction_left, 0.5 * h));
    if (s == 1 && p.junction_left) x0 = std::max(x0, x_at(*p.junction_left, 0.5 * h));
    if (s == 1 && p.junction_right) x1 = std::min(x1, x_at(*p.junction_right, 0.5 * h));
    if (s == 2 && p.junction_right) x0 = std::max(x0, x_at(*p.junction_right, 0.5 * h));
    if (x0 > x1) continue;
    const double xs = 0.5 * (x0 + x1);
    if (y_at(*p.floor_lines[s], xs) <= y_at(*p.ceil_lines[s], xs) + 1.0) return false;
  }
  return true;
}

void build_polygons(LayoutProposal& p, int w, int h) {
  p.polygons.clear();
  using Poly = std::vector<Eigen::Vector2d>;
  const Poly rect = {{-0.5, -0.5}, {w - 0.5, -0.5}, {w - 0.5, h - 0.5}, {-0.5, h - 0.5}};

  const std::array<bool, 3> strip_present = {p.junction_left.has_value(), true,
                                             p.junction_right.has_value()};
  auto clip_line = [](Poly poly, const Eigen::Vector3d& l, double sign) {
    // Keep sign * eval(l) <= 0.
    return clip_halfplane<double>(poly, sign * l.head<2>(), -sign * l.z());
  };
  for (int s = 0; s < 3; ++s) {
    if (!strip_present[s]) continue;
    Poly strip = rect;
    if (s == 0) strip = clip_line(strip, *p.junction_left, 1.0);
    if (s == 1 && p.junction_left) strip = clip_line(strip, *p.junction_left, -1.0);
    if (s == 1 && p.junction_right) strip = clip_line(strip, *p.junction_right, 1.0);
    if (s == 2) strip = clip_line(strip, *p.junction_right, -1.0);
    if (strip.size() < 3) continue;

    auto emit = [&](RegionLabel label, Poly poly) {
      if (poly.size() >= 3 && std::abs(polygon_area<double>(poly)) > 0.25)
        p.polygons.push_back({label, std::move(poly)});
    };
    if (p.floor_lines[s]) emit(RegionLabel::Floor, clip_line(strip, *p.floor_lines[s], -1.0));
    if (p.ceil_lines[s]) emit(RegionLabel::Ceiling, clip_line(strip, *p.ceil_lines[s], 1.0));
    Poly wall = strip;
    if (p.floor_lines[s]) wall = clip_line(wall, *p.floor_lines[s], 1.0);
    if (p.ceil_lines[s]) wall = clip_line(wall, *p.ceil_lines[s], -1.0);
    emit(s == 0 ? RegionLabel::WallLeft : (s == 1 ? RegionLabel::WallMid : RegionLabel::WallRight),
         std::move(wall));
  }
}

}  // namespace

std::vector<LayoutProposal> generate_proposals(const std::array<VpCluster, 3>& clusters,
                                               const EdgeMap& edge_map,
                                               const LayoutOptions& opts) {
  if (edge_map.width <= 0 || edge_map.height <= 0)
    fail(Errc::NoProposal, "generate_proposals: empty edge map");
  const int w = edge_map.width, h = edge_map.height;

  // Segments not located in the high-intensity area of the edge map are
  // removed before any combination.
  std::vector<std::vector<LineSeg2>> usable(3);
  std::size_t n_usable = 0;
  for (int i = 0; i < 3; ++i) {
    for (const auto& seg : clusters[i].members)
      if (segment_passes_edge_filter(seg, edge_map, opts)) usable[i].push_back(seg);
    std::stable_sort(usable[i].begin(), usable[i].end(),
                     [](const LineSeg2& a, const LineSeg2& b) { return a.length > b.length; });
    n_usable += usable[i].size();
  }
  if (n_usable < 2) fail(Errc::NoProposal, "generate_proposals: fewer than 2 usable lines");

  const std::array<HPoint2, 3> vps = {clusters[0].vp, clusters[1].vp, clusters[2].vp};
  const CandidateSets sets = build_candidates(clusters, usable, w, h, opts);

  std::vector<LayoutProposal> proposals;
  std::unordered_set<std::string> seen;

  auto try_combo = [&](int mid_axis, const Candidate* f, const Candidate* c, const Candidate* jl,
                       const Candidate* jr) {
    LayoutProposal p;
    p.vps = vps;
    p.mid_axis = mid_axis;
    if (f) p.floor_mid = f->line;
    if (c) p.ceil_mid = c->line;
    if (jl) p.junction_left = jl->line;
    if (jr) p.junction_right = jr->line;
    if (!finalize_proposal(p, w, h)) return;

    const auto sig = p.signature(w, h);
    std::string key(sig.begin(), sig.end());
    if (!seen.insert(std::move(key)).second) return;

    for (const Candidate* cand : {f, c, jl, jr}) {
      if (!cand) continue;
      p.strength += cand->strength;
      p.generating.insert(p.generating.end(), cand->support.begin(), cand->support.end());
    }
    build_polygons(p, w, h);
    proposals.push_back(std::move(p));
  };

  for (int m = 0; m < 2; ++m) {
    const auto& floors = sets.floor[m];
    const auto& ceils = sets.ceil[m];
    const auto& js = sets.junction;
    const int nf = static_cast<int>(floors.size());
    const int nc = static_cast<int>(ceils.size());
    const int nj = static_cast<int>(js.size());
    for (int fi = -1; fi < nf; ++fi)
      for (int ci = -1; ci < nc; ++ci) {
        if (fi < 0 && ci < 0) continue;
        const Candidate* f = fi >= 0 ? &floors[fi] : nullptr;
        const Candidate* c = ci >= 0 ? &ceils[ci] : nullptr;
        for (int li = -1; li < nj; ++li)
          for (int ri = -1; ri < nj; ++ri) {
            if (li >= 0 && li == ri) continue;
            try_combo(m, f, c, li >= 0 ? &js[li] : nullptr, ri >= 0 ? &js[ri] : nullptr);
          }
      }
  }
  if (proposals.empty()) fail(Errc::NoProposal, "generate_proposals: no valid combination");

  std::stable_sort(proposals.begin(), proposals.end(),
                   [](const LayoutProposal& a, const LayoutProposal& b) {
                     return a.strength > b.strength;
                   });
  if (static_cast<int>(proposals.size()) > opts.max_proposals)
    proposals.resize(static_cast<std::size_t>(opts.max_proposals));
  return proposals;
}

double score_proposal(LayoutProposal& p, const EdgeMap& edge_map, const LayoutOptions& opts) {
  const int w = edge_map.width, h = edge_map.height;
  if (w <= 0 || h <= 0) fail(Errc::DimensionMismatch, "score_proposal: empty edge map");

  Mask boundary(w, h);
  for (const auto& [a, b] : p.boundary_segments(w, h)) {
    const double len = (b - a).norm();
    const int n = std::max(1, static_cast<int>(std::ceil(len * 2.0)));
    for (int i = 0; i <= n; ++i) {
      const Eigen::Vector2d q = a + (static_cast<double>(i) / n) * (b - a);
      const int x = static_cast<int>(std::lround(q.x()));
      const int y = static_cast<int>(std::lround(q.y()));
      if (x >= 0 && x < w && y >= 0 && y < h) boundary.set(x, y);
    }
  }
  const std::size_t boundary_len = boundary.count();
  if (boundary_len == 0) {
    p.score = 0.0;
    p.raw_score = 0.0;
    return 0.0;
  }
  const Mask band = boundary.dilated(static_cast<int>(opts.band_px));
  double sum = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x)
      if (band.get(x, y)) sum += edge_map.at(x, y);
  p.raw_score = sum;
  p.score = sum / static_cast<double>(boundary_len);
  return p.score;
}

void rank_proposals(std::vector<LayoutProposal>& proposals, int width, int height) {
  std::stable_sort(proposals.begin(), proposals.end(),
                   [&](const LayoutProposal& a, const LayoutProposal& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.signature(width, height) < b.signature(width, height);
                   });
}

CuboidFit fit_cuboid(const LayoutProposal& best, const CameraModel& cam, int width, int height,
                     const LayoutOptions& opts) {
  if (!best.floor_mid)
    fail(Errc::UnderConstrained, "fit_cuboid: no floor-wall junction visible");

  CuboidFit fit;
  const double H = opts.room_height;
  const int m = best.mid_axis;  // axis along the mid wall
  const int o = 1 - m;          // mid-wall normal axis

  // An image line l corresponds to the plane through the camera center with
  // room-frame normal R^T K^T l.
  auto plane_normal = [&](const Eigen::Vector3d& l) -> Eigen::Vector3d {
    return cam.R.transpose() * (cam.K().transpose() * l);
  };

  const Eigen::Vector3d nf = plane_normal(*best.floor_mid);
  if (std::abs(nf[o]) < 1e-9) fail(Errc::UnderConstrained, "fit_cuboid: degenerate floor edge");
  const double alpha = nf[2] / nf[o];

  double h_cam;
  if (best.ceil_mid) {
    const Eigen::Vector3d nc = plane_normal(*best.ceil_mid);
    if (std::abs(nc[o]) < 1e-9) fail(Errc::UnderConstrained, "fit_cuboid: degenerate ceiling edge");
    const double beta = nc[2] / nc[o];
    if (std::abs(beta - alpha) < 1e-12)
      fail(Errc::UnderConstrained, "fit_cuboid: parallel floor/ceiling planes");
    h_cam = beta * H / (beta - alpha);
  } else {
    h_cam = opts.default_camera_height;
    fit.height_defaulted = true;
  }
  if (!(h_cam > 0.05 && h_cam < H - 0.05))
    fail(Errc::UnderConstrained, "fit_cuboid: implausible camera height");
  const double w_far = alpha * h_cam;
  if (std::abs(w_far) < 0.05)
    fail(Errc::UnderConstrained, "fit_cuboid: far wall at the camera plane");

  // Side wall positions along axis m from the junction lines.
  std::vector<double> wall_a;
  for (const auto& j : {best.junction_left, best.junction_right}) {
    if (!j) continue;
    const Eigen::Vector3d nj = plane_normal(*j);
    if (std::abs(nj[m]) < 1e-9) continue;
    wall_a.push_back((nj[2] * h_cam - nj[o] * w_far) / nj[m]);
  }
  double a_lo, a_hi;
  if (wall_a.size() == 2) {
    a_lo = std::min(wall_a[0], wall_a[1]);
    a_hi = std::max(wall_a[0], wall_a[1]);
  } else {
    // Clamp unseen sides to the view frustum at the far wall and the floor.
    CameraModel frustum_cam = cam;
    frustum_cam.h_cam = h_cam;
    std::vector<double> a_coords;
    const Eigen::Vector2d corners[4] = {{-0.5, -0.5},
                                        {width - 0.5, -0.5},
                                        {-0.5, height - 0.5},
                                        {width - 0.5, height - 0.5}};
    for (const auto& px : corners) {
      const Eigen::Vector3d d = backproject_ray(frustum_cam, px);
      if (std::abs(d[o]) > 1e-9) {
        const double t = w_far / d[o];
        if (t > 0) a_coords.push_back(t * d[m]);
      }
      if (d.z() < -1e-9) {
        const double t = -h_cam / d.z();
        a_coords.push_back(t * d[m]);
      }
    }
    if (a_coords.empty()) fail(Errc::UnderConstrained, "fit_cuboid: no usable view extent");
    const auto [lo_it, hi_it] = std::minmax_element(a_coords.begin(), a_coords.end());
    a_lo = *lo_it;
    a_hi = *hi_it;
    if (wall_a.size() == 1) {
      // One junction pins one side; decide which by comparing against the
      // frustum midpoint.
      const double mid = 0.5 * (a_lo + a_hi);
      if (wall_a[0] < mid)
        a_lo = wall_a[0];
      else
        a_hi = wall_a[0];
    }
    fit.width_lower_bound = true;
  }
  if (a_hi - a_lo < 0.1) fail(Errc::UnderConstrained, "fit_cuboid: degenerate room width");

  // The wall behind the camera is never visible; place it just behind.
  const double near_o = -std::copysign(opts.near_wall_margin, w_far);
  const double o_lo = std::min(near_o, w_far);
  const double o_hi = std::max(near_o, w_far);
  fit.depth_lower_bound = true;

  Eigen::Vector3d lo = Eigen::Vector3d::Zero(), hi = Eigen::Vector3d::Zero();
  lo[m] = a_lo;
  hi[m] = a_hi;
  lo[o] = o_lo;
  hi[o] = o_hi;
  lo[2] = 0.0;
  hi[2] = H;
  fit.layout.corner = lo;
  fit.layout.sizes = hi - lo;
  fit.layout.yaw = 0.0;
  fit.camera_height = h_cam;

  // Reprojection residual: generating segment endpoints against the fitted
  // cuboid's corresponding boundary lines.
  CameraModel fitted_cam = cam;
  fitted_cam.h_cam = h_cam;
  auto image_line = [&](const Eigen::Vector3d& P1, const Eigen::Vector3d& P2) {
    const Eigen::Vector3d x1 = fitted_cam.K() * (fitted_cam.R * (P1 - fitted_cam.position()));
    const Eigen::Vector3d x2 = fitted_cam.K() * (fitted_cam.R * (P2 - fitted_cam.position()));
    return normalized_line(Eigen::Vector3d(x1.cross(x2)));
  };
  auto room_pt = [&](double am, double ao, double z) {
    Eigen::Vector3d p;
    p[m] = am;
    p[o] = ao;
    p[2] = z;
    return p;
  };
  std::vector<Eigen::Vector3d> fitted_lines;
  fitted_lines.push_back(image_line(room_pt(a_lo, w_far, 0), room_pt(a_hi, w_far, 0)));
  if (best.ceil_mid)
    fitted_lines.push_back(image_line(room_pt(a_lo, w_far, H), room_pt(a_hi, w_far, H)));
  for (double wa : wall_a)
    fitted_lines.push_back(image_line(room_pt(wa, w_far, 0), room_pt(wa, w_far, H)));
  double sum = 0.0;
  int n = 0;
  for (const auto& seg : best.generating) {
    for (const Eigen::Vector2d& e : {seg.p0, seg.q0}) {
      double dmin = std::numeric_limits<double>::infinity();
      for (const auto& l : fitted_lines) dmin = std::min(dmin, std::abs(eval(l, e.x(), e.y())));
      if (std::isfinite(dmin)) {
        sum += dmin;
        ++n;
      }
    }
  }
  fit.reproj_residual = n > 0 ? sum / n : 0.0;
  return fit;
}

}  // namespace monoscene
