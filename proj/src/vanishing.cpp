#include "monoscene/vanishing.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace monoscene {

double vp_alignment_angle_deg(const LineSeg2& seg, const HPoint2& vp) {
  Eigen::Vector2d to_vp;
  if (at_infinity(vp)) {
    to_vp = vp.head<2>();
  } else {
    to_vp = pixel_of(vp) - seg.midpoint();
  }
  const double n = to_vp.norm();
  if (n == 0.0) return 0.0;  // midpoint at the vp: any direction is aligned
  const double c = std::abs(seg.direction().dot(to_vp) / n);
  return std::acos(std::clamp(c, 0.0, 1.0)) * 180.0 / M_PI;
}

ClusterResult cluster_lines(const std::vector<LineSeg2>& lines, const std::array<HPoint2, 3>& vps,
                            double angle_thresh_deg) {
  ClusterResult out;
  for (int i = 0; i < 3; ++i) out.clusters[i].vp = vps[i];
  for (const auto& seg : lines) {
    int best = -1;
    double best_angle = angle_thresh_deg;
    for (int i = 0; i < 3; ++i) {
      const double a = vp_alignment_angle_deg(seg, vps[i]);
      if (a <= best_angle) {
        best_angle = a;
        best = i;
      }
    }
    if (best >= 0)
      out.clusters[best].members.push_back(seg);
    else
      out.outliers.push_back(seg);
  }
  return out;
}

double cluster_residual(const VpCluster& cluster, const HPoint2& vp) {
  const HPoint2 v = vp.normalized();
  double sum = 0.0;
  for (const auto& seg : cluster.members) {
    const double e = std::sqrt(seg.length) * seg.line.dot(v);
    sum += e * e;
  }
  return sum;
}

HPoint2 refit_vp(const VpCluster& cluster) {
  if (cluster.size() < 2) fail(Errc::DegenerateCluster, "refit_vp: fewer than 2 members");
  Eigen::Matrix3d m = Eigen::Matrix3d::Zero();
  for (const auto& seg : cluster.members) {
    m.noalias() += seg.length * seg.line * seg.line.transpose();
  }
  Eigen::SelfAdjointEigenSolver<Eigen::Matrix3d> es(m);
  const Eigen::Vector3d evals = es.eigenvalues();  // ascending
  // Rank < 2 means all rows are the same line: any point on it solves the
  // system and no vanishing point is identified.
  if (evals(1) <= 1e-12 * std::max(evals(2), 1.0))
    fail(Errc::DegenerateCluster, "refit_vp: cluster spans a single line");
  HPoint2 vp = es.eigenvectors().col(0);
  if (vp.z() < 0.0) vp = -vp;  // canonical sign
  return vp;
}

namespace {

Eigen::Vector3d vp_direction(const HPoint2& vp, const Eigen::Vector2d& c, double f) {
  return Eigen::Vector3d(vp.x() - c.x() * vp.z(), vp.y() - c.y() * vp.z(), f * vp.z())
      .normalized();
}

double mean_point_line_distance(const ClusterResult& cr, const std::array<HPoint2, 3>& vps) {
  double sum = 0.0;
  int n = 0;
  for (int i = 0; i < 3; ++i) {
    const HPoint2& vp = vps[i];
    const bool inf = at_infinity(vp);
    const HPoint2 v = inf ? HPoint2(vp.normalized()) : HPoint2(vp / vp.z());
    for (const auto& seg : cr.clusters[i].members) {
      sum += std::abs(seg.line.dot(v));
      ++n;
    }
  }
  return n > 0 ? sum / n : 0.0;
}

}  // namespace

CameraModel camera_from_vps(const std::array<HPoint2, 3>& vps, int width, int height) {
  CameraModel cam;
  cam.c = Eigen::Vector2d(0.5 * (width - 1), 0.5 * (height - 1));

  std::array<bool, 3> finite{};
  std::array<Eigen::Vector2d, 3> px{};
  int n_finite = 0;
  for (int i = 0; i < 3; ++i) {
    finite[i] = !at_infinity(vps[i], 1e-9);
    if (finite[i]) {
      px[i] = pixel_of(vps[i]);
      ++n_finite;
    }
  }
  if (n_finite < 2) fail(Errc::NoFocalSolution, "camera_from_vps: fewer than two finite vps");

  // (v_i - c) . (v_j - c) + f^2 = 0 for each orthogonal finite pair.
  double f2_sum = 0.0;
  int f2_n = 0;
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j) {
      if (!finite[i] || !finite[j]) continue;
      const double dot = (px[i] - cam.c).dot(px[j] - cam.c);
      if (dot < 0.0) {
        f2_sum += -dot;
        ++f2_n;
      }
    }
  if (f2_n == 0) fail(Errc::NoFocalSolution, "camera_from_vps: no finite pair with negative dot");
  cam.f = std::sqrt(f2_sum / f2_n);

  std::array<Eigen::Vector3d, 3> dirs;
  for (int i = 0; i < 3; ++i) dirs[i] = vp_direction(vps[i], cam.c, cam.f);

  // The vertical axis is the direction closest to the image up/down axis.
  int kv = 0;
  for (int i = 1; i < 3; ++i)
    if (std::abs(dirs[i].y()) > std::abs(dirs[kv].y())) kv = i;
  Eigen::Vector3d z = dirs[kv];
  if (z.y() > 0.0) z = -z;  // camera y points down; room up maps to negative y

  const int ka = (kv + 1) % 3;
  Eigen::Vector3d x = dirs[ka] - dirs[ka].dot(z) * z;
  const double xn = x.norm();
  if (xn < 1e-12) fail(Errc::NoFocalSolution, "camera_from_vps: collinear directions");
  x /= xn;
  if (x.z() < 0.0) x = -x;  // horizontal axis points into the scene
  const Eigen::Vector3d y = z.cross(x);

  cam.R.col(0) = x;
  cam.R.col(1) = y;
  cam.R.col(2) = z;
  return cam;
}

namespace {

struct SeedCandidate {
  HPoint2 vp;
  double score = 0.0;
  std::vector<bool> support;  // lines within the cluster threshold
};

/// Pairwise intersections of the longest segments, scored by supported line
/// length, then non-max suppressed on support-set overlap so the shortlist
/// holds genuinely distinct vanishing points.
std::vector<SeedCandidate> seed_candidates(const std::vector<LineSeg2>& lines,
                                           const CalibrationOptions& opts) {
  std::vector<int> order(lines.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](int a, int b) { return lines[a].length > lines[b].length; });
  const int top = std::min<int>(opts.seed_segment_count, static_cast<int>(order.size()));

  std::vector<SeedCandidate> cands;
  for (int a = 0; a < top; ++a)
    for (int b = a + 1; b < top; ++b) {
      HPoint2 p = lines[order[a]].line.cross(lines[order[b]].line);
      const double n = p.norm();
      if (n < 1e-12) continue;
      p /= n;
      if (p.z() < 0.0) p = -p;
      SeedCandidate c;
      c.vp = p;
      c.support.assign(lines.size(), false);
      // A tighter window than the cluster threshold, with support weighted
      // by alignment quality: accidental point clusters attract lines near
      // the window edge and score little, exact vanishing points keep the
      // full segment length.
      const double support_deg = std::min(2.0, opts.angle_thresh_deg);
      for (std::size_t k = 0; k < lines.size(); ++k) {
        const double a = vp_alignment_angle_deg(lines[k], p);
        if (a > support_deg) continue;
        c.support[k] = true;
        const double w = 1.0 - a / support_deg;
        c.score += lines[k].length * w * w;
      }
      if (c.score <= 0.0) continue;
      cands.push_back(std::move(c));
    }

  std::stable_sort(cands.begin(), cands.end(),
                   [](const SeedCandidate& a, const SeedCandidate& b) { return a.score > b.score; });
  std::vector<SeedCandidate> kept;
  for (auto& c : cands) {
    bool duplicate = false;
    for (const auto& k : kept) {
      std::size_t inter = 0, uni = 0;
      for (std::size_t i = 0; i < lines.size(); ++i) {
        inter += c.support[i] && k.support[i];
        uni += c.support[i] || k.support[i];
      }
      if (uni > 0 && static_cast<double>(inter) / uni > 0.6) {
        duplicate = true;
        break;
      }
    }
    if (!duplicate) {
      kept.push_back(std::move(c));
      if (static_cast<int>(kept.size()) >= opts.seed_candidate_count) break;
    }
  }
  return kept;
}

struct SeedTriplet {
  std::array<HPoint2, 3> vps;
  int count = 0;
  double length = 0.0;
  double residual = 0.0;
  std::array<int, 3> index{};
};

/// Score triplets by the count and total length of the segments they cross
/// through; ties break by lower summed residual, then lexicographic index.
std::vector<SeedTriplet> scored_triplets(const std::vector<LineSeg2>& lines,
                                         const std::vector<SeedCandidate>& cands, int width,
                                         int height, const CalibrationOptions& opts) {
  std::vector<SeedTriplet> out;
  const int n = static_cast<int>(cands.size());
  for (int i = 0; i < n; ++i)
    for (int j = i + 1; j < n; ++j)
      for (int k = j + 1; k < n; ++k) {
        SeedTriplet t;
        t.vps = {cands[i].vp, cands[j].vp, cands[k].vp};
        t.index = {i, j, k};
        CameraModel cam;
        try {
          cam = camera_from_vps(t.vps, width, height);
        } catch (const Error& e) {
          if (std::getenv("MONOSCENE_DEBUG_SEEDS") && i < 3 && j < 3)
            std::fprintf(stderr, "triplet (%d,%d,%d) camera: %s\n", i, j, k, e.what());
          continue;  // no focal or degenerate triplet
        }
        // The raw directions must already be close to mutually orthogonal;
        // otherwise the triplet mixes incompatible frames.
        bool consistent = true;
        std::array<Eigen::Vector3d, 3> dirs;
        for (int d = 0; d < 3; ++d) dirs[d] = vp_direction(t.vps[d], cam.c, cam.f);
        for (int a = 0; a < 3 && consistent; ++a)
          for (int b = a + 1; b < 3 && consistent; ++b)
            consistent = std::abs(dirs[a].dot(dirs[b])) < 0.35;
        if (!consistent) {
          if (std::getenv("MONOSCENE_DEBUG_SEEDS") && i < 3 && j < 3)
            std::fprintf(stderr, "triplet (%d,%d,%d) inconsistent dirs\n", i, j, k);
          continue;
        }
        auto cr = cluster_lines(lines, t.vps, opts.angle_thresh_deg);
        int nonempty = 0;
        for (int c = 0; c < 3; ++c) {
          if (cr.clusters[c].size() > 0) ++nonempty;
          t.count += cr.clusters[c].size();
          for (const auto& seg : cr.clusters[c].members) t.length += seg.length;
          t.residual += cluster_residual(cr.clusters[c], cr.clusters[c].vp);
        }
        if (nonempty < 2) continue;
        out.push_back(t);
      }
  // Longer segments contribute more: rank by supported length, then count.
  std::stable_sort(out.begin(), out.end(), [](const SeedTriplet& a, const SeedTriplet& b) {
    if (a.length != b.length) return a.length > b.length;
    if (a.count != b.count) return a.count > b.count;
    if (a.residual != b.residual) return a.residual < b.residual;
    return a.index < b.index;
  });
  return out;
}

struct IterationState {
  std::array<HPoint2, 3> vps;
  CameraModel camera;
  double residual = 0.0;
};

bool run_iterations(const std::vector<LineSeg2>& lines, int width, int height,
                    const std::array<HPoint2, 3>& seed, const CalibrationOptions& opts,
                    CalibrationResult& result) {
  IterationState state;
  state.vps = seed;
  state.residual = std::numeric_limits<double>::infinity();
  bool have_camera = false;
  int accepted = 0;
  int best_assigned = 0;

  for (int it = 0; it < opts.max_iterations; ++it) {
    auto cr = cluster_lines(lines, state.vps, opts.angle_thresh_deg);

    std::array<HPoint2, 3> refit = state.vps;
    for (int i = 0; i < 3; ++i) {
      if (cr.clusters[i].size() < 2) continue;
      try {
        refit[i] = refit_vp(cr.clusters[i]);
      } catch (const Error&) {
        // keep the previous estimate for a degenerate cluster
      }
    }

    CameraModel cam;
    try {
      cam = camera_from_vps(refit, width, height);
    } catch (const Error&) {
      return false;
    }
    std::array<HPoint2, 3> ortho;
    for (int i = 0; i < 3; ++i) ortho[i] = vanishing_point_of_axis(cam, i);

    auto cr2 = cluster_lines(lines, ortho, opts.angle_thresh_deg);
    const double res = mean_point_line_distance(cr2, ortho);
    int assigned = 0, nonempty = 0;
    for (int i = 0; i < 3; ++i) {
      assigned += cr2.clusters[i].size();
      nonempty += cr2.clusters[i].size() > 0 ? 1 : 0;
    }
    // A collapsing assignment can fake a low residual; never accept it.
    if (nonempty < 2 || assigned < 6) {
      if (have_camera) break;
      return false;
    }
    if (have_camera &&
        (res > state.residual + 1e-12 || assigned < best_assigned / 2))
      break;  // keep the accepted state
    best_assigned = std::max(best_assigned, assigned);

    double moved = 0.0;
    for (int i = 0; i < 3; ++i)
      moved = std::max(moved, 1.0 - std::abs(state.vps[i].normalized().dot(ortho[i].normalized())));
    const double improvement = state.residual - res;
    state.vps = ortho;
    state.camera = cam;
    state.residual = res;
    have_camera = true;
    ++accepted;
    if (moved < 1e-15 || improvement < opts.residual_tol) break;
  }
  if (!have_camera) return false;

  result.vps = state.vps;
  result.camera = state.camera;
  result.residual = state.residual;
  result.iterations = accepted;
  return true;
}

}  // namespace

CalibrationResult joint_calibrate(const std::vector<LineSeg2>& lines, int width, int height,
                                  const std::optional<std::array<HPoint2, 3>>& init,
                                  const CalibrationOptions& opts) {
  if (lines.size() < 6) fail(Errc::CalibrationFailed, "joint_calibrate: fewer than 6 lines");

  CalibrationResult result;
  if (init) {
    if (run_iterations(lines, width, height, *init, opts, result)) return result;
    fail(Errc::CalibrationFailed, "joint_calibrate: iteration from the given init failed");
  }

  const auto cands = seed_candidates(lines, opts);
  const auto triplets = scored_triplets(lines, cands, width, height, opts);
  if (std::getenv("MONOSCENE_DEBUG_SEEDS")) {
    for (std::size_t i = 0; i < cands.size(); ++i)
      std::fprintf(stderr, "cand %zu score %.1f vp (%.1f,%.1f,%.4f)\n", i, cands[i].score,
                   cands[i].vp.x(), cands[i].vp.y(), cands[i].vp.z());
    for (std::size_t i = 0; i < std::min<std::size_t>(8, triplets.size()); ++i)
      std::fprintf(stderr, "triplet %zu idx(%d,%d,%d) count %d length %.1f\n", i,
                   triplets[i].index[0], triplets[i].index[1], triplets[i].index[2],
                   triplets[i].count, triplets[i].length);
  }
  for (const auto& t : triplets) {
    if (run_iterations(lines, width, height, t.vps, opts, result)) return result;
  }
  fail(Errc::CalibrationFailed, "joint_calibrate: exhausted seed triplets");
}

}  // namespace monoscene
