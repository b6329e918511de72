#include "monoscene/synth.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

namespace monoscene {

using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Canonical meshes (x/y centered, z in [0, h])

TriMesh make_box(double w, double d, double h, double z0 = 0.0) {
  TriMesh m;
  const double hw = 0.5 * w, hd = 0.5 * d;
  m.vertices = {{-hw, -hd, z0}, {hw, -hd, z0},     {hw, hd, z0},     {-hw, hd, z0},
                {-hw, -hd, z0 + h}, {hw, -hd, z0 + h}, {hw, hd, z0 + h}, {-hw, hd, z0 + h}};
  m.triangles = {{0, 2, 1}, {0, 3, 2}, {4, 5, 6}, {4, 6, 7}, {0, 1, 5}, {0, 5, 4},
                 {1, 2, 6}, {1, 6, 5}, {2, 3, 7}, {2, 7, 6}, {3, 0, 4}, {3, 4, 7}};
  return m;
}

void append_mesh(TriMesh& dst, const TriMesh& src, const Eigen::Vector3d& shift) {
  const int base = static_cast<int>(dst.vertices.size());
  for (const auto& v : src.vertices) dst.vertices.push_back(v + shift);
  for (const auto& t : src.triangles)
    dst.triangles.push_back({t[0] + base, t[1] + base, t[2] + base});
}

TriMesh make_table(double w, double d, double h) {
  TriMesh m = make_box(w, d, 0.08 * h, 0.92 * h);
  const double leg = 0.08 * std::min(w, d);
  const double lx = 0.5 * w - 0.5 * leg, ly = 0.5 * d - 0.5 * leg;
  for (double sx : {-1.0, 1.0})
    for (double sy : {-1.0, 1.0})
      append_mesh(m, make_box(leg, leg, 0.92 * h), {sx * lx, sy * ly, 0.0});
  return m;
}

TriMesh make_lamp(double w, double d, double h) {
  TriMesh m = make_box(0.3 * w, 0.3 * d, 0.65 * h);
  append_mesh(m, make_box(w, d, 0.35 * h, 0.65 * h), Eigen::Vector3d::Zero());
  return m;
}

TriMesh make_sofa(double w, double d, double h) {
  TriMesh m = make_box(w, d, 0.45 * h);
  append_mesh(m, make_box(w, 0.3 * d, 0.55 * h, 0.45 * h), {0.0, 0.35 * d, 0.0});
  return m;
}

// ---------------------------------------------------------------------------
// Category tables for the generator

enum class Shape { Box, Table, Lamp, Sofa, Panel };

struct CategorySpec {
  int category;
  Shape shape;
  double mu;      // height / room-height prior mean
  double sigma;   // prior std
  double aspect_w, aspect_d;  // footprint relative to height
};

const std::vector<CategorySpec>& floor_specs() {
  static const std::vector<CategorySpec> v = {
      {3, Shape::Box, 0.185, 0.015, 3.2, 3.6},     // bed
      {6, Shape::Table, 0.25, 0.015, 1.8, 1.2},    // table
      {13, Shape::Table, 0.25, 0.015, 1.9, 1.0},   // desk
      {4, Shape::Box, 0.285, 0.02, 0.55, 0.55},    // chair
      {5, Shape::Sofa, 0.27, 0.02, 2.2, 1.05},     // sofa
      {31, Shape::Box, 0.185, 0.015, 0.8, 0.72},   // night_stand
      {16, Shape::Box, 0.335, 0.02, 1.0, 0.5},     // dresser
      {9, Shape::Box, 0.60, 0.03, 0.5, 0.18},      // bookshelf
      {28, Shape::Box, 0.135, 0.03, 1.0, 1.0},     // box
  };
  return v;
}

const std::vector<CategorySpec>& stack_specs() {
  static const std::vector<CategorySpec> v = {
      {34, Shape::Lamp, 0.15, 0.015, 0.55, 0.55},  // lamp
      {22, Shape::Box, 0.085, 0.012, 1.1, 0.8},    // books
      {24, Shape::Panel, 0.165, 0.02, 1.5, 0.18},  // television
  };
  return v;
}

const std::vector<CategorySpec>& wall_specs() {
  static const std::vector<CategorySpec> v = {
      {10, Shape::Panel, 0.20, 0.03, 1.3, 0.08},   // picture
      {18, Shape::Panel, 0.30, 0.03, 0.7, 0.08},   // mirror
      {29, Shape::Panel, 0.30, 0.025, 1.6, 0.08},  // whiteboard
      {8, Shape::Panel, 0.40, 0.03, 1.2, 0.08},    // window
  };
  return v;
}

const CategorySpec* spec_of(int category) {
  for (const auto* list : {&floor_specs(), &stack_specs(), &wall_specs()})
    for (const auto& s : *list)
      if (s.category == category) return &s;
  return nullptr;
}

TriMesh build_shape(Shape shape, double w, double d, double h) {
  switch (shape) {
    case Shape::Box: return make_box(w, d, h);
    case Shape::Table: return make_table(w, d, h);
    case Shape::Lamp: return make_lamp(w, d, h);
    case Shape::Sofa: return make_sofa(w, d, h);
    case Shape::Panel: return make_box(w, d, h);
  }
  return make_box(w, d, h);
}

PriorTables synth_priors() {
  PriorTables p;
  auto add = [&](int child, int parent, SupportType t, double c) {
    p.count_ref(child, parent, t) = c;
  };
  const SupportType B = SupportType::Below, BH = SupportType::Behind;
  for (const auto& s : floor_specs()) add(s.category, kCategoryFloor, B, 100);
  add(28, 6, B, 25);   // box on table
  add(34, 31, B, 60);  // lamp on nightstand
  add(34, 6, B, 25);
  add(34, 13, B, 10);
  add(34, kCategoryFloor, B, 5);
  add(22, 6, B, 35);  // books
  add(22, 13, B, 30);
  add(22, 31, B, 15);
  add(22, 3, B, 10);
  add(22, kCategoryFloor, B, 10);
  add(24, 16, B, 45);  // television
  add(24, 6, B, 35);
  add(24, kCategoryWall, BH, 20);
  add(10, kCategoryWall, BH, 95);
  add(10, kCategoryFloor, B, 5);
  add(18, kCategoryWall, BH, 90);
  add(18, kCategoryFloor, B, 10);
  add(29, kCategoryWall, BH, 85);
  add(29, kCategoryFloor, B, 15);
  add(8, kCategoryWall, BH, 100);
  for (const auto* list : {&floor_specs(), &stack_specs(), &wall_specs()})
    for (const auto& s : *list) {
      p.height_mu[static_cast<std::size_t>(s.category)] = s.mu;
      p.height_sigma[static_cast<std::size_t>(s.category)] = s.sigma;
      p.height_available[static_cast<std::size_t>(s.category)] = true;
    }
  return p;
}

// ---------------------------------------------------------------------------
// Scanline z-buffer rasterizer (independent of placement's edge-function fill)

struct DepthBuffer {
  int width = 0, height = 0;
  std::vector<float> invz;
  std::vector<std::int32_t> id;

  DepthBuffer(int w, int h)
      : width(w), height(h), invz(static_cast<std::size_t>(w) * h, 0.f),
        id(static_cast<std::size_t>(w) * h, -1) {}
};

struct ScreenVertex {
  double x, y, invz;
};

void scanline_fill(DepthBuffer& buf, const std::vector<ScreenVertex>& poly, std::int32_t id) {
  if (poly.size() < 3) return;
  double y0 = poly[0].y, y1 = poly[0].y;
  for (const auto& v : poly) {
    y0 = std::min(y0, v.y);
    y1 = std::max(y1, v.y);
  }
  const int ys = std::max(0, static_cast<int>(std::ceil(y0 - 0.5 + 0.5)));
  const int ye = std::min(buf.height - 1, static_cast<int>(std::floor(y1)));
  for (int y = ys; y <= ye; ++y) {
    // Crossings of the horizontal line through the pixel-center row.
    std::vector<std::pair<double, double>> xs;  // (x, invz)
    const std::size_t n = poly.size();
    for (std::size_t i = 0; i < n; ++i) {
      const ScreenVertex& a = poly[i];
      const ScreenVertex& b = poly[(i + 1) % n];
      if ((a.y <= y && b.y > y) || (b.y <= y && a.y > y)) {
        const double t = (y - a.y) / (b.y - a.y);
        xs.emplace_back(a.x + t * (b.x - a.x), a.invz + t * (b.invz - a.invz));
      }
    }
    std::sort(xs.begin(), xs.end());
    for (std::size_t i = 0; i + 1 < xs.size(); i += 2) {
      const double xa = xs[i].first, xb = xs[i + 1].first;
      const int px0 = std::max(0, static_cast<int>(std::ceil(xa)));
      const int px1 = std::min(buf.width - 1, static_cast<int>(std::floor(xb)));
      for (int x = px0; x <= px1; ++x) {
        const double t = xb > xa ? (x - xa) / (xb - xa) : 0.0;
        const float z = static_cast<float>(xs[i].second + t * (xs[i + 1].second - xs[i].second));
        const std::size_t at = static_cast<std::size_t>(y) * buf.width + x;
        if (z > buf.invz[at]) {
          buf.invz[at] = z;
          buf.id[at] = id;
        }
      }
    }
  }
}

void raster_mesh(DepthBuffer& buf, const TriMesh& mesh, const Eigen::Matrix3d& linear,
                 const Eigen::Vector3d& position, const TruthCamera& cam, std::int32_t id) {
  constexpr double kNear = 1e-4;
  std::vector<Eigen::Vector3d> cpts;
  cpts.reserve(mesh.vertices.size());
  for (const auto& v : mesh.vertices) cpts.push_back(cam.to_camera(linear * v + position));
  for (const auto& tri : mesh.triangles) {
    std::vector<Eigen::Vector3d> poly;
    for (int i = 0; i < 3; ++i) {
      const Eigen::Vector3d& a = cpts[static_cast<std::size_t>(tri[i])];
      const Eigen::Vector3d& b = cpts[static_cast<std::size_t>(tri[(i + 1) % 3])];
      if (a.z() >= kNear) poly.push_back(a);
      if ((a.z() >= kNear) != (b.z() >= kNear)) {
        const double t = (kNear - a.z()) / (b.z() - a.z());
        poly.push_back(a + t * (b - a));
      }
    }
    if (poly.size() < 3) continue;
    std::vector<ScreenVertex> screen;
    screen.reserve(poly.size());
    for (const auto& p : poly)
      screen.push_back({cam.c.x() + cam.f * p.x() / p.z(), cam.c.y() + cam.f * p.y() / p.z(),
                        1.0 / p.z()});
    scanline_fill(buf, screen, id);
  }
}

Eigen::Matrix3d yaw_matrix(double yaw) {
  Eigen::Matrix3d r;
  const double cs = std::cos(yaw), sn = std::sin(yaw);
  r << cs, -sn, 0, sn, cs, 0, 0, 0, 1;
  return r;
}

// ---------------------------------------------------------------------------
// Line and edge-map synthesis

bool clip_project_segment(const TruthCamera& cam, const Eigen::Vector3d& A,
                          const Eigen::Vector3d& B, int w, int h, Eigen::Vector2d& p,
                          Eigen::Vector2d& q) {
  constexpr double kNear = 0.05;
  Eigen::Vector3d a = cam.to_camera(A), b = cam.to_camera(B);
  if (a.z() < kNear && b.z() < kNear) return false;
  if (a.z() < kNear || b.z() < kNear) {
    const double t = (kNear - a.z()) / (b.z() - a.z());
    const Eigen::Vector3d m = a + t * (b - a);
    (a.z() < kNear ? a : b) = m;
  }
  p = cam.c + cam.f * a.head<2>() / a.z();
  q = cam.c + cam.f * b.head<2>() / b.z();
  // Liang-Barsky against the pixel rectangle.
  const Eigen::Vector2d d = q - p;
  double t0 = 0.0, t1 = 1.0;
  const double lo[2] = {-0.5, -0.5}, hi[2] = {w - 0.5, h - 0.5};
  for (int axis = 0; axis < 2; ++axis) {
    if (std::abs(d[axis]) < 1e-12) {
      if (p[axis] < lo[axis] || p[axis] > hi[axis]) return false;
      continue;
    }
    double ta = (lo[axis] - p[axis]) / d[axis];
    double tb = (hi[axis] - p[axis]) / d[axis];
    if (ta > tb) std::swap(ta, tb);
    t0 = std::max(t0, ta);
    t1 = std::min(t1, tb);
  }
  if (t0 >= t1) return false;
  const Eigen::Vector2d np = p + t0 * d, nq = p + t1 * d;
  p = np;
  q = nq;
  return true;
}

void stamp_segment(EdgeMap& em, const Eigen::Vector2d& a, const Eigen::Vector2d& b) {
  const double len = (b - a).norm();
  const int n = std::max(1, static_cast<int>(std::ceil(2.0 * len)));
  for (int i = 0; i <= n; ++i) {
    const Eigen::Vector2d p = a + (static_cast<double>(i) / n) * (b - a);
    const int x = static_cast<int>(std::lround(p.x()));
    const int y = static_cast<int>(std::lround(p.y()));
    if (x >= 0 && x < em.width && y >= 0 && y < em.height) em.at(x, y) = 1.f;
  }
}

void gaussian_blur_scaled(EdgeMap& em, double sigma, double gain) {
  const int r = 3;
  std::array<float, 2 * 3 + 1> k{};
  float sum = 0.f;
  for (int i = -r; i <= r; ++i) {
    k[static_cast<std::size_t>(i + r)] =
        static_cast<float>(std::exp(-0.5 * (i * i) / (sigma * sigma)));
    sum += k[static_cast<std::size_t>(i + r)];
  }
  for (auto& v : k) v /= sum;
  EdgeMap tmp(em.width, em.height);
  for (int y = 0; y < em.height; ++y)
    for (int x = 0; x < em.width; ++x) {
      float acc = 0.f;
      for (int i = -r; i <= r; ++i) {
        const int xx = std::clamp(x + i, 0, em.width - 1);
        acc += k[static_cast<std::size_t>(i + r)] * em.at(xx, y);
      }
      tmp.at(x, y) = acc;
    }
  for (int y = 0; y < em.height; ++y)
    for (int x = 0; x < em.width; ++x) {
      float acc = 0.f;
      for (int i = -r; i <= r; ++i) {
        const int yy = std::clamp(y + i, 0, em.height - 1);
        acc += k[static_cast<std::size_t>(i + r)] * tmp.at(x, yy);
      }
      em.at(x, y) = std::min(1.f, static_cast<float>(gain) * acc);
    }
}

struct Seg3 {
  Eigen::Vector3d a, b;
  int axis;  // 0/1/2 room axis, -1 unaligned
};

std::vector<Seg3> room_edges(const RoomLayout& room) {
  const Eigen::Vector3d lo = room.corner, hi = room.corner + room.sizes;
  std::vector<Seg3> edges;
  const double zs[2] = {lo.z(), hi.z()};
  for (double z : zs) {
    edges.push_back({{lo.x(), lo.y(), z}, {hi.x(), lo.y(), z}, 0});
    edges.push_back({{lo.x(), hi.y(), z}, {hi.x(), hi.y(), z}, 0});
    edges.push_back({{lo.x(), lo.y(), z}, {lo.x(), hi.y(), z}, 1});
    edges.push_back({{hi.x(), lo.y(), z}, {hi.x(), hi.y(), z}, 1});
  }
  for (double x : {lo.x(), hi.x()})
    for (double y : {lo.y(), hi.y()}) edges.push_back({{x, y, lo.z()}, {x, y, hi.z()}, 2});
  return edges;
}

HPoint2 truth_vp(const TruthCamera& cam, int axis) {
  const Eigen::Vector3d d = cam.R.col(axis);
  return HPoint2(cam.f * d.x() + cam.c.x() * d.z(), cam.f * d.y() + cam.c.y() * d.z(), d.z());
}

}  // namespace

Mask synth_rasterize(const TriMesh& mesh, const Eigen::Matrix3d& linear,
                     const Eigen::Vector3d& position, const TruthCamera& cam, int width,
                     int height) {
  DepthBuffer buf(width, height);
  raster_mesh(buf, mesh, linear, position, cam, 0);
  Mask m(width, height);
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x)
      if (buf.id[static_cast<std::size_t>(y) * width + x] == 0) m.set(x, y);
  return m;
}

SynthResult make_scene(std::uint64_t seed, int n_objects, const SynthNoise& noise) {
  if (n_objects > kMaxInstances - 6)
    fail(Errc::OutOfRange, "make_scene: object count leaves no room for layout instances");
  Rng rng(seed);
  SynthResult out;
  GroundTruthScene& truth = out.truth;
  SceneBundle& bundle = out.bundle;
  truth.seed = seed;

  const int W = 640, H = 480;
  bundle.width = W;
  bundle.height = H;

  // Room and camera: the camera sits just inside the y-low wall looking at
  // the far wall, slightly pitched down.
  truth.room.corner = Eigen::Vector3d::Zero();
  truth.room.sizes = Eigen::Vector3d(rng.uniform(3.6, 6.0), rng.uniform(3.6, 6.0), 3.0);
  truth.room.yaw = 0.0;

  TruthCamera& cam = truth.camera;
  cam.f = rng.uniform(440.0, 600.0);
  cam.c = Eigen::Vector2d(0.5 * (W - 1), 0.5 * (H - 1));
  cam.position = Eigen::Vector3d(truth.room.sizes.x() * rng.uniform(0.35, 0.65),
                                 rng.uniform(0.06, 0.14), rng.uniform(1.45, 1.7));
  {
    const double yaw = rng.uniform(-0.18, 0.18);
    const double pitch = rng.uniform(0.12, 0.25);
    const double roll = rng.uniform(-0.02, 0.02);
    const Eigen::Vector3d fwd(std::sin(yaw) * std::cos(pitch), std::cos(yaw) * std::cos(pitch),
                              -std::sin(pitch));
    Eigen::Vector3d right = fwd.cross(Eigen::Vector3d(0, 0, 1)).normalized();
    Eigen::Vector3d down = fwd.cross(right).normalized();
    // Roll about the forward axis.
    right = (std::cos(roll) * right + std::sin(roll) * down).normalized();
    down = fwd.cross(right).normalized();
    cam.R.row(0) = right;
    cam.R.row(1) = down;
    cam.R.row(2) = fwd;
  }
  for (int i = 0; i < 3; ++i) truth.vps[static_cast<std::size_t>(i)] = truth_vp(cam, i);

  bundle.priors = synth_priors();

  // -------------------------------------------------------------------------
  // Model library: three aspect variants per category.
  struct Variant {
    int model_id;
    int category;
    double w, d, h;  // canonical dims
    Shape shape;
  };
  std::vector<Variant> variants;
  {
    int next_model = 0;
    for (const auto* list : {&floor_specs(), &stack_specs(), &wall_specs()})
      for (const auto& s : *list)
        for (int v = 0; v < 3; ++v) {
          const double jitter = 0.85 + 0.15 * v;
          const double h = 1.0;  // canonical height 1, true size via uniform scale
          variants.push_back({next_model++, s.category, s.aspect_w * jitter * h,
                              s.aspect_d * (1.1 - 0.1 * v) * h, h, s.shape});
        }
  }

  // -------------------------------------------------------------------------
  // Object placement with a global attempt budget.
  int attempts = 0;
  auto spend_attempt = [&]() {
    if (++attempts > 1000)
      fail(Errc::PlacementRejection, "make_scene: more than 1000 placement attempts");
  };

  struct Placed {
    TruthObject obj;
    Variant variant;
    Eigen::Vector2d fp_lo, fp_hi;  // world footprint AABB
  };
  std::vector<Placed> placed;

  auto footprint = [&](const TruthObject& o, const Variant& v, Eigen::Vector2d& lo,
                       Eigen::Vector2d& hi) {
    const double sw = 0.5 * v.w * o.uniform_scale, sd = 0.5 * v.d * o.uniform_scale;
    const double cs = std::abs(std::cos(o.yaw)), sn = std::abs(std::sin(o.yaw));
    const double ex = cs * sw + sn * sd, ey = sn * sw + cs * sd;
    lo = o.position.head<2>() - Eigen::Vector2d(ex, ey);
    hi = o.position.head<2>() + Eigen::Vector2d(ex, ey);
  };

  auto in_image = [&](const Eigen::Vector3d& p) {
    const Eigen::Vector3d xc = cam.to_camera(p);
    if (xc.z() < 0.3) return false;
    const Eigen::Vector2d px = cam.c + cam.f * xc.head<2>() / xc.z();
    return px.x() > 10 && px.x() < W - 10 && px.y() > 10 && px.y() < H - 10;
  };
  // The clean-scene contracts assume fully measurable objects: every corner
  // of the object's box must project inside the image.
  auto fully_visible = [&](const TruthObject& o, double half_w, double half_d) {
    const double cs = std::cos(o.yaw), sn = std::sin(o.yaw);
    for (double sx : {-1.0, 1.0})
      for (double sy : {-1.0, 1.0})
        for (double sz : {0.0, 1.0}) {
          const Eigen::Vector3d local(sx * half_w, sy * half_d, sz * o.height);
          const Eigen::Vector3d world(o.position.x() + cs * local.x() - sn * local.y(),
                                      o.position.y() + sn * local.x() + cs * local.y(),
                                      o.position.z() + local.z());
          if (!in_image(world)) return false;
        }
    return true;
  };

  const double H_room = truth.room.sizes.z();
  auto draw_height = [&](const CategorySpec& s) {
    double r;
    do {
      r = rng.normal(s.mu, 0.8 * s.sigma);
    } while (std::abs(r - s.mu) > 2.0 * s.sigma);
    return r * H_room;
  };

  auto pick_variant = [&](int category) -> const Variant& {
    std::vector<const Variant*> opts;
    for (const auto& v : variants)
      if (v.category == category) opts.push_back(&v);
    return *opts[static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(opts.size()) - 1))];
  };

  const int n_wall = std::min(n_objects / 4, 4);
  const int n_stack = n_objects >= 4 ? std::max(1, n_objects / 4) : 0;
  const int n_floor = n_objects - n_wall - n_stack;
  int next_id = 0;

  // Floor-standing objects.
  for (int i = 0; i < n_floor; ++i) {
    const CategorySpec& s = floor_specs()[static_cast<std::size_t>(
        rng.uniform_int(0, static_cast<std::int64_t>(floor_specs().size()) - 1))];
    bool ok = false;
    for (int tries = 0; tries < 60 && !ok; ++tries) {
      spend_attempt();
      TruthObject o;
      o.id = next_id;
      o.category = s.category;
      const Variant& v = pick_variant(s.category);
      o.model_id = v.model_id;
      o.height = draw_height(s);
      o.uniform_scale = o.height / v.h;
      // Furniture mostly aligns with the walls; the occasional piece sits at
      // a diagonal and feeds the outlier path.
      o.yaw = M_PI_2 * static_cast<double>(rng.uniform_int(0, 3));
      if (rng.uniform01() < 0.15) o.yaw += M_PI_4;
      const double mx = 0.5 * v.w * o.uniform_scale + 0.2;
      const double my = 0.5 * v.d * o.uniform_scale + 0.2;
      const double x_lo = truth.room.corner.x() + mx;
      const double x_hi = truth.room.corner.x() + truth.room.sizes.x() - mx;
      const double y_lo = cam.position.y() + 0.8 + my;
      const double y_hi = truth.room.corner.y() + truth.room.sizes.y() - my;
      if (x_lo >= x_hi || y_lo >= y_hi) continue;
      o.position = Eigen::Vector3d(rng.uniform(x_lo, x_hi), rng.uniform(y_lo, y_hi), 0.0);
      o.type = SupportType::Below;
      o.parent.kind = TruthParent::Kind::Floor;
      o.top_altitude = o.height;
      if (!fully_visible(o, 0.5 * v.w * o.uniform_scale, 0.5 * v.d * o.uniform_scale))
        continue;
      Placed p;
      p.obj = o;
      p.variant = v;
      footprint(o, v, p.fp_lo, p.fp_hi);
      bool overlap = false;
      for (const auto& q : placed)
        overlap = overlap || !(p.fp_hi.x() + 0.08 < q.fp_lo.x() || q.fp_hi.x() + 0.08 < p.fp_lo.x() ||
                               p.fp_hi.y() + 0.08 < q.fp_lo.y() || q.fp_hi.y() + 0.08 < p.fp_lo.y());
      if (overlap) continue;
      placed.push_back(p);
      ++next_id;
      ok = true;
    }
  }

  // Stacked objects on suitable parents.
  for (int i = 0; i < n_stack; ++i) {
    std::vector<const Placed*> parents;
    for (const auto& p : placed)
      if ((p.variant.category == 6 || p.variant.category == 13 || p.variant.category == 31 ||
           p.variant.category == 16 || p.variant.category == 3) &&
          p.obj.parent.kind == TruthParent::Kind::Floor)
        parents.push_back(&p);
    if (parents.empty()) break;
    bool ok = false;
    for (int tries = 0; tries < 60 && !ok; ++tries) {
      spend_attempt();
      const Placed& parent = *parents[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(parents.size()) - 1))];
      // Pick a child category compatible with this parent in the priors.
      std::vector<const CategorySpec*> cands;
      for (const auto& s : stack_specs())
        if (bundle.priors.count(s.category, parent.obj.category, SupportType::Below) > 0)
          cands.push_back(&s);
      if (cands.empty()) continue;
      const CategorySpec& s = *cands[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(cands.size()) - 1))];
      TruthObject o;
      o.id = next_id;
      o.category = s.category;
      const Variant& v = pick_variant(s.category);
      o.model_id = v.model_id;
      o.height = draw_height(s);
      o.uniform_scale = o.height / v.h;
      o.yaw = M_PI_2 * static_cast<double>(rng.uniform_int(0, 3));
      const double cw = 0.5 * v.w * o.uniform_scale, cd = 0.5 * v.d * o.uniform_scale;
      const double pw = 0.5 * (parent.fp_hi.x() - parent.fp_lo.x());
      const double pd = 0.5 * (parent.fp_hi.y() - parent.fp_lo.y());
      if (cw > 0.75 * pw || cd > 0.75 * pd) continue;  // child too large for this top
      const Eigen::Vector2d pc = 0.5 * (parent.fp_lo + parent.fp_hi);
      o.position =
          Eigen::Vector3d(pc.x() + rng.uniform(-(pw - cw - 0.02), pw - cw - 0.02),
                          pc.y() + rng.uniform(-(pd - cd - 0.02), pd - cd - 0.02),
                          parent.obj.top_altitude);
      o.type = SupportType::Below;
      o.parent.kind = TruthParent::Kind::Object;
      o.parent.id = parent.obj.id;
      o.top_altitude = o.position.z() + o.height;
      if (!fully_visible(o, 0.5 * v.w * o.uniform_scale, 0.5 * v.d * o.uniform_scale))
        continue;
      Placed p;
      p.obj = o;
      p.variant = v;
      footprint(o, v, p.fp_lo, p.fp_hi);
      bool overlap = false;
      for (const auto& q : placed) {
        if (q.obj.id == parent.obj.id) continue;
        if (q.obj.parent.kind == TruthParent::Kind::Object &&
            q.obj.parent.id == parent.obj.id) {
          overlap = overlap ||
                    !(p.fp_hi.x() < q.fp_lo.x() || q.fp_hi.x() < p.fp_lo.x() ||
                      p.fp_hi.y() < q.fp_lo.y() || q.fp_hi.y() < p.fp_lo.y());
        }
      }
      if (overlap) continue;
      placed.push_back(p);
      ++next_id;
      ok = true;
    }
  }

  // Wall-mounted objects.
  for (int i = 0; i < n_wall; ++i) {
    bool ok = false;
    for (int tries = 0; tries < 60 && !ok; ++tries) {
      spend_attempt();
      const CategorySpec& s = wall_specs()[static_cast<std::size_t>(
          rng.uniform_int(0, static_cast<std::int64_t>(wall_specs().size()) - 1))];
      const int wall = static_cast<int>(rng.uniform_int(0, 3));
      if (wall == 2) continue;  // behind the camera
      TruthObject o;
      o.id = next_id;
      o.category = s.category;
      const Variant& v = pick_variant(s.category);
      o.model_id = v.model_id;
      o.height = draw_height(s);
      o.uniform_scale = o.height / v.h;
      const double half_th = 0.5 * v.d * o.uniform_scale;
      const double half_w = 0.5 * v.w * o.uniform_scale;
      const Eigen::Vector3d lo = truth.room.corner, hi = truth.room.corner + truth.room.sizes;
      const double bottom = rng.uniform(0.9, 1.8);
      double tangent;
      Eigen::Vector3d pos;
      const double ty_lo = lo.y() + half_w + 0.2, ty_hi = hi.y() - half_w - 0.2;
      const double tx_lo = lo.x() + half_w + 0.2, tx_hi = hi.x() - half_w - 0.2;
      // The panel's thickness axis (canonical y rotated by yaw) must face the
      // wall normal so the back sits flush: Eq-6-consistent by construction.
      switch (wall) {
        case 0:  // x=lo, inward +x
          if (ty_lo >= ty_hi) continue;
          tangent = rng.uniform(ty_lo, ty_hi);
          pos = Eigen::Vector3d(lo.x() + half_th, tangent, bottom);
          o.yaw = M_PI_2;
          break;
        case 1:  // x=hi, inward -x
          if (ty_lo >= ty_hi) continue;
          tangent = rng.uniform(ty_lo, ty_hi);
          pos = Eigen::Vector3d(hi.x() - half_th, tangent, bottom);
          o.yaw = -M_PI_2;
          break;
        default:  // wall 3: y=hi, inward -y
          if (tx_lo >= tx_hi) continue;
          tangent = rng.uniform(tx_lo, tx_hi);
          pos = Eigen::Vector3d(tangent, hi.y() - half_th, bottom);
          o.yaw = M_PI;
          break;
      }
      o.position = pos;
      o.type = SupportType::Behind;
      o.parent.kind = TruthParent::Kind::Wall;
      o.parent.wall = wall == 2 ? 2 : wall;
      o.top_altitude = bottom + o.height;
      if (!fully_visible(o, 0.5 * v.w * o.uniform_scale, 0.5 * v.d * o.uniform_scale))
        continue;
      Placed p;
      p.obj = o;
      p.variant = v;
      footprint(o, v, p.fp_lo, p.fp_hi);
      bool overlap = false;
      for (const auto& q : placed)
        if (q.obj.parent.kind == TruthParent::Kind::Wall && q.obj.parent.wall == o.parent.wall) {
          const bool apart = p.fp_hi.x() + 0.1 < q.fp_lo.x() || q.fp_hi.x() + 0.1 < p.fp_lo.x() ||
                             p.fp_hi.y() + 0.1 < q.fp_lo.y() || q.fp_hi.y() + 0.1 < p.fp_lo.y();
          const bool z_apart = o.position.z() > q.obj.top_altitude + 0.1 ||
                               q.obj.position.z() > o.top_altitude + 0.1;
          overlap = overlap || !(apart || z_apart);
        }
      if (overlap) continue;
      placed.push_back(p);
      ++next_id;
      ok = true;
    }
  }

  // -------------------------------------------------------------------------
  // Render instance masks, rejecting objects that end up mostly hidden.
  std::map<int, TriMesh> mesh_cache;  // model id -> canonical mesh
  for (const auto& v : variants)
    mesh_cache.emplace(v.model_id, build_shape(v.shape, v.w, v.d, v.h));

  for (bool settled = false; !settled;) {
    DepthBuffer buf(W, H);
    for (const auto& p : placed) {
      const Eigen::Matrix3d lin = yaw_matrix(p.obj.yaw) * (p.obj.uniform_scale *
                                                           Eigen::Matrix3d::Identity());
      raster_mesh(buf, mesh_cache.at(p.obj.model_id), lin, p.obj.position, cam, p.obj.id);
    }
    settled = true;
    std::set<int> removed;
    for (auto it = placed.begin(); it != placed.end();) {
      const Eigen::Matrix3d lin = yaw_matrix(it->obj.yaw) *
                                  (it->obj.uniform_scale * Eigen::Matrix3d::Identity());
      const Mask solo = synth_rasterize(mesh_cache.at(it->obj.model_id), lin, it->obj.position,
                                        cam, W, H);
      std::size_t visible = 0;
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x)
          if (buf.id[static_cast<std::size_t>(y) * W + x] == it->obj.id) ++visible;
      const std::size_t total = solo.count();
      if (total < 120 || static_cast<double>(visible) / std::max<std::size_t>(total, 1) < 0.82) {
        spend_attempt();
        removed.insert(it->obj.id);
        it = placed.erase(it);  // too small or too occluded: drop and resettle
        settled = false;
      } else {
        ++it;
      }
    }
    // Stacked children of a removed parent would float; drop them too.
    for (bool again = !removed.empty(); again;) {
      again = false;
      for (auto it = placed.begin(); it != placed.end();) {
        if (it->obj.parent.kind == TruthParent::Kind::Object &&
            removed.count(it->obj.parent.id)) {
          removed.insert(it->obj.id);
          it = placed.erase(it);
          settled = false;
          again = true;
        } else {
          ++it;
        }
      }
    }
    if (settled) {
      // Final id map -> per-instance masks.
      std::map<int, Mask> masks;
      for (const auto& p : placed) masks.emplace(p.obj.id, Mask(W, H));
      for (int y = 0; y < H; ++y)
        for (int x = 0; x < W; ++x) {
          const std::int32_t id = buf.id[static_cast<std::size_t>(y) * W + x];
          if (id >= 0) masks.at(id).set(x, y);
        }
      for (const auto& p : placed) {
        InstanceData inst;
        inst.id = p.obj.id;
        inst.category = p.obj.category;
        inst.mask = masks.at(p.obj.id);
        if (noise.mask_morph > 0) {
          inst.mask = inst.mask.dilated(noise.mask_morph);
        } else if (noise.mask_morph < 0) {
          // Erosion via complement dilation.
          Mask inv(W, H);
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
              if (!inst.mask.get(x, y)) inv.set(x, y);
          const Mask grown = inv.dilated(-noise.mask_morph);
          Mask eroded(W, H);
          for (int y = 0; y < H; ++y)
            for (int x = 0; x < W; ++x)
              if (inst.mask.get(x, y) && !grown.get(x, y)) eroded.set(x, y);
          if (eroded.any()) inst.mask = eroded;
        }
        bundle.instances.push_back(std::move(inst));
      }
    }
  }

  // Renumber ids densely in case the visibility pass dropped objects.
  {
    std::map<int, int> remap;
    for (std::size_t i = 0; i < bundle.instances.size(); ++i) {
      remap[bundle.instances[i].id] = static_cast<int>(i);
      bundle.instances[i].id = static_cast<int>(i);
    }
    std::vector<Placed> kept;
    for (auto& p : placed)
      if (remap.count(p.obj.id)) {
        p.obj.id = remap.at(p.obj.id);
        if (p.obj.parent.kind == TruthParent::Kind::Object) {
          if (remap.count(p.obj.parent.id)) {
            p.obj.parent.id = remap.at(p.obj.parent.id);
          } else {
            p.obj.parent = TruthParent{TruthParent::Kind::Floor, -1, -1};
            p.obj.position.z() = 0.0;  // parent vanished; it is floor-standing truth now
            p.obj.top_altitude = p.obj.height;
          }
        }
        kept.push_back(p);
      }
    placed = kept;
  }

  for (const auto& p : placed) {
    TruthObject o = p.obj;
    const TriMesh& mesh = mesh_cache.at(o.model_id);
    Eigen::Vector3d mlo, mhi;
    mesh.bounds(mlo, mhi);
    o.box_dims = (mhi - mlo) * o.uniform_scale;
    o.box_center = o.position + yaw_matrix(o.yaw) * (0.5 * (mlo + mhi) * o.uniform_scale);
    o.box_yaw = o.yaw;
    truth.objects.push_back(o);
  }

  // -------------------------------------------------------------------------
  // Line segments, edge map, descriptors, answers.
  const auto redges = room_edges(truth.room);
  std::vector<std::pair<LineSeg2, int>> segs;  // segment + axis label
  for (const auto& e : redges) {
    Eigen::Vector2d p, q;
    if (!clip_project_segment(cam, e.a, e.b, W, H, p, q)) continue;
    if ((p - q).norm() < 18.0) continue;
    segs.emplace_back(line_through(p, q), e.axis);
  }
  if (noise.object_lines) {
    for (const auto& o : truth.objects) {
      const TriMesh& mesh = mesh_cache.at(o.model_id);
      Eigen::Vector3d mlo, mhi;
      mesh.bounds(mlo, mhi);
      const Eigen::Matrix3d rot = yaw_matrix(o.yaw);
      const double s = o.uniform_scale;
      const double cxs[4] = {mlo.x(), mhi.x(), mhi.x(), mlo.x()};
      const double cys[4] = {mlo.y(), mlo.y(), mhi.y(), mhi.y()};
      std::array<Eigen::Vector3d, 4> top, bot;
      for (int k = 0; k < 4; ++k) {
        top[static_cast<std::size_t>(k)] =
            rot * Eigen::Vector3d(cxs[k] * s, cys[k] * s, mhi.z() * s) + o.position;
        bot[static_cast<std::size_t>(k)] =
            rot * Eigen::Vector3d(cxs[k] * s, cys[k] * s, mlo.z() * s) + o.position;
      }
      const bool aligned = std::abs(std::remainder(o.yaw, M_PI_2)) < 1e-9;
      const bool swapped = std::abs(std::remainder(o.yaw, M_PI)) > M_PI_4;
      auto emit = [&](const Eigen::Vector3d& A, const Eigen::Vector3d& B, int canonical_axis) {
        int axis = -1;
        if (canonical_axis == 2)
          axis = 2;  // vertical edges stay vertical under any yaw
        else if (aligned)
          axis = swapped ? 1 - canonical_axis : canonical_axis;
        Eigen::Vector2d p, q;
        if (!clip_project_segment(cam, A, B, W, H, p, q)) return;
        if ((p - q).norm() < 16.0) return;
        segs.emplace_back(line_through(p, q), axis);
      };
      for (int k = 0; k < 4; ++k) {
        const std::size_t ku = static_cast<std::size_t>(k);
        const std::size_t kn = static_cast<std::size_t>((k + 1) % 4);
        emit(top[ku], top[kn], k % 2 == 0 ? 0 : 1);
        emit(bot[ku], top[ku], 2);
      }
    }
  }
  // Drop, noise, clutter.
  {
    std::vector<std::pair<LineSeg2, int>> kept;
    for (const auto& [seg, axis] : segs) {
      if (noise.drop_line_prob > 0.0 && rng.uniform01() < noise.drop_line_prob) continue;
      Eigen::Vector2d p = seg.p0, q = seg.q0;
      if (noise.line_sigma_px > 0.0) {
        p += Eigen::Vector2d(rng.normal(0, noise.line_sigma_px), rng.normal(0, noise.line_sigma_px));
        q += Eigen::Vector2d(rng.normal(0, noise.line_sigma_px), rng.normal(0, noise.line_sigma_px));
      }
      if ((p - q).norm() < 2.0) continue;
      kept.emplace_back(line_through(p, q), axis);
    }
    for (int i = 0; i < noise.clutter_lines; ++i) {
      const Eigen::Vector2d p(rng.uniform(10, W - 10), rng.uniform(10, H - 10));
      const double ang = rng.uniform(0, M_PI);
      const double len = rng.uniform(30, 150);
      Eigen::Vector2d q = p + len * Eigen::Vector2d(std::cos(ang), std::sin(ang));
      q.x() = std::clamp(q.x(), 0.0, W - 1.0);
      q.y() = std::clamp(q.y(), 0.0, H - 1.0);
      if ((p - q).norm() < 2.0) continue;
      kept.emplace_back(line_through(p, q), -1);
    }
    for (const auto& [seg, axis] : kept) {
      bundle.lines.push_back(seg);
      truth.line_axis_labels.push_back(axis);
    }
  }

  bundle.edge_map = EdgeMap(W, H);
  for (const auto& e : redges) {
    Eigen::Vector2d p, q;
    if (!clip_project_segment(cam, e.a, e.b, W, H, p, q)) continue;
    stamp_segment(bundle.edge_map, p, q);
  }
  gaussian_blur_scaled(bundle.edge_map, 1.0, 2.5);

  // Model library with synthetic descriptors.
  std::set<int> truth_models;
  for (const auto& o : truth.objects) truth_models.insert(o.model_id);
  char namebuf[64];
  for (const auto& v : variants) {
    if (noise.exclude_truth_models && truth_models.count(v.model_id)) continue;
    ModelEntry entry;
    entry.id = v.model_id;
    std::snprintf(namebuf, sizeof(namebuf), "models/m%03d.obj", v.model_id);
    entry.mesh_path = namebuf;
    entry.category = v.category;
    entry.mesh = mesh_cache.at(v.model_id);
    entry.mesh.make_canonical();
    entry.descriptors.model_id = v.model_id;
    entry.descriptors.views.resize(kDescriptorViews, kDescriptorDim);
    for (int r = 0; r < kDescriptorViews; ++r) {
      for (int ccol = 0; ccol < kDescriptorDim; ++ccol)
        entry.descriptors.views(r, ccol) = static_cast<float>(rng.normal());
      entry.descriptors.views.row(r).normalize();
    }
    bundle.models.push_back(std::move(entry));
  }

  // Query descriptors: the truth model's view plus small noise.
  std::map<int, const ModelEntry*> entry_of;
  for (const auto& m : bundle.models) entry_of[m.id] = &m;
  for (auto& inst : bundle.instances) {
    const TruthObject* o = nullptr;
    for (const auto& t : truth.objects)
      if (t.id == inst.id) o = &t;
    inst.query_descriptor.resize(kDescriptorDim);
    const auto it = o ? entry_of.find(o->model_id) : entry_of.end();
    if (it != entry_of.end()) {
      const int view = static_cast<int>(rng.uniform_int(0, kDescriptorViews - 1));
      for (int k = 0; k < kDescriptorDim; ++k)
        inst.query_descriptor[k] =
            it->second->descriptors.views(view, k) +
            static_cast<float>(noise.descriptor_noise * rng.normal());
    } else {
      for (int k = 0; k < kDescriptorDim; ++k)
        inst.query_descriptor[k] = static_cast<float>(rng.normal());
    }
    inst.query_descriptor.normalize();
  }

  if (noise.inject_answers) {
    for (auto& inst : bundle.instances) {
      const TruthObject* o = nullptr;
      for (const auto& t : truth.objects)
        if (t.id == inst.id) o = &t;
      if (!o) continue;
      InjectedAnswers ans;
      const bool layout_parent = o->parent.kind != TruthParent::Kind::Object;
      int parent_cat = kCategoryFloor;
      if (o->parent.kind == TruthParent::Kind::Object) {
        for (const auto& t : truth.objects)
          if (t.id == o->parent.id) parent_cat = t.category;
      } else if (o->parent.kind == TruthParent::Kind::Wall) {
        parent_cat = kCategoryWall;
      } else if (o->parent.kind == TruthParent::Kind::Ceiling) {
        parent_cat = kCategoryCeiling;
      }
      ans.relational[0] =
          answer_of_instance(layout_parent ? inst.id : o->parent.id).scalar;
      ans.relational[1] = answer_of_category(parent_cat).scalar;
      ans.relational[2] = answer_of_type(o->type).scalar;
      ans.relational[3] = answer_of_yesno(layout_parent).scalar;
      ans.non_relational[0] = answer_of_instance(inst.id).scalar;
      ans.non_relational[1] = answer_of_category(inst.category).scalar;
      ans.non_relational[2] = answer_of_yesno(false).scalar;
      ans.non_relational[3] = answer_of_yesno(true).scalar;
      ans.parent_category_top5.push_back(parent_cat);
      while (ans.parent_category_top5.size() < 5) {
        const int c = static_cast<int>(rng.uniform_int(0, kNumCategories - 1));
        if (std::find(ans.parent_category_top5.begin(), ans.parent_category_top5.end(), c) ==
            ans.parent_category_top5.end())
          ans.parent_category_top5.push_back(c);
      }
      inst.answers = std::move(ans);
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

void save_truth(const GroundTruthScene& truth, const std::filesystem::path& path) {
  json j;
  j["seed"] = truth.seed;
  j["room"] = {{"corner", {truth.room.corner.x(), truth.room.corner.y(), truth.room.corner.z()}},
               {"sizes", {truth.room.sizes.x(), truth.room.sizes.y(), truth.room.sizes.z()}},
               {"yaw", truth.room.yaw}};
  json rot = json::array();
  for (int r = 0; r < 3; ++r)
    rot.push_back({truth.camera.R(r, 0), truth.camera.R(r, 1), truth.camera.R(r, 2)});
  j["camera"] = {{"f", truth.camera.f},
                 {"c", {truth.camera.c.x(), truth.camera.c.y()}},
                 {"R", std::move(rot)},
                 {"position",
                  {truth.camera.position.x(), truth.camera.position.y(),
                   truth.camera.position.z()}}};
  json objs = json::array();
  for (const auto& o : truth.objects) {
    objs.push_back(
        {{"id", o.id},
         {"category", o.category},
         {"model", o.model_id},
         {"yaw", o.yaw},
         {"uniform_scale", o.uniform_scale},
         {"position", {o.position.x(), o.position.y(), o.position.z()}},
         {"parent_kind", static_cast<int>(o.parent.kind)},
         {"parent_id", o.parent.id},
         {"parent_wall", o.parent.wall},
         {"type", o.type == SupportType::Below ? "below" : "behind"},
         {"height", o.height},
         {"top_altitude", o.top_altitude},
         {"box_center", {o.box_center.x(), o.box_center.y(), o.box_center.z()}},
         {"box_dims", {o.box_dims.x(), o.box_dims.y(), o.box_dims.z()}},
         {"box_yaw", o.box_yaw}});
  }
  j["objects"] = std::move(objs);
  j["line_axis_labels"] = truth.line_axis_labels;
  write_text_atomic(path, j.dump(2) + "\n");
}

GroundTruthScene load_truth(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(Errc::MissingFile, path.string());
  json j;
  in >> j;
  GroundTruthScene t;
  t.seed = j.at("seed").get<std::uint64_t>();
  const auto& room = j.at("room");
  for (int i = 0; i < 3; ++i) {
    t.room.corner[i] = room.at("corner").at(static_cast<std::size_t>(i)).get<double>();
    t.room.sizes[i] = room.at("sizes").at(static_cast<std::size_t>(i)).get<double>();
  }
  t.room.yaw = room.at("yaw").get<double>();
  const auto& cam = j.at("camera");
  t.camera.f = cam.at("f").get<double>();
  t.camera.c = Eigen::Vector2d(cam.at("c").at(0).get<double>(), cam.at("c").at(1).get<double>());
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c)
      t.camera.R(r, c) = cam.at("R").at(static_cast<std::size_t>(r)).at(static_cast<std::size_t>(c)).get<double>();
  for (int i = 0; i < 3; ++i)
    t.camera.position[i] = cam.at("position").at(static_cast<std::size_t>(i)).get<double>();
  for (int i = 0; i < 3; ++i) t.vps[static_cast<std::size_t>(i)] = truth_vp(t.camera, i);
  for (const auto& oj : j.at("objects")) {
    TruthObject o;
    o.id = oj.at("id").get<int>();
    o.category = oj.at("category").get<int>();
    o.model_id = oj.at("model").get<int>();
    o.yaw = oj.at("yaw").get<double>();
    o.uniform_scale = oj.at("uniform_scale").get<double>();
    for (int i = 0; i < 3; ++i) {
      o.position[i] = oj.at("position").at(static_cast<std::size_t>(i)).get<double>();
      o.box_center[i] = oj.at("box_center").at(static_cast<std::size_t>(i)).get<double>();
      o.box_dims[i] = oj.at("box_dims").at(static_cast<std::size_t>(i)).get<double>();
    }
    o.parent.kind = static_cast<TruthParent::Kind>(oj.at("parent_kind").get<int>());
    o.parent.id = oj.at("parent_id").get<int>();
    o.parent.wall = oj.at("parent_wall").get<int>();
    o.type = oj.at("type").get<std::string>() == "below" ? SupportType::Below
                                                         : SupportType::Behind;
    o.height = oj.at("height").get<double>();
    o.top_altitude = oj.at("top_altitude").get<double>();
    o.box_yaw = oj.at("box_yaw").get<double>();
    t.objects.push_back(o);
  }
  if (j.contains("line_axis_labels"))
    t.line_axis_labels = j.at("line_axis_labels").get<std::vector<int>>();
  return t;
}

double mean_average_precision(std::vector<Detection> detections, double iou_thresh) {
  std::map<int, std::vector<Detection>> by_cat;
  for (const auto& d : detections) by_cat[d.category].push_back(d);
  double ap_sum = 0.0;
  int n_cat = 0;
  for (auto& [cat, dets] : by_cat) {
    std::stable_sort(dets.begin(), dets.end(), [](const Detection& a, const Detection& b) {
      return a.confidence > b.confidence;
    });
    const double n_gt = static_cast<double>(dets.size());  // one GT per detection
    std::vector<double> precision, recall;
    double tp = 0, fp = 0;
    for (const auto& d : dets) {
      if (d.iou3d >= iou_thresh)
        ++tp;
      else
        ++fp;
      precision.push_back(tp / (tp + fp));
      recall.push_back(tp / n_gt);
    }
    // Monotone precision envelope, all-point interpolation.
    for (int i = static_cast<int>(precision.size()) - 2; i >= 0; --i)
      precision[static_cast<std::size_t>(i)] =
          std::max(precision[static_cast<std::size_t>(i)], precision[static_cast<std::size_t>(i) + 1]);
    double ap = 0.0, prev_r = 0.0;
    for (std::size_t i = 0; i < precision.size(); ++i) {
      ap += (recall[i] - prev_r) * precision[i];
      prev_r = recall[i];
    }
    ap_sum += ap;
    ++n_cat;
  }
  return n_cat > 0 ? ap_sum / n_cat : 0.0;
}

EvalMetrics evaluate(const SceneResult& result, const GroundTruthScene& truth) {
  EvalMetrics m;

  std::map<int, const TruthObject*> truth_of;
  for (const auto& o : truth.objects) truth_of[o.id] = &o;
  for (const auto& ro : result.objects)
    if (!truth_of.count(ro.instance_id))
      fail(Errc::IdMismatch, "evaluate: result object " + std::to_string(ro.instance_id) +
                                 " missing from ground truth");

  // Align the estimated room frame to the world: Q maps est-room directions
  // to world directions; snap to the nearest quarter-turn about z.
  const Eigen::Matrix3d Q = truth.camera.R.transpose() * result.calib.camera.R;
  int best_k = 0;
  double best_tr = -1e9;
  for (int k = 0; k < 4; ++k) {
    const Eigen::Matrix3d rz = yaw_matrix(0.5 * M_PI * k);
    const double tr = (rz.transpose() * Q).trace();
    if (tr > best_tr) {
      best_tr = tr;
      best_k = k;
    }
  }
  const double snap_yaw = 0.5 * M_PI * best_k;
  const Eigen::Matrix3d Qs = yaw_matrix(snap_yaw);

  {
    // Per-axis angular deviation of the aligned rotations.
    const Eigen::Matrix3d Ra = result.calib.camera.R * Qs.transpose();
    double worst = 0.0;
    for (int i = 0; i < 3; ++i) {
      const double c = std::clamp(std::abs(Ra.col(i).dot(truth.camera.R.col(i))), -1.0, 1.0);
      worst = std::max(worst, std::acos(c));
    }
    m.vp_angle_error_deg = worst * 180.0 / M_PI;
  }
  m.focal_rel_error = std::abs(result.calib.camera.f - truth.camera.f) / truth.camera.f;
  m.camera_height_error = std::abs(result.calib.camera.h_cam - truth.camera.position.z());

  const Eigen::Vector3d c_est(0.0, 0.0, result.calib.camera.h_cam);
  auto to_world = [&](const Eigen::Vector3d& x) {
    return Qs * (x - c_est) + truth.camera.position;
  };

  if (result.completed >= PipelineStage::Layout) {
    const Eigen::Vector3d est_center =
        to_world(result.layout_fit.layout.corner + 0.5 * result.layout_fit.layout.sizes);
    Eigen::Vector3d est_dims = Qs.cwiseAbs() * result.layout_fit.layout.sizes;
    m.layout_iou = box_iou_3d(est_center, est_dims, 0.0, truth.room.center(), truth.room.sizes,
                              truth.room.yaw);
  }

  // Support accuracy under the four-question criterion.
  if (result.completed >= PipelineStage::Support) {
    std::map<int, const LayoutInstanceInfo*> layout_of;
    for (const auto& li : result.layout_instances) layout_of[li.id] = &li;
    auto wall_to_world = [&](int est_side) {
      // est wall inward normals: 0 +x, 1 -x, 2 +y, 3 -y (est frame).
      const Eigen::Vector3d normals[4] = {{1, 0, 0}, {-1, 0, 0}, {0, 1, 0}, {0, -1, 0}};
      const Eigen::Vector3d n = Qs * normals[est_side];
      int best = 0;
      double bd = -2;
      for (int wall = 0; wall < 4; ++wall) {
        const double d = n.dot(normals[wall]);
        if (d > bd) {
          bd = d;
          best = wall;
        }
      }
      return best;
    };
    int correct = 0, total = 0;
    for (const auto& e : result.graph.edges) {
      const auto t_it = truth_of.find(e.child);
      if (t_it == truth_of.end()) continue;
      const TruthObject& to = *t_it->second;
      ++total;
      bool q_parent, q_cat, q_type, q_hidden;
      const auto li_it = layout_of.find(e.parent);
      const bool est_layout_parent = li_it != layout_of.end();
      q_hidden = est_layout_parent == (to.parent.kind != TruthParent::Kind::Object);
      q_type = e.type == to.type;
      if (est_layout_parent) {
        const LayoutInstanceInfo& li = *li_it->second;
        int truth_cat = kCategoryFloor;
        if (to.parent.kind == TruthParent::Kind::Wall) truth_cat = kCategoryWall;
        if (to.parent.kind == TruthParent::Kind::Ceiling) truth_cat = kCategoryCeiling;
        q_cat = li.category == truth_cat;
        if (to.parent.kind == TruthParent::Kind::Wall)
          q_parent = q_cat && li.wall_side >= 0 && wall_to_world(li.wall_side) == to.parent.wall;
        else
          q_parent = q_cat;
      } else {
        int est_parent_cat = -1;
        for (const auto& r : result.all_instances)
          if (r.id == e.parent) est_parent_cat = r.category;
        int truth_parent_cat = -2;
        if (to.parent.kind == TruthParent::Kind::Object && truth_of.count(to.parent.id))
          truth_parent_cat = truth_of.at(to.parent.id)->category;
        q_parent = to.parent.kind == TruthParent::Kind::Object && e.parent == to.parent.id;
        q_cat = est_parent_cat == truth_parent_cat;
      }
      bool ok = q_parent && q_cat && q_type && q_hidden;
      m.support_correct.push_back(ok);
      if (ok) ++correct;
    }
    m.support_accuracy = total > 0 ? static_cast<double>(correct) / total : 1.0;
  }

  if (result.completed >= PipelineStage::Heights) {
    double err = 0.0;
    int n = 0;
    for (std::size_t i = 0; i < result.heights.instance_ids.size(); ++i) {
      const auto it = truth_of.find(result.heights.instance_ids[i]);
      if (it == truth_of.end() || it->second->height <= 0) continue;
      err += std::abs(result.heights.objects[i].height - it->second->height) /
             it->second->height;
      ++n;
    }
    m.mean_height_rel_error = n > 0 ? err / n : 0.0;
  }

  if (result.completed >= PipelineStage::Place) {
    std::vector<Detection> detections;
    double iou3d_sum = 0.0, iou2d_sum = 0.0;
    int n = 0;
    for (const auto& ro : result.objects) {
      const TruthObject& to = *truth_of.at(ro.instance_id);
      double iou3 = 0.0;
      if (ro.pose.mesh) {
        Eigen::Vector3d mlo, mhi;
        ro.pose.mesh->bounds(mlo, mhi);
        const double pre = ro.pose.prescale;
        const Eigen::Vector3d dims((mhi.x() - mlo.x()) * ro.pose.scale.x() * ro.pose.scale.z() * pre,
                                   (mhi.y() - mlo.y()) * ro.pose.scale.y() * ro.pose.scale.z() * pre,
                                   (mhi.z() - mlo.z()) * ro.pose.scale.z() * pre);
        const Eigen::Vector3d center_est =
            ro.pose.transform(0.5 * (mlo + mhi));
        const Eigen::Vector3d center_w = to_world(center_est);
        const double yaw_w = ro.pose.theta + snap_yaw;
        iou3 = box_iou_3d(center_w, dims, yaw_w, to.box_center, to.box_dims, to.box_yaw);
      }
      m.object_ids.push_back(ro.instance_id);
      m.object_iou3d.push_back(iou3);
      iou3d_sum += iou3;
      iou2d_sum += ro.final_iou;
      detections.push_back({to.category, ro.final_iou, iou3});
      ++n;
    }
    m.mean_object_iou3d = n > 0 ? iou3d_sum / n : 0.0;
    m.mean_final_iou2d = n > 0 ? iou2d_sum / n : 0.0;
    m.map_015 = mean_average_precision(detections, 0.15);
  }
  return m;
}

}  // namespace monoscene
