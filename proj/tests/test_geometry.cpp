#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <tuple>
#include <vector>

#include "tpnet/geometry.hpp"
#include "tpnet/rng.hpp"

using namespace tpnet;

namespace {

const CameraIntrinsics kCam{1000.0, 1000.0, 960.0, 540.0};
constexpr double kPi = std::numbers::pi;

// Rodrigues rotation about the camera's up axis (0,-1,0); an independent
// construction of the yaw rotation used as an oracle.
Mat3 rodrigues_up(double theta) {
  const Vec3 a(0.0, -1.0, 0.0);
  Mat3 ax;
  ax << 0.0, -a.z(), a.y(), a.z(), 0.0, -a.x(), -a.y(), a.x(), 0.0;
  return Mat3::Identity() + std::sin(theta) * ax + (1.0 - std::cos(theta)) * ax * ax;
}

// Which configuration the true projection actually realizes: the extreme
// vertices of the 8 projected corners, left/right canonicalized to the upper
// vertex of the touching vertical edge (clear the z bit).
VertexConfiguration realized_config(const CameraIntrinsics& K, const Box3D& box) {
  const Mat3 R = rotation_from_yaw(box.yaw);
  const auto verts = box_vertices(box.dims);
  int l = 0, r = 0, t = 0, b = 0;
  std::array<Vec2, 8> p;
  for (int i = 0; i < 8; ++i) {
    p[static_cast<size_t>(i)] = project(K, R, box.translation, verts[static_cast<size_t>(i)]);
    if (p[static_cast<size_t>(i)].x() < p[static_cast<size_t>(l)].x()) l = i;
    if (p[static_cast<size_t>(i)].x() > p[static_cast<size_t>(r)].x()) r = i;
    if (p[static_cast<size_t>(i)].y() < p[static_cast<size_t>(t)].y()) t = i;
    if (p[static_cast<size_t>(i)].y() > p[static_cast<size_t>(b)].y()) b = i;
  }
  return {l & ~1, r & ~1, t, b};
}

bool hull_in_frame(const Box2D& h, double w = 1920.0, double hgt = 1080.0) {
  return h.x_min >= 0.0 && h.y_min >= 0.0 && h.x_max <= w && h.y_max <= hgt &&
         h.width() > 2.0 && h.height() > 2.0;
}

Box3D random_road_box(Rng& rng) {
  Box3D b;
  const double z = rng.uniform(5.0, 60.0);
  b.translation = Vec3(rng.uniform(-0.3, 0.3) * z, rng.uniform(0.2, 0.9), z);
  b.dims = Vec3(rng.uniform(3.5, 5.5), rng.uniform(1.6, 2.1), rng.uniform(1.4, 2.0));
  b.yaw = rng.uniform(-kPi, kPi);
  return b;
}

// ---- independent IoU oracle ----------------------------------------------

std::array<Vec2, 4> footprint(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const Vec2 ex(c, s), ey(-s, c);
  const Vec2 ctr(b.translation.x(), b.translation.z());
  const double hx = 0.5 * b.dims.x(), hy = 0.5 * b.dims.y();
  return {ctr + hx * ex + hy * ey, ctr - hx * ex + hy * ey,
          ctr - hx * ex - hy * ey, ctr + hx * ex - hy * ey};
}

bool inside_quad(const Vec2& p, const std::array<Vec2, 4>& q) {
  for (int i = 0; i < 4; ++i) {
    const Vec2 a = q[static_cast<size_t>(i)];
    const Vec2 b = q[static_cast<size_t>((i + 1) % 4)];
    const double cr = (b.x() - a.x()) * (p.y() - a.y()) - (b.y() - a.y()) * (p.x() - a.x());
    if (cr < -1e-12) return false;
  }
  return true;
}

std::vector<Vec2> edge_intersections(const std::array<Vec2, 4>& qa,
                                     const std::array<Vec2, 4>& qb) {
  std::vector<Vec2> out;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) {
      const Vec2 p = qa[static_cast<size_t>(i)];
      const Vec2 r = qa[static_cast<size_t>((i + 1) % 4)] - p;
      const Vec2 q = qb[static_cast<size_t>(j)];
      const Vec2 s = qb[static_cast<size_t>((j + 1) % 4)] - q;
      const double den = r.x() * s.y() - r.y() * s.x();
      if (std::abs(den) < 1e-14) continue;
      const Vec2 qp = q - p;
      const double t = (qp.x() * s.y() - qp.y() * s.x()) / den;
      const double u = (qp.x() * r.y() - qp.y() * r.x()) / den;
      if (t >= -1e-12 && t <= 1.0 + 1e-12 && u >= -1e-12 && u <= 1.0 + 1e-12)
        out.push_back(p + t * r);
    }
  return out;
}

double hull_area(std::vector<Vec2> pts) {
  if (pts.size() < 3) return 0.0;
  std::sort(pts.begin(), pts.end(), [](const Vec2& a, const Vec2& b) {
    return a.x() < b.x() || (a.x() == b.x() && a.y() < b.y());
  });
  auto cross = [](const Vec2& o, const Vec2& a, const Vec2& b) {
    return (a.x() - o.x()) * (b.y() - o.y()) - (a.y() - o.y()) * (b.x() - o.x());
  };
  std::vector<Vec2> hull(2 * pts.size());
  size_t k = 0;
  for (size_t i = 0; i < pts.size(); ++i) {
    while (k >= 2 && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  const size_t lower = k + 1;
  for (size_t i = pts.size() - 1; i-- > 0;) {
    while (k >= lower && cross(hull[k - 2], hull[k - 1], pts[i]) <= 0.0) --k;
    hull[k++] = pts[i];
  }
  hull.resize(k > 1 ? k - 1 : 0);
  double area = 0.0;
  for (size_t i = 0; i < hull.size(); ++i) {
    const Vec2& a = hull[i];
    const Vec2& b = hull[(i + 1) % hull.size()];
    area += a.x() * b.y() - b.x() * a.y();
  }
  return 0.5 * std::abs(area);
}

// Alternative IoU route: intersection polygon = convex hull of contained
// corners plus all edge-edge crossings.
double iou3d_oracle(const Box3D& a, const Box3D& b) {
  const auto qa = footprint(a), qb = footprint(b);
  std::vector<Vec2> pts;
  for (const auto& p : qa)
    if (inside_quad(p, qb)) pts.push_back(p);
  for (const auto& p : qb)
    if (inside_quad(p, qa)) pts.push_back(p);
  for (const auto& p : edge_intersections(qa, qb)) pts.push_back(p);
  const double inter_ground = hull_area(std::move(pts));
  const double ya0 = a.translation.y() - 0.5 * a.dims.z(), ya1 = a.translation.y() + 0.5 * a.dims.z();
  const double yb0 = b.translation.y() - 0.5 * b.dims.z(), yb1 = b.translation.y() + 0.5 * b.dims.z();
  const double dv = std::max(0.0, std::min(ya1, yb1) - std::max(ya0, yb0));
  const double inter = inter_ground * dv;
  const double va = a.dims.x() * a.dims.y() * a.dims.z();
  const double vb = b.dims.x() * b.dims.y() * b.dims.z();
  const double uni = va + vb - inter;
  return uni > 0.0 ? inter / uni : 0.0;
}

}  // namespace

TEST_CASE("rotation_from_yaw is orthonormal and matches the angle-axis oracle") {
  Rng rng(31);
  for (int trial = 0; trial < 50; ++trial) {
    const double th = rng.uniform(-kPi, kPi);
    const Mat3 R = rotation_from_yaw(th);
    CHECK(((R.transpose() * R) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
    CHECK(R.determinant() == doctest::Approx(1.0).epsilon(1e-12));
    const Mat3 oracle = rodrigues_up(th) * rotation_from_yaw(0.0);
    CHECK((R - oracle).cwiseAbs().maxCoeff() < 1e-12);
  }
}

TEST_CASE("rotation_from_yaw at pi/2 is a quarter turn") {
  const Mat3 R = rotation_from_yaw(kPi / 2.0);
  // local +x (forward) swings from +x_cam to +z_cam
  CHECK((R.col(0) - Vec3(0, 0, 1)).norm() < 1e-12);
  CHECK(((R * R.transpose()) - Mat3::Identity()).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("box_vertices sign layout follows the index encoding") {
  const Vec3 d(4.0, 2.0, 1.5);
  const auto v = box_vertices(d);
  CHECK((v[0] - Vec3(2.0, 1.0, 0.75)).norm() < 1e-15);
  CHECK((v[7] - Vec3(-2.0, -1.0, -0.75)).norm() < 1e-15);
  for (int i = 0; i < 8; ++i) {
    CHECK(v[static_cast<size_t>(i)].x() == ((i & 4) ? -2.0 : 2.0));
    CHECK(v[static_cast<size_t>(i)].y() == ((i & 2) ? -1.0 : 1.0));
    CHECK(v[static_cast<size_t>(i)].z() == ((i & 1) ? -0.75 : 0.75));
  }
}

TEST_CASE("project matches the homogeneous-matrix oracle") {
  Rng rng(32);
  for (int trial = 0; trial < 100; ++trial) {
    const double th = rng.uniform(-kPi, kPi);
    const Mat3 R = rotation_from_yaw(th);
    const Vec3 T(rng.uniform(-5.0, 5.0), rng.uniform(-1.0, 1.0), rng.uniform(4.0, 50.0));
    const Vec3 X(rng.uniform(-2.0, 2.0), rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0));
    const Vec2 p = project(kCam, R, T, X);

    Eigen::Matrix3d Km;
    Km << kCam.fx, 0.0, kCam.cx, 0.0, kCam.fy, kCam.cy, 0.0, 0.0, 1.0;
    Eigen::Matrix<double, 3, 4> Rt;
    Rt.leftCols<3>() = R;
    Rt.col(3) = T;
    const Eigen::Vector4d Xh(X.x(), X.y(), X.z(), 1.0);
    const Vec3 ph = Km * (Rt * Xh);
    CHECK(std::abs(p.x() - ph.x() / ph.z()) < 1e-9);
    CHECK(std::abs(p.y() - ph.y() / ph.z()) < 1e-9);
  }
}

TEST_CASE("project rejects points at or behind the camera") {
  CHECK_THROWS_AS(project(kCam, Mat3::Identity(), Vec3(0, 0, -5), Vec3::Zero()),
                  GeometryError);
  CHECK_THROWS_AS(project(kCam, Mat3::Identity(), Vec3(0, 0, 0), Vec3::Zero()),
                  GeometryError);
}

TEST_CASE("wrap_angle lands in (-pi, pi]") {
  CHECK(wrap_angle(kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(-kPi) == doctest::Approx(kPi));
  CHECK(wrap_angle(3.0 * kPi / 2.0) == doctest::Approx(-kPi / 2.0));
  CHECK(wrap_angle(0.3) == doctest::Approx(0.3));
  CHECK(wrap_angle(2.0 * kPi + 0.3) == doctest::Approx(0.3));
  Rng rng(33);
  for (int i = 0; i < 100; ++i) {
    const double a = rng.uniform(-30.0, 30.0);
    const double w = wrap_angle(a);
    CHECK(w > -kPi - 1e-12);
    CHECK(w <= kPi + 1e-12);
    CHECK(std::abs(std::sin(w) - std::sin(a)) < 1e-9);
    CHECK(std::abs(std::cos(w) - std::cos(a)) < 1e-9);
  }
}

TEST_CASE("ray_angle matches the ray-direction oracle") {
  Rng rng(34);
  for (int i = 0; i < 100; ++i) {
    const double phi = rng.uniform(-0.75, 0.75);
    const double r = rng.uniform(5.0, 40.0);
    const Vec3 X(std::sin(phi) * r, 0.0, std::cos(phi) * r);
    const Vec2 p = project(kCam, Mat3::Identity(), Vec3::Zero(), X);
    CHECK(ray_angle(kCam, p.x()) == doctest::Approx(phi).epsilon(1e-9));
  }
}

TEST_CASE("local_to_global_yaw composes and wraps") {
  CHECK(local_to_global_yaw(0.2, 0.1) == doctest::Approx(0.3));
  CHECK(local_to_global_yaw(kPi - 0.1, 0.3) == doctest::Approx(-kPi + 0.2));
}

TEST_CASE("configuration set has exactly 64 unique canonical tuples") {
  const auto& cfgs = enumerate_configurations();
  CHECK(cfgs.size() == 64);
  std::set<std::tuple<int, int, int, int>> seen;
  for (const auto& c : cfgs) {
    seen.insert({c.left, c.right, c.top, c.bottom});
    // left/right canonical form: upper vertex (z bit clear)
    CHECK((c.left & 1) == 0);
    CHECK((c.right & 1) == 0);
    // top touches an upper vertex, bottom a lower vertex
    CHECK((c.top & 1) == 0);
    CHECK((c.bottom & 1) == 1);
  }
  CHECK(seen.size() == 64);
}

TEST_CASE("the realized configuration of random boxes is always in the set") {
  const auto& cfgs = enumerate_configurations();
  std::set<std::tuple<int, int, int, int>> table;
  for (const auto& c : cfgs) table.insert({c.left, c.right, c.top, c.bottom});
  Rng rng(35);
  int checked = 0;
  while (checked < 500) {
    const Box3D b = random_road_box(rng);
    const Box2D hull = project_box_hull(kCam, b);
    if (!hull_in_frame(hull)) continue;
    const VertexConfiguration rc = realized_config(kCam, b);
    CHECK(table.count({rc.left, rc.right, rc.top, rc.bottom}) == 1);
    ++checked;
  }
}

TEST_CASE("noise-free solve with the true configuration recovers T to 1e-6") {
  Box3D truth;
  truth.translation = Vec3(1.0, 0.0, 20.0);
  truth.dims = Vec3(4.5, 1.8, 1.6);
  truth.yaw = 0.2;
  const Box2D det = project_box_hull(kCam, truth);
  const VertexConfiguration cfg = realized_config(kCam, truth);
  const TranslationSolution sol = solve_translation(kCam, truth.yaw, truth.dims, det, cfg);
  CHECK((sol.translation - truth.translation).norm() < 1e-6);
  CHECK(sol.residual_px < 1e-9);
}

TEST_CASE("render-then-recover sweep: 1000 boxes, median < 1e-5 m, max < 1e-3 m") {
  Rng rng(36);
  std::vector<double> errors;
  while (errors.size() < 1000) {
    const Box3D truth = random_road_box(rng);
    const Box2D det = project_box_hull(kCam, truth);
    if (!hull_in_frame(det)) continue;
    const RecoveredBox rec = recover_box3d(kCam, truth.yaw, truth.dims, det);
    errors.push_back((rec.box.translation - truth.translation).norm());

    // winning configuration reproduces the detection within 1e-6 px
    const Box2D re = project_box_hull(kCam, rec.box);
    CHECK(std::abs(re.x_min - det.x_min) < 1e-6);
    CHECK(std::abs(re.x_max - det.x_max) < 1e-6);
    CHECK(std::abs(re.y_min - det.y_min) < 1e-6);
    CHECK(std::abs(re.y_max - det.y_max) < 1e-6);

    // optimality: residual at returned T <= residual at true T (true config)
    const VertexConfiguration tc = realized_config(kCam, truth);
    const TranslationSolution at_truth = solve_translation(kCam, truth.yaw, truth.dims, det, tc);
    CHECK(rec.residual_px <= at_truth.residual_px + 1e-9);
  }
  std::vector<double> sorted = errors;
  std::sort(sorted.begin(), sorted.end());
  CAPTURE(sorted[500]);
  CAPTURE(sorted.back());
  CHECK(sorted[500] < 1e-5);
  CHECK(sorted.back() < 1e-3);
}

TEST_CASE("gauss-newton refinement does not degrade the linear solution") {
  Rng rng(37);
  int checked = 0;
  while (checked < 50) {
    const Box3D truth = random_road_box(rng);
    const Box2D det = project_box_hull(kCam, truth);
    if (!hull_in_frame(det)) continue;
    const RecoveredBox lin = recover_box3d(kCam, truth.yaw, truth.dims, det, false);
    const RecoveredBox ref = recover_box3d(kCam, truth.yaw, truth.dims, det, true);
    CHECK(ref.residual_px <= lin.residual_px + 1e-9);
    ++checked;
  }
}

TEST_CASE("recover_box3d rejects invalid rectangles") {
  CHECK_THROWS_AS(recover_box3d(kCam, 0.1, Vec3(4, 2, 1.5), Box2D{10, 10, 5, 20}),
                  ContractError);
}

TEST_CASE("iou3d: identity, disjoint, and the 1/3 half-overlap case") {
  Box3D a;
  a.translation = Vec3(1.0, 0.5, 12.0);
  a.dims = Vec3(4.0, 2.0, 1.5);
  a.yaw = 0.4;
  CHECK(iou3d(a, a) == doctest::Approx(1.0).epsilon(1e-12));

  Box3D far = a;
  far.translation += Vec3(50.0, 0.0, 0.0);
  CHECK(iou3d(a, far) == 0.0);

  // axis-aligned, shifted by half the length along x: I = V/2, U = 3V/2
  Box3D b0, b1;
  b0.dims = b1.dims = Vec3(4.0, 2.0, 1.5);
  b0.translation = Vec3(0.0, 0.0, 10.0);
  b1.translation = Vec3(2.0, 0.0, 10.0);
  CHECK(std::abs(iou3d(b0, b1) - 1.0 / 3.0) < 1e-12);
}

TEST_CASE("iou3d matches the hull-route oracle on random cases") {
  Rng rng(38);
  for (int trial = 0; trial < 100; ++trial) {
    Box3D a, b;
    a.translation = Vec3(rng.uniform(-3, 3), rng.uniform(-0.5, 0.5), rng.uniform(8, 14));
    a.dims = Vec3(rng.uniform(2.5, 5.0), rng.uniform(1.5, 2.2), rng.uniform(1.2, 2.0));
    a.yaw = rng.uniform(-kPi, kPi);
    b.translation = a.translation + Vec3(rng.uniform(-3, 3), rng.uniform(-1, 1), rng.uniform(-3, 3));
    b.dims = Vec3(rng.uniform(2.5, 5.0), rng.uniform(1.5, 2.2), rng.uniform(1.2, 2.0));
    b.yaw = rng.uniform(-kPi, kPi);
    const double ours = iou3d(a, b);
    const double oracle = iou3d_oracle(a, b);
    CHECK(std::abs(ours - oracle) < 1e-12);
    CHECK(std::abs(iou3d(b, a) - ours) < 1e-12);
    CHECK(ours >= 0.0);
    CHECK(ours <= 1.0 + 1e-12);
  }
}
