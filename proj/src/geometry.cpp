#include "tpnet/geometry.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace tpnet {

namespace {

constexpr double kMinDepth = 1e-6;

// Horizontal corner id from sign bits of (x, y): 0:(+,+) 1:(+,-) 2:(-,+) 3:(-,-).
// The ground-plane corner fully determines a vertex's horizontal projection.
inline int corner_of_vertex(int v) { return ((v >> 2) & 1) * 2 + ((v >> 1) & 1); }
inline int upper_vertex(int corner) { return ((corner & 2) << 1) | ((corner & 1) << 1); }
inline int lower_vertex(int corner) { return upper_vertex(corner) | 1; }

}  // namespace

Mat3 rotation_from_yaw(double theta) {
  const double c = std::cos(theta), s = std::sin(theta);
  Mat3 R;
  // columns: box x (length), box y (width), box z (up -> camera -y)
  R << c, -s, 0.0,
       0.0, 0.0, -1.0,
       s, c, 0.0;
  return R;
}

std::array<Vec3, 8> box_vertices(const Vec3& dims) {
  if (dims.x() <= 0.0 || dims.y() <= 0.0 || dims.z() <= 0.0)
    throw ContractError("box_vertices: dimensions must be positive");
  std::array<Vec3, 8> out;
  for (int i = 0; i < 8; ++i) {
    const double sx = (i & 4) ? -1.0 : 1.0;
    const double sy = (i & 2) ? -1.0 : 1.0;
    const double sz = (i & 1) ? -1.0 : 1.0;
    out[static_cast<size_t>(i)] =
        Vec3(sx * dims.x() / 2.0, sy * dims.y() / 2.0, sz * dims.z() / 2.0);
  }
  return out;
}

Vec2 project(const CameraIntrinsics& K, const Mat3& R, const Vec3& T, const Vec3& X) {
  const Vec3 p = R * X + T;
  if (p.z() <= kMinDepth)
    throw GeometryError("project: point behind camera (depth " +
                        std::to_string(p.z()) + ")");
  return Vec2(K.fx * p.x() / p.z() + K.cx, K.fy * p.y() / p.z() + K.cy);
}

double wrap_angle(double a) {
  a = std::fmod(a, 2.0 * M_PI);
  if (a <= -M_PI) a += 2.0 * M_PI;
  if (a > M_PI) a -= 2.0 * M_PI;
  return a;
}

double local_to_global_yaw(double theta_local, double theta_ray) {
  return wrap_angle(theta_ray + theta_local);
}

double ray_angle(const CameraIntrinsics& K, double u) {
  return std::atan2(u - K.cx, K.fx);
}

const std::vector<VertexConfiguration>& enumerate_configurations() {
  static const std::vector<VertexConfiguration> configs = [] {
    // Admissible (left, right) horizontal-corner pairs. Both orderings of the
    // two footprint diagonals occur; of the four adjacent-corner pairs only
    // the orientation consistent with a counterclockwise footprint traversal
    // can appear as (leftmost, rightmost) under this camera convention.
    static constexpr int kLeftRight[8][2] = {
        {0, 3}, {3, 0}, {1, 2}, {2, 1},  // diagonal pairs
        {0, 2}, {2, 3}, {3, 1}, {1, 0},  // adjacent, ccw orientation
    };
    // Admissible (top, bottom) corner pairs: the extreme image rows are
    // always realized on a footprint diagonal, so top and bottom share a
    // corner (same vertical edge) or sit on opposite corners.
    static constexpr int kTopBottom[8][2] = {
        {0, 0}, {1, 1}, {2, 2}, {3, 3},
        {0, 3}, {3, 0}, {1, 2}, {2, 1},
    };
    std::vector<VertexConfiguration> out;
    out.reserve(64);
    for (const auto& lr : kLeftRight)
      for (const auto& tb : kTopBottom)
        out.push_back(VertexConfiguration{
            upper_vertex(lr[0]), upper_vertex(lr[1]),
            upper_vertex(tb[0]), lower_vertex(tb[1])});
    return out;
  }();
  return configs;
}

namespace {

struct LinearSystem {
  Eigen::Matrix<double, 4, 3> A;
  Eigen::Vector4d b;
};

// One row per side: pixel = K-projected vertex coordinate, cross-multiplied
// by the (positive) depth so the unknown translation enters linearly.
LinearSystem build_system(const CameraIntrinsics& K, const Mat3& R, const Vec3& dims,
                          const Box2D& box, const VertexConfiguration& cfg) {
  const auto verts = box_vertices(dims);
  LinearSystem sys;
  const struct {
    int vertex;
    bool horizontal;  // pins a pixel column (else row)
    double pixel;
  } sides[4] = {
      {cfg.left, true, box.x_min},
      {cfg.right, true, box.x_max},
      {cfg.top, false, box.y_min},
      {cfg.bottom, false, box.y_max},
  };
  for (int r = 0; r < 4; ++r) {
    const Vec3 rv = R * verts[static_cast<size_t>(sides[r].vertex)];
    const double pix = sides[r].pixel;
    if (sides[r].horizontal) {
      // fx*(rv.x + Tx) + (cx - pix)*(rv.z + Tz) = 0
      sys.A.row(r) << K.fx, 0.0, K.cx - pix;
      sys.b(r) = -K.fx * rv.x() - (K.cx - pix) * rv.z();
    } else {
      sys.A.row(r) << 0.0, K.fy, K.cy - pix;
      sys.b(r) = -K.fy * rv.y() - (K.cy - pix) * rv.z();
    }
  }
  return sys;
}

double hull_residual(const CameraIntrinsics& K, const Box3D& box, const Box2D& target) {
  const Box2D hull = project_box_hull(K, box);
  return std::abs(hull.x_min - target.x_min) + std::abs(hull.x_max - target.x_max) +
         std::abs(hull.y_min - target.y_min) + std::abs(hull.y_max - target.y_max);
}

// A few Gauss-Newton steps on the true (perspective) side residuals,
// started from the linear solution.
Vec3 gauss_newton_refine(const CameraIntrinsics& K, const Mat3& R, const Vec3& dims,
                         const Box2D& box, const VertexConfiguration& cfg, Vec3 T) {
  const auto verts = box_vertices(dims);
  const struct {
    int vertex;
    bool horizontal;
    double pixel;
  } sides[4] = {
      {cfg.left, true, box.x_min},
      {cfg.right, true, box.x_max},
      {cfg.top, false, box.y_min},
      {cfg.bottom, false, box.y_max},
  };
  for (int iter = 0; iter < 10; ++iter) {
    Eigen::Matrix<double, 4, 3> J;
    Eigen::Vector4d r;
    bool ok = true;
    for (int i = 0; i < 4; ++i) {
      const Vec3 p = R * verts[static_cast<size_t>(sides[i].vertex)] + T;
      if (p.z() <= kMinDepth) {
        ok = false;
        break;
      }
      if (sides[i].horizontal) {
        r(i) = K.fx * p.x() / p.z() + K.cx - sides[i].pixel;
        J.row(i) << K.fx / p.z(), 0.0, -K.fx * p.x() / (p.z() * p.z());
      } else {
        r(i) = K.fy * p.y() / p.z() + K.cy - sides[i].pixel;
        J.row(i) << 0.0, K.fy / p.z(), -K.fy * p.y() / (p.z() * p.z());
      }
    }
    if (!ok) break;
    const Eigen::Vector3d step =
        (J.transpose() * J).ldlt().solve(J.transpose() * r);
    if (!step.allFinite()) break;
    T -= step;
    if (step.norm() < 1e-12) break;
  }
  return T;
}

}  // namespace

TranslationSolution solve_translation(const CameraIntrinsics& K, double yaw,
                                      const Vec3& dims, const Box2D& box,
                                      const VertexConfiguration& config,
                                      bool refine_gauss_newton) {
  K.validate();
  box.validate();
  if (dims.x() <= 0.0 || dims.y() <= 0.0 || dims.z() <= 0.0)
    throw ContractError("solve_translation: dimensions must be positive");

  const Mat3 R = rotation_from_yaw(yaw);
  const LinearSystem sys = build_system(K, R, dims, box, config);

  Eigen::ColPivHouseholderQR<Eigen::Matrix<double, 4, 3>> qr(sys.A);
  if (qr.rank() < 3)
    throw GeometryError("solve_translation: rank-deficient side constraints");
  Vec3 T = qr.solve(sys.b);
  if (refine_gauss_newton && T.z() > kMinDepth)
    T = gauss_newton_refine(K, R, dims, box, config, T);
  if (T.z() <= kMinDepth)
    throw GeometryError("solve_translation: solution behind camera");

  Box3D solved{T, dims, yaw};
  return TranslationSolution{T, hull_residual(K, solved, box)};
}

RecoveredBox recover_box3d(const CameraIntrinsics& K, double yaw, const Vec3& dims,
                           const Box2D& box, bool refine_gauss_newton) {
  if (dims.x() <= 0.0 || dims.y() <= 0.0 || dims.z() <= 0.0)
    throw ContractError("recover_box3d: dimensions must be positive");
  const auto& configs = enumerate_configurations();
  RecoveredBox best;
  best.residual_px = std::numeric_limits<double>::infinity();
  for (size_t i = 0; i < configs.size(); ++i) {
    TranslationSolution sol;
    try {
      sol = solve_translation(K, yaw, dims, box, configs[i], refine_gauss_newton);
    } catch (const GeometryError&) {
      continue;  // degenerate or behind-camera configuration
    }
    if (sol.residual_px < best.residual_px) {
      best.box = Box3D{sol.translation, dims, yaw};
      best.config_index = static_cast<int>(i);
      best.residual_px = sol.residual_px;
    }
  }
  if (best.config_index < 0)
    throw GeometryError("recover_box3d: no configuration admits a solution");
  return best;
}

Box2D project_box_hull(const CameraIntrinsics& K, const Box3D& box) {
  box.validate();
  const Mat3 R = rotation_from_yaw(box.yaw);
  const auto verts = box_vertices(box.dims);
  Box2D hull{std::numeric_limits<double>::infinity(),
             std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity(),
             -std::numeric_limits<double>::infinity()};
  for (const Vec3& v : verts) {
    const Vec2 p = project(K, R, box.translation, v);
    hull.x_min = std::min(hull.x_min, p.x());
    hull.x_max = std::max(hull.x_max, p.x());
    hull.y_min = std::min(hull.y_min, p.y());
    hull.y_max = std::max(hull.y_max, p.y());
  }
  return hull;
}

// ---- oriented IoU ---------------------------------------------------------

namespace {

using Poly = std::vector<Vec2>;

// Footprint corners in the camera ground plane (x, z), counterclockwise.
Poly footprint(const Box3D& b) {
  const double c = std::cos(b.yaw), s = std::sin(b.yaw);
  const double hx = b.dims.x() / 2.0, hy = b.dims.y() / 2.0;
  // ground-plane axes of the box: length dir (c, s), width dir (-s, c)
  const Vec2 center(b.translation.x(), b.translation.z());
  const Vec2 ex(c, s), ey(-s, c);
  return {center + ex * hx + ey * hy, center - ex * hx + ey * hy,
          center - ex * hx - ey * hy, center + ex * hx - ey * hy};
}

double polygon_area(const Poly& p) {
  double a = 0.0;
  for (size_t i = 0; i < p.size(); ++i) {
    const Vec2& u = p[i];
    const Vec2& v = p[(i + 1) % p.size()];
    a += u.x() * v.y() - v.x() * u.y();
  }
  return std::abs(a) / 2.0;
}

// Sutherland-Hodgman clip of subject polygon against convex clip polygon.
Poly clip_convex(const Poly& subject, const Poly& clip) {
  Poly out = subject;
  const int n = static_cast<int>(clip.size());
  for (int e = 0; e < n && !out.empty(); ++e) {
    const Vec2& a = clip[static_cast<size_t>(e)];
    const Vec2& b = clip[static_cast<size_t>((e + 1) % n)];
    const Vec2 edge = b - a;
    auto inside = [&](const Vec2& p) {
      return edge.x() * (p.y() - a.y()) - edge.y() * (p.x() - a.x()) >= 0.0;
    };
    Poly next;
    for (size_t i = 0; i < out.size(); ++i) {
      const Vec2& cur = out[i];
      const Vec2& prev = out[(i + out.size() - 1) % out.size()];
      const bool cur_in = inside(cur), prev_in = inside(prev);
      if (cur_in != prev_in) {
        // segment crosses the clip line
        const Vec2 d = cur - prev;
        const double denom = edge.x() * d.y() - edge.y() * d.x();
        const double t =
            (edge.x() * (a.y() - prev.y()) - edge.y() * (a.x() - prev.x())) / denom;
        next.push_back(prev + d * t);
      }
      if (cur_in) next.push_back(cur);
    }
    out = std::move(next);
  }
  return out;
}

}  // namespace

double iou3d(const Box3D& a, const Box3D& b) {
  a.validate();
  b.validate();
  const Poly inter = clip_convex(footprint(a), footprint(b));
  if (inter.size() < 3) return 0.0;
  const double ground = polygon_area(inter);
  // vertical extent: center y with half-height dz/2 (camera y points down)
  const double a_lo = a.translation.y() - a.dims.z() / 2.0;
  const double a_hi = a.translation.y() + a.dims.z() / 2.0;
  const double b_lo = b.translation.y() - b.dims.z() / 2.0;
  const double b_hi = b.translation.y() + b.dims.z() / 2.0;
  const double v = std::max(0.0, std::min(a_hi, b_hi) - std::max(a_lo, b_lo));
  const double inter_vol = ground * v;
  const double vol_a = a.dims.prod();
  const double vol_b = b.dims.prod();
  const double uni = vol_a + vol_b - inter_vol;
  return uni <= 0.0 ? 0.0 : std::clamp(inter_vol / uni, 0.0, 1.0);
}

}  // namespace tpnet
