#include "tpnet/synth.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <set>

namespace tpnet {

namespace {

double smoothstep(double u) { return u * u * (3.0 - 2.0 * u); }

// 6 cuboid faces: outward local axis, sign, vertex ring, albedo. Local x is
// the vehicle's forward axis, z points up (camera -y).
struct Face {
  int axis;
  double sign;
  std::array<int, 4> ring;
  double albedo;
};

constexpr std::array<Face, 6> kFaces{{
    {0, +1.0, {0, 1, 3, 2}, 0.95},  // front
    {0, -1.0, {4, 5, 7, 6}, 0.55},  // rear
    {1, +1.0, {0, 1, 5, 4}, 0.75},  // side
    {1, -1.0, {2, 3, 7, 6}, 0.75},  // side
    {2, +1.0, {0, 2, 6, 4}, 0.40},  // top
    {2, -1.0, {1, 3, 7, 5}, 0.20},  // bottom
}};

Vec2 pix(const CameraIntrinsics& K, const Vec3& cam) {
  return {K.fx * cam.x() / cam.z() + K.cx, K.fy * cam.y() / cam.z() + K.cy};
}

double cross2(const Vec2& a, const Vec2& b) { return a.x() * b.y() - a.y() * b.x(); }

bool inside_quad(const std::array<Vec2, 4>& p, const Vec2& q, double eps) {
  bool any_pos = false, any_neg = false;
  for (int k = 0; k < 4; ++k) {
    const double s = cross2(p[(k + 1) % 4] - p[k], q - p[k]);
    if (s > eps) any_pos = true;
    if (s < -eps) any_neg = true;
  }
  return !(any_pos && any_neg);
}

PatchFeatures render_patch(const Box3D& box, const CameraIntrinsics& K,
                           const Box2D& roi, int image_w, int image_h) {
  const Mat3 R = rotation_from_yaw(box.yaw);
  const auto verts = box_vertices(box.dims);
  std::array<Vec3, 8> cam;
  std::array<Vec2, 8> uv;
  for (int i = 0; i < 8; ++i) {
    cam[static_cast<size_t>(i)] = R * verts[static_cast<size_t>(i)] + box.translation;
    uv[static_cast<size_t>(i)] = pix(K, cam[static_cast<size_t>(i)]);
  }

  struct DrawFace {
    std::array<Vec2, 4> quad;
    double depth;
    double shade;
  };
  std::vector<DrawFace> draw;
  for (const Face& f : kFaces) {
    Vec3 n_local = Vec3::Zero(), c_local = Vec3::Zero();
    n_local(f.axis) = f.sign;
    c_local(f.axis) = f.sign * box.dims(f.axis) / 2.0;
    const Vec3 n = R * n_local;
    const Vec3 c = R * c_local + box.translation;
    const double facing = -n.dot(c.normalized());
    if (facing <= 0.0) continue;  // backface
    DrawFace df;
    for (int k = 0; k < 4; ++k)
      df.quad[static_cast<size_t>(k)] = uv[static_cast<size_t>(f.ring[static_cast<size_t>(k)])];
    df.depth = c.z();
    df.shade = std::clamp(f.albedo * (0.35 + 0.65 * facing), 0.0, 1.0);
    draw.push_back(df);
  }
  // painter's order, far to near
  std::sort(draw.begin(), draw.end(),
            [](const DrawFace& a, const DrawFace& b) { return a.depth > b.depth; });

  PatchFeatures patch;
  const double eps = 1e-9 * std::max(1.0, roi.width() * roi.height());
  for (int pr = 0; pr < 16; ++pr) {
    for (int pc = 0; pc < 16; ++pc) {
      const Vec2 q(roi.x_min + (pc + 0.5) / 16.0 * roi.width(),
                   roi.y_min + (pr + 0.5) / 16.0 * roi.height());
      double value = 0.0;
      for (const DrawFace& df : draw)
        if (inside_quad(df.quad, q, eps)) value = df.shade;
      patch.pixels[static_cast<size_t>(pr) * 16 + pc] = value;
    }
  }
  patch.aspect = roi.width() / roi.height();
  patch.area_frac = roi.width() * roi.height() /
                    (static_cast<double>(image_w) * static_cast<double>(image_h));
  patch.center_offset = ((roi.x_min + roi.x_max) / 2.0 - K.cx) / image_w;
  return patch;
}

}  // namespace

void Scenario::validate() const {
  if (vehicles.empty()) throw InputError("Scenario: needs at least one vehicle");
  if (duration_s <= 0.0 || dt <= 0.0)
    throw InputError("Scenario: duration and dt must be positive");
  if (camera.fx <= 0.0 || camera.fy <= 0.0)
    throw InputError("Scenario: camera focal lengths must be positive");
  if (image_width <= 0 || image_height <= 0)
    throw InputError("Scenario: image size must be positive");
  if (min_gap < 0.0) throw InputError("Scenario: min_gap must be non-negative");
  std::set<int> ids;
  for (const auto& v : vehicles) {
    if (!ids.insert(v.id).second)
      throw InputError("Scenario: duplicate vehicle id " + std::to_string(v.id));
    if (v.dims.minCoeff() <= 0.0)
      throw InputError("Scenario: vehicle dims must be positive");
    if (v.script.lane_change && v.script.lane_change->duration_s <= 0.0)
      throw InputError("Scenario: lane change duration must be positive");
  }
}

Pos2 script_position(const KinematicScript& s, double t) {
  Pos2 p = s.pos0 + s.vel0 * t + 0.5 * s.accel * t * t;
  if (s.lane_change) {
    const auto& lc = *s.lane_change;
    const double u = std::clamp((t - lc.start_s) / lc.duration_s, 0.0, 1.0);
    p.x() += lc.offset_m * smoothstep(u);
  }
  return p;
}

Pos2 script_velocity(const KinematicScript& s, double t) {
  Pos2 v = s.vel0 + s.accel * t;
  if (s.lane_change) {
    const auto& lc = *s.lane_change;
    const double u = (t - lc.start_s) / lc.duration_s;
    if (u > 0.0 && u < 1.0)
      v.x() += lc.offset_m * 6.0 * u * (1.0 - u) / lc.duration_s;
  }
  return v;
}

double heading_of(const Pos2& vel) {
  if (vel.norm() < 1e-6) return 0.0;
  return std::atan2(vel.x(), vel.y());
}

Box3D ground_to_camera(const Pos2& ground, double heading, const Vec3& dims,
                       double camera_height) {
  Box3D box;
  box.translation = Vec3(ground.x(), camera_height - dims.z() / 2.0, ground.y());
  box.dims = dims;
  box.yaw = wrap_angle(M_PI / 2.0 - heading);
  return box;
}

GeneratedData generate(const Scenario& scenario, std::uint64_t seed) {
  scenario.validate();
  GeneratedData out;
  out.scenario = scenario;
  Rng root(seed);
  Rng jr = root.fork(0x5CE11A);
  const double common_dv = jr.normal(0.0, 1.0) * scenario.jitter_vel_common;
  for (auto& v : out.scenario.vehicles) {
    auto& sc = v.script;
    sc.pos0.y() += jr.normal(0.0, 1.0) * scenario.jitter_pos;
    sc.pos0.x() += jr.normal(0.0, 1.0) * 0.25 * scenario.jitter_pos;
    sc.vel0.y() += jr.normal(0.0, 1.0) * scenario.jitter_vel + common_dv;
  }

  const int n_frames =
      static_cast<int>(std::lround(scenario.duration_s / scenario.dt)) + 1;
  std::vector<Observation> rows;
  for (int f = 0; f < n_frames; ++f) {
    const double t = f * scenario.dt;
    FrameTruth ft;
    ft.frame = f;
    for (const auto& v : out.scenario.vehicles) {
      VehicleTruth vt;
      vt.id = v.id;
      vt.ground = script_position(v.script, t);
      vt.vel = script_velocity(v.script, t);
      vt.cam_box = ground_to_camera(vt.ground, heading_of(vt.vel), v.dims,
                                    scenario.camera_height);
      ft.vehicles.push_back(vt);
      rows.push_back({f, v.id, vt.ground});
    }
    for (size_t i = 0; i < ft.vehicles.size(); ++i)
      for (size_t j = i + 1; j < ft.vehicles.size(); ++j) {
        const double gap = (ft.vehicles[i].ground - ft.vehicles[j].ground).norm();
        if (gap < scenario.min_gap)
          throw InputError("scenario '" + scenario.name + "': vehicles " +
                           std::to_string(ft.vehicles[i].id) + " and " +
                           std::to_string(ft.vehicles[j].id) + " collide at frame " +
                           std::to_string(f) + " (gap " + std::to_string(gap) + " m)");
      }
    out.frames.push_back(std::move(ft));
  }
  out.tracks = assemble(rows, scenario.dt);
  return out;
}

std::vector<RenderedVehicle> render_frame(const FrameTruth& frame,
                                          const Scenario& scenario,
                                          const RenderOptions& opts, Rng* rng) {
  std::vector<RenderedVehicle> out;
  const auto& K = scenario.camera;
  for (const auto& vt : frame.vehicles) {
    RenderedVehicle rv;
    rv.id = vt.id;
    const Mat3 R = rotation_from_yaw(vt.cam_box.yaw);
    const auto verts = box_vertices(vt.cam_box.dims);
    bool in_front = true;
    double u_min = 0, u_max = 0, v_min = 0, v_max = 0;
    for (int i = 0; i < 8 && in_front; ++i) {
      const Vec3 cam = R * verts[static_cast<size_t>(i)] + vt.cam_box.translation;
      if (cam.z() <= opts.min_depth) {
        in_front = false;
        break;
      }
      const Vec2 uv = pix(K, cam);
      if (i == 0) {
        u_min = u_max = uv.x();
        v_min = v_max = uv.y();
      } else {
        u_min = std::min(u_min, uv.x());
        u_max = std::max(u_max, uv.x());
        v_min = std::min(v_min, uv.y());
        v_max = std::max(v_max, uv.y());
      }
    }
    if (in_front && u_min >= 0.0 && v_min >= 0.0 &&
        u_max <= scenario.image_width && v_max <= scenario.image_height &&
        u_max - u_min >= opts.min_size_px && v_max - v_min >= opts.min_size_px) {
      rv.visible = true;
      rv.box = Box2D{u_min, v_min, u_max, v_max};
      rv.patch = render_patch(vt.cam_box, K, rv.box, scenario.image_width,
                              scenario.image_height);
      if (opts.sigma_px > 0.0 && rng != nullptr) {
        rv.box.x_min += rng->normal(0.0, opts.sigma_px);
        rv.box.y_min += rng->normal(0.0, opts.sigma_px);
        rv.box.x_max += rng->normal(0.0, opts.sigma_px);
        rv.box.y_max += rng->normal(0.0, opts.sigma_px);
        if (rv.box.x_min >= rv.box.x_max) {
          const double mid = (rv.box.x_min + rv.box.x_max) / 2.0;
          rv.box.x_min = mid - 0.5;
          rv.box.x_max = mid + 0.5;
        }
        if (rv.box.y_min >= rv.box.y_max) {
          const double mid = (rv.box.y_min + rv.box.y_max) / 2.0;
          rv.box.y_min = mid - 0.5;
          rv.box.y_max = mid + 0.5;
        }
      }
    }
    out.push_back(std::move(rv));
  }
  return out;
}

std::vector<DetectionRow> make_detections(const GeneratedData& data,
                                          const RenderOptions& opts,
                                          const NoiseSpec& pose_noise,
                                          std::uint64_t seed) {
  Rng root(seed);
  Rng box_rng = root.fork(0xB0C5);
  Rng pose_rng = root.fork(0xD105);
  std::vector<DetectionRow> rows;
  for (const auto& frame : data.frames) {
    const auto rendered = render_frame(frame, data.scenario, opts, &box_rng);
    for (size_t i = 0; i < rendered.size(); ++i) {
      const auto& rv = rendered[i];
      if (!rv.visible) continue;
      const auto& vt = frame.vehicles[i];
      const double u_center = (rv.box.x_min + rv.box.x_max) / 2.0;
      const double theta_local =
          wrap_angle(vt.cam_box.yaw - ray_angle(data.scenario.camera, u_center));
      const PoseEstimate est =
          oracle_estimate(vt.cam_box, theta_local, pose_noise, &pose_rng);
      DetectionRow row;
      row.frame = frame.frame;
      row.id = rv.id;
      row.box = rv.box;
      row.dims = est.dims;
      row.theta_local = est.theta_local;
      row.patch = rv.patch;
      rows.push_back(std::move(row));
    }
  }
  return rows;
}

namespace {

VehicleSpec make_vehicle(int id, double x, double y, double vy,
                         std::optional<LaneChange> lc = std::nullopt,
                         double ay = 0.0) {
  static const std::array<Vec3, 3> kDims{
      Vec3(4.5, 1.8, 1.6), Vec3(4.2, 1.75, 1.5), Vec3(5.0, 1.9, 1.7)};
  VehicleSpec v;
  v.id = id;
  v.dims = kDims[static_cast<size_t>(id) % 3];
  v.script.pos0 = Pos2(x, y);
  v.script.vel0 = Pos2(0.0, vy);
  v.script.accel = Pos2(0.0, ay);
  v.script.lane_change = lc;
  return v;
}

Scenario base_scenario(const std::string& name) {
  Scenario s;
  s.name = name;
  s.jitter_pos = 0.6;
  s.jitter_vel = 0.08;
  s.jitter_vel_common = 0.3;
  return s;
}

}  // namespace

std::vector<std::string> preset_names() {
  return {"platoon-3", "platoon-8", "cut-in", "lane-change", "merge", "sparse"};
}

Scenario preset_scenario(const std::string& name) {
  Scenario s = base_scenario(name);
  if (name == "platoon-3") {
    s.vehicles = {make_vehicle(0, 0.0, 8.0, 13.0), make_vehicle(1, 0.0, 20.0, 13.2),
                  make_vehicle(2, 0.0, 32.0, 13.4)};
  } else if (name == "platoon-8") {
    for (int k = 0; k < 4; ++k)
      s.vehicles.push_back(make_vehicle(k, -3.6, 7.0 + 12.0 * k, 12.2 + 0.2 * k));
    for (int k = 0; k < 4; ++k)
      s.vehicles.push_back(make_vehicle(4 + k, 0.0, 13.0 + 12.0 * k, 13.4 + 0.1 * k));
  } else if (name == "cut-in") {
    s.vehicles = {make_vehicle(0, 0.0, 10.0, 13.0),
                  make_vehicle(1, 3.6, 18.0, 13.3, LaneChange{2.0, 3.5, -3.6}),
                  make_vehicle(2, 0.0, 34.0, 13.2)};
  } else if (name == "lane-change") {
    s.vehicles = {make_vehicle(0, 0.0, 12.0, 13.0, LaneChange{2.0, 4.0, 3.5}),
                  make_vehicle(1, 3.6, 26.0, 13.8)};
  } else if (name == "merge") {
    s.vehicles = {make_vehicle(0, 7.2, 6.0, 11.0, LaneChange{1.0, 5.0, -3.6}, 0.4),
                  make_vehicle(1, 3.6, 20.0, 13.5), make_vehicle(2, 0.0, 14.0, 13.0)};
  } else if (name == "sparse") {
    s.vehicles = {make_vehicle(0, -3.6, 8.0, 12.2), make_vehicle(1, 3.6, 55.0, 14.0)};
  } else {
    throw InputError("unknown scenario preset: " + name);
  }
  return s;
}

}  // namespace tpnet
