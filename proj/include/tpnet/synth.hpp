#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "tpnet/geometry.hpp"
#include "tpnet/pose.hpp"
#include "tpnet/rng.hpp"
#include "tpnet/tracks.hpp"

namespace tpnet {

// Ground frame: x lateral (right), y longitudinal (away from the camera),
// origin at the camera foot. The camera looks straight down +y from
// camera_height above the ground.

// Smoothstep lateral shift: offset_m * (3u^2 - 2u^3) over [start_s, start_s +
// duration_s]; the endpoint is reached exactly.
struct LaneChange {
  double start_s = 0.0;
  double duration_s = 1.0;
  double offset_m = 0.0;
};

struct KinematicScript {
  Pos2 pos0 = Pos2::Zero();   // meters
  Pos2 vel0 = Pos2::Zero();   // m/s
  Pos2 accel = Pos2::Zero();  // m/s^2
  std::optional<LaneChange> lane_change;
};

struct VehicleSpec {
  int id = 0;
  Vec3 dims = Vec3(4.5, 1.8, 1.6);  // length, width, height (m)
  KinematicScript script;
};

struct Scenario {
  std::string name = "custom";
  std::vector<VehicleSpec> vehicles;
  double duration_s = 12.0;
  double dt = 0.5;
  CameraIntrinsics camera{1000.0, 1000.0, 960.0, 540.0};
  int image_width = 1920;
  int image_height = 1080;
  double camera_height = 1.5;
  // Seeded start-state randomization: per-vehicle position sigma (lateral
  // uses a quarter of it), per-vehicle speed sigma, and one speed offset
  // shared by every vehicle (keeps relative gaps safe across seeds).
  double jitter_pos = 0.0;
  double jitter_vel = 0.0;
  double jitter_vel_common = 0.0;
  double min_gap = 2.0;  // meters, center-to-center

  void validate() const;
};

Pos2 script_position(const KinematicScript& s, double t);
Pos2 script_velocity(const KinematicScript& s, double t);

// Heading from +y toward +x; zero (camera-aligned) when nearly stopped.
double heading_of(const Pos2& vel);

// Camera-frame box for a vehicle at a ground pose. The box center sits half
// the vehicle height above the ground plane.
Box3D ground_to_camera(const Pos2& ground, double heading, const Vec3& dims,
                       double camera_height);

struct VehicleTruth {
  int id = 0;
  Pos2 ground = Pos2::Zero();
  Pos2 vel = Pos2::Zero();
  Box3D cam_box;
};

struct FrameTruth {
  int frame = 0;
  std::vector<VehicleTruth> vehicles;
};

struct GeneratedData {
  Scenario scenario;  // post-jitter scripts
  TrackSet tracks;    // ground positions per vehicle
  std::vector<FrameTruth> frames;
};

// Simulates the scenario at its frame rate. Throws InputError when any two
// vehicles come within min_gap of each other.
GeneratedData generate(const Scenario& scenario, std::uint64_t seed);

struct RenderedVehicle {
  int id = 0;
  bool visible = false;  // fully inside the image, in front of the camera
  Box2D box;             // tight hull of the projected cuboid (+ pixel noise)
  PatchFeatures patch;   // shaded 16x16 resample, noise-free geometry
};

struct RenderOptions {
  double sigma_px = 0.0;     // Gaussian noise on the 2D box corners
  double min_depth = 0.1;    // meters; nearer vehicles are flagged invisible
  double min_size_px = 2.0;  // smaller boxes are flagged invisible
};

// Pinhole render of one frame; one entry per scenario vehicle, in order.
// rng is only consulted when sigma_px > 0.
std::vector<RenderedVehicle> render_frame(const FrameTruth& frame,
                                          const Scenario& scenario,
                                          const RenderOptions& opts = {},
                                          Rng* rng = nullptr);

// Detector-style row: noisy 2D box plus oracle dims/orientation (theta_local
// is measured against the ray through the final box center).
struct DetectionRow {
  int frame = 0;
  int id = 0;
  Box2D box;
  Vec3 dims = Vec3::Zero();
  double theta_local = 0.0;
  PatchFeatures patch;
};

std::vector<DetectionRow> make_detections(const GeneratedData& data,
                                          const RenderOptions& opts,
                                          const NoiseSpec& pose_noise,
                                          std::uint64_t seed);

std::vector<std::string> preset_names();
Scenario preset_scenario(const std::string& name);  // InputError on unknown

}  // namespace tpnet
