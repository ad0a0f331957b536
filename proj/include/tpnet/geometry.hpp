#pragma once

#include <array>
#include <vector>

#include <Eigen/Dense>

#include "tpnet/errors.hpp"

namespace tpnet {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

// Pinhole intrinsics. Camera frame: x right, y down, z forward (optical axis).
struct CameraIntrinsics {
  double fx = 0.0, fy = 0.0;
  double cx = 0.0, cy = 0.0;

  void validate() const {
    if (fx <= 0.0 || fy <= 0.0)
      throw ContractError("CameraIntrinsics: focal lengths must be positive");
  }
};

// Upright 3D box in the camera frame. Local axes: x along length d.x,
// y along width d.y, z up along height d.z; roll and pitch are zero by
// construction, only the yaw about the vertical axis is free.
struct Box3D {
  Vec3 translation = Vec3::Zero();  // center, meters
  Vec3 dims = Vec3::Zero();         // (d_x, d_y, d_z), meters
  double yaw = 0.0;                 // radians, camera frame

  void validate() const {
    if (dims.x() <= 0.0 || dims.y() <= 0.0 || dims.z() <= 0.0)
      throw ContractError("Box3D: dimensions must be positive");
  }
};

// Axis-aligned pixel rectangle.
struct Box2D {
  double x_min = 0.0, y_min = 0.0, x_max = 0.0, y_max = 0.0;

  double width() const { return x_max - x_min; }
  double height() const { return y_max - y_min; }
  void validate() const {
    if (!(x_min < x_max) || !(y_min < y_max))
      throw ContractError("Box2D: requires x_min < x_max and y_min < y_max");
  }
};

// Assignment of box vertices to the four sides of a 2D detection rectangle.
// Vertices are indexed 0..7: bit2 set -> -x half, bit1 set -> -y half,
// bit0 set -> -z (lower) half; index 0 is (+,+,+), index 7 is (-,-,-).
// Left/right use the upper vertex of the touching vertical box edge as the
// canonical representative (the constraint does not involve height).
struct VertexConfiguration {
  int left = 0;    // vertex whose projection touches x_min
  int right = 0;   // x_max
  int top = 0;     // y_min
  int bottom = 0;  // y_max
};

struct TranslationSolution {
  Vec3 translation = Vec3::Zero();
  double residual_px = 0.0;  // sum of absolute side errors after reprojection
};

struct RecoveredBox {
  Box3D box;
  int config_index = -1;
  double residual_px = 0.0;
};

// Rotation about the vertical axis mapping box-local to camera coordinates.
Mat3 rotation_from_yaw(double theta);

// All 8 sign combinations of (+-d/2), centroid at the origin, indexed as in
// VertexConfiguration.
std::array<Vec3, 8> box_vertices(const Vec3& dims);

// Perspective projection of a camera-frame point; throws GeometryError when
// the point is not in front of the camera.
Vec2 project(const CameraIntrinsics& K, const Mat3& R, const Vec3& T, const Vec3& X);

// Wraps an angle to (-pi, pi].
double wrap_angle(double a);

// Global yaw from viewing-ray angle plus appearance-local yaw.
double local_to_global_yaw(double theta_local, double theta_ray);

// Horizontal angle of the back-projected ray through pixel column u.
double ray_angle(const CameraIntrinsics& K, double u);

// The fixed set of 64 admissible side assignments for upright boxes.
const std::vector<VertexConfiguration>& enumerate_configurations();

// Linear least-squares translation for one configuration. Each side pins one
// pixel coordinate of one vertex; cross-multiplying by depth gives a 4x3
// linear system in T. Throws GeometryError when the system is rank deficient
// or the solution lies behind the camera.
TranslationSolution solve_translation(const CameraIntrinsics& K, double yaw,
                                      const Vec3& dims, const Box2D& box,
                                      const VertexConfiguration& config,
                                      bool refine_gauss_newton = false);

// Tries all 64 configurations and keeps the translation whose re-projected
// box hull best reproduces the detection rectangle.
RecoveredBox recover_box3d(const CameraIntrinsics& K, double yaw, const Vec3& dims,
                           const Box2D& box, bool refine_gauss_newton = false);

// Axis-aligned hull of the 8 projected vertices.
Box2D project_box_hull(const CameraIntrinsics& K, const Box3D& box);

// Volume IoU of two upright yawed boxes: convex polygon intersection of the
// ground-plane footprints times the vertical overlap.
double iou3d(const Box3D& a, const Box3D& b);

}  // namespace tpnet
