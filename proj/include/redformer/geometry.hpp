#pragma once

#include <Eigen/Dense>

#include <optional>
#include <span>
#include <stdexcept>
#include <vector>

namespace redformer::geometry {

using Vec2 = Eigen::Vector2d;
using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class InvalidPose : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Rigid transform mapping points from a source frame into a target frame:
// p_target = rotation * p_source + translation.
struct Pose {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static Pose identity() { return {}; }
  // Rotation about +z by `yaw` radians followed by translation.
  static Pose planar(double yaw, double tx, double ty, double tz = 0.0);

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  Pose inverse() const;
  // (*this) ∘ other: applies `other` first.
  Pose compose(const Pose& other) const;
  bool is_orthonormal(double tol = 1e-6) const;
  double yaw() const;
};

// Throws InvalidPose when the rotation is not orthonormal within 1e-6.
std::vector<Vec3> transform_points(std::span<const Vec3> points, const Pose& pose);

struct Pixel {
  double u = 0.0;
  double v = 0.0;
};

// Pinhole camera. Camera frame: +z optical axis, +x right, +y down.
struct CameraSpec {
  Mat3 intrinsics = Mat3::Identity();
  Pose extrinsics;  // camera-from-ego
  int width = 0;
  int height = 0;

  bool valid() const;
  // Field-of-view camera looking along ego yaw `yaw`, mounted at `mount` (ego frame).
  static CameraSpec looking_at_yaw(double yaw, double horizontal_fov, int width, int height,
                                   const Vec3& mount);
};

std::optional<Pixel> project_to_image(const Vec3& point_ego, const CameraSpec& camera);

struct CellIndex {
  int i = 0;  // row, ego-forward (x)
  int j = 0;  // column, ego-left (y)
  bool operator==(const CellIndex&) const = default;
};

// Ego-centred BEV grid. Cells are half-open [lo, hi) along both axes.
struct BevGridSpec {
  int x_cells = 32;
  int y_cells = 32;
  double cell_size = 1.6;

  bool valid() const;
  int cell_count() const { return x_cells * y_cells; }
  int flat(int i, int j) const { return i * y_cells + j; }
  double half_extent_x() const { return 0.5 * x_cells * cell_size; }
  double half_extent_y() const { return 0.5 * y_cells * cell_size; }
  Vec2 cell_center(int i, int j) const;
};

std::optional<CellIndex> bev_cell_of(const Vec3& point_ego, const BevGridSpec& grid);

struct SensorRig {
  std::vector<CameraSpec> cameras;
  std::vector<Pose> radar_poses;  // ego-from-sensor

  bool valid() const;
};

// Default toy rig: four 90° cameras at yaw 0/90/180/270 and five radars
// (front, front-left, front-right, rear-left, rear-right).
SensorRig default_rig(int image_width = 64, int image_height = 64);

double wrap_angle(double a);

}  // namespace redformer::geometry
