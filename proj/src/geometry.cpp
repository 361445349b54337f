#include "redformer/geometry.hpp"

#include <cmath>
#include <numbers>

namespace redformer::geometry {

Pose Pose::planar(double yaw, double tx, double ty, double tz) {
  Pose p;
  p.rotation = Eigen::AngleAxisd(yaw, Vec3::UnitZ()).toRotationMatrix();
  p.translation = Vec3(tx, ty, tz);
  return p;
}

Pose Pose::inverse() const {
  Pose inv;
  inv.rotation = rotation.transpose();
  inv.translation = -(inv.rotation * translation);
  return inv;
}

Pose Pose::compose(const Pose& other) const {
  Pose out;
  out.rotation = rotation * other.rotation;
  out.translation = rotation * other.translation + translation;
  return out;
}

bool Pose::is_orthonormal(double tol) const {
  if (!rotation.allFinite() || !translation.allFinite()) return false;
  return (rotation.transpose() * rotation - Mat3::Identity()).cwiseAbs().maxCoeff() <= tol &&
         rotation.determinant() > 0.0;
}

double Pose::yaw() const { return std::atan2(rotation(1, 0), rotation(0, 0)); }

std::vector<Vec3> transform_points(std::span<const Vec3> points, const Pose& pose) {
  if (!pose.is_orthonormal()) throw InvalidPose("transform_points: rotation is not orthonormal");
  std::vector<Vec3> out;
  out.reserve(points.size());
  for (const auto& p : points) out.push_back(pose.apply(p));
  return out;
}

bool CameraSpec::valid() const {
  const double cx = intrinsics(0, 2);
  const double cy = intrinsics(1, 2);
  return width > 0 && height > 0 && intrinsics(0, 0) > 0.0 && intrinsics(1, 1) > 0.0 && cx >= 0.0 &&
         cx < width && cy >= 0.0 && cy < height && extrinsics.is_orthonormal();
}

CameraSpec CameraSpec::looking_at_yaw(double yaw, double horizontal_fov, int width, int height,
                                      const Vec3& mount) {
  CameraSpec cam;
  cam.width = width;
  cam.height = height;
  const double f = 0.5 * width / std::tan(0.5 * horizontal_fov);
  cam.intrinsics << f, 0.0, 0.5 * width, 0.0, f, 0.5 * height, 0.0, 0.0, 1.0;
  // Columns of ego_from_cam are the camera axes expressed in ego frame.
  const Vec3 forward(std::cos(yaw), std::sin(yaw), 0.0);
  const Vec3 right(std::sin(yaw), -std::cos(yaw), 0.0);
  const Vec3 down(0.0, 0.0, -1.0);
  Pose ego_from_cam;
  ego_from_cam.rotation.col(0) = right;
  ego_from_cam.rotation.col(1) = down;
  ego_from_cam.rotation.col(2) = forward;
  ego_from_cam.translation = mount;
  cam.extrinsics = ego_from_cam.inverse();
  return cam;
}

std::optional<Pixel> project_to_image(const Vec3& point_ego, const CameraSpec& camera) {
  const Vec3 pc = camera.extrinsics.apply(point_ego);
  if (!(pc.z() > 0.0)) return std::nullopt;
  const Vec3 h = camera.intrinsics * pc;
  const Pixel px{h.x() / h.z(), h.y() / h.z()};
  if (!(px.u >= 0.0 && px.u < camera.width && px.v >= 0.0 && px.v < camera.height)) return std::nullopt;
  return px;
}

bool BevGridSpec::valid() const {
  return x_cells > 0 && y_cells > 0 && x_cells % 2 == 0 && y_cells % 2 == 0 && cell_size > 0.0 &&
         std::isfinite(cell_size);
}

Vec2 BevGridSpec::cell_center(int i, int j) const {
  return {(i + 0.5) * cell_size - half_extent_x(), (j + 0.5) * cell_size - half_extent_y()};
}

std::optional<CellIndex> bev_cell_of(const Vec3& point_ego, const BevGridSpec& grid) {
  const double fx = (point_ego.x() + grid.half_extent_x()) / grid.cell_size;
  const double fy = (point_ego.y() + grid.half_extent_y()) / grid.cell_size;
  if (!(fx >= 0.0 && fy >= 0.0)) return std::nullopt;
  const double i = std::floor(fx);
  const double j = std::floor(fy);
  if (i >= grid.x_cells || j >= grid.y_cells) return std::nullopt;
  return CellIndex{static_cast<int>(i), static_cast<int>(j)};
}

bool SensorRig::valid() const {
  if (cameras.empty() || radar_poses.empty()) return false;
  for (const auto& c : cameras)
    if (!c.valid()) return false;
  for (const auto& p : radar_poses)
    if (!p.is_orthonormal()) return false;
  return true;
}

SensorRig default_rig(int image_width, int image_height) {
  using std::numbers::pi;
  SensorRig rig;
  for (int k = 0; k < 4; ++k) {
    rig.cameras.push_back(CameraSpec::looking_at_yaw(k * pi / 2.0, pi / 2.0, image_width, image_height,
                                                     Vec3(0.0, 0.0, 1.5)));
  }
  const double deg = pi / 180.0;
  rig.radar_poses = {
      Pose::planar(0.0, 2.0, 0.0, 0.5),
      Pose::planar(80.0 * deg, 1.5, 0.8, 0.5),
      Pose::planar(-80.0 * deg, 1.5, -0.8, 0.5),
      Pose::planar(150.0 * deg, -1.5, 0.8, 0.5),
      Pose::planar(-150.0 * deg, -1.5, -0.8, 0.5),
  };
  return rig;
}

double wrap_angle(double a) {
  using std::numbers::pi;
  a = std::fmod(a + pi, 2.0 * pi);
  if (a <= 0.0) a += 2.0 * pi;
  return a - pi;
}

}  // namespace redformer::geometry
