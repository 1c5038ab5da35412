#include "viva/geometry.hpp"

#include <Eigen/LU>
#include <cmath>
#include <numbers>

namespace viva::geometry {
namespace {

constexpr double kAxisEpsilon = 1e-6;

Vec2 dehomogenize(const Vec3& p) { return {p.x() / p.z(), p.y() / p.z()}; }

}  // namespace

CameraIntrinsics CameraIntrinsics::from_fov(int width, int height, double fov_h_rad, double fov_v_rad) {
  if (width <= 0 || height <= 0) throw GeometryError("intrinsics: image dimensions must be positive");
  if (!(fov_h_rad > 0.0 && fov_h_rad < std::numbers::pi)) throw GeometryError("intrinsics: fov_h outside (0, pi)");
  CameraIntrinsics c;
  c.width = width;
  c.height = height;
  c.fov_h_rad = fov_h_rad;
  c.focal_u_px = (0.5 * width) / std::tan(0.5 * fov_h_rad);
  if (fov_v_rad > 0.0) {
    if (!(fov_v_rad < std::numbers::pi)) throw GeometryError("intrinsics: fov_v outside (0, pi)");
    c.fov_v_rad = fov_v_rad;
    c.focal_v_px = (0.5 * height) / std::tan(0.5 * fov_v_rad);
  } else {
    c.focal_v_px = c.focal_u_px;
    c.fov_v_rad = 2.0 * std::atan((0.5 * height) / c.focal_v_px);
  }
  c.principal_u = 0.5 * (width - 1);
  c.principal_v = 0.5 * (height - 1);
  return c;
}

Mat3 CameraIntrinsics::matrix() const {
  Mat3 k;
  k << focal_u_px, 0.0, principal_u,
       0.0, focal_v_px, principal_v,
       0.0, 0.0, 1.0;
  return k;
}

CameraIntrinsics intrinsics_from_manifest(const ingest::ScenarioManifest& m) {
  constexpr double deg = std::numbers::pi / 180.0;
  // A derived vertical FoV is the square-pixel one; only an explicit value can
  // make the pixels non-square.
  return CameraIntrinsics::from_fov(m.width, m.height, m.fov_h_deg * deg, m.fov_v_derived ? 0.0 : m.fov_v_deg * deg);
}

RigidTransform RigidTransform::inverse() const {
  const Mat3 rt = rotation.transpose();
  return {rt, -(rt * translation)};
}

Mat4 RigidTransform::matrix() const {
  Mat4 m = Mat4::Identity();
  m.topLeftCorner<3, 3>() = rotation;
  m.topRightCorner<3, 1>() = translation;
  return m;
}

MountTransform MountTransform::nadir() {
  MountTransform mt;
  mt.camera_to_body.rotation = Vec3(1.0, -1.0, -1.0).asDiagonal();
  return mt;
}

MountTransform MountTransform::nadir_with_offset(double roll, double pitch, double yaw, const Vec3& t) {
  MountTransform mt = nadir();
  mt.camera_to_body.rotation = dynamics::rotation_from_euler(roll, pitch, yaw) * mt.camera_to_body.rotation;
  mt.camera_to_body.translation = t;
  return mt;
}

Homography Homography::normalized(const Mat3& m) {
  Homography out;
  out.h = m;
  if (m(2, 2) != 0.0) out.h /= m(2, 2);
  return out;
}

Homography Homography::inverse() const {
  Eigen::FullPivLU<Mat3> lu(h);
  if (!lu.isInvertible() || std::abs(h.determinant()) <= 1e-300) throw GeometryError("homography is singular");
  return normalized(lu.inverse());
}

Vec2 Homography::map(const Vec2& p) const { return dehomogenize(h * Vec3(p.x(), p.y(), 1.0)); }

GroundPoint pixel_to_ground(const CameraIntrinsics& cam, double z_cam, const Vec2& pixel) {
  return {z_cam * (pixel.x() - cam.principal_u) / cam.focal_u_px,
          -z_cam * (pixel.y() - cam.principal_v) / cam.focal_v_px};
}

Vec2 ground_to_pixel(const CameraIntrinsics& cam, double z_cam, const GroundPoint& p) {
  return {cam.principal_u + cam.focal_u_px * p.x / z_cam, cam.principal_v - cam.focal_v_px * p.y / z_cam};
}

RigidTransform camera_pose(const RigidTransform& eav, const MountTransform& mount) {
  return eav * mount.camera_to_body;
}

RigidTransform eav_pose(const Vec3& position, double roll, double pitch, double yaw) {
  return {dynamics::rotation_from_euler(roll, pitch, yaw), position};
}

Footprint footprint(double z_m, double fov_h_rad, double fov_v_rad) {
  if (!(z_m >= 0.0)) throw GeometryError("footprint: altitude must be non-negative");
  return {2.0 * z_m * std::tan(0.5 * fov_h_rad), 2.0 * z_m * std::tan(0.5 * fov_v_rad)};
}

GroundPoint ground_intersection(const RigidTransform& cam_pose) {
  const Vec3 axis = cam_pose.rotation.col(2);
  const double z_k = cam_pose.translation.z();
  const double cos_tilt = axis.z();  // z_v . z_w
  if (std::abs(cos_tilt) <= kAxisEpsilon) throw GeometryError("optical axis is parallel to the ground plane");
  const double range = -z_k / cos_tilt;
  if (!(range > 0.0)) throw GeometryError("ground plane intersection lies behind the camera");
  const Vec3 p = cam_pose.apply(Vec3(0.0, 0.0, range));
  return {p.x(), p.y()};
}

RigidTransform reference_camera_pose(double z_o) {
  return camera_pose(eav_pose(Vec3(0.0, 0.0, z_o), 0.0, 0.0, 0.0), MountTransform::nadir());
}

Homography vac_homography(const CameraIntrinsics& src, double z_o, const CameraIntrinsics& vac,
                          const RigidTransform& cam_pose) {
  if (!(cam_pose.translation.z() > 0.0)) throw GeometryError("vac_homography: camera must be above the ground");
  if (!(z_o > 0.0)) throw GeometryError("vac_homography: recording altitude must be positive");
  ground_intersection(cam_pose);

  // Source pixel -> ground (x, y, 1) in the world frame.
  Mat3 pixel_to_plane;
  pixel_to_plane << z_o / src.focal_u_px, 0.0, -z_o * src.principal_u / src.focal_u_px,
                    0.0, -z_o / src.focal_v_px, z_o * src.principal_v / src.focal_v_px,
                    0.0, 0.0, 1.0;

  // Ground (x, y, 1) -> VAC camera coordinates.
  const RigidTransform world_to_cam = cam_pose.inverse();
  Mat3 plane_to_cam;
  plane_to_cam.col(0) = world_to_cam.rotation.col(0);
  plane_to_cam.col(1) = world_to_cam.rotation.col(1);
  plane_to_cam.col(2) = world_to_cam.translation;

  return Homography::normalized(vac.matrix() * plane_to_cam * pixel_to_plane);
}

std::array<Vec2, 4> footprint_corners_src(const Homography& src_to_vac, int w, int h) {
  const Homography inv = src_to_vac.inverse();
  const double u1 = w - 1;
  const double v1 = h - 1;
  return {inv.map({0.0, 0.0}), inv.map({u1, 0.0}), inv.map({u1, v1}), inv.map({0.0, v1})};
}

SourceExtent source_extent(const Homography& src_to_vac, int w, int h) {
  const Homography inv = src_to_vac.inverse();
  const double r = w - 0.5;
  const double b = h - 0.5;
  const Vec2 c0 = inv.map({-0.5, -0.5});
  const Vec2 c1 = inv.map({r, -0.5});
  const Vec2 c2 = inv.map({r, b});
  const Vec2 c3 = inv.map({-0.5, b});
  return {0.5 * ((c1 - c0).norm() + (c2 - c3).norm()), 0.5 * ((c3 - c0).norm() + (c2 - c1).norm())};
}

bool is_rotation(const Mat3& r, double tol) {
  return (r.transpose() * r - Mat3::Identity()).norm() < tol && std::abs(r.determinant() - 1.0) < tol;
}

}  // namespace viva::geometry
