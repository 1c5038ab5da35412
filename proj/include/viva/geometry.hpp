#pragma once

#include <Eigen/Core>
#include <Eigen/LU>
#include <array>
#include <stdexcept>

#include "viva/dynamics.hpp"
#include "viva/scenario.hpp"

namespace viva::geometry {

using dynamics::Mat3;
using dynamics::Vec3;
using Vec2 = Eigen::Vector2d;
using Mat4 = Eigen::Matrix4d;

class GeometryError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Pinhole model with image origin top-left, u right, v down. Pixel centres sit
// at integer coordinates.
struct CameraIntrinsics {
  double focal_u_px = 0.0;
  double focal_v_px = 0.0;
  int width = 0;
  int height = 0;
  double principal_u = 0.0;
  double principal_v = 0.0;
  double fov_h_rad = 0.0;
  double fov_v_rad = 0.0;

  // Square pixels: focal = (W/2) / tan(fov_h/2), principal at the image centre
  // ((W-1)/2, (H-1)/2).
  // fov_v_rad <= 0 derives the vertical FoV from the aspect ratio.
  static CameraIntrinsics from_fov(int width, int height, double fov_h_rad, double fov_v_rad = 0.0);

  Mat3 matrix() const;
};

CameraIntrinsics intrinsics_from_manifest(const ingest::ScenarioManifest& manifest);

// Rigid transform mapping points of a child frame into a parent frame.
struct RigidTransform {
  Mat3 rotation = Mat3::Identity();
  Vec3 translation = Vec3::Zero();

  static RigidTransform identity() { return {}; }

  Vec3 apply(const Vec3& p) const { return rotation * p + translation; }
  RigidTransform inverse() const;
  Mat4 matrix() const;

  friend RigidTransform operator*(const RigidTransform& a, const RigidTransform& b) {
    return {a.rotation * b.rotation, a.rotation * b.translation + a.translation};
  }
};

// Camera frame to body frame. Camera axes: x along image u, y along image v,
// z along the optical axis.
struct MountTransform {
  RigidTransform camera_to_body;

  // Optical axis along body -z, image u along body x (hence image v along body -y).
  static MountTransform nadir();
  // Nadir mount rotated in the body frame by extra roll/pitch/yaw (ZYX), plus an offset.
  static MountTransform nadir_with_offset(double roll_rad, double pitch_rad, double yaw_rad,
                                          const Vec3& translation_m);
};

// Plane-induced pixel map, normalised so that h(2,2) = 1 when nonzero.
struct Homography {
  Mat3 h = Mat3::Identity();

  static Homography normalized(const Mat3& m);
  Homography inverse() const;
  Vec2 map(const Vec2& p) const;
};

struct GroundPoint {
  double x = 0.0;
  double y = 0.0;
};

struct Footprint {
  double width_m = 0.0;
  double height_m = 0.0;
};

// Backprojection of a pixel of a nadir camera at height z_cam onto the plane
// z = 0, relative to the camera's nadir point. Image v maps to world -y.
GroundPoint pixel_to_ground(const CameraIntrinsics& cam, double z_cam, const Vec2& pixel);
Vec2 ground_to_pixel(const CameraIntrinsics& cam, double z_cam, const GroundPoint& point);

// Body-to-world pose composed with the mount: world <- body <- camera.
RigidTransform camera_pose(const RigidTransform& eav_pose, const MountTransform& mount);

// Body-to-world pose from a position and ZYX attitude.
RigidTransform eav_pose(const Vec3& position, double roll_rad, double pitch_rad, double yaw_rad);

Footprint footprint(double z_m, double fov_h_rad, double fov_v_rad);

// Where the optical axis meets z = 0. Throws GeometryError when the axis is
// within 1e-6 of horizontal or the plane lies behind the camera.
GroundPoint ground_intersection(const RigidTransform& cam_pose);

// Pose of the recording camera: nadir at (0, 0, z_o), image axes aligned with world x / -y.
RigidTransform reference_camera_pose(double z_o);

// Maps source-video pixels to VAC pixels, exact for points on z = 0.
Homography vac_homography(const CameraIntrinsics& src_cam, double z_o, const CameraIntrinsics& vac_cam,
                          const RigidTransform& cam_pose);

// Source-frame pixel footprint of a VAC image: its four extreme pixel centres
// (0,0), (W-1,0), (W-1,H-1), (0,H-1) mapped back through the homography.
std::array<Vec2, 4> footprint_corners_src(const Homography& src_to_vac, int vac_width, int vac_height);

// Extent in source pixels of the VAC image edges (u in [-0.5, W-0.5], v in
// [-0.5, H-0.5]): mean length of opposite edges.
struct SourceExtent {
  double width_px = 0.0;
  double height_px = 0.0;
};
SourceExtent source_extent(const Homography& src_to_vac, int vac_width, int vac_height);

bool is_rotation(const Mat3& r, double tol = 1e-12);

}  // namespace viva::geometry
