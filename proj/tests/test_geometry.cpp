#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include "oracles.hpp"
#include "viva/geometry.hpp"

namespace {

using namespace viva::geometry;
namespace oracle = viva::oracle;

CameraIntrinsics cam_of(const oracle::Cam& c, double fov) { return CameraIntrinsics::from_fov(c.width, c.height, fov); }

TEST(Geometry, FootprintAtReferenceAltitude) {
  const double fov = oracle::deg(82.1);
  const Footprint fp = footprint(100.0, fov, fov);
  EXPECT_NEAR(fp.width_m, oracle::footprint_width(100.0, fov), 1e-12);
  EXPECT_NEAR(fp.width_m, 174.2, 0.1);
  EXPECT_THROW(footprint(-1.0, fov, fov), GeometryError);
}

TEST(Geometry, IntrinsicsFromFov) {
  const double fov = oracle::deg(82.1);
  const auto c = CameraIntrinsics::from_fov(7680, 4320, fov);
  const auto o = oracle::Cam::from_fov(7680, 4320, fov);
  EXPECT_NEAR(c.focal_u_px, o.f, 1e-9);
  EXPECT_DOUBLE_EQ(c.focal_u_px, c.focal_v_px);
  EXPECT_DOUBLE_EQ(c.principal_u, 3839.5);
  EXPECT_DOUBLE_EQ(c.principal_v, 2159.5);
  EXPECT_NEAR(std::tan(c.fov_v_rad / 2.0) / std::tan(fov / 2.0), 4320.0 / 7680.0, 1e-12);
  EXPECT_THROW(CameraIntrinsics::from_fov(0, 10, fov), GeometryError);
  EXPECT_THROW(CameraIntrinsics::from_fov(10, 10, 4.0), GeometryError);
}

TEST(Geometry, NadirPixelGroundRoundTrip) {
  const auto cam = CameraIntrinsics::from_fov(1920, 1080, oracle::deg(82.1));
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.0, 1919.0), v(0.0, 1079.0), z(1.0, 300.0);
  for (int i = 0; i < 1000; ++i) {
    const Vec2 px(u(rng), v(rng));
    const double zc = z(rng);
    const Vec2 back = ground_to_pixel(cam, zc, pixel_to_ground(cam, zc, px));
    EXPECT_LT((back - px).norm(), 1e-9);
  }
  // Image v grows toward world -y.
  const auto up = pixel_to_ground(cam, 100.0, {cam.principal_u, 0.0});
  EXPECT_GT(up.y, 0.0);
  EXPECT_NEAR(up.x, 0.0, 1e-12);
}

TEST(Geometry, MountIsNadir) {
  const MountTransform m = MountTransform::nadir();
  EXPECT_TRUE(is_rotation(m.camera_to_body.rotation));
  EXPECT_EQ(m.camera_to_body.rotation * Vec3::UnitZ(), Vec3(0, 0, -1));
  EXPECT_EQ(m.camera_to_body.rotation * Vec3::UnitX(), Vec3(1, 0, 0));
  EXPECT_EQ(m.camera_to_body.rotation * Vec3::UnitY(), Vec3(0, -1, 0));
}

TEST(Geometry, RigidTransformInverseAndCompose) {
  const RigidTransform a = eav_pose({1, 2, 3}, 0.1, -0.2, 0.3);
  const RigidTransform b = eav_pose({-4, 0.5, 9}, -0.3, 0.05, 2.0);
  const Vec3 p(0.3, -7.0, 2.0);
  EXPECT_LT(((a * b).apply(p) - a.apply(b.apply(p))).norm(), 1e-12);
  EXPECT_LT((a.inverse().apply(a.apply(p)) - p).norm(), 1e-12);
  EXPECT_LT(((a * a.inverse()).matrix() - Mat4::Identity()).norm(), 1e-12);
}

TEST(Geometry, IdentityHomographyAtReferencePose) {
  const double fov = oracle::deg(82.1);
  const auto src = CameraIntrinsics::from_fov(1920, 1080, fov);
  const Homography h = vac_homography(src, 100.0, src, reference_camera_pose(100.0));
  EXPECT_LT((h.h - Mat3::Identity()).cwiseAbs().maxCoeff(), 1e-12);
}

TEST(Geometry, HalfAltitudeIsScaleTwo) {
  const double fov = oracle::deg(82.1);
  const auto src = CameraIntrinsics::from_fov(1920, 1080, fov);
  const RigidTransform pose = camera_pose(eav_pose({0, 0, 50.0}, 0, 0, 0), MountTransform::nadir());
  const Homography h = vac_homography(src, 100.0, src, pose);
  Mat3 expect;
  expect << 2, 0, -src.principal_u, 0, 2, -src.principal_v, 0, 0, 1;
  EXPECT_LT((h.h - expect).cwiseAbs().maxCoeff(), 1e-9);
}

TEST(Geometry, HomographyMatchesRayCastingOracle) {
  const double fov = oracle::deg(82.1);
  const oracle::Cam osrc = oracle::Cam::from_fov(1920, 1080, fov);
  const oracle::Cam ovac = oracle::Cam::from_fov(640, 360, oracle::deg(70.0));
  const auto src = cam_of(osrc, fov);
  const auto vac = cam_of(ovac, oracle::deg(70.0));
  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> xy(-20.0, 20.0), z(20.0, 95.0), tilt(-0.3, 0.3), yaw(-3.1, 3.1);
  for (int i = 0; i < 50; ++i) {
    const oracle::Pose p{xy(rng), xy(rng), z(rng), tilt(rng), tilt(rng), yaw(rng)};
    const Homography h =
        vac_homography(src, 100.0, vac, camera_pose(eav_pose({p.x, p.y, p.z}, p.roll, p.pitch, p.yaw), MountTransform::nadir()));
    const Homography inv = h.inverse();
    for (int gy = 0; gy < 10; ++gy) {
      for (int gx = 0; gx < 10; ++gx) {
        const double u = gx * 639.0 / 9.0;
        const double v = gy * 359.0 / 9.0;
        const auto g = oracle::pixel_to_ground(ovac, p, u, v);
        ASSERT_TRUE(g.has_value());
        const auto [su, sv] = oracle::ground_to_source(osrc, 100.0, *g);
        const Vec2 lib = inv.map({u, v});
        EXPECT_NEAR(lib.x(), su, 1e-6);
        EXPECT_NEAR(lib.y(), sv, 1e-6);
      }
    }
  }
}

TEST(Geometry, NadirGroundIntersectionIsCameraPosition) {
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> xy(-500.0, 500.0), z(1.0, 300.0), yaw(-3.1, 3.1);
  for (int i = 0; i < 100; ++i) {
    const Vec3 pos(xy(rng), xy(rng), z(rng));
    const GroundPoint g = ground_intersection(camera_pose(eav_pose(pos, 0, 0, yaw(rng)), MountTransform::nadir()));
    EXPECT_EQ(g.x, pos.x());
    EXPECT_EQ(g.y, pos.y());
  }
}

TEST(Geometry, TiltOffsetsIntersectionByZTanTheta) {
  for (double theta : {0.05, 0.2, -0.3}) {
    const double z = 80.0;
    const GroundPoint gp = ground_intersection(camera_pose(eav_pose({0, 0, z}, 0, theta, 0), MountTransform::nadir()));
    const oracle::V3 axis = oracle::body_to_world({0, 0, z, 0, theta, 0}, {0, 0, -1});
    const double expect_x = -z * axis.x / axis.z;
    EXPECT_NEAR(std::abs(gp.x), z * std::tan(std::abs(theta)), 1e-9 * z * std::tan(std::abs(theta)));
    EXPECT_NEAR(gp.x, expect_x, 1e-9 * std::abs(expect_x));
    EXPECT_NEAR(gp.y, 0.0, 1e-12);

    const GroundPoint gr = ground_intersection(camera_pose(eav_pose({0, 0, z}, theta, 0, 0), MountTransform::nadir()));
    EXPECT_NEAR(std::abs(gr.y), z * std::tan(std::abs(theta)), 1e-9 * z * std::tan(std::abs(theta)));
  }
}

TEST(Geometry, HorizontalAxisIsRejected) {
  const double half_pi = std::acos(0.0);
  EXPECT_THROW(ground_intersection(camera_pose(eav_pose({0, 0, 10}, 0, half_pi, 0), MountTransform::nadir())),
               GeometryError);
  const auto cam = CameraIntrinsics::from_fov(64, 64, 1.0);
  EXPECT_THROW(vac_homography(cam, 100.0, cam, camera_pose(eav_pose({0, 0, -1}, 0, 0, 0), MountTransform::nadir())),
               GeometryError);
}

TEST(Geometry, FootprintCornersAndExtent) {
  const double fov = oracle::deg(82.1);
  const auto src = CameraIntrinsics::from_fov(1920, 1080, fov);
  const auto vac = CameraIntrinsics::from_fov(960, 540, fov);
  // Same FoV at the recording altitude sees the whole frame at half resolution.
  const Homography h = vac_homography(src, 100.0, vac, reference_camera_pose(100.0));
  const auto corners = footprint_corners_src(h, 960, 540);
  EXPECT_NEAR(corners[0].x(), 0.5, 1e-9);
  EXPECT_NEAR(corners[0].y(), 0.5, 1e-9);
  EXPECT_NEAR(corners[2].x(), 1918.5, 1e-9);
  EXPECT_NEAR(corners[2].y(), 1078.5, 1e-9);
  const SourceExtent e = source_extent(h, 960, 540);
  EXPECT_NEAR(e.width_px, 1920.0, 1e-9);
  EXPECT_NEAR(e.height_px, 1080.0, 1e-9);
}

TEST(Geometry, HomographyNormalizationAndInverse) {
  Mat3 m;
  m << 2, 0.1, 3, -0.2, 1.5, 4, 0.001, 0.002, 2;
  const Homography h = Homography::normalized(m);
  EXPECT_DOUBLE_EQ(h.h(2, 2), 1.0);
  const Vec2 p(12.0, -7.0);
  EXPECT_LT((h.inverse().map(h.map(p)) - p).norm(), 1e-9);
  EXPECT_THROW(Homography::normalized(Mat3::Zero()).inverse(), GeometryError);
}

TEST(Geometry, MountOffsetTiltsView) {
  const MountTransform tilted = MountTransform::nadir_with_offset(0.0, 0.2, 0.0, Vec3::Zero());
  EXPECT_TRUE(is_rotation(tilted.camera_to_body.rotation));
  const GroundPoint g = ground_intersection(camera_pose(eav_pose({0, 0, 50}, 0, 0, 0), tilted));
  EXPECT_NEAR(std::abs(g.x), 50.0 * std::tan(0.2), 1e-9);
}

}  // namespace
