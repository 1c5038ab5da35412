#pragma once

#include <array>
#include <cstdint>

#include "viva/geometry.hpp"
#include "viva/image.hpp"
#include "viva/upscale.hpp"

namespace viva::render {

enum class Sampling { nearest, bilinear };

const char* to_string(Sampling s) noexcept;
Sampling sampling_from_string(const std::string& text);

struct WarpResult {
  Image image;
  double coverage = 0.0;
};

class RenderError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Inverse-maps every output pixel centre p through M^-1 into the source.
// Positions within half a pixel of the source frontier are clamped to the edge;
// anything further out, or behind the camera, receives the fill colour.
// Coverage counts output pixels whose source position lies in
// [0, W-1] x [0, H-1] (within 1e-6 px). dst supplies the output size and the principal point
// used to decide which side of the horizon is visible.
WarpResult warp(const Image& src, const geometry::Homography& src_to_dst, const geometry::CameraIntrinsics& dst,
                Sampling sampling, Rgb fill = {});

// The coverage warp() would report, without touching pixels.
double coverage(const geometry::Homography& src_to_dst, const geometry::CameraIntrinsics& dst, int src_width,
                int src_height);

// Output pixels per source pixel along u.
double select_scale(double footprint_width_src_px, int vac_width);

struct RenderOptions {
  Sampling sampling = Sampling::bilinear;
  Rgb fill{};
  double upscale_threshold = 1.0;
};

struct VacImage {
  Image pixels;
  double coverage = 0.0;
  double scale_factor = 0.0;
  bool upscaled = false;
  std::array<geometry::Vec2, 4> footprint_corners_src{};
};

// Scale factor, footprint corners and coverage for a homography, without rendering.
struct VacMetrics {
  double coverage = 0.0;
  double scale_factor = 0.0;
  bool upscale_engaged = false;
  std::array<geometry::Vec2, 4> footprint_corners_src{};
};

VacMetrics vac_metrics(const geometry::Homography& src_to_vac, const geometry::CameraIntrinsics& vac, int src_width,
                       int src_height, double upscale_threshold);

// Full VAC image: when the source region is coarser than the output (scale
// factor above the threshold) the region is warped at its native resolution
// and brought to the output size by the upscaler. upscaler == nullptr disables
// upscaling.
VacImage render_vac(const Image& src, const geometry::Homography& src_to_vac, const geometry::CameraIntrinsics& vac,
                    const RenderOptions& options, Upscaler* upscaler);

// Rendered frame plus the pose and timing that produced it.
struct VacFrame {
  Image pixels;
  std::int64_t tick = 0;
  double sim_time_s = 0.0;
  std::int64_t frame_index = 0;
  geometry::RigidTransform eav_pose;
  double roll_rad = 0.0;
  double pitch_rad = 0.0;
  double yaw_rad = 0.0;
  geometry::Homography homography;
  std::array<geometry::Vec2, 4> footprint_corners_src{};
  double scale_factor = 0.0;
  bool upscaled = false;
  double coverage = 0.0;
};

// Box-filtered reduction used for overview imagery.
Image downscale_to_width(const Image& src, int width);

}  // namespace viva::render
