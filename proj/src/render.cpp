#include "viva/render.hpp"

#include <algorithm>
#include <cmath>

namespace viva::render {
namespace {

using geometry::CameraIntrinsics;
using geometry::Homography;

constexpr int kWeightBits = 11;
constexpr int kWeightOne = 1 << kWeightBits;

// Rows of M^-1 plus the sign of w on the visible side of the horizon.
struct InverseMap {
  double m[9];
  double front;
};

InverseMap make_inverse(const Homography& src_to_dst, const CameraIntrinsics& dst) {
  Homography inv;
  try {
    inv = src_to_dst.inverse();
  } catch (const geometry::GeometryError&) {
    throw RenderError("render: homography is singular");
  }
  InverseMap im{};
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) im.m[3 * r + c] = inv.h(r, c);
  }
  const double w_principal = im.m[6] * dst.principal_u + im.m[7] * dst.principal_v + im.m[8];
  im.front = w_principal < 0.0 ? -1.0 : 1.0;
  return im;
}

struct RowTerms {
  double x, y, w;
};

inline RowTerms row_terms(const InverseMap& im, int y) {
  const double yd = y;
  return {im.m[1] * yd + im.m[2], im.m[4] * yd + im.m[5], im.m[7] * yd + im.m[8]};
}

// Source position of output pixel x on a row; false when the ray misses the
// visible half-plane.
inline bool source_position(const InverseMap& im, const RowTerms& row, int x, double& sx, double& sy) {
  const double xd = x;
  const double w = im.m[6] * xd + row.w;
  if (!(w * im.front > 0.0)) return false;
  sx = (im.m[0] * xd + row.x) / w;
  sy = (im.m[3] * xd + row.y) / w;
  return true;
}

// The tolerance absorbs rounding in homographies that map onto pixel centres exactly.
inline bool covered(double sx, double sy, int sw, int sh) {
  constexpr double tol = 1e-6;
  return sx >= -tol && sx <= sw - 1 + tol && sy >= -tol && sy <= sh - 1 + tol;
}

inline bool sampleable(double sx, double sy, int sw, int sh) {
  return sx >= -0.5 && sx <= sw - 0.5 && sy >= -0.5 && sy <= sh - 0.5;
}

void validate_output(const CameraIntrinsics& dst) {
  if (dst.width <= 0 || dst.height <= 0) throw RenderError("render: zero-sized output");
}

}  // namespace

const char* to_string(Sampling s) noexcept { return s == Sampling::nearest ? "nearest" : "bilinear"; }

Sampling sampling_from_string(const std::string& text) {
  if (text == "nearest") return Sampling::nearest;
  if (text == "bilinear") return Sampling::bilinear;
  throw std::invalid_argument("sampling must be nearest or bilinear");
}

WarpResult warp(const Image& src, const Homography& src_to_dst, const CameraIntrinsics& dst, Sampling sampling,
                Rgb fill) {
  validate_output(dst);
  if (src.empty()) throw RenderError("render: empty source frame");
  const InverseMap im = make_inverse(src_to_dst, dst);
  const int sw = src.width();
  const int sh = src.height();

  WarpResult out{Image(dst.width, dst.height), 0.0};
  std::int64_t hits = 0;
  for (int y = 0; y < dst.height; ++y) {
    const RowTerms row = row_terms(im, y);
    std::uint8_t* o = out.image.row(y);
    for (int x = 0; x < dst.width; ++x, o += 3) {
      double sx, sy;
      if (!source_position(im, row, x, sx, sy) || !sampleable(sx, sy, sw, sh)) {
        o[0] = fill.r;
        o[1] = fill.g;
        o[2] = fill.b;
        continue;
      }
      if (covered(sx, sy, sw, sh)) ++hits;

      if (sampling == Sampling::nearest) {
        const int ix = std::clamp(static_cast<int>(std::floor(sx + 0.5)), 0, sw - 1);
        const int iy = std::clamp(static_cast<int>(std::floor(sy + 0.5)), 0, sh - 1);
        const std::uint8_t* p = src.row(iy) + 3 * static_cast<std::size_t>(ix);
        o[0] = p[0];
        o[1] = p[1];
        o[2] = p[2];
        continue;
      }

      const double cx = std::clamp(sx, 0.0, static_cast<double>(sw - 1));
      const double cy = std::clamp(sy, 0.0, static_cast<double>(sh - 1));
      const int x0 = static_cast<int>(cx);
      const int y0 = static_cast<int>(cy);
      const int wx = static_cast<int>((cx - x0) * kWeightOne + 0.5);
      const int wy = static_cast<int>((cy - y0) * kWeightOne + 0.5);
      const std::size_t dx = x0 < sw - 1 ? 3 : 0;
      const std::uint8_t* a = src.row(y0) + 3 * static_cast<std::size_t>(x0);
      const std::uint8_t* c = y0 < sh - 1 ? a + src.stride() : a;
      for (int ch = 0; ch < 3; ++ch) {
        const int top = a[ch] * (kWeightOne - wx) + a[ch + dx] * wx;
        const int bot = c[ch] * (kWeightOne - wx) + c[ch + dx] * wx;
        o[ch] = static_cast<std::uint8_t>((top * (kWeightOne - wy) + bot * wy + (1 << (2 * kWeightBits - 1))) >>
                                          (2 * kWeightBits));
      }
    }
  }
  out.coverage = static_cast<double>(hits) / (static_cast<double>(dst.width) * dst.height);
  return out;
}

double coverage(const Homography& src_to_dst, const CameraIntrinsics& dst, int src_width, int src_height) {
  validate_output(dst);
  const InverseMap im = make_inverse(src_to_dst, dst);
  std::int64_t hits = 0;
  for (int y = 0; y < dst.height; ++y) {
    const RowTerms row = row_terms(im, y);
    for (int x = 0; x < dst.width; ++x) {
      double sx, sy;
      if (source_position(im, row, x, sx, sy) && covered(sx, sy, src_width, src_height)) ++hits;
    }
  }
  return static_cast<double>(hits) / (static_cast<double>(dst.width) * dst.height);
}

double select_scale(double footprint_width_src_px, int vac_width) {
  if (!(footprint_width_src_px > 0.0) || vac_width <= 0) {
    throw std::invalid_argument("select_scale: inputs must be positive");
  }
  return static_cast<double>(vac_width) / footprint_width_src_px;
}

VacMetrics vac_metrics(const Homography& src_to_vac, const CameraIntrinsics& vac, int src_width, int src_height,
                       double upscale_threshold) {
  VacMetrics m;
  const auto extent = geometry::source_extent(src_to_vac, vac.width, vac.height);
  m.scale_factor = select_scale(extent.width_px, vac.width);
  m.upscale_engaged = m.scale_factor > upscale_threshold;
  m.footprint_corners_src = geometry::footprint_corners_src(src_to_vac, vac.width, vac.height);
  m.coverage = coverage(src_to_vac, vac, src_width, src_height);
  return m;
}

VacImage render_vac(const Image& src, const Homography& src_to_vac, const CameraIntrinsics& vac,
                    const RenderOptions& options, Upscaler* upscaler) {
  const VacMetrics metrics = vac_metrics(src_to_vac, vac, src.width(), src.height(), options.upscale_threshold);
  VacImage out;
  out.scale_factor = metrics.scale_factor;
  out.footprint_corners_src = metrics.footprint_corners_src;
  out.coverage = metrics.coverage;

  if (upscaler == nullptr || !metrics.upscale_engaged) {
    out.pixels = warp(src, src_to_vac, vac, options.sampling, options.fill).image;
    return out;
  }

  // Warp at the region's native resolution, then upscale to the output size.
  const int low_w = std::max(1, static_cast<int>(std::lround(vac.width / metrics.scale_factor)));
  const int low_h = std::max(1, static_cast<int>(std::lround(vac.height / metrics.scale_factor)));
  const double su = static_cast<double>(low_w) / vac.width;
  const double sv = static_cast<double>(low_h) / vac.height;
  geometry::Mat3 to_low;
  to_low << su, 0.0, 0.5 * su - 0.5,
            0.0, sv, 0.5 * sv - 0.5,
            0.0, 0.0, 1.0;
  CameraIntrinsics low = vac;
  low.width = low_w;
  low.height = low_h;
  low.principal_u = su * vac.principal_u + 0.5 * su - 0.5;
  low.principal_v = sv * vac.principal_v + 0.5 * sv - 0.5;
  const Image coarse = warp(src, Homography::normalized(to_low * src_to_vac.h), low, options.sampling, options.fill).image;
  out.pixels = upscaler->upscale_to(coarse, vac.width, vac.height);
  out.upscaled = true;
  return out;
}

Image downscale_to_width(const Image& src, int width) {
  if (width <= 0 || src.empty()) throw std::invalid_argument("downscale_to_width: bad dimensions");
  if (width >= src.width()) return src;
  const int height = std::max(1, static_cast<int>(std::lround(static_cast<double>(src.height()) * width / src.width())));
  Image out(width, height);
  for (int y = 0; y < height; ++y) {
    const int y0 = static_cast<int>(static_cast<std::int64_t>(y) * src.height() / height);
    const int y1 = std::max(y0 + 1, static_cast<int>(static_cast<std::int64_t>(y + 1) * src.height() / height));
    for (int x = 0; x < width; ++x) {
      const int x0 = static_cast<int>(static_cast<std::int64_t>(x) * src.width() / width);
      const int x1 = std::max(x0 + 1, static_cast<int>(static_cast<std::int64_t>(x + 1) * src.width() / width));
      std::uint32_t sum[3] = {0, 0, 0};
      for (int yy = y0; yy < y1; ++yy) {
        const std::uint8_t* p = src.row(yy) + 3 * static_cast<std::size_t>(x0);
        for (int xx = x0; xx < x1; ++xx, p += 3) {
          sum[0] += p[0];
          sum[1] += p[1];
          sum[2] += p[2];
        }
      }
      const std::uint32_t n = static_cast<std::uint32_t>((y1 - y0) * (x1 - x0));
      std::uint8_t* o = out.row(y) + 3 * static_cast<std::size_t>(x);
      for (int ch = 0; ch < 3; ++ch) o[ch] = static_cast<std::uint8_t>((sum[ch] + n / 2) / n);
    }
  }
  return out;
}

}  // namespace viva::render
