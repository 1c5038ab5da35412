#include "viva/dynamics.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

namespace viva::dynamics {
namespace {

bool finite(const Vec3& v) { return std::isfinite(v.x()) && std::isfinite(v.y()) && std::isfinite(v.z()); }

}  // namespace

void EavParams::validate() const {
  if (!(mass_kg > 0.0) || !std::isfinite(mass_kg)) throw std::invalid_argument("eav: mass_kg must be > 0");
  if (!(gravity > 0.0) || !std::isfinite(gravity)) throw std::invalid_argument("eav: gravity must be > 0");
  if (!(drag_coeff >= 0.0) || !std::isfinite(drag_coeff)) throw std::invalid_argument("eav: drag_coeff must be >= 0");
  if (!(dt_s > 0.0) || !std::isfinite(dt_s)) throw std::invalid_argument("eav: dt_s must be > 0");
}

double CommandLimits::resolved_thrust_max(const EavParams& params) const {
  return thrust_max_n > 0.0 ? thrust_max_n : 2.0 * hover_thrust(params);
}

void CommandLimits::validate() const {
  if (!(attitude_max_rad > 0.0 && attitude_max_rad < std::numbers::pi / 2)) {
    throw std::invalid_argument("eav: attitude_max must lie in (0, pi/2)");
  }
  if (!(thrust_min_n >= 0.0)) throw std::invalid_argument("eav: thrust_min must be >= 0");
  if (thrust_max_n > 0.0 && thrust_max_n < thrust_min_n) {
    throw std::invalid_argument("eav: thrust_max must be >= thrust_min");
  }
  if (!(thrust_headroom >= 0.0)) throw std::invalid_argument("eav: thrust_headroom must be >= 0");
  if (!(yaw_rate_max >= 0.0)) throw std::invalid_argument("eav: yaw_rate_max must be >= 0");
}

Mat3 rotation_from_euler(double roll, double pitch, double yaw) {
  const double cr = std::cos(roll), sr = std::sin(roll);
  const double cp = std::cos(pitch), sp = std::sin(pitch);
  const double cy = std::cos(yaw), sy = std::sin(yaw);
  Mat3 r;
  r << cy * cp, cy * sp * sr - sy * cr, cy * sp * cr + sy * sr,
       sy * cp, sy * sp * sr + cy * cr, sy * sp * cr - cy * sr,
       -sp,     cp * sr,                cp * cr;
  return r;
}

double wrap_angle(double rad) {
  constexpr double two_pi = 2.0 * std::numbers::pi;
  if (rad > -std::numbers::pi && rad <= std::numbers::pi) return rad;
  double w = std::fmod(rad + std::numbers::pi, two_pi);
  if (w < 0.0) w += two_pi;
  w -= std::numbers::pi;
  // fmod maps +pi to -pi; the interval is half-open at -pi.
  if (w <= -std::numbers::pi) w += two_pi;
  return w;
}

double hover_thrust(const EavParams& params) { return params.mass_kg * params.gravity; }

EavState step(const EavState& s, const EavParams& p, const AttitudeCommand& cmd, const Vec3& xi) {
  const Mat3 r = rotation_from_euler(cmd.roll_rad, cmd.pitch_rad, cmd.yaw_rad);
  const Vec3 displacement = s.pos - s.pos_prev;
  const Vec3 force = r.col(2) * cmd.thrust_n - Vec3(0.0, 0.0, p.mass_kg * p.gravity) -
                     (p.drag_coeff / p.dt_s) * displacement + xi;
  EavState next;
  next.pos = 2.0 * s.pos - s.pos_prev + (p.dt_s * p.dt_s / p.mass_kg) * force;
  next.pos_prev = s.pos;
  next.tick = s.tick + 1;
  if (!finite(next.pos)) {
    throw DynamicsError("eav: non-finite position at tick " + std::to_string(next.tick));
  }
  return next;
}

AttitudeCommand map_stick(const Stick& stick, const CommandLimits& limits, const EavParams& params,
                          double prev_yaw, double dt_s) {
  for (double c : {stick.x, stick.y, stick.z, stick.r}) {
    if (!(c >= -1.0 && c <= 1.0)) throw std::invalid_argument("stick component outside [-1, 1]");
  }
  AttitudeCommand cmd;
  cmd.roll_rad = stick.x * limits.attitude_max_rad;
  cmd.pitch_rad = -stick.y * limits.attitude_max_rad;
  const double hover = hover_thrust(params);
  cmd.thrust_n = std::clamp(hover * (1.0 + stick.z * limits.thrust_headroom), limits.thrust_min_n,
                            limits.resolved_thrust_max(params));
  cmd.yaw_rad = wrap_angle(prev_yaw + stick.r * limits.yaw_rate_max * dt_s);
  return cmd;
}

AttitudeCommand saturate(const AttitudeCommand& cmd, const CommandLimits& limits, const EavParams& params) {
  for (double c : {cmd.roll_rad, cmd.pitch_rad, cmd.yaw_rad, cmd.thrust_n}) {
    if (!std::isfinite(c)) throw std::invalid_argument("attitude command has a non-finite component");
  }
  AttitudeCommand out;
  out.roll_rad = std::clamp(cmd.roll_rad, -limits.attitude_max_rad, limits.attitude_max_rad);
  out.pitch_rad = std::clamp(cmd.pitch_rad, -limits.attitude_max_rad, limits.attitude_max_rad);
  out.yaw_rad = wrap_angle(cmd.yaw_rad);
  out.thrust_n = std::clamp(cmd.thrust_n, limits.thrust_min_n, limits.resolved_thrust_max(params));
  return out;
}

AttitudeCommand AttitudeLag::apply(const AttitudeCommand& commanded, double dt_s) {
  if (tau_ <= 0.0) return commanded;
  if (!primed_) reset(commanded);
  const double a = 1.0 - std::exp(-dt_s / tau_);
  current_.roll_rad += a * (commanded.roll_rad - current_.roll_rad);
  current_.pitch_rad += a * (commanded.pitch_rad - current_.pitch_rad);
  current_.yaw_rad = wrap_angle(current_.yaw_rad + a * wrap_angle(commanded.yaw_rad - current_.yaw_rad));
  current_.thrust_n = commanded.thrust_n;
  return current_;
}

const char* to_string(DisturbanceKind kind) noexcept {
  switch (kind) {
    case DisturbanceKind::none:
      return "none";
    case DisturbanceKind::constant:
      return "constant";
    case DisturbanceKind::gauss_markov:
      return "gauss-markov";
  }
  return "none";
}

DisturbanceKind disturbance_kind_from_string(const std::string& text) {
  if (text == "none") return DisturbanceKind::none;
  if (text == "constant") return DisturbanceKind::constant;
  if (text == "gauss-markov") return DisturbanceKind::gauss_markov;
  throw std::invalid_argument("disturbance kind must be one of none, constant, gauss-markov");
}

void DisturbanceModel::validate() const {
  if (!finite(force_n)) throw std::invalid_argument("disturbance: force must be finite");
  if (kind == DisturbanceKind::gauss_markov) {
    if (!(tau_s > 0.0)) throw std::invalid_argument("disturbance: tau_s must be > 0");
    if (!(sigma_n >= 0.0)) throw std::invalid_argument("disturbance: sigma_n must be >= 0");
  }
}

double SeededRng::uniform01() {
  return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
}

double SeededRng::uniform(double lo, double hi) {
  const double u = uniform01();
  if (lo == hi) return lo;
  return lo + u * (hi - lo);
}

std::int64_t SeededRng::uniform_index(std::int64_t count) {
  if (count <= 0) throw std::invalid_argument("uniform_index: empty range");
  const double u = uniform01();
  return std::min(count - 1, static_cast<std::int64_t>(u * static_cast<double>(count)));
}

double SeededRng::standard_normal() {
  if (has_spare_) {
    has_spare_ = false;
    return spare_;
  }
  // Box-Muller on (0, 1] to keep log finite.
  const double u1 = 1.0 - uniform01();
  const double u2 = uniform01();
  const double radius = std::sqrt(-2.0 * std::log(u1));
  const double angle = 2.0 * std::numbers::pi * u2;
  spare_ = radius * std::sin(angle);
  has_spare_ = true;
  return radius * std::cos(angle);
}

DisturbanceGenerator::DisturbanceGenerator(const DisturbanceModel& model, double dt_s)
    : model_(model),
      alpha_(model.kind == DisturbanceKind::gauss_markov ? std::exp(-dt_s / model.tau_s) : 0.0),
      innovation_scale_(model.sigma_n * std::sqrt(1.0 - alpha_ * alpha_)),
      rng_(model.seed) {
  model_.validate();
}

Vec3 DisturbanceGenerator::next() {
  Vec3 out = Vec3::Zero();
  switch (model_.kind) {
    case DisturbanceKind::none:
      break;
    case DisturbanceKind::constant:
      out = model_.force_n;
      break;
    case DisturbanceKind::gauss_markov: {
      const int axes = model_.vertical ? 3 : 2;
      for (int i = 0; i < axes; ++i) {
        const double eta = rng_.standard_normal();
        // The first sample is drawn from the stationary distribution.
        out[i] = tick_ == 0 ? model_.sigma_n * eta : alpha_ * last_[i] + innovation_scale_ * eta;
      }
      break;
    }
  }
  last_ = out;
  ++tick_;
  return out;
}

Vec3 sample_disturbance(const DisturbanceModel& model, double dt_s, std::int64_t tick) {
  if (tick < 0) throw std::invalid_argument("sample_disturbance: negative tick");
  DisturbanceGenerator gen(model, dt_s);
  Vec3 v = gen.next();
  for (std::int64_t k = 0; k < tick; ++k) v = gen.next();
  return v;
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

}  // namespace viva::dynamics
