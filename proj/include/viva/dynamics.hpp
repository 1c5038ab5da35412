#pragma once

#include <Eigen/Core>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace viva::dynamics {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

class DynamicsError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct EavParams {
  double mass_kg = 0.25;
  double gravity = 9.81;
  double drag_coeff = 0.1;  // kg/s, linear in velocity
  double dt_s = 1.0 / 30.0;

  void validate() const;
};

// Position recurrence state: the two most recent positions. Velocity is never
// integrated separately, only derived from the stored pair.
struct EavState {
  Vec3 pos = Vec3::Zero();
  Vec3 pos_prev = Vec3::Zero();
  std::int64_t tick = 0;

  static EavState at_rest(const Vec3& p) { return {p, p, 0}; }
  Vec3 velocity(double dt_s) const { return (pos - pos_prev) / dt_s; }
};

struct AttitudeCommand {
  double roll_rad = 0.0;
  double pitch_rad = 0.0;
  double yaw_rad = 0.0;
  double thrust_n = 0.0;

  friend bool operator==(const AttitudeCommand&, const AttitudeCommand&) = default;
};

struct CommandLimits {
  double attitude_max_rad = 0.35;
  double thrust_min_n = 0.0;
  double thrust_max_n = 0.0;  // <= 0 selects 2 * m * g
  double thrust_headroom = 0.5;
  double yaw_rate_max = 1.0;  // rad/s

  double resolved_thrust_max(const EavParams& params) const;
  void validate() const;
};

// Normalized pilot/agent stick: x roll axis, y pitch axis (gamepad convention,
// pushed forward is negative), z thrust axis, r yaw-rate axis. All in [-1, 1].
struct Stick {
  double x = 0.0;
  double y = 0.0;
  double z = 0.0;
  double r = 0.0;

  friend bool operator==(const Stick&, const Stick&) = default;
};

// ZYX (yaw-pitch-roll) body-to-world rotation: Rz(yaw) * Ry(pitch) * Rx(roll).
Mat3 rotation_from_euler(double roll_rad, double pitch_rad, double yaw_rad);

// Wraps to (-pi, pi].
double wrap_angle(double rad);

double hover_thrust(const EavParams& params);

// One tick of the translational recurrence
//   X_k = 2 X_{k-1} - X_{k-2} + dt^2/m (R T e3 - m g e3 - k_d/dt (X_{k-1} - X_{k-2}) + xi).
// Throws DynamicsError if the result is not finite.
EavState step(const EavState& state, const EavParams& params, const AttitudeCommand& cmd,
              const Vec3& disturbance_n);

AttitudeCommand map_stick(const Stick& stick, const CommandLimits& limits, const EavParams& params,
                          double prev_yaw_rad, double dt_s);

// Clamps roll/pitch to the attitude limit and thrust to its range; wraps yaw.
AttitudeCommand saturate(const AttitudeCommand& cmd, const CommandLimits& limits, const EavParams& params);

// First-order lag between the commanded and the realised attitude. A time
// constant of zero passes commands through unchanged.
class AttitudeLag {
 public:
  explicit AttitudeLag(double time_constant_s = 0.0) : tau_(time_constant_s) {}

  AttitudeCommand apply(const AttitudeCommand& commanded, double dt_s);
  void reset(const AttitudeCommand& current) {
    current_ = current;
    primed_ = true;
  }

 private:
  double tau_;
  bool primed_ = false;
  AttitudeCommand current_{};
};

enum class DisturbanceKind { none, constant, gauss_markov };

const char* to_string(DisturbanceKind kind) noexcept;
DisturbanceKind disturbance_kind_from_string(const std::string& text);

struct DisturbanceModel {
  DisturbanceKind kind = DisturbanceKind::none;
  Vec3 force_n = Vec3::Zero();  // constant kind
  double tau_s = 2.0;           // gauss-markov correlation time
  double sigma_n = 0.0;         // gauss-markov stationary std-dev per axis
  bool vertical = false;        // gauss-markov also drives z
  std::uint64_t seed = 0;

  void validate() const;
};

// Seeded generator with a platform-independent output sequence: mt19937_64
// bits mapped to doubles by hand, since the standard distributions are
// implementation-defined.
class SeededRng {
 public:
  explicit SeededRng(std::uint64_t seed) : engine_(seed) {}

  double uniform01();                      // [0, 1)
  double uniform(double lo, double hi);    // [lo, hi], exact lo when lo == hi
  std::int64_t uniform_index(std::int64_t count);
  double standard_normal();

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Yields xi_0, xi_1, ... in tick order.
class DisturbanceGenerator {
 public:
  DisturbanceGenerator(const DisturbanceModel& model, double dt_s);

  Vec3 next();
  std::int64_t tick() const noexcept { return tick_; }

 private:
  DisturbanceModel model_;
  double alpha_;
  double innovation_scale_;
  SeededRng rng_;
  Vec3 last_ = Vec3::Zero();
  std::int64_t tick_ = 0;
};

// Sample at an absolute tick (regenerates the sequence from tick 0).
Vec3 sample_disturbance(const DisturbanceModel& model, double dt_s, std::int64_t tick);

// splitmix64 step, used to derive independent sub-stream seeds from one seed.
std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace viva::dynamics
