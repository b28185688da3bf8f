#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "imunet/rng.hpp"
#include "imunet/tensor.hpp"

namespace imunet {

// Unit quaternion in (w, x, y, z) component order, Hamilton convention,
// mapping body-frame vectors into the global frame.
struct Quaternion {
  double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

  double norm() const;
  Quaternion normalized() const;
  Quaternion conjugate() const { return {w, -x, -y, -z}; }
  Quaternion operator*(const Quaternion& o) const;  // Hamilton product
};

// Rotates v by q (q must be unit within 1e-6): q (x) (0,v) (x) q^-1.
std::array<double, 3> quat_rotate(const Quaternion& q, const std::array<double, 3>& v);

// A time-stamped IMU recording. Body-frame gyro/accel with per-sample
// orientation; ground truth (position, and velocity for synthetic data) is
// optional. gt_velocity exists only in memory — datasets on disk carry
// position ground truth alone.
struct ImuSequence {
  std::vector<double> timestamps;                // seconds, strictly increasing
  std::vector<std::array<double, 3>> gyro;       // rad/s, body frame
  std::vector<std::array<double, 3>> accel;      // m/s^2, body frame
  std::vector<Quaternion> orientation;           // body -> global
  std::vector<std::vector<double>> gt_position;  // N x m, empty when absent
  std::vector<std::vector<double>> gt_velocity;  // N x m, synthetic only
  double sample_rate_hz = 0.0;

  std::int64_t size() const { return static_cast<std::int64_t>(timestamps.size()); }
  bool has_gt() const { return !gt_position.empty(); }
  std::int64_t gt_dim() const {
    return has_gt() ? static_cast<std::int64_t>(gt_position.front().size()) : 0;
  }

  // Shared lengths, strictly increasing time, unit quaternions, finite values.
  void validate() const;
};

// Additive sensor corruption: constant bias + white Gaussian noise + a
// random-walk drift accumulated per sample.
struct NoiseSpec {
  double gyro_noise_std = 0.0;   // rad/s
  double accel_noise_std = 0.0;  // m/s^2
  std::array<double, 3> gyro_bias{0.0, 0.0, 0.0};
  std::array<double, 3> accel_bias{0.0, 0.0, 0.0};
  double bias_random_walk_std = 0.0;  // per-step drift scale
  std::uint64_t rng_seed = 0;         // folded into the generator seed
};

// Named bundles: "none", "consumer" (phone-grade MEMS), "harsh".
NoiseSpec noise_preset(const std::string& name);

enum class SynthProfile { kLine, kCircle, kFigure8, kRandomWalk };

// Parses "line", "circle", "figure8", "random-walk".
SynthProfile parse_profile(const std::string& name);

// Shape parameters of the analytic trajectories; defaults give gentle
// pedestrian-scale motion.
struct SynthParams {
  double line_speed = 1.5;     // m/s cruise speed
  double line_heading = 0.6;   // rad
  double ramp_s = 5.0;         // smooth speed ramp duration (0 = start at speed)
  double circle_radius = 5.0;  // m
  double circle_omega = 0.2;   // rad/s
  double fig8_amp_x = 8.0;     // m
  double fig8_amp_y = 4.0;     // m
  double fig8_omega = 0.15;    // rad/s
  std::int64_t dims = 2;       // 2 planar, 3 adds a vertical sinusoid
  double vert_amp = 0.3;       // m (dims == 3)
  double vert_omega = 0.5;     // rad/s (dims == 3)
};

// Generates duration_s * rate_hz samples of an analytic trajectory with exact
// ground truth and noise per `noise`. Deterministic in (seed, noise.rng_seed).
ImuSequence synth_generate(SynthProfile profile, double duration_s, double rate_hz,
                           const NoiseSpec& noise, std::uint64_t seed,
                           const SynthParams& params = {});

// Linear interpolation of every channel onto a uniform grid t0 + i/target_hz;
// quaternions are interpolated componentwise and renormalized. Grid points
// that hit an input timestamp exactly reproduce that sample.
ImuSequence resample_linear(const ImuSequence& seq, double target_hz);

// One network sample: rotated gyro (rows 0-2) and accel (rows 3-5) over
// `window` consecutive samples, with the window-mean ground-truth velocity as
// the regression target.
struct Window {
  Tensor input;  // [6 x window]
  std::vector<double> target;
  double t_start = 0.0;
  double t_end = 0.0;
};

std::vector<Window> make_windows(const ImuSequence& seq, std::int64_t window = 200,
                                 std::int64_t stride = 10, bool with_targets = true);

// Canonical on-disk dataset: DIR/imu.csv, DIR/ori.csv, and DIR/gt.csv when
// ground truth exists. 9 significant digits, newline-terminated rows.
void write_dataset(const ImuSequence& seq, const std::string& dir);
ImuSequence load_dataset(const std::string& dir);

}  // namespace imunet
