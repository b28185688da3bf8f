#include "imunet/data.hpp"

#include <cmath>
#include <cstdint>
#include <filesystem>
#include <utility>

#include "imunet/errors.hpp"
#include "imunet/io.hpp"

namespace imunet {

double Quaternion::norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }

Quaternion Quaternion::normalized() const {
  const double n = norm();
  if (n <= 0.0) throw ContractError("quaternion: cannot normalize a zero quaternion");
  return {w / n, x / n, y / n, z / n};
}

Quaternion Quaternion::operator*(const Quaternion& o) const {
  return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
          w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
}

std::array<double, 3> quat_rotate(const Quaternion& q, const std::array<double, 3>& v) {
  if (std::fabs(q.norm() - 1.0) > 1e-6)
    throw ContractError("quat_rotate: quaternion norm deviates from 1 by more than 1e-6");
  const Quaternion pure{0.0, v[0], v[1], v[2]};
  const Quaternion r = q * pure * q.conjugate();
  return {r.x, r.y, r.z};
}

void ImuSequence::validate() const {
  const std::size_t n = timestamps.size();
  if (n < 2) throw ValidationError("sequence: needs at least 2 samples");
  if (gyro.size() != n || accel.size() != n || orientation.size() != n)
    throw ValidationError("sequence: channel lengths do not match timestamps");
  if (!gt_position.empty() && gt_position.size() != n)
    throw ValidationError("sequence: ground-truth length does not match timestamps");
  if (!gt_velocity.empty() && gt_velocity.size() != n)
    throw ValidationError("sequence: ground-truth velocity length does not match timestamps");
  const std::size_t m = gt_position.empty() ? 0 : gt_position.front().size();
  if (!gt_position.empty() && m != 2 && m != 3)
    throw ValidationError("sequence: ground truth must be 2- or 3-dimensional");
  for (std::size_t i = 0; i < n; ++i) {
    if (i > 0 && !(timestamps[i] > timestamps[i - 1]))
      throw ValidationError("sequence: timestamps not strictly increasing at index " +
                            std::to_string(i));
    if (!std::isfinite(timestamps[i]))
      throw ValidationError("sequence: non-finite timestamp at index " + std::to_string(i));
    for (int a = 0; a < 3; ++a)
      if (!std::isfinite(gyro[i][a]) || !std::isfinite(accel[i][a]))
        throw ValidationError("sequence: non-finite sample at index " + std::to_string(i));
    if (std::fabs(orientation[i].norm() - 1.0) >= 1e-6)
      throw ValidationError("sequence: non-unit orientation quaternion at index " +
                            std::to_string(i));
    if (!gt_position.empty() && gt_position[i].size() != m)
      throw ValidationError("sequence: ragged ground-truth row at index " + std::to_string(i));
  }
}

NoiseSpec noise_preset(const std::string& name) {
  if (name == "none") return {};
  if (name == "consumer") {
    NoiseSpec s;
    s.gyro_noise_std = 0.004;
    s.accel_noise_std = 0.04;
    s.gyro_bias = {0.002, -0.0015, 0.001};
    s.accel_bias = {0.06, -0.04, 0.05};
    s.bias_random_walk_std = 1e-5;
    return s;
  }
  if (name == "harsh") {
    NoiseSpec s;
    s.gyro_noise_std = 0.02;
    s.accel_noise_std = 0.2;
    s.gyro_bias = {0.01, -0.0075, 0.005};
    s.accel_bias = {0.3, -0.2, 0.25};
    s.bias_random_walk_std = 5e-5;
    return s;
  }
  throw ConfigError("unknown noise preset '" + name + "' (expected none, consumer, or harsh)");
}

SynthProfile parse_profile(const std::string& name) {
  if (name == "line") return SynthProfile::kLine;
  if (name == "circle") return SynthProfile::kCircle;
  if (name == "figure8") return SynthProfile::kFigure8;
  if (name == "random-walk") return SynthProfile::kRandomWalk;
  throw ConfigError("unknown profile '" + name +
                    "' (expected line, circle, figure8, or random-walk)");
}

namespace {

// Analytic planar state at time t: position/velocity/acceleration in the
// global frame plus heading and heading rate.
struct PlanarState {
  double px = 0.0, py = 0.0;
  double vx = 0.0, vy = 0.0;
  double ax = 0.0, ay = 0.0;
  double theta = 0.0, theta_dot = 0.0;
};

struct Sinusoid {
  double amp, omega, phase;
};

// Velocity component Σ amp·sin(ω t + φ); position and acceleration follow in
// closed form, with position anchored to 0 at t = 0.
struct SinusoidSum {
  std::vector<Sinusoid> terms;

  double value(double t) const {
    double s = 0.0;
    for (const Sinusoid& c : terms) s += c.amp * std::sin(c.omega * t + c.phase);
    return s;
  }
  double integral(double t) const {
    double s = 0.0;
    for (const Sinusoid& c : terms)
      s += c.amp / c.omega * (std::cos(c.phase) - std::cos(c.omega * t + c.phase));
    return s;
  }
  double derivative(double t) const {
    double s = 0.0;
    for (const Sinusoid& c : terms) s += c.amp * c.omega * std::cos(c.omega * t + c.phase);
    return s;
  }
};

SinusoidSum draw_sum(Rng& rng, int n, double amp_lo, double amp_hi, double om_lo, double om_hi) {
  SinusoidSum sum;
  for (int i = 0; i < n; ++i)
    sum.terms.push_back(
        {rng.uniform(amp_lo, amp_hi), rng.uniform(om_lo, om_hi), rng.uniform(0.0, 2.0 * kPi)});
  return sum;
}

class ProfileEval {
 public:
  ProfileEval(SynthProfile profile, const SynthParams& p, Rng& rng)
      : profile_(profile), p_(p) {
    if (profile_ == SynthProfile::kRandomWalk) {
      walk_vx_ = draw_sum(rng, 4, 0.1, 0.5, 0.05, 0.6);
      walk_vy_ = draw_sum(rng, 4, 0.1, 0.5, 0.05, 0.6);
      walk_heading_ = draw_sum(rng, 3, 0.2, 0.8, 0.05, 0.4);
    }
  }

  PlanarState at(double t) const {
    PlanarState s;
    switch (profile_) {
      case SynthProfile::kLine: {
        const double cs = std::cos(p_.line_heading), sn = std::sin(p_.line_heading);
        double speed, dist, accel;
        if (p_.ramp_s > 0.0 && t < p_.ramp_s) {
          const double u = t / p_.ramp_s;
          speed = p_.line_speed * (3.0 * u * u - 2.0 * u * u * u);
          dist = p_.line_speed * p_.ramp_s * (u * u * u - 0.5 * u * u * u * u);
          accel = p_.line_speed * (6.0 * u - 6.0 * u * u) / p_.ramp_s;
        } else {
          speed = p_.line_speed;
          dist = p_.line_speed * (t - 0.5 * p_.ramp_s);
          accel = 0.0;
        }
        s.px = cs * dist;
        s.py = sn * dist;
        s.vx = cs * speed;
        s.vy = sn * speed;
        s.ax = cs * accel;
        s.ay = sn * accel;
        s.theta = p_.line_heading;
        s.theta_dot = 0.0;
        break;
      }
      case SynthProfile::kCircle: {
        const double r = p_.circle_radius, om = p_.circle_omega;
        const double a = om * t;
        s.px = r * std::sin(a);
        s.py = r * (1.0 - std::cos(a));
        s.vx = r * om * std::cos(a);
        s.vy = r * om * std::sin(a);
        s.ax = -r * om * om * std::sin(a);
        s.ay = r * om * om * std::cos(a);
        s.theta = a;  // tangent direction
        s.theta_dot = om;
        break;
      }
      case SynthProfile::kFigure8: {
        const double om = p_.fig8_omega;
        s.px = p_.fig8_amp_x * std::sin(om * t);
        s.py = p_.fig8_amp_y * std::sin(2.0 * om * t);
        s.vx = p_.fig8_amp_x * om * std::cos(om * t);
        s.vy = 2.0 * p_.fig8_amp_y * om * std::cos(2.0 * om * t);
        s.ax = -p_.fig8_amp_x * om * om * std::sin(om * t);
        s.ay = -4.0 * p_.fig8_amp_y * om * om * std::sin(2.0 * om * t);
        s.theta = std::atan2(s.vy, s.vx);  // wrapped; only cos/sin are consumed
        const double v2 = s.vx * s.vx + s.vy * s.vy;
        s.theta_dot = (s.vx * s.ay - s.vy * s.ax) / v2;
        break;
      }
      case SynthProfile::kRandomWalk: {
        s.px = walk_vx_.integral(t);
        s.py = walk_vy_.integral(t);
        s.vx = walk_vx_.value(t);
        s.vy = walk_vy_.value(t);
        s.ax = walk_vx_.derivative(t);
        s.ay = walk_vy_.derivative(t);
        s.theta = walk_heading_.value(t);
        s.theta_dot = walk_heading_.derivative(t);
        break;
      }
    }
    return s;
  }

 private:
  SynthProfile profile_;
  SynthParams p_;
  SinusoidSum walk_vx_, walk_vy_, walk_heading_;
};

}  // namespace

ImuSequence synth_generate(SynthProfile profile, double duration_s, double rate_hz,
                           const NoiseSpec& noise, std::uint64_t seed,
                           const SynthParams& params) {
  if (duration_s < 2.0) throw ContractError("synth_generate: duration must be >= 2 s");
  if (rate_hz <= 0.0) throw ContractError("synth_generate: rate must be positive");
  if (params.dims != 2 && params.dims != 3)
    throw ContractError("synth_generate: dims must be 2 or 3");
  if (noise.gyro_noise_std < 0.0 || noise.accel_noise_std < 0.0 ||
      noise.bias_random_walk_std < 0.0)
    throw ContractError("synth_generate: noise standard deviations must be >= 0");

  const std::int64_t n = static_cast<std::int64_t>(std::llround(duration_s * rate_hz));

  // Independent streams: the trajectory draw depends on the seed alone; the
  // noise streams fold in NoiseSpec.rng_seed so the same path can be corrupted
  // differently.
  Rng profile_rng(mix_seed(seed, 4));
  const std::uint64_t root = seed ^ (noise.rng_seed * 0x9e3779b97f4a7c15ULL);
  Rng gyro_noise_rng(mix_seed(root, 0));
  Rng accel_noise_rng(mix_seed(root, 1));
  Rng gyro_walk_rng(mix_seed(root, 2));
  Rng accel_walk_rng(mix_seed(root, 3));

  ProfileEval eval(profile, params, profile_rng);

  ImuSequence seq;
  seq.sample_rate_hz = rate_hz;
  seq.timestamps.reserve(n);
  seq.gyro.reserve(n);
  seq.accel.reserve(n);
  seq.orientation.reserve(n);
  seq.gt_position.reserve(n);
  seq.gt_velocity.reserve(n);

  std::array<double, 3> gyro_walk{0.0, 0.0, 0.0};
  std::array<double, 3> accel_walk{0.0, 0.0, 0.0};
  const bool noisy_gyro = noise.gyro_noise_std > 0.0;
  const bool noisy_accel = noise.accel_noise_std > 0.0;
  const bool walking = noise.bias_random_walk_std > 0.0;

  for (std::int64_t k = 0; k < n; ++k) {
    const double t = static_cast<double>(k) / rate_hz;
    const PlanarState s = eval.at(t);

    double pz = 0.0, vz = 0.0, az = 0.0;
    if (params.dims == 3) {
      pz = params.vert_amp * std::sin(params.vert_omega * t);
      vz = params.vert_amp * params.vert_omega * std::cos(params.vert_omega * t);
      az = -params.vert_amp * params.vert_omega * params.vert_omega *
           std::sin(params.vert_omega * t);
    }

    // Body frame = global rotated by -theta about z.
    const double cs = std::cos(s.theta), sn = std::sin(s.theta);
    std::array<double, 3> body_accel{cs * s.ax + sn * s.ay, -sn * s.ax + cs * s.ay, az};
    std::array<double, 3> body_gyro{0.0, 0.0, s.theta_dot};

    if (walking) {
      for (int a = 0; a < 3; ++a) {
        if (k > 0) {
          gyro_walk[a] += noise.bias_random_walk_std * gyro_walk_rng.gaussian();
          accel_walk[a] += noise.bias_random_walk_std * accel_walk_rng.gaussian();
        }
      }
    }
    for (int a = 0; a < 3; ++a) {
      body_gyro[a] += noise.gyro_bias[a] + gyro_walk[a];
      body_accel[a] += noise.accel_bias[a] + accel_walk[a];
      if (noisy_gyro) body_gyro[a] += noise.gyro_noise_std * gyro_noise_rng.gaussian();
      if (noisy_accel) body_accel[a] += noise.accel_noise_std * accel_noise_rng.gaussian();
    }

    seq.timestamps.push_back(t);
    seq.gyro.push_back(body_gyro);
    seq.accel.push_back(body_accel);
    const double half = 0.5 * s.theta;
    seq.orientation.push_back({std::cos(half), 0.0, 0.0, std::sin(half)});

    std::vector<double> p{s.px, s.py};
    std::vector<double> v{s.vx, s.vy};
    if (params.dims == 3) {
      p.push_back(pz);
      v.push_back(vz);
    }
    seq.gt_position.push_back(std::move(p));
    seq.gt_velocity.push_back(std::move(v));
  }
  return seq;
}

ImuSequence resample_linear(const ImuSequence& seq, double target_hz) {
  seq.validate();
  if (target_hz <= 0.0) throw ContractError("resample_linear: target rate must be positive");
  const double t0 = seq.timestamps.front(), t_end = seq.timestamps.back();
  if (t_end - t0 <= 2.0 / target_hz)
    throw ContractError("resample_linear: sequence spans fewer than two target periods");

  const std::int64_t n = seq.size();
  const std::int64_t m_out = static_cast<std::int64_t>((t_end - t0) * target_hz) + 1;
  const std::int64_t gt_d = seq.gt_dim();
  const bool has_vel = !seq.gt_velocity.empty();

  ImuSequence out;
  out.sample_rate_hz = target_hz;
  out.timestamps.reserve(m_out);

  std::int64_t j = 0;
  for (std::int64_t i = 0; i < m_out; ++i) {
    const double t = t0 + static_cast<double>(i) / target_hz;
    while (j + 2 < n && seq.timestamps[j + 1] <= t) ++j;

    auto copy_row = [&](std::int64_t r) {
      out.gyro.push_back(seq.gyro[r]);
      out.accel.push_back(seq.accel[r]);
      out.orientation.push_back(seq.orientation[r]);
      if (gt_d > 0) out.gt_position.push_back(seq.gt_position[r]);
      if (has_vel) out.gt_velocity.push_back(seq.gt_velocity[r]);
    };

    out.timestamps.push_back(t);
    if (t == seq.timestamps[j]) {
      copy_row(j);  // exact knot: reproduce the sample bit for bit
      continue;
    }
    if (t == seq.timestamps[j + 1]) {
      copy_row(j + 1);
      continue;
    }
    const double alpha = (t - seq.timestamps[j]) / (seq.timestamps[j + 1] - seq.timestamps[j]);
    auto lerp = [alpha](double a, double b) { return a + alpha * (b - a); };

    std::array<double, 3> g{}, a{};
    for (int c = 0; c < 3; ++c) {
      g[c] = lerp(seq.gyro[j][c], seq.gyro[j + 1][c]);
      a[c] = lerp(seq.accel[j][c], seq.accel[j + 1][c]);
    }
    out.gyro.push_back(g);
    out.accel.push_back(a);
    const Quaternion &qa = seq.orientation[j], &qb = seq.orientation[j + 1];
    Quaternion q{lerp(qa.w, qb.w), lerp(qa.x, qb.x), lerp(qa.y, qb.y), lerp(qa.z, qb.z)};
    out.orientation.push_back(q.normalized());
    if (gt_d > 0) {
      std::vector<double> p(gt_d);
      for (std::int64_t c = 0; c < gt_d; ++c)
        p[c] = lerp(seq.gt_position[j][c], seq.gt_position[j + 1][c]);
      out.gt_position.push_back(std::move(p));
    }
    if (has_vel) {
      std::vector<double> v(seq.gt_velocity[j].size());
      for (std::size_t c = 0; c < v.size(); ++c)
        v[c] = lerp(seq.gt_velocity[j][c], seq.gt_velocity[j + 1][c]);
      out.gt_velocity.push_back(std::move(v));
    }
  }
  return out;
}

std::vector<Window> make_windows(const ImuSequence& seq, std::int64_t window, std::int64_t stride,
                                 bool with_targets) {
  seq.validate();
  if (window < 2 || stride < 1)
    throw ContractError("make_windows: window must be >= 2 and stride >= 1");
  if (seq.size() < window)
    throw ContractError("make_windows: sequence has " + std::to_string(seq.size()) +
                        " samples, needs at least " + std::to_string(window));
  if (with_targets && !seq.has_gt())
    throw ConfigError("make_windows: targets requested but the sequence has no ground truth");

  const std::int64_t count = (seq.size() - window) / stride + 1;
  const std::int64_t m = seq.gt_dim();
  std::vector<Window> windows;
  windows.reserve(count);
  for (std::int64_t wi = 0; wi < count; ++wi) {
    const std::int64_t i0 = wi * stride;
    Window win;
    win.input = Tensor({6, window});
    for (std::int64_t k = 0; k < window; ++k) {
      const std::int64_t i = i0 + k;
      const std::array<double, 3> g = quat_rotate(seq.orientation[i], seq.gyro[i]);
      const std::array<double, 3> a = quat_rotate(seq.orientation[i], seq.accel[i]);
      for (int c = 0; c < 3; ++c) {
        win.input.at(c, k) = g[c];
        win.input.at(c + 3, k) = a[c];
      }
    }
    win.t_start = seq.timestamps[i0];
    win.t_end = seq.timestamps[i0 + window - 1];
    if (with_targets) {
      const double dt = win.t_end - win.t_start;
      win.target.resize(m);
      for (std::int64_t d = 0; d < m; ++d)
        win.target[d] = (seq.gt_position[i0 + window - 1][d] - seq.gt_position[i0][d]) / dt;
    }
    windows.push_back(std::move(win));
  }
  return windows;
}

namespace {

std::vector<std::string> split_lines(const std::string& text) {
  std::vector<std::string> lines;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t nl = text.find('\n', pos);
    if (nl == std::string::npos) nl = text.size();
    std::string line = text.substr(pos, nl - pos);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!line.empty()) lines.push_back(std::move(line));
    pos = nl + 1;
  }
  return lines;
}

// Parses a CSV with the given header into rows of doubles.
std::vector<std::vector<double>> read_table(const std::string& path, const std::string& header,
                                            std::size_t columns) {
  const std::string text = read_text_file(path);
  const std::vector<std::string> lines = split_lines(text);
  if (lines.empty() || lines.front() != header)
    throw ValidationError(path + ": expected header '" + header + "'");
  std::vector<std::vector<double>> rows;
  rows.reserve(lines.size() - 1);
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const std::vector<std::string> fields = split(lines[li], ',');
    if (fields.size() != columns)
      throw ValidationError(path + ": line " + std::to_string(li + 1) + " has " +
                            std::to_string(fields.size()) + " fields, expected " +
                            std::to_string(columns));
    std::vector<double> row(columns);
    for (std::size_t c = 0; c < columns; ++c)
      row[c] = parse_double(fields[c], path + " line " + std::to_string(li + 1));
    rows.push_back(std::move(row));
  }
  return rows;
}

}  // namespace

void write_dataset(const ImuSequence& seq, const std::string& dir) {
  seq.validate();
  std::filesystem::create_directories(dir);
  const std::int64_t n = seq.size();

  std::string imu = "t,gx,gy,gz,ax,ay,az\n";
  std::string ori = "t,qw,qx,qy,qz\n";
  imu.reserve(static_cast<std::size_t>(n) * 96);
  ori.reserve(static_cast<std::size_t>(n) * 72);
  for (std::int64_t i = 0; i < n; ++i) {
    const std::string t = format_g9(seq.timestamps[i]);
    imu += t;
    for (int c = 0; c < 3; ++c) imu += "," + format_g9(seq.gyro[i][c]);
    for (int c = 0; c < 3; ++c) imu += "," + format_g9(seq.accel[i][c]);
    imu += "\n";
    const Quaternion& q = seq.orientation[i];
    ori += t;
    ori += "," + format_g9(q.w) + "," + format_g9(q.x) + "," + format_g9(q.y) + "," +
           format_g9(q.z) + "\n";
  }
  atomic_write_file(dir + "/imu.csv", imu);
  atomic_write_file(dir + "/ori.csv", ori);

  if (seq.has_gt()) {
    const std::int64_t m = seq.gt_dim();
    std::string gt = m == 3 ? "t,px,py,pz\n" : "t,px,py\n";
    gt.reserve(static_cast<std::size_t>(n) * 48);
    for (std::int64_t i = 0; i < n; ++i) {
      gt += format_g9(seq.timestamps[i]);
      for (std::int64_t c = 0; c < m; ++c) gt += "," + format_g9(seq.gt_position[i][c]);
      gt += "\n";
    }
    atomic_write_file(dir + "/gt.csv", gt);
  }
}

ImuSequence load_dataset(const std::string& dir) {
  const auto imu = read_table(dir + "/imu.csv", "t,gx,gy,gz,ax,ay,az", 7);
  const auto ori = read_table(dir + "/ori.csv", "t,qw,qx,qy,qz", 5);
  if (imu.size() != ori.size())
    throw ValidationError(dir + ": imu.csv and ori.csv row counts differ");

  ImuSequence seq;
  const std::size_t n = imu.size();
  seq.timestamps.reserve(n);
  seq.gyro.reserve(n);
  seq.accel.reserve(n);
  seq.orientation.reserve(n);
  for (std::size_t i = 0; i < n; ++i) {
    if (std::fabs(imu[i][0] - ori[i][0]) > 1e-9)
      throw ValidationError(dir + ": imu.csv and ori.csv timestamps diverge at row " +
                            std::to_string(i + 2));
    seq.timestamps.push_back(imu[i][0]);
    seq.gyro.push_back({imu[i][1], imu[i][2], imu[i][3]});
    seq.accel.push_back({imu[i][4], imu[i][5], imu[i][6]});
    seq.orientation.push_back({ori[i][1], ori[i][2], ori[i][3], ori[i][4]});
  }

  const std::string gt_path = dir + "/gt.csv";
  if (std::filesystem::exists(gt_path)) {
    // Peek at the header to pick the 2D or 3D layout.
    const std::string text = read_text_file(gt_path);
    const std::size_t nl = text.find('\n');
    const std::string header = text.substr(0, nl == std::string::npos ? text.size() : nl);
    const std::size_t cols = header == "t,px,py,pz" ? 4 : 3;
    const auto gt = read_table(gt_path, cols == 4 ? "t,px,py,pz" : "t,px,py", cols);
    if (gt.size() != n) throw ValidationError(dir + ": gt.csv row count differs from imu.csv");
    seq.gt_position.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (std::fabs(gt[i][0] - seq.timestamps[i]) > 1e-9)
        throw ValidationError(dir + ": gt.csv timestamps diverge at row " + std::to_string(i + 2));
      seq.gt_position.emplace_back(gt[i].begin() + 1, gt[i].end());
    }
  }

  if (seq.timestamps.size() >= 2)
    seq.sample_rate_hz = static_cast<double>(seq.timestamps.size() - 1) /
                         (seq.timestamps.back() - seq.timestamps.front());
  seq.validate();
  return seq;
}

}  // namespace imunet
