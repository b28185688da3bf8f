#include "imunet/navigation.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "imunet/errors.hpp"
#include "imunet/io.hpp"

namespace imunet {

void Trajectory::validate() const {
  if (timestamps.size() != positions.size())
    throw ValidationError("trajectory: " + std::to_string(timestamps.size()) +
                          " timestamps vs " + std::to_string(positions.size()) + " positions");
  const std::int64_t m = dim();
  for (std::size_t i = 0; i < timestamps.size(); ++i) {
    if (i > 0 && timestamps[i] <= timestamps[i - 1])
      throw ValidationError("trajectory: timestamps not strictly increasing at index " +
                            std::to_string(i));
    if (!std::isfinite(timestamps[i]))
      throw ValidationError("trajectory: non-finite timestamp at index " + std::to_string(i));
    if (static_cast<std::int64_t>(positions[i].size()) != m)
      throw ValidationError("trajectory: ragged position row at index " + std::to_string(i));
    for (double v : positions[i])
      if (!std::isfinite(v))
        throw ValidationError("trajectory: non-finite position at index " + std::to_string(i));
  }
}

namespace {

void check_series(const VelocitySeries& v, const char* what) {
  if (v.timestamps.size() != v.velocities.size())
    throw ValidationError(std::string(what) + ": " + std::to_string(v.timestamps.size()) +
                          " timestamps vs " + std::to_string(v.velocities.size()) + " rows");
  if (v.timestamps.size() < 2)
    throw ContractError(std::string(what) + ": need at least 2 samples");
  const std::size_t m = v.velocities.front().size();
  for (std::size_t i = 0; i < v.timestamps.size(); ++i) {
    if (i > 0 && v.timestamps[i] <= v.timestamps[i - 1])
      throw ValidationError(std::string(what) + ": timestamps not strictly increasing at index " +
                            std::to_string(i));
    if (v.velocities[i].size() != m)
      throw ValidationError(std::string(what) + ": ragged row at index " + std::to_string(i));
  }
}

// Linear interpolation of a trajectory at t, which must lie within its range.
std::vector<double> interp_at(const Trajectory& tr, double t) {
  const auto& ts = tr.timestamps;
  if (t < ts.front() || t > ts.back())
    throw ContractError("interp_at: t outside the trajectory range");
  auto it = std::lower_bound(ts.begin(), ts.end(), t);
  if (it != ts.end() && *it == t)
    return tr.positions[static_cast<std::size_t>(it - ts.begin())];
  const std::size_t hi = static_cast<std::size_t>(it - ts.begin());
  const std::size_t lo = hi - 1;
  const double u = (t - ts[lo]) / (ts[hi] - ts[lo]);
  std::vector<double> out(tr.positions[lo].size());
  for (std::size_t d = 0; d < out.size(); ++d)
    out[d] = tr.positions[lo][d] + u * (tr.positions[hi][d] - tr.positions[lo][d]);
  return out;
}

// Indices of gt samples inside [lo, hi], plus the shared overlap bounds.
struct Overlap {
  double lo = 0.0, hi = 0.0;
  std::vector<std::size_t> gt_indices;
};

Overlap find_overlap(const Trajectory& est, const Trajectory& gt) {
  est.validate();
  gt.validate();
  if (est.size() < 1 || gt.size() < 1)
    throw ValidationError("metric: empty trajectory");
  if (est.dim() != gt.dim())
    throw DimensionError("metric: estimate dim " + std::to_string(est.dim()) +
                         " vs ground truth dim " + std::to_string(gt.dim()));
  Overlap o;
  o.lo = std::max(est.timestamps.front(), gt.timestamps.front());
  o.hi = std::min(est.timestamps.back(), gt.timestamps.back());
  if (o.lo > o.hi) throw ValidationError("metric: trajectories do not overlap in time");
  for (std::size_t i = 0; i < gt.timestamps.size(); ++i)
    if (gt.timestamps[i] >= o.lo && gt.timestamps[i] <= o.hi) o.gt_indices.push_back(i);
  if (o.gt_indices.empty())
    throw ValidationError("metric: no ground-truth samples inside the overlap");
  return o;
}

// RMSE over the given gt samples after subtracting `offset` from the estimate.
double anchored_rmse(const Trajectory& est, const Trajectory& gt,
                     const std::vector<std::size_t>& indices,
                     const std::vector<double>& offset) {
  double sq_sum = 0.0;
  for (std::size_t i : indices) {
    const std::vector<double> p = interp_at(est, gt.timestamps[i]);
    for (std::size_t d = 0; d < p.size(); ++d) {
      const double e = p[d] - offset[d] - gt.positions[i][d];
      sq_sum += e * e;
    }
  }
  return std::sqrt(sq_sum / static_cast<double>(indices.size()));
}

}  // namespace

Trajectory integrate_velocity(const VelocitySeries& v, const std::vector<double>& p0) {
  check_series(v, "integrate_velocity");
  const std::size_t m = v.velocities.front().size();
  if (p0.size() != m)
    throw DimensionError("integrate_velocity: p0 dim " + std::to_string(p0.size()) +
                         " vs velocity dim " + std::to_string(m));
  Trajectory out;
  out.timestamps = v.timestamps;
  out.positions.reserve(v.timestamps.size());
  std::vector<double> p = p0;
  out.positions.push_back(p);
  for (std::size_t k = 0; k + 1 < v.timestamps.size(); ++k) {
    const double dt = v.timestamps[k + 1] - v.timestamps[k];
    for (std::size_t d = 0; d < m; ++d) p[d] += v.velocities[k][d] * dt;
    out.positions.push_back(p);
  }
  return out;
}

Trajectory integrate_acceleration(const VelocitySeries& a, const std::vector<double>& v0,
                                  const std::vector<double>& p0) {
  check_series(a, "integrate_acceleration");
  const std::size_t m = a.velocities.front().size();
  if (v0.size() != m || p0.size() != m)
    throw DimensionError("integrate_acceleration: v0/p0 dims do not match the series");
  VelocitySeries v;
  v.timestamps = a.timestamps;
  v.velocities.reserve(a.timestamps.size());
  std::vector<double> vel = v0;
  v.velocities.push_back(vel);
  for (std::size_t k = 0; k + 1 < a.timestamps.size(); ++k) {
    const double dt = a.timestamps[k + 1] - a.timestamps[k];
    for (std::size_t d = 0; d < m; ++d) vel[d] += a.velocities[k][d] * dt;
    v.velocities.push_back(vel);
  }
  return integrate_velocity(v, p0);
}

namespace {

// Shared tail of both predict_trajectory overloads: turn per-window mean
// velocities into an integrated track over the window start times plus the
// final window's end.
Trajectory integrate_predictions(const std::vector<Window>& windows,
                                 std::vector<std::vector<double>> preds,
                                 const ImuSequence& seq, std::int64_t output_dim) {
  VelocitySeries series;
  series.timestamps.reserve(windows.size() + 1);
  for (const Window& w : windows) series.timestamps.push_back(w.t_start);
  series.timestamps.push_back(windows.back().t_end);
  preds.push_back(preds.back());  // left-Riemann never reads the final row
  series.velocities = std::move(preds);

  std::vector<double> p0(static_cast<std::size_t>(output_dim), 0.0);
  if (seq.has_gt()) {
    if (seq.gt_dim() != output_dim)
      throw ConfigError("predict_trajectory: model output dim " + std::to_string(output_dim) +
                        " vs ground-truth dim " + std::to_string(seq.gt_dim()));
    p0 = seq.gt_position.front();
  }
  return integrate_velocity(series, p0);
}

void check_predictable(const ImuSequence& seq, std::int64_t window) {
  if (seq.size() < window)
    throw ValidationError("predict_trajectory: sequence has " + std::to_string(seq.size()) +
                          " samples, shorter than one " + std::to_string(window) +
                          "-sample window");
}

}  // namespace

Trajectory predict_trajectory(const VelocityFn& fn, std::int64_t output_dim,
                              const ImuSequence& seq, std::int64_t stride,
                              std::int64_t window) {
  check_predictable(seq, window);
  const std::vector<Window> windows = make_windows(seq, window, stride, /*with_targets=*/false);
  std::vector<std::vector<double>> preds;
  preds.reserve(windows.size());
  for (const Window& w : windows) {
    std::vector<double> v = fn(w);
    if (static_cast<std::int64_t>(v.size()) != output_dim)
      throw DimensionError("predict_trajectory: predictor returned dim " +
                           std::to_string(v.size()) + ", expected " +
                           std::to_string(output_dim));
    preds.push_back(std::move(v));
  }
  return integrate_predictions(windows, std::move(preds), seq, output_dim);
}

Trajectory predict_trajectory(Model& model, const ImuSequence& seq, std::int64_t stride) {
  check_predictable(seq, model.input_length);
  const std::vector<Window> windows =
      make_windows(seq, model.input_length, stride, /*with_targets=*/false);
  const std::int64_t m = model.output_dim;

  // Batched inference; per-sample results are independent of the chunk size.
  constexpr std::int64_t kChunk = 64;
  std::vector<std::vector<double>> preds;
  preds.reserve(windows.size());
  const std::int64_t n = static_cast<std::int64_t>(windows.size());
  for (std::int64_t start = 0; start < n; start += kChunk) {
    const std::int64_t b = std::min(kChunk, n - start);
    Tensor x({b, model.input_channels, model.input_length});
    for (std::int64_t r = 0; r < b; ++r) {
      const Tensor& in = windows[static_cast<std::size_t>(start + r)].input;
      std::memcpy(&x.data[static_cast<std::size_t>(r * in.numel())], in.data.data(),
                  static_cast<std::size_t>(in.numel()) * sizeof(double));
    }
    const Tensor y = model.predict(x);
    for (std::int64_t r = 0; r < b; ++r)
      preds.emplace_back(y.data.begin() + r * m, y.data.begin() + (r + 1) * m);
  }
  return integrate_predictions(windows, std::move(preds), seq, m);
}

Trajectory gt_trajectory(const ImuSequence& seq) {
  if (!seq.has_gt()) throw ConfigError("gt_trajectory: sequence carries no ground truth");
  Trajectory out;
  out.timestamps = seq.timestamps;
  out.positions = seq.gt_position;
  out.validate();
  return out;
}

double ate(const Trajectory& est, const Trajectory& gt) {
  const Overlap o = find_overlap(est, gt);
  const std::vector<double> zero(static_cast<std::size_t>(gt.dim()), 0.0);
  return anchored_rmse(est, gt, o.gt_indices, zero);
}

double rte(const Trajectory& est, const Trajectory& gt, double interval_s) {
  if (!(interval_s > 0.0)) throw ContractError("rte: interval must be positive");
  const Overlap o = find_overlap(est, gt);
  const double duration = o.hi - o.lo;

  auto interval_ate = [&](const std::vector<std::size_t>& indices) {
    const std::size_t first = indices.front();
    const std::vector<double> est_first = interp_at(est, gt.timestamps[first]);
    std::vector<double> offset(est_first.size());
    for (std::size_t d = 0; d < offset.size(); ++d)
      offset[d] = est_first[d] - gt.positions[first][d];
    return anchored_rmse(est, gt, indices, offset);
  };

  if (duration < interval_s) {
    // Too short for even one interval: score the whole span, scaled up as if
    // the drift continued linearly to a full interval.
    return interval_ate(o.gt_indices) * (interval_s / duration);
  }

  const std::int64_t complete = static_cast<std::int64_t>(duration / interval_s);
  double total = 0.0;
  std::int64_t scored = 0;
  std::size_t cursor = 0;
  for (std::int64_t k = 0; k < complete; ++k) {
    const double a = o.lo + static_cast<double>(k) * interval_s;
    const double b = a + interval_s;
    std::vector<std::size_t> indices;
    while (cursor < o.gt_indices.size() && gt.timestamps[o.gt_indices[cursor]] < b) {
      if (gt.timestamps[o.gt_indices[cursor]] >= a) indices.push_back(o.gt_indices[cursor]);
      ++cursor;
    }
    if (indices.empty()) continue;  // no samples landed in this interval
    total += interval_ate(indices);
    ++scored;
  }
  if (scored == 0) throw ValidationError("rte: no interval contained ground-truth samples");
  return total / static_cast<double>(scored);
}

void write_trajectory(const Trajectory& traj, const std::string& path) {
  traj.validate();
  const std::int64_t m = traj.dim();
  if (m != 2 && m != 3)
    throw ContractError("write_trajectory: dim must be 2 or 3, got " + std::to_string(m));
  std::string out = m == 2 ? "t,px,py\n" : "t,px,py,pz\n";
  for (std::size_t i = 0; i < traj.timestamps.size(); ++i) {
    out += format_g9(traj.timestamps[i]);
    for (double v : traj.positions[i]) {
      out += ',';
      out += format_g9(v);
    }
    out += '\n';
  }
  atomic_write_file(path, out);
}

void write_metrics(const std::vector<MetricRow>& rows, const std::string& path) {
  std::string out = "sequence,ate,rte\n";
  for (const MetricRow& r : rows)
    out += r.sequence + "," + format_g9(r.ate) + "," + format_g9(r.rte) + "\n";
  atomic_write_file(path, out);
}

}  // namespace imunet
