#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "imunet/data.hpp"
#include "imunet/model.hpp"

namespace imunet {

// A time-stamped position track (N x m meters, strictly increasing seconds).
struct Trajectory {
  std::vector<double> timestamps;
  std::vector<std::vector<double>> positions;

  std::int64_t size() const { return static_cast<std::int64_t>(timestamps.size()); }
  std::int64_t dim() const {
    return positions.empty() ? 0 : static_cast<std::int64_t>(positions.front().size());
  }
  // Strictly increasing time, matching lengths, uniform dim, finite values.
  void validate() const;
};

// A time-stamped m-vector series. Used for velocities (and, with the obvious
// reinterpretation, for the acceleration input of the classical baseline).
struct VelocitySeries {
  std::vector<double> timestamps;
  std::vector<std::vector<double>> velocities;
};

// Left-Riemann cumulative sum: P(t_{k+1}) = P(t_k) + V(t_k)*(t_{k+1} - t_k),
// anchored at P(t_0) = p0. The velocity at the final timestamp is unused.
Trajectory integrate_velocity(const VelocitySeries& v, const std::vector<double>& p0);

// Double left-Riemann integration (velocity from acceleration, then position).
// This is the classical strapdown baseline that drifts on noisy input.
Trajectory integrate_acceleration(const VelocitySeries& a, const std::vector<double>& v0,
                                  const std::vector<double>& p0);

// Any window -> mean-velocity predictor; lets tests plug in an oracle in place
// of a trained network.
using VelocityFn = std::function<std::vector<double>(const Window&)>;

// Slides 200-sample windows at `stride`, predicts each window's mean velocity,
// and integrates the predictions. Output timestamps are the window start times
// plus the final window's end time. Initial position comes from ground truth
// when the sequence has it, else the origin.
Trajectory predict_trajectory(const VelocityFn& fn, std::int64_t output_dim,
                              const ImuSequence& seq, std::int64_t stride,
                              std::int64_t window = 200);
Trajectory predict_trajectory(Model& model, const ImuSequence& seq, std::int64_t stride);

// Ground-truth positions as a Trajectory (requires has_gt()).
Trajectory gt_trajectory(const ImuSequence& seq);

// Root-mean-square position error after linearly interpolating `est` onto the
// ground-truth timestamps that fall inside the overlapping time range.
double ate(const Trajectory& est, const Trajectory& gt);

// Mean of per-interval ATEs over consecutive non-overlapping windows of
// `interval_s` seconds, re-anchoring the estimate at each interval's first
// ground-truth sample. Incomplete trailing intervals are ignored; a span
// shorter than one interval is scored whole and scaled by interval_s/duration.
double rte(const Trajectory& est, const Trajectory& gt, double interval_s = 60.0);

// traj.csv: header t,px,py[,pz], 9 significant digits.
void write_trajectory(const Trajectory& traj, const std::string& path);

struct MetricRow {
  std::string sequence;
  double ate = 0.0;
  double rte = 0.0;
};

// metrics.csv: header sequence,ate,rte.
void write_metrics(const std::vector<MetricRow>& rows, const std::string& path);

}  // namespace imunet
