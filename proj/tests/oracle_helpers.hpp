#pragma once

// Independent reference implementations ("oracles") used by the unit and
// acceptance tests. Everything here is written as plain loops sharing no code
// with the library proper, so agreement between the two is evidence of
// correctness rather than tautology.

#include <array>
#include <cmath>
#include <cstdint>
#include <vector>

#include "imunet/tensor.hpp"

namespace oracle {

// Textbook triple-loop matrix product.
inline imunet::Tensor matmul_ref(const imunet::Tensor& a, const imunet::Tensor& b) {
  const std::int64_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
  imunet::Tensor out({m, n});
  for (std::int64_t i = 0; i < m; ++i)
    for (std::int64_t j = 0; j < n; ++j) {
      double acc = 0.0;
      for (std::int64_t t = 0; t < k; ++t) acc += a.at(i, t) * b.at(t, j);
      out.at(i, j) = acc;
    }
  return out;
}

// Naive direct 1D cross-correlation with zero padding and groups:
// x [B x C_in x L], w [C_out x C_in/groups x k], bias [C_out] or nullptr.
inline imunet::Tensor conv1d_ref(const imunet::Tensor& x, const imunet::Tensor& w,
                                 const double* bias, std::int64_t stride, std::int64_t padding,
                                 std::int64_t groups) {
  const std::int64_t batch = x.shape[0], c_in = x.shape[1], len = x.shape[2];
  const std::int64_t c_out = w.shape[0], c_in_g = w.shape[1], k = w.shape[2];
  const std::int64_t l_out = (len + 2 * padding - k) / stride + 1;
  const std::int64_t c_out_g = c_out / groups;
  (void)c_in;
  imunet::Tensor out({batch, c_out, l_out});
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t co = 0; co < c_out; ++co) {
      const std::int64_t g = co / c_out_g;
      for (std::int64_t lo = 0; lo < l_out; ++lo) {
        double acc = bias != nullptr ? bias[co] : 0.0;
        for (std::int64_t ci = 0; ci < c_in_g; ++ci)
          for (std::int64_t t = 0; t < k; ++t) {
            const std::int64_t xi = lo * stride - padding + t;
            if (xi >= 0 && xi < len) acc += w.at(co, ci, t) * x.at(b, g * c_in_g + ci, xi);
          }
        out.at(b, co, lo) = acc;
      }
    }
  return out;
}

// Quaternion rotation through the explicit rotation matrix (w, x, y, z order).
inline std::array<double, 3> rotate_ref(double w, double x, double y, double z,
                                        const std::array<double, 3>& v) {
  const double r[3][3] = {
      {1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)},
      {2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)},
      {2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)}};
  std::array<double, 3> out{};
  for (int i = 0; i < 3; ++i)
    out[i] = r[i][0] * v[0] + r[i][1] * v[1] + r[i][2] * v[2];
  return out;
}

struct FdReport {
  double max_rel_err = 0.0;
  double max_abs_err = 0.0;
};

// Central finite differences vs analytic gradients.
//
// `build_loss` must rebuild a fresh scalar-loss graph from the live parameter
// nodes on every call (parameters are the leaves; the graph is re-created so
// perturbed values propagate). `frozen_buffers` are non-parameter state the
// forward pass mutates (batch-norm running stats): they are restored before
// every evaluation so each sample sees identical state.
//
// The relative error uses denominator max(|fd|, |g|, 1e-3): below that scale
// the comparison degrades into an absolute one, which keeps the check honest
// while staying above the ~1e-11 cancellation noise floor of central
// differences at 64-bit.
template <typename BuildLoss>
FdReport fd_check(BuildLoss build_loss, const std::vector<imunet::NodePtr>& params,
                  const std::vector<imunet::Tensor*>& frozen_buffers = {}, double h = 1e-5) {
  std::vector<imunet::Tensor> saved;
  saved.reserve(frozen_buffers.size());
  for (const imunet::Tensor* t : frozen_buffers) saved.push_back(*t);
  auto restore = [&] {
    for (std::size_t i = 0; i < frozen_buffers.size(); ++i) *frozen_buffers[i] = saved[i];
  };

  // Analytic gradients once.
  for (const imunet::NodePtr& p : params) p->zero_grad();
  restore();
  imunet::NodePtr loss = build_loss();
  imunet::backward(loss);
  std::vector<imunet::Tensor> analytic;
  analytic.reserve(params.size());
  for (const imunet::NodePtr& p : params) {
    p->ensure_grad();
    analytic.push_back(p->grad);
  }
  loss.reset();

  auto eval = [&]() -> double {
    restore();
    return build_loss()->value.data[0];
  };

  FdReport report;
  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    imunet::Tensor& theta = params[pi]->value;
    for (std::size_t i = 0; i < theta.data.size(); ++i) {
      const double old = theta.data[i];
      theta.data[i] = old + h;
      const double lp = eval();
      theta.data[i] = old - h;
      const double lm = eval();
      theta.data[i] = old;
      const double fd = (lp - lm) / (2.0 * h);
      const double g = analytic[pi].data[i];
      const double abs_err = std::fabs(fd - g);
      const double rel_err = abs_err / std::max({std::fabs(fd), std::fabs(g), 1e-3});
      if (abs_err > report.max_abs_err) report.max_abs_err = abs_err;
      if (rel_err > report.max_rel_err) report.max_rel_err = rel_err;
    }
  }
  restore();
  return report;
}

}  // namespace oracle
