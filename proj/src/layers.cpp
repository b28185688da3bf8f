#include "imunet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "gemm.hpp"

namespace imunet {

namespace {

std::string join(const std::string& prefix, const std::string& leaf) {
  return prefix.empty() ? leaf : prefix + "." + leaf;
}

// Valid half-open output range [lo_begin, lo_end) for kernel tap t, i.e. the
// lo values whose source index lo*stride - padding + t lands inside [0, len).
void lo_bounds(std::int64_t t, std::int64_t stride, std::int64_t padding, std::int64_t len,
               std::int64_t l_out, std::int64_t& lo_begin, std::int64_t& lo_end) {
  std::int64_t lo_min = 0;
  if (padding - t > 0) lo_min = (padding - t + stride - 1) / stride;
  const std::int64_t hi = len - 1 + padding - t;
  std::int64_t lo_max = hi >= 0 ? hi / stride : -1;
  if (lo_max > l_out - 1) lo_max = l_out - 1;
  lo_begin = lo_min;
  lo_end = lo_max + 1;
  if (lo_begin > lo_end) lo_begin = lo_end;
}

// Batched im2col for one channel group: col[(ci*k + t)][b*l_out + lo] =
// x[b][c0 + ci][lo*stride - padding + t], zero outside the signal. Batch
// columns sit side by side so one GEMM covers the whole batch.
void im2col_group(const double* x, std::int64_t batch, std::int64_t c_in_total, std::int64_t len,
                  std::int64_t c0, std::int64_t c_in_g, std::int64_t k, std::int64_t stride,
                  std::int64_t padding, std::int64_t l_out, double* col) {
  const std::int64_t cols = batch * l_out;
  std::fill(col, col + c_in_g * k * cols, 0.0);
  for (std::int64_t ci = 0; ci < c_in_g; ++ci) {
    for (std::int64_t t = 0; t < k; ++t) {
      std::int64_t lo_begin, lo_end;
      lo_bounds(t, stride, padding, len, l_out, lo_begin, lo_end);
      double* row = col + (ci * k + t) * cols;
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* src =
            x + (b * c_in_total + c0 + ci) * len + (lo_begin * stride - padding + t);
        double* dst = row + b * l_out + lo_begin;
        const std::int64_t n = lo_end - lo_begin;
        if (stride == 1) {
          std::memcpy(dst, src, static_cast<std::size_t>(n) * sizeof(double));
        } else {
          for (std::int64_t i = 0; i < n; ++i) dst[i] = src[i * stride];
        }
      }
    }
  }
}

// Transpose of im2col_group: scatter-adds column gradients back onto dx
// (overlapping taps accumulate).
void col2im_group(const double* col, std::int64_t batch, std::int64_t c_in_total,
                  std::int64_t len, std::int64_t c0, std::int64_t c_in_g, std::int64_t k,
                  std::int64_t stride, std::int64_t padding, std::int64_t l_out, double* dx) {
  const std::int64_t cols = batch * l_out;
  for (std::int64_t ci = 0; ci < c_in_g; ++ci) {
    for (std::int64_t t = 0; t < k; ++t) {
      std::int64_t lo_begin, lo_end;
      lo_bounds(t, stride, padding, len, l_out, lo_begin, lo_end);
      const double* row = col + (ci * k + t) * cols;
      for (std::int64_t b = 0; b < batch; ++b) {
        double* dst = dx + (b * c_in_total + c0 + ci) * len + (lo_begin * stride - padding + t);
        const double* src = row + b * l_out + lo_begin;
        const std::int64_t n = lo_end - lo_begin;
        if (stride == 1) {
          for (std::int64_t i = 0; i < n; ++i) dst[i] += src[i];
        } else {
          for (std::int64_t i = 0; i < n; ++i) dst[i * stride] += src[i];
        }
      }
    }
  }
}

struct ConvDims {
  std::int64_t batch, c_in, len, c_out, c_in_g, k, stride, padding, groups, l_out;
};

bool is_depthwise(const ConvDims& d) {
  return d.groups == d.c_in && d.c_out == d.c_in && d.c_in_g == 1;
}

bool is_plain_pointwise(const ConvDims& d) {
  return d.k == 1 && d.stride == 1 && d.padding == 0 && d.groups == 1;
}

void conv_forward(const ConvDims& d, const double* x, const double* w, const double* bias,
                  double* out) {
  if (is_depthwise(d)) {
    // One k-tap filter per channel; the GEMM degenerates, direct loops win.
    std::fill(out, out + d.batch * d.c_out * d.l_out, 0.0);
    for (std::int64_t b = 0; b < d.batch; ++b) {
      for (std::int64_t c = 0; c < d.c_in; ++c) {
        const double* xc = x + (b * d.c_in + c) * d.len;
        double* oc = out + (b * d.c_out + c) * d.l_out;
        for (std::int64_t t = 0; t < d.k; ++t) {
          const double wt = w[c * d.k + t];
          std::int64_t lo_begin, lo_end;
          lo_bounds(t, d.stride, d.padding, d.len, d.l_out, lo_begin, lo_end);
          const double* src = xc + (lo_begin * d.stride - d.padding + t);
          for (std::int64_t i = 0; i < lo_end - lo_begin; ++i)
            oc[lo_begin + i] += wt * src[i * d.stride];
        }
      }
    }
  } else if (is_plain_pointwise(d)) {
    // Per-sample GEMM directly on the contiguous [C_in x L] slice.
    for (std::int64_t b = 0; b < d.batch; ++b) {
      detail::gemm(false, false, d.c_out, d.len, d.c_in, 1.0, w, d.c_in,
                   x + b * d.c_in * d.len, d.len, 0.0, out + b * d.c_out * d.len, d.len);
    }
  } else {
    // im2col + one GEMM per group, batched across samples.
    const std::int64_t cols = d.batch * d.l_out;
    const std::int64_t c_out_g = d.c_out / d.groups;
    std::vector<double> col(static_cast<std::size_t>(d.c_in_g * d.k * cols));
    std::vector<double> tmp(static_cast<std::size_t>(c_out_g * cols));
    for (std::int64_t g = 0; g < d.groups; ++g) {
      im2col_group(x, d.batch, d.c_in, d.len, g * d.c_in_g, d.c_in_g, d.k, d.stride, d.padding,
                   d.l_out, col.data());
      detail::gemm(false, false, c_out_g, cols, d.c_in_g * d.k, 1.0,
                   w + g * c_out_g * d.c_in_g * d.k, d.c_in_g * d.k, col.data(), cols, 0.0,
                   tmp.data(), cols);
      for (std::int64_t co = 0; co < c_out_g; ++co) {
        for (std::int64_t b = 0; b < d.batch; ++b) {
          std::memcpy(out + (b * d.c_out + g * c_out_g + co) * d.l_out,
                      tmp.data() + co * cols + b * d.l_out,
                      static_cast<std::size_t>(d.l_out) * sizeof(double));
        }
      }
    }
  }
  if (bias != nullptr) {
    for (std::int64_t b = 0; b < d.batch; ++b)
      for (std::int64_t co = 0; co < d.c_out; ++co) {
        double* oc = out + (b * d.c_out + co) * d.l_out;
        for (std::int64_t lo = 0; lo < d.l_out; ++lo) oc[lo] += bias[co];
      }
  }
}

// Accumulates dx/dw/db (whichever pointers are non-null) for the given
// upstream gradient dy.
void conv_backward(const ConvDims& d, const double* x, const double* w, const double* dy,
                   double* dx, double* dw, double* db) {
  if (db != nullptr) {
    for (std::int64_t b = 0; b < d.batch; ++b)
      for (std::int64_t co = 0; co < d.c_out; ++co) {
        const double* dyc = dy + (b * d.c_out + co) * d.l_out;
        double acc = 0.0;
        for (std::int64_t lo = 0; lo < d.l_out; ++lo) acc += dyc[lo];
        db[co] += acc;
      }
  }
  if (dx == nullptr && dw == nullptr) return;

  if (is_depthwise(d)) {
    for (std::int64_t b = 0; b < d.batch; ++b) {
      for (std::int64_t c = 0; c < d.c_in; ++c) {
        const double* xc = x + (b * d.c_in + c) * d.len;
        const double* dyc = dy + (b * d.c_out + c) * d.l_out;
        double* dxc = dx != nullptr ? dx + (b * d.c_in + c) * d.len : nullptr;
        for (std::int64_t t = 0; t < d.k; ++t) {
          std::int64_t lo_begin, lo_end;
          lo_bounds(t, d.stride, d.padding, d.len, d.l_out, lo_begin, lo_end);
          const std::int64_t off = lo_begin * d.stride - d.padding + t;
          if (dw != nullptr) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < lo_end - lo_begin; ++i)
              acc += dyc[lo_begin + i] * xc[off + i * d.stride];
            dw[c * d.k + t] += acc;
          }
          if (dxc != nullptr) {
            const double wt = w[c * d.k + t];
            for (std::int64_t i = 0; i < lo_end - lo_begin; ++i)
              dxc[off + i * d.stride] += wt * dyc[lo_begin + i];
          }
        }
      }
    }
  } else if (is_plain_pointwise(d)) {
    for (std::int64_t b = 0; b < d.batch; ++b) {
      const double* xb = x + b * d.c_in * d.len;
      const double* dyb = dy + b * d.c_out * d.len;
      if (dw != nullptr) {
        // dW += dY_b * X_b^T
        detail::gemm(false, true, d.c_out, d.c_in, d.len, 1.0, dyb, d.len, xb, d.len, 1.0, dw,
                     d.c_in);
      }
      if (dx != nullptr) {
        // dX_b += W^T * dY_b
        detail::gemm(true, false, d.c_in, d.len, d.c_out, 1.0, w, d.c_in, dyb, d.len, 1.0,
                     dx + b * d.c_in * d.len, d.len);
      }
    }
  } else {
    const std::int64_t cols = d.batch * d.l_out;
    const std::int64_t c_out_g = d.c_out / d.groups;
    std::vector<double> col(static_cast<std::size_t>(d.c_in_g * d.k * cols));
    std::vector<double> dyg(static_cast<std::size_t>(c_out_g * cols));
    std::vector<double> dcol;
    if (dx != nullptr) dcol.resize(static_cast<std::size_t>(d.c_in_g * d.k * cols));
    for (std::int64_t g = 0; g < d.groups; ++g) {
      for (std::int64_t co = 0; co < c_out_g; ++co)
        for (std::int64_t b = 0; b < d.batch; ++b)
          std::memcpy(dyg.data() + co * cols + b * d.l_out,
                      dy + (b * d.c_out + g * c_out_g + co) * d.l_out,
                      static_cast<std::size_t>(d.l_out) * sizeof(double));
      if (dw != nullptr) {
        // The forward column matrix is recomputed rather than cached so graph
        // memory stays proportional to the activations.
        im2col_group(x, d.batch, d.c_in, d.len, g * d.c_in_g, d.c_in_g, d.k, d.stride, d.padding,
                     d.l_out, col.data());
        detail::gemm(false, true, c_out_g, d.c_in_g * d.k, cols, 1.0, dyg.data(), cols,
                     col.data(), cols, 1.0, dw + g * c_out_g * d.c_in_g * d.k, d.c_in_g * d.k);
      }
      if (dx != nullptr) {
        detail::gemm(true, false, d.c_in_g * d.k, cols, c_out_g, 1.0,
                     w + g * c_out_g * d.c_in_g * d.k, d.c_in_g * d.k, dyg.data(), cols, 0.0,
                     dcol.data(), cols);
        col2im_group(dcol.data(), d.batch, d.c_in, d.len, g * d.c_in_g, d.c_in_g, d.k, d.stride,
                     d.padding, d.l_out, dx);
      }
    }
  }
}

}  // namespace

std::int64_t conv_out_length(std::int64_t length, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding) {
  return (length + 2 * padding - kernel) / stride + 1;
}

NodePtr conv1d(const NodePtr& x, const NodePtr& weight, const NodePtr& bias, std::int64_t stride,
               std::int64_t padding, std::int64_t groups) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  if (xv.rank() != 3)
    throw DimensionError("conv1d: expected input [batch x C_in x L], got " + shape_str(xv.shape));
  if (wv.rank() != 3)
    throw DimensionError("conv1d: expected weight [C_out x C_in/groups x k], got " +
                         shape_str(wv.shape));
  if (stride < 1 || padding < 0) throw ContractError("conv1d: stride must be >= 1, padding >= 0");
  ConvDims d{xv.shape[0], xv.shape[1], xv.shape[2], wv.shape[0],
             wv.shape[1], wv.shape[2], stride,      padding,
             groups,      0};
  if (groups < 1 || d.c_in % groups != 0 || d.c_out % groups != 0)
    throw DimensionError("conv1d: groups " + std::to_string(groups) +
                         " must divide channels (in " + std::to_string(d.c_in) + ", out " +
                         std::to_string(d.c_out) + ")");
  if (d.c_in_g * groups != d.c_in)
    throw DimensionError("conv1d: input channels " + std::to_string(d.c_in) +
                         " do not match weight " + shape_str(wv.shape) + " with groups " +
                         std::to_string(groups));
  if (bias != nullptr &&
      (bias->value.rank() != 1 || bias->value.shape[0] != d.c_out))
    throw DimensionError("conv1d: bias shape " + shape_str(bias->value.shape) +
                         " does not match out channels " + std::to_string(d.c_out));
  if (d.len + 2 * padding < d.k)
    throw ContractError("conv1d: kernel " + std::to_string(d.k) +
                        " longer than padded input " + std::to_string(d.len + 2 * padding));
  d.l_out = conv_out_length(d.len, d.k, stride, padding);

  Tensor out({d.batch, d.c_out, d.l_out});
  conv_forward(d, xv.data.data(), wv.data.data(),
               bias != nullptr ? bias->value.data.data() : nullptr, out.data.data());

  const bool rg =
      x->requires_grad || weight->requires_grad || (bias != nullptr && bias->requires_grad);
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x, weight};
    if (bias != nullptr) node->parents.push_back(bias);
    Node* self = node.get();
    node->backprop = [self, x, weight, bias, d] {
      double* dx = nullptr;
      double* dw = nullptr;
      double* db = nullptr;
      if (x->requires_grad) dx = x->ensure_grad().data.data();
      if (weight->requires_grad) dw = weight->ensure_grad().data.data();
      if (bias != nullptr && bias->requires_grad) db = bias->ensure_grad().data.data();
      conv_backward(d, x->value.data.data(), weight->value.data.data(), self->grad.data.data(),
                    dx, dw, db);
    };
  }
  return node;
}

NodePtr batchnorm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                  Tensor& running_mean, Tensor& running_var, double eps, double momentum,
                  bool training) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3)
    throw DimensionError("batchnorm: expected input [batch x C x L], got " +
                         shape_str(xv.shape));
  const std::int64_t batch = xv.shape[0], channels = xv.shape[1], len = xv.shape[2];
  if (gamma->value.numel() != channels || beta->value.numel() != channels ||
      running_mean.numel() != channels || running_var.numel() != channels)
    throw DimensionError("batchnorm: parameter size does not match " +
                         std::to_string(channels) + " channels");
  const std::int64_t m = batch * len;

  Tensor mean({channels});
  Tensor invstd({channels});
  if (training) {
    if (m < 2)
      throw ContractError("batchnorm: training-mode normalization needs batch*length >= 2");
    for (std::int64_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* xc = &xv.data[(b * channels + c) * len];
        for (std::int64_t l = 0; l < len; ++l) s += xc[l];
      }
      mean.data[c] = s / static_cast<double>(m);
    }
    for (std::int64_t c = 0; c < channels; ++c) {
      double s = 0.0;
      for (std::int64_t b = 0; b < batch; ++b) {
        const double* xc = &xv.data[(b * channels + c) * len];
        for (std::int64_t l = 0; l < len; ++l) {
          const double dlt = xc[l] - mean.data[c];
          s += dlt * dlt;
        }
      }
      const double var = s / static_cast<double>(m);  // biased, matching inference
      invstd.data[c] = 1.0 / std::sqrt(var + eps);
      running_mean.data[c] = (1.0 - momentum) * running_mean.data[c] + momentum * mean.data[c];
      running_var.data[c] = (1.0 - momentum) * running_var.data[c] + momentum * var;
    }
  } else {
    for (std::int64_t c = 0; c < channels; ++c) {
      mean.data[c] = running_mean.data[c];
      invstd.data[c] = 1.0 / std::sqrt(running_var.data[c] + eps);
    }
  }

  Tensor out(xv.shape);
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      const double* xc = &xv.data[(b * channels + c) * len];
      double* oc = &out.data[(b * channels + c) * len];
      const double g = gamma->value.data[c], bt = beta->value.data[c];
      const double mu = mean.data[c], is = invstd.data[c];
      for (std::int64_t l = 0; l < len; ++l) oc[l] = g * (xc[l] - mu) * is + bt;
    }

  const bool rg = x->requires_grad || gamma->requires_grad || beta->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x, gamma, beta};
    Node* self = node.get();
    node->backprop = [self, x, gamma, beta, mean = std::move(mean), invstd = std::move(invstd),
                      training, batch, channels, len] {
      const double inv_m = 1.0 / static_cast<double>(batch * len);
      // Per-channel reductions: s1 = sum(dy), s2 = sum(dy * xhat).
      std::vector<double> s1(static_cast<std::size_t>(channels), 0.0);
      std::vector<double> s2(static_cast<std::size_t>(channels), 0.0);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < channels; ++c) {
          const double* xc = &x->value.data[(b * channels + c) * len];
          const double* dyc = &self->grad.data[(b * channels + c) * len];
          const double mu = mean.data[c], is = invstd.data[c];
          double a1 = 0.0, a2 = 0.0;
          for (std::int64_t l = 0; l < len; ++l) {
            a1 += dyc[l];
            a2 += dyc[l] * (xc[l] - mu) * is;
          }
          s1[static_cast<std::size_t>(c)] += a1;
          s2[static_cast<std::size_t>(c)] += a2;
        }
      if (gamma->requires_grad) {
        Tensor& gg = gamma->ensure_grad();
        for (std::int64_t c = 0; c < channels; ++c) gg.data[c] += s2[c];
      }
      if (beta->requires_grad) {
        Tensor& gb = beta->ensure_grad();
        for (std::int64_t c = 0; c < channels; ++c) gb.data[c] += s1[c];
      }
      if (x->requires_grad) {
        Tensor& gx = x->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t c = 0; c < channels; ++c) {
            const double* xc = &x->value.data[(b * channels + c) * len];
            const double* dyc = &self->grad.data[(b * channels + c) * len];
            double* dxc = &gx.data[(b * channels + c) * len];
            const double g = gamma->value.data[c];
            const double mu = mean.data[c], is = invstd.data[c];
            if (training) {
              // Batch statistics depend on x; the usual BN backward.
              const double c1 = s1[c] * inv_m, c2 = s2[c] * inv_m;
              for (std::int64_t l = 0; l < len; ++l) {
                const double xhat = (xc[l] - mu) * is;
                dxc[l] += g * is * (dyc[l] - c1 - xhat * c2);
              }
            } else {
              // Running statistics are constants.
              for (std::int64_t l = 0; l < len; ++l) dxc[l] += g * is * dyc[l];
            }
          }
      }
    };
  }
  return node;
}

NodePtr elu(const NodePtr& x) {
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) {
    const double v = x->value.data[i];
    out.data[i] = v >= 0.0 ? v : std::exp(v) - 1.0;
  }
  const bool rg = x->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x};
    Node* self = node.get();
    node->backprop = [self, x] {
      // For v < 0 the local derivative exp(v) equals y + 1.
      Tensor& gx = x->ensure_grad();
      for (std::size_t i = 0; i < gx.data.size(); ++i) {
        const double v = x->value.data[i];
        gx.data[i] += self->grad.data[i] * (v >= 0.0 ? 1.0 : self->value.data[i] + 1.0);
      }
    };
  }
  return node;
}

NodePtr relu(const NodePtr& x) { return max0(x); }

NodePtr maxpool1d(const NodePtr& x, std::int64_t kernel, std::int64_t stride,
                  std::int64_t padding) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3)
    throw DimensionError("maxpool1d: expected input [batch x C x L], got " +
                         shape_str(xv.shape));
  if (kernel < 1 || stride < 1 || padding < 0)
    throw ContractError("maxpool1d: kernel and stride must be >= 1, padding >= 0");
  if (padding > kernel / 2)
    throw ContractError("maxpool1d: padding must not exceed kernel/2");
  const std::int64_t batch = xv.shape[0], channels = xv.shape[1], len = xv.shape[2];
  if (len + 2 * padding < kernel)
    throw ContractError("maxpool1d: pooling window " + std::to_string(kernel) +
                        " larger than padded input " + std::to_string(len + 2 * padding));
  const std::int64_t l_out = conv_out_length(len, kernel, stride, padding);

  Tensor out({batch, channels, l_out});
  // Padding behaves as -inf: the scan simply skips out-of-range positions
  // (every window contains at least one valid sample given padding <= k/2).
  std::vector<std::int32_t> argmax(static_cast<std::size_t>(batch * channels * l_out));
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      const double* xc = &xv.data[(b * channels + c) * len];
      double* oc = &out.data[(b * channels + c) * l_out];
      std::int32_t* ac = &argmax[static_cast<std::size_t>((b * channels + c) * l_out)];
      for (std::int64_t lo = 0; lo < l_out; ++lo) {
        const std::int64_t start = lo * stride - padding;
        const std::int64_t from = std::max<std::int64_t>(start, 0);
        const std::int64_t to = std::min<std::int64_t>(start + kernel, len);
        double best = xc[from];
        std::int64_t best_i = from;
        for (std::int64_t i = from + 1; i < to; ++i) {
          if (xc[i] > best) {  // strict: ties keep the lowest index
            best = xc[i];
            best_i = i;
          }
        }
        oc[lo] = best;
        ac[lo] = static_cast<std::int32_t>(best_i);
      }
    }

  const bool rg = x->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x};
    Node* self = node.get();
    node->backprop = [self, x, argmax = std::move(argmax), batch, channels, len, l_out] {
      Tensor& gx = x->ensure_grad();
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < channels; ++c) {
          double* dxc = &gx.data[(b * channels + c) * len];
          const double* dyc = &self->grad.data[(b * channels + c) * l_out];
          const std::int32_t* ac = &argmax[static_cast<std::size_t>((b * channels + c) * l_out)];
          for (std::int64_t lo = 0; lo < l_out; ++lo) dxc[ac[lo]] += dyc[lo];
        }
    };
  }
  return node;
}

NodePtr global_avg_pool(const NodePtr& x) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3)
    throw DimensionError("global_avg_pool: expected input [batch x C x L], got " +
                         shape_str(xv.shape));
  const std::int64_t batch = xv.shape[0], channels = xv.shape[1], len = xv.shape[2];
  Tensor out({batch, channels});
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t c = 0; c < channels; ++c) {
      const double* xc = &xv.data[(b * channels + c) * len];
      double s = 0.0;
      for (std::int64_t l = 0; l < len; ++l) s += xc[l];
      out.at(b, c) = s / static_cast<double>(len);
    }
  const bool rg = x->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x};
    Node* self = node.get();
    node->backprop = [self, x, batch, channels, len] {
      Tensor& gx = x->ensure_grad();
      const double inv = 1.0 / static_cast<double>(len);
      for (std::int64_t b = 0; b < batch; ++b)
        for (std::int64_t c = 0; c < channels; ++c) {
          const double g = self->grad.at(b, c) * inv;
          double* dxc = &gx.data[(b * channels + c) * len];
          for (std::int64_t l = 0; l < len; ++l) dxc[l] += g;
        }
    };
  }
  return node;
}

NodePtr dense(const NodePtr& x, const NodePtr& weight, const NodePtr& bias) {
  const Tensor& xv = x->value;
  const Tensor& wv = weight->value;
  if (xv.rank() != 2 || wv.rank() != 2 || xv.shape[1] != wv.shape[1])
    throw DimensionError("dense: incompatible shapes x " + shape_str(xv.shape) + ", weight " +
                         shape_str(wv.shape));
  const std::int64_t batch = xv.shape[0], in = xv.shape[1], out_f = wv.shape[0];
  if (bias->value.numel() != out_f)
    throw DimensionError("dense: bias shape " + shape_str(bias->value.shape) +
                         " does not match out features " + std::to_string(out_f));
  Tensor out({batch, out_f});
  detail::gemm(false, true, batch, out_f, in, 1.0, xv.data.data(), in, wv.data.data(), in, 0.0,
               out.data.data(), out_f);
  for (std::int64_t b = 0; b < batch; ++b)
    for (std::int64_t o = 0; o < out_f; ++o) out.at(b, o) += bias->value.data[o];

  const bool rg = x->requires_grad || weight->requires_grad || bias->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x, weight, bias};
    Node* self = node.get();
    node->backprop = [self, x, weight, bias, batch, in, out_f] {
      if (x->requires_grad) {
        // dX += dY * W
        detail::gemm(false, false, batch, in, out_f, 1.0, self->grad.data.data(), out_f,
                     weight->value.data.data(), in, 1.0, x->ensure_grad().data.data(), in);
      }
      if (weight->requires_grad) {
        // dW += dY^T * X
        detail::gemm(true, false, out_f, in, batch, 1.0, self->grad.data.data(), out_f,
                     x->value.data.data(), in, 1.0, weight->ensure_grad().data.data(), in);
      }
      if (bias->requires_grad) {
        Tensor& gb = bias->ensure_grad();
        for (std::int64_t b = 0; b < batch; ++b)
          for (std::int64_t o = 0; o < out_f; ++o) gb.data[o] += self->grad.at(b, o);
      }
    };
  }
  return node;
}

NodePtr dropout(const NodePtr& x, double p, const Ctx& ctx) {
  if (p < 0.0 || p >= 1.0)
    throw ContractError("dropout: probability must be in [0, 1), got " + std::to_string(p));
  if (!ctx.training || p == 0.0) return x;  // identity at inference
  if (ctx.rng == nullptr)
    throw ContractError("dropout: training-mode forward needs Ctx.rng");
  Tensor mask(x->value.shape);
  const double keep_scale = 1.0 / (1.0 - p);
  for (double& m : mask.data) m = ctx.rng->uniform() >= p ? keep_scale : 0.0;
  Tensor out(x->value.shape);
  for (std::size_t i = 0; i < out.data.size(); ++i) out.data[i] = x->value.data[i] * mask.data[i];

  const bool rg = x->requires_grad;
  auto node = std::make_shared<Node>(std::move(out), rg);
  if (rg) {
    node->parents = {x};
    Node* self = node.get();
    node->backprop = [self, x, mask = std::move(mask)] {
      Tensor& gx = x->ensure_grad();
      for (std::size_t i = 0; i < gx.data.size(); ++i)
        gx.data[i] += self->grad.data[i] * mask.data[i];
    };
  }
  return node;
}

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------

Conv1d::Conv1d(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride_,
               std::int64_t padding_, std::int64_t groups_, bool with_bias, Rng& rng)
    : in_channels(in),
      out_channels(out),
      kernel_size(k),
      stride(stride_),
      padding(padding_),
      groups(groups_) {
  if (groups < 1 || in % groups != 0 || out % groups != 0)
    throw DimensionError("Conv1d: groups " + std::to_string(groups) +
                         " must divide channels (in " + std::to_string(in) + ", out " +
                         std::to_string(out) + ")");
  const std::int64_t fan_in = (in / groups) * k;
  weight = make_param(Tensor::randn({out, in / groups, k}, rng, std::sqrt(2.0 / fan_in)));
  if (with_bias) bias = make_param(Tensor({out}));
}

NodePtr Conv1d::forward(const NodePtr& x, const Ctx&) {
  return conv1d(x, weight, bias, stride, padding, groups);
}

void Conv1d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({join(prefix, "weight"), weight});
  if (bias != nullptr) out.push_back({join(prefix, "bias"), bias});
}

void Conv1d::add_costs(const std::string& prefix, ShapeTrace& shape,
                       std::vector<CostRow>& rows) const {
  if (shape.channels != in_channels || shape.length < 1)
    throw ContractError("Conv1d::add_costs: shape trace does not match layer " + prefix);
  const std::int64_t l_out = conv_out_length(shape.length, kernel_size, stride, padding);
  const std::int64_t params =
      out_channels * (in_channels / groups) * kernel_size + (bias != nullptr ? out_channels : 0);
  const std::int64_t macs = l_out * out_channels * (in_channels / groups) * kernel_size;
  rows.push_back({prefix, params, macs, 2 * macs});
  shape = {out_channels, l_out};
}

BatchNorm1d::BatchNorm1d(std::int64_t channels_) : channels(channels_) {
  gamma = make_param(Tensor::full({channels}, 1.0));
  beta = make_param(Tensor({channels}));
  running_mean = Tensor({channels});
  running_var = Tensor::full({channels}, 1.0);
}

NodePtr BatchNorm1d::forward(const NodePtr& x, const Ctx& ctx) {
  return batchnorm(x, gamma, beta, running_mean, running_var, eps, momentum, ctx.training);
}

void BatchNorm1d::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({join(prefix, "gamma"), gamma});
  out.push_back({join(prefix, "beta"), beta});
}

void BatchNorm1d::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  out.push_back({join(prefix, "running_mean"), &running_mean});
  out.push_back({join(prefix, "running_var"), &running_var});
}

void BatchNorm1d::add_costs(const std::string& prefix, ShapeTrace& shape,
                            std::vector<CostRow>& rows) const {
  rows.push_back({prefix, 2 * channels, 0, shape.channels * std::max<std::int64_t>(shape.length, 1)});
}

NodePtr Activation::forward(const NodePtr& x, const Ctx&) {
  return kind == kElu ? elu(x) : relu(x);
}

void Activation::add_costs(const std::string& prefix, ShapeTrace& shape,
                           std::vector<CostRow>& rows) const {
  rows.push_back({prefix, 0, 0, shape.channels * std::max<std::int64_t>(shape.length, 1)});
}

NodePtr MaxPool1d::forward(const NodePtr& x, const Ctx&) {
  return maxpool1d(x, kernel, stride, padding);
}

void MaxPool1d::add_costs(const std::string& prefix, ShapeTrace& shape,
                          std::vector<CostRow>& rows) const {
  rows.push_back({prefix, 0, 0, shape.channels * shape.length});
  shape.length = conv_out_length(shape.length, kernel, stride, padding);
}

NodePtr GlobalAvgPool::forward(const NodePtr& x, const Ctx&) { return global_avg_pool(x); }

void GlobalAvgPool::add_costs(const std::string& prefix, ShapeTrace& shape,
                              std::vector<CostRow>& rows) const {
  rows.push_back({prefix, 0, 0, shape.channels * shape.length});
  shape.length = 0;  // flattened to a vector from here on
}

Dense::Dense(std::int64_t in, std::int64_t out, Rng& rng) : in_features(in), out_features(out) {
  weight = make_param(Tensor::randn({out, in}, rng, std::sqrt(2.0 / in)));
  bias = make_param(Tensor({out}));
}

NodePtr Dense::forward(const NodePtr& x, const Ctx&) { return dense(x, weight, bias); }

void Dense::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  out.push_back({join(prefix, "weight"), weight});
  out.push_back({join(prefix, "bias"), bias});
}

void Dense::add_costs(const std::string& prefix, ShapeTrace& shape,
                      std::vector<CostRow>& rows) const {
  if (shape.channels != in_features || shape.length != 0)
    throw ContractError("Dense::add_costs: shape trace does not match layer " + prefix);
  const std::int64_t macs = in_features * out_features;
  rows.push_back({prefix, macs + out_features, macs, 2 * macs});
  shape.channels = out_features;
}

NodePtr Dropout::forward(const NodePtr& x, const Ctx& ctx) { return dropout(x, p, ctx); }

void Dropout::add_costs(const std::string& prefix, ShapeTrace&,
                        std::vector<CostRow>& rows) const {
  rows.push_back({prefix, 0, 0, 0});  // identity at inference
}

SeparableUnit::SeparableUnit(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng)
    : dw(in, in, 3, stride, 1, in, false, rng),
      pw(in, out, 1, 1, 0, 1, false, rng),
      bn1(in),
      bn2(out) {}

NodePtr SeparableUnit::forward(const NodePtr& x, const Ctx& ctx) {
  return bn2.forward(pw.forward(elu(bn1.forward(dw.forward(x, ctx), ctx)), ctx), ctx);
}

void SeparableUnit::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  dw.collect_params(join(prefix, "dw"), out);
  bn1.collect_params(join(prefix, "bn1"), out);
  pw.collect_params(join(prefix, "pw"), out);
  bn2.collect_params(join(prefix, "bn2"), out);
}

void SeparableUnit::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  bn1.collect_buffers(join(prefix, "bn1"), out);
  bn2.collect_buffers(join(prefix, "bn2"), out);
}

void SeparableUnit::add_costs(const std::string& prefix, ShapeTrace& shape,
                              std::vector<CostRow>& rows) const {
  dw.add_costs(join(prefix, "dw"), shape, rows);
  bn1.add_costs(join(prefix, "bn1"), shape, rows);
  rows.push_back({join(prefix, "elu"), 0, 0, shape.channels * shape.length});
  pw.add_costs(join(prefix, "pw"), shape, rows);
  bn2.add_costs(join(prefix, "bn2"), shape, rows);
}

MobileResNetBlock::MobileResNetBlock(std::int64_t in, std::int64_t out, std::int64_t stride,
                                     Rng& rng)
    : unit1(in, out, stride, rng), unit2(out, out, 1, rng) {
  if (stride != 1 || in != out) {
    shortcut = std::make_unique<Conv1d>(in, out, 1, stride, 0, 1, false, rng);
    shortcut_bn = std::make_unique<BatchNorm1d>(out);
  }
}

NodePtr MobileResNetBlock::forward(const NodePtr& x, const Ctx& ctx) {
  NodePtr h = unit2.forward(elu(unit1.forward(x, ctx)), ctx);
  NodePtr s = x;
  if (shortcut != nullptr) s = shortcut_bn->forward(shortcut->forward(x, ctx), ctx);
  if (!h->value.same_shape(s->value))
    throw ContractError("MobileResNetBlock: internal shape mismatch, branch " +
                        shape_str(h->value.shape) + " vs shortcut " + shape_str(s->value.shape));
  return elu(add(h, s));  // activation after the residual sum (ResNet convention)
}

void MobileResNetBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  unit1.collect_params(join(prefix, "unit1"), out);
  unit2.collect_params(join(prefix, "unit2"), out);
  if (shortcut != nullptr) {
    shortcut->collect_params(join(prefix, "shortcut"), out);
    shortcut_bn->collect_params(join(prefix, "shortcut_bn"), out);
  }
}

void MobileResNetBlock::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  unit1.collect_buffers(join(prefix, "unit1"), out);
  unit2.collect_buffers(join(prefix, "unit2"), out);
  if (shortcut_bn != nullptr) shortcut_bn->collect_buffers(join(prefix, "shortcut_bn"), out);
}

void MobileResNetBlock::add_costs(const std::string& prefix, ShapeTrace& shape,
                                  std::vector<CostRow>& rows) const {
  ShapeTrace main = shape;
  unit1.add_costs(join(prefix, "unit1"), main, rows);
  rows.push_back({join(prefix, "elu"), 0, 0, main.channels * main.length});
  unit2.add_costs(join(prefix, "unit2"), main, rows);
  if (shortcut != nullptr) {
    ShapeTrace sc = shape;
    shortcut->add_costs(join(prefix, "shortcut"), sc, rows);
    shortcut_bn->add_costs(join(prefix, "shortcut_bn"), sc, rows);
  }
  rows.push_back({join(prefix, "add"), 0, 0, main.channels * main.length});
  rows.push_back({join(prefix, "elu_out"), 0, 0, main.channels * main.length});
  shape = main;
}

ResidualBlock::ResidualBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng)
    : conv1(in, out, 3, stride, 1, 1, false, rng),
      conv2(out, out, 3, 1, 1, 1, false, rng),
      bn1(out),
      bn2(out) {
  if (stride != 1 || in != out) {
    shortcut = std::make_unique<Conv1d>(in, out, 1, stride, 0, 1, false, rng);
    shortcut_bn = std::make_unique<BatchNorm1d>(out);
  }
}

NodePtr ResidualBlock::forward(const NodePtr& x, const Ctx& ctx) {
  NodePtr h = bn2.forward(conv2.forward(relu(bn1.forward(conv1.forward(x, ctx), ctx)), ctx), ctx);
  NodePtr s = x;
  if (shortcut != nullptr) s = shortcut_bn->forward(shortcut->forward(x, ctx), ctx);
  if (!h->value.same_shape(s->value))
    throw ContractError("ResidualBlock: internal shape mismatch, branch " +
                        shape_str(h->value.shape) + " vs shortcut " + shape_str(s->value.shape));
  return relu(add(h, s));
}

void ResidualBlock::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  conv1.collect_params(join(prefix, "conv1"), out);
  bn1.collect_params(join(prefix, "bn1"), out);
  conv2.collect_params(join(prefix, "conv2"), out);
  bn2.collect_params(join(prefix, "bn2"), out);
  if (shortcut != nullptr) {
    shortcut->collect_params(join(prefix, "shortcut"), out);
    shortcut_bn->collect_params(join(prefix, "shortcut_bn"), out);
  }
}

void ResidualBlock::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  bn1.collect_buffers(join(prefix, "bn1"), out);
  bn2.collect_buffers(join(prefix, "bn2"), out);
  if (shortcut_bn != nullptr) shortcut_bn->collect_buffers(join(prefix, "shortcut_bn"), out);
}

void ResidualBlock::add_costs(const std::string& prefix, ShapeTrace& shape,
                              std::vector<CostRow>& rows) const {
  ShapeTrace main = shape;
  conv1.add_costs(join(prefix, "conv1"), main, rows);
  bn1.add_costs(join(prefix, "bn1"), main, rows);
  rows.push_back({join(prefix, "relu"), 0, 0, main.channels * main.length});
  conv2.add_costs(join(prefix, "conv2"), main, rows);
  bn2.add_costs(join(prefix, "bn2"), main, rows);
  if (shortcut != nullptr) {
    ShapeTrace sc = shape;
    shortcut->add_costs(join(prefix, "shortcut"), sc, rows);
    shortcut_bn->add_costs(join(prefix, "shortcut_bn"), sc, rows);
  }
  rows.push_back({join(prefix, "add"), 0, 0, main.channels * main.length});
  rows.push_back({join(prefix, "relu_out"), 0, 0, main.channels * main.length});
  shape = main;
}

NodePtr Sequential::forward(const NodePtr& x, const Ctx& ctx) {
  NodePtr h = x;
  for (auto& [name, m] : steps) h = m->forward(h, ctx);
  return h;
}

void Sequential::collect_params(const std::string& prefix, std::vector<ParamRef>& out) {
  for (auto& [name, m] : steps) m->collect_params(join(prefix, name), out);
}

void Sequential::collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {
  for (auto& [name, m] : steps) m->collect_buffers(join(prefix, name), out);
}

void Sequential::add_costs(const std::string& prefix, ShapeTrace& shape,
                           std::vector<CostRow>& rows) const {
  for (const auto& [name, m] : steps) m->add_costs(join(prefix, name), shape, rows);
}

}  // namespace imunet
