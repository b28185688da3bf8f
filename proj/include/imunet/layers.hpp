#pragma once

#include <cstdint>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "imunet/tensor.hpp"

namespace imunet {

// Per-forward context: training toggles batch-norm statistics and dropout;
// rng drives dropout masks and must be set when training a net that has any.
struct Ctx {
  bool training = false;
  Rng* rng = nullptr;
};

struct ParamRef {
  std::string name;
  NodePtr node;
};

struct BufferRef {
  std::string name;
  Tensor* tensor;
};

// One row of a model cost table: trainable scalars, multiply-accumulates and
// FLOPs for one named layer at batch 1.
struct CostRow {
  std::string layer;
  std::int64_t params = 0;
  std::int64_t macs = 0;
  std::int64_t flops = 0;
};

// (channels, length) walked alongside the layer list during cost accounting;
// length 0 means the activation has been flattened to a plain vector.
struct ShapeTrace {
  std::int64_t channels = 0;
  std::int64_t length = 0;
};

std::int64_t conv_out_length(std::int64_t length, std::int64_t kernel, std::int64_t stride,
                             std::int64_t padding);

// ---------------------------------------------------------------------------
// Functional ops (each registers its backward rule on the returned node)
// ---------------------------------------------------------------------------

// 1D cross-correlation (no kernel flip) with zero padding and channel groups.
// x [B x C_in x L], weight [C_out x C_in/groups x k], bias [C_out] or null.
NodePtr conv1d(const NodePtr& x, const NodePtr& weight, const NodePtr& bias, std::int64_t stride,
               std::int64_t padding, std::int64_t groups);

// Training mode normalizes per channel over (batch, length) with biased
// variance and updates the running stats in place; inference reads them only.
NodePtr batchnorm(const NodePtr& x, const NodePtr& gamma, const NodePtr& beta,
                  Tensor& running_mean, Tensor& running_var, double eps, double momentum,
                  bool training);

NodePtr elu(const NodePtr& x);
NodePtr relu(const NodePtr& x);

// Max pooling over the padded signal; padding positions never win, and ties
// route the gradient to the lowest input index.
NodePtr maxpool1d(const NodePtr& x, std::int64_t kernel, std::int64_t stride,
                  std::int64_t padding);

NodePtr global_avg_pool(const NodePtr& x);  // [B x C x L] -> [B x C]

// y = x W^T + b for x [B x in], weight [out x in], bias [out].
NodePtr dense(const NodePtr& x, const NodePtr& weight, const NodePtr& bias);

// Inverted-scaling dropout: identity at inference, mask/(1-p) in training.
NodePtr dropout(const NodePtr& x, double p, const Ctx& ctx);

// ---------------------------------------------------------------------------
// Layer objects
// ---------------------------------------------------------------------------

struct Module {
  virtual ~Module() = default;
  virtual NodePtr forward(const NodePtr& x, const Ctx& ctx) = 0;
  virtual void collect_params(const std::string& prefix, std::vector<ParamRef>& out) {}
  virtual void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) {}
  // Appends this layer's cost rows and advances the shape trace.
  virtual void add_costs(const std::string& prefix, ShapeTrace& shape,
                         std::vector<CostRow>& rows) const = 0;
};

struct Conv1d : Module {
  std::int64_t in_channels, out_channels, kernel_size, stride, padding, groups;
  NodePtr weight;  // [out x in/groups x k]
  NodePtr bias;    // [out], omitted (null) when the conv feeds a batch norm

  Conv1d(std::int64_t in, std::int64_t out, std::int64_t k, std::int64_t stride_,
         std::int64_t padding_, std::int64_t groups_, bool with_bias, Rng& rng);

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct BatchNorm1d : Module {
  std::int64_t channels;
  double eps = 1e-5;
  double momentum = 0.1;
  NodePtr gamma, beta;
  Tensor running_mean, running_var;

  explicit BatchNorm1d(std::int64_t channels_);

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct Activation : Module {
  enum Kind { kRelu, kElu };
  Kind kind;

  explicit Activation(Kind k) : kind(k) {}

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct MaxPool1d : Module {
  std::int64_t kernel, stride, padding;

  MaxPool1d(std::int64_t k, std::int64_t s, std::int64_t p) : kernel(k), stride(s), padding(p) {}

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct GlobalAvgPool : Module {
  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct Dense : Module {
  std::int64_t in_features, out_features;
  NodePtr weight, bias;

  Dense(std::int64_t in, std::int64_t out, Rng& rng);

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct Dropout : Module {
  double p;

  explicit Dropout(double p_) : p(p_) {}

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

// Depthwise-separable unit: DW(k3) -> BN -> ELU -> PW(k1) -> BN, no trailing
// activation (the enclosing block decides what follows).
struct SeparableUnit : Module {
  Conv1d dw, pw;
  BatchNorm1d bn1, bn2;

  SeparableUnit(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng);

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

// Residual unit built from two depthwise-separable units (each standard conv
// of a ResNet basic block replaced by its depthwise+pointwise factorization),
// ELU between and after, projection shortcut (pointwise conv + BN) when the
// stride or channel count changes.
struct MobileResNetBlock : Module {
  SeparableUnit unit1, unit2;
  std::unique_ptr<Conv1d> shortcut;
  std::unique_ptr<BatchNorm1d> shortcut_bn;

  MobileResNetBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng);

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

// Classic ResNet basic block: two dense k=3 convolutions with BN and ReLU.
struct ResidualBlock : Module {
  Conv1d conv1, conv2;
  BatchNorm1d bn1, bn2;
  std::unique_ptr<Conv1d> shortcut;
  std::unique_ptr<BatchNorm1d> shortcut_bn;

  ResidualBlock(std::int64_t in, std::int64_t out, std::int64_t stride, Rng& rng);

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

struct Sequential : Module {
  std::vector<std::pair<std::string, std::unique_ptr<Module>>> steps;

  void add(std::string name, std::unique_ptr<Module> m) {
    steps.emplace_back(std::move(name), std::move(m));
  }

  NodePtr forward(const NodePtr& x, const Ctx& ctx) override;
  void collect_params(const std::string& prefix, std::vector<ParamRef>& out) override;
  void collect_buffers(const std::string& prefix, std::vector<BufferRef>& out) override;
  void add_costs(const std::string& prefix, ShapeTrace& shape,
                 std::vector<CostRow>& rows) const override;
};

}  // namespace imunet
