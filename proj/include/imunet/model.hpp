#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imunet/layers.hpp"
#include "imunet/rng.hpp"
#include "imunet/tensor.hpp"

namespace imunet {

// A named network with a fixed input contract: windows of 6 IMU channels
// (gyro xyz, accel xyz) over 200 samples, regressed to an m-dimensional mean
// velocity. Models are move-only (the graph owns its layers).
struct Model {
  std::string name;
  std::int64_t input_channels = 6;
  std::int64_t input_length = 200;
  std::int64_t output_dim = 0;
  Sequential net;

  // Validates the input shape, then runs the layer graph.
  NodePtr forward(const NodePtr& x, const Ctx& ctx);

  // Inference-mode forward on a plain tensor.
  Tensor predict(const Tensor& x);

  std::vector<ParamRef> params();
  std::vector<BufferRef> buffers();
};

// Architecture builders. m is the output dimension (2 for planar trajectories,
// 3 with height); anything else is a contract error. Weights are drawn from
// `rng` in layer order, so a fixed seed reproduces the network bit for bit.
Model build_imunet(std::int64_t m, Rng& rng);
Model build_resnet18_1d(std::int64_t m, Rng& rng);
Model build_mobilenet_1d(std::int64_t m, Rng& rng);

// Dispatch by name: "imunet", "resnet18", or "mobilenet".
Model build_model(const std::string& arch, std::int64_t m, Rng& rng);

// Analytic per-layer cost accounting (parameters, multiply-accumulates, and
// FLOPs at 2 per MAC for conv/dense; elementwise ops report FLOPs only).
struct CostReport {
  std::string model;
  std::vector<CostRow> rows;
  std::int64_t total_params = 0;
  std::int64_t total_macs = 0;
  std::int64_t total_flops = 0;

  std::string text_table() const;
  std::string csv() const;
};

CostReport count_costs(const Model& model);

}  // namespace imunet
