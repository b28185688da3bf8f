#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "imunet/data.hpp"
#include "imunet/model.hpp"
#include "imunet/tensor.hpp"

namespace imunet {

// Mean squared error over every element of [batch x m] (mean, not sum, so the
// scale is invariant to batch size and output width).
NodePtr mse_loss(const NodePtr& pred, const Tensor& target);

struct TrainConfig {
  double learning_rate = 1e-4;
  std::int64_t batch_size = 128;
  std::int64_t epochs = 300;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::uint64_t seed = 0;
  std::int64_t report_every = 1;  // epochs between progress lines (info log)
};

// Adam with the standard bias correction. One step() consumes whatever
// gradients are currently stored on the parameters; parameters whose gradient
// was never touched in the backward pass are skipped.
class Adam {
 public:
  Adam(std::vector<NodePtr> params, double learning_rate, double beta1 = 0.9,
       double beta2 = 0.999, double eps = 1e-8);

  void zero_grads();
  void step();
  std::int64_t step_count() const { return step_; }

 private:
  std::vector<NodePtr> params_;
  std::vector<Tensor> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  std::int64_t step_ = 0;
};

struct TrainResult {
  std::vector<double> epoch_loss;  // batch-size-weighted mean per epoch
  std::int64_t steps = 0;
};

// Shuffled mini-batch training. Deterministic in config.seed: the per-epoch
// shuffle and the dropout stream both derive from it. Aborts with a diagnostic
// naming the epoch and batch if the loss turns non-finite.
TrainResult train(Model& model, const std::vector<Window>& windows, const TrainConfig& config);

// Loss history as `epoch,loss` rows (epochs numbered from 1).
void write_loss_history(const std::vector<double>& epoch_loss, const std::string& path);

// Binary checkpoint: header (magic, version, model name, output dim, step),
// parameter directory + flat float64 blob, then the BN running-stat buffers in
// the same layout. Loading rebuilds the architecture from the stored name and
// restores every scalar exactly.
void save_checkpoint(Model& model, const std::string& path, std::int64_t step);
Model load_checkpoint(const std::string& path);

struct CheckpointInfo {
  std::string model_name;
  std::int64_t output_dim = 0;
  std::int64_t step = 0;
  std::int64_t param_scalars = 0;  // parameter blob length; excludes buffers
};

CheckpointInfo inspect_checkpoint(const std::string& path);

}  // namespace imunet
