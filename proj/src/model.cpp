#include "imunet/model.hpp"

#include <cinttypes>
#include <cstdio>
#include <memory>

#include "imunet/errors.hpp"

namespace imunet {

namespace {

void check_output_dim(std::int64_t m) {
  if (m != 2 && m != 3)
    throw ContractError("output dimension must be 2 or 3, got " + std::to_string(m));
}

void add_conv_bn_act(Sequential& net, const std::string& stem, std::int64_t in, std::int64_t out,
                     std::int64_t k, std::int64_t stride, std::int64_t padding,
                     Activation::Kind act, Rng& rng) {
  net.add(stem, std::make_unique<Conv1d>(in, out, k, stride, padding, 1, false, rng));
  net.add(stem + "_bn", std::make_unique<BatchNorm1d>(out));
  net.add(stem + "_act", std::make_unique<Activation>(act));
}

}  // namespace

NodePtr Model::forward(const NodePtr& x, const Ctx& ctx) {
  const Tensor& xv = x->value;
  if (xv.rank() != 3 || xv.shape[1] != input_channels || xv.shape[2] != input_length)
    throw DimensionError(name + ": expected input [batch x " + std::to_string(input_channels) +
                         " x " + std::to_string(input_length) + "], got " + shape_str(xv.shape));
  return net.forward(x, ctx);
}

Tensor Model::predict(const Tensor& x) {
  Ctx ctx{false, nullptr};
  return forward(make_const(x), ctx)->value;
}

std::vector<ParamRef> Model::params() {
  std::vector<ParamRef> out;
  net.collect_params("", out);
  return out;
}

std::vector<BufferRef> Model::buffers() {
  std::vector<BufferRef> out;
  net.collect_buffers("", out);
  return out;
}

Model build_imunet(std::int64_t m, Rng& rng) {
  check_output_dim(m);
  Model model;
  model.name = "imunet";
  model.output_dim = m;
  Sequential& net = model.net;

  // Stem: 6x200 -> 64x100 -> pooled to 64x50.
  net.add("conv1", std::make_unique<Conv1d>(6, 64, 7, 2, 3, 1, false, rng));
  net.add("bn1", std::make_unique<BatchNorm1d>(64));
  net.add("elu1", std::make_unique<Activation>(Activation::kElu));
  net.add("pool1", std::make_unique<MaxPool1d>(3, 2, 1));

  // Four stages of two MobileResNet blocks; stages 2-4 downsample on entry.
  const std::int64_t channels[4] = {64, 128, 256, 512};
  std::int64_t in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t out = channels[stage];
    const std::int64_t stride = stage == 0 ? 1 : 2;
    net.add("layer" + std::to_string(stage + 1) + "_0",
            std::make_unique<MobileResNetBlock>(in, out, stride, rng));
    net.add("layer" + std::to_string(stage + 1) + "_1",
            std::make_unique<MobileResNetBlock>(out, out, 1, rng));
    in = out;
  }

  // Bottleneck to 128 channels, then the regression head.
  net.add("conv2", std::make_unique<Conv1d>(512, 128, 1, 1, 0, 1, false, rng));
  net.add("bn2", std::make_unique<BatchNorm1d>(128));
  net.add("elu2", std::make_unique<Activation>(Activation::kElu));
  net.add("gap", std::make_unique<GlobalAvgPool>());
  net.add("fc1", std::make_unique<Dense>(128, 512, rng));
  net.add("elu3", std::make_unique<Activation>(Activation::kElu));
  net.add("drop", std::make_unique<Dropout>(0.5));
  net.add("fc2", std::make_unique<Dense>(512, m, rng));
  return model;
}

Model build_resnet18_1d(std::int64_t m, Rng& rng) {
  check_output_dim(m);
  Model model;
  model.name = "resnet18";
  model.output_dim = m;
  Sequential& net = model.net;

  net.add("conv1", std::make_unique<Conv1d>(6, 64, 7, 2, 3, 1, false, rng));
  net.add("bn1", std::make_unique<BatchNorm1d>(64));
  net.add("relu1", std::make_unique<Activation>(Activation::kRelu));
  net.add("pool1", std::make_unique<MaxPool1d>(3, 2, 1));

  const std::int64_t channels[4] = {64, 128, 256, 512};
  std::int64_t in = 64;
  for (int stage = 0; stage < 4; ++stage) {
    const std::int64_t out = channels[stage];
    const std::int64_t stride = stage == 0 ? 1 : 2;
    net.add("layer" + std::to_string(stage + 1) + "_0",
            std::make_unique<ResidualBlock>(in, out, stride, rng));
    net.add("layer" + std::to_string(stage + 1) + "_1",
            std::make_unique<ResidualBlock>(out, out, 1, rng));
    in = out;
  }

  net.add("gap", std::make_unique<GlobalAvgPool>());
  net.add("fc1", std::make_unique<Dense>(512, 512, rng));
  net.add("relu2", std::make_unique<Activation>(Activation::kRelu));
  net.add("drop", std::make_unique<Dropout>(0.5));
  net.add("fc2", std::make_unique<Dense>(512, m, rng));
  return model;
}

Model build_mobilenet_1d(std::int64_t m, Rng& rng) {
  check_output_dim(m);
  Model model;
  model.name = "mobilenet";
  model.output_dim = m;
  Sequential& net = model.net;

  add_conv_bn_act(net, "conv1", 6, 32, 3, 2, 1, Activation::kRelu, rng);

  // The 13 depthwise-separable units of MobileNet v1, length-wise strides in
  // place of the 2D spatial ones.
  const std::int64_t out_ch[13] = {64,  128, 128, 256, 256,  512, 512,
                                   512, 512, 512, 512, 1024, 1024};
  const std::int64_t strides[13] = {1, 2, 1, 2, 1, 2, 1, 1, 1, 1, 1, 2, 1};
  std::int64_t in = 32;
  for (int i = 0; i < 13; ++i) {
    const std::string stem = "sep" + std::to_string(i + 1);
    net.add(stem + "_dw", std::make_unique<Conv1d>(in, in, 3, strides[i], 1, in, false, rng));
    net.add(stem + "_dw_bn", std::make_unique<BatchNorm1d>(in));
    net.add(stem + "_dw_act", std::make_unique<Activation>(Activation::kRelu));
    net.add(stem + "_pw", std::make_unique<Conv1d>(in, out_ch[i], 1, 1, 0, 1, false, rng));
    net.add(stem + "_pw_bn", std::make_unique<BatchNorm1d>(out_ch[i]));
    net.add(stem + "_pw_act", std::make_unique<Activation>(Activation::kRelu));
    in = out_ch[i];
  }

  net.add("gap", std::make_unique<GlobalAvgPool>());
  net.add("fc", std::make_unique<Dense>(1024, m, rng));
  return model;
}

Model build_model(const std::string& arch, std::int64_t m, Rng& rng) {
  if (arch == "imunet") return build_imunet(m, rng);
  if (arch == "resnet18") return build_resnet18_1d(m, rng);
  if (arch == "mobilenet") return build_mobilenet_1d(m, rng);
  throw ConfigError("unknown architecture '" + arch +
                    "' (expected imunet, resnet18, or mobilenet)");
}

CostReport count_costs(const Model& model) {
  CostReport report;
  report.model = model.name;
  ShapeTrace shape{model.input_channels, model.input_length};
  model.net.add_costs("", shape, report.rows);
  for (const CostRow& r : report.rows) {
    report.total_params += r.params;
    report.total_macs += r.macs;
    report.total_flops += r.flops;
  }
  return report;
}

std::string CostReport::text_table() const {
  std::size_t name_w = 5;  // "layer"
  for (const CostRow& r : rows) name_w = std::max(name_w, r.layer.size());
  std::string out;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-*s %12s %14s %14s\n", static_cast<int>(name_w), "layer",
                "params", "macs", "flops");
  out += buf;
  for (const CostRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-*s %12" PRId64 " %14" PRId64 " %14" PRId64 "\n",
                  static_cast<int>(name_w), r.layer.c_str(), r.params, r.macs, r.flops);
    out += buf;
  }
  std::snprintf(buf, sizeof(buf), "%-*s %12" PRId64 " %14" PRId64 " %14" PRId64 "\n",
                static_cast<int>(name_w), "total", total_params, total_macs, total_flops);
  out += buf;
  return out;
}

std::string CostReport::csv() const {
  std::string out = "layer,params,macs,flops\n";
  char buf[256];
  for (const CostRow& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%" PRId64 ",%" PRId64 ",%" PRId64 "\n", r.layer.c_str(),
                  r.params, r.macs, r.flops);
    out += buf;
  }
  return out;
}

}  // namespace imunet
