#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <cstdint>
#include <vector>

#include "doctest.h"
#include "imunet/model.hpp"
#include "imunet/tensor.hpp"

using namespace imunet;

namespace {

std::int64_t param_scalar_count(Model& model) {
  std::int64_t n = 0;
  for (const ParamRef& p : model.params()) n += p.node->value.numel();
  return n;
}

// Hand-derived parameter counts, written out term by term so the arithmetic is
// auditable independently of both collect_params and count_costs.

std::int64_t separable_params(std::int64_t in, std::int64_t out) {
  return in * 3 + 2 * in      // depthwise k=3 + BN
         + in * out + 2 * out;  // pointwise + BN
}

std::int64_t mobile_block_params(std::int64_t in, std::int64_t out, bool projected) {
  std::int64_t p = separable_params(in, out) + separable_params(out, out);
  if (projected) p += in * out + 2 * out;  // pointwise shortcut + BN
  return p;
}

std::int64_t residual_block_params(std::int64_t in, std::int64_t out, bool projected) {
  std::int64_t p = 3 * in * out + 2 * out    // conv1 + BN
                   + 3 * out * out + 2 * out;  // conv2 + BN
  if (projected) p += in * out + 2 * out;
  return p;
}

std::int64_t imunet_params_by_hand(std::int64_t m) {
  std::int64_t p = 6 * 64 * 7 + 2 * 64;  // stem conv + BN
  p += 2 * mobile_block_params(64, 64, false);
  p += mobile_block_params(64, 128, true) + mobile_block_params(128, 128, false);
  p += mobile_block_params(128, 256, true) + mobile_block_params(256, 256, false);
  p += mobile_block_params(256, 512, true) + mobile_block_params(512, 512, false);
  p += 512 * 128 + 2 * 128;              // bottleneck conv + BN
  p += 128 * 512 + 512 + 512 * m + m;    // head
  return p;
}

std::int64_t resnet18_params_by_hand(std::int64_t m) {
  std::int64_t p = 6 * 64 * 7 + 2 * 64;
  p += 2 * residual_block_params(64, 64, false);
  p += residual_block_params(64, 128, true) + residual_block_params(128, 128, false);
  p += residual_block_params(128, 256, true) + residual_block_params(256, 256, false);
  p += residual_block_params(256, 512, true) + residual_block_params(512, 512, false);
  p += 512 * 512 + 512 + 512 * m + m;
  return p;
}

std::int64_t mobilenet_params_by_hand(std::int64_t m) {
  std::int64_t p = 6 * 32 * 3 + 2 * 32;
  const std::int64_t out_ch[13] = {64,  128, 128, 256, 256,  512, 512,
                                   512, 512, 512, 512, 1024, 1024};
  std::int64_t in = 32;
  for (int i = 0; i < 13; ++i) {
    p += separable_params(in, out_ch[i]);
    in = out_ch[i];
  }
  p += 1024 * m + m;
  return p;
}

}  // namespace

TEST_CASE("every architecture maps [batch x 6 x 200] to [batch x m]") {
  for (const char* arch : {"imunet", "resnet18", "mobilenet"}) {
    for (std::int64_t m : {2, 3}) {
      for (std::int64_t batch : {1, 7}) {
        CAPTURE(arch);
        CAPTURE(m);
        CAPTURE(batch);
        Rng rng(5);
        Model model = build_model(arch, m, rng);
        Rng rx(6);
        Tensor y = model.predict(Tensor::randn({batch, 6, 200}, rx, 0.5));
        CHECK(y.shape == std::vector<std::int64_t>{batch, m});
        for (double v : y.data) CHECK(std::isfinite(v));
      }
    }
  }
}

TEST_CASE("builders reject unsupported output dimensions") {
  Rng rng(1);
  CHECK_THROWS_AS(build_imunet(1, rng), ContractError);
  CHECK_THROWS_AS(build_resnet18_1d(4, rng), ContractError);
  CHECK_THROWS_AS(build_mobilenet_1d(0, rng), ContractError);
  CHECK_THROWS_AS(build_model("vgg", 2, rng), ConfigError);
}

TEST_CASE("model forward validates the input contract") {
  Rng rng(2);
  Model model = build_imunet(2, rng);
  Ctx ctx{false, nullptr};
  CHECK_THROWS_AS(model.forward(make_const(Tensor({1, 6, 100})), ctx), DimensionError);
  CHECK_THROWS_AS(model.forward(make_const(Tensor({1, 3, 200})), ctx), DimensionError);
  CHECK_THROWS_AS(model.forward(make_const(Tensor({6, 200})), ctx), DimensionError);
}

TEST_CASE("length schedule steps 200 -> 100 -> 50 -> 50 -> 25 -> 13 -> 7") {
  CHECK(conv_out_length(200, 7, 2, 3) == 100);  // stem conv
  CHECK(conv_out_length(100, 3, 2, 1) == 50);   // maxpool
  CHECK(conv_out_length(50, 3, 1, 1) == 50);    // stage 1 keeps length
  CHECK(conv_out_length(50, 3, 2, 1) == 25);    // stage 2 entry
  CHECK(conv_out_length(25, 3, 2, 1) == 13);    // stage 3 entry
  CHECK(conv_out_length(13, 3, 2, 1) == 7);     // stage 4 entry
  // The projection shortcut (kernel 1, no padding) must agree at odd lengths.
  CHECK(conv_out_length(25, 1, 2, 0) == 13);
  CHECK(conv_out_length(13, 1, 2, 0) == 7);
}

TEST_CASE("dead network outputs the final dense bias") {
  Rng rng(3);
  Model model = build_imunet(2, rng);
  NodePtr fc2_bias;
  for (const ParamRef& p : model.params()) {
    if (p.name.find("weight") != std::string::npos)
      for (double& v : p.node->value.data) v = 0.0;
    if (p.name == "fc2.bias") fc2_bias = p.node;
  }
  REQUIRE(fc2_bias != nullptr);
  fc2_bias->value.data = {0.7, -0.3};
  Rng rx(4);
  Tensor y = model.predict(Tensor::randn({3, 6, 200}, rx));
  for (std::int64_t b = 0; b < 3; ++b) {
    CHECK(y.at(b, 0) == doctest::Approx(0.7).epsilon(1e-12));
    CHECK(y.at(b, 1) == doctest::Approx(-0.3).epsilon(1e-12));
  }
}

TEST_CASE("parameter totals match the hand-derived counts") {
  for (std::int64_t m : {2, 3}) {
    CAPTURE(m);
    Rng rng(7);
    Model imunet = build_imunet(m, rng);
    Model resnet = build_resnet18_1d(m, rng);
    Model mobilenet = build_mobilenet_1d(m, rng);
    CHECK(param_scalar_count(imunet) == imunet_params_by_hand(m));
    CHECK(param_scalar_count(resnet) == resnet18_params_by_hand(m));
    CHECK(param_scalar_count(mobilenet) == mobilenet_params_by_hand(m));
    CHECK(count_costs(imunet).total_params == imunet_params_by_hand(m));
    CHECK(count_costs(resnet).total_params == resnet18_params_by_hand(m));
    CHECK(count_costs(mobilenet).total_params == mobilenet_params_by_hand(m));
  }
  // Absolute anchors at m = 2 so a systematic error in the helpers above
  // cannot cancel against the same error in the library.
  CHECK(imunet_params_by_hand(2) == 1554754);
  CHECK(resnet18_params_by_hand(2) == 4109826);
  CHECK(mobilenet_params_by_hand(2) == 3178978);
}

TEST_CASE("resnet 64->64 block parameter formula") {
  Rng rng(8);
  ResidualBlock block(64, 64, 1, rng);
  std::vector<ParamRef> refs;
  block.collect_params("", refs);
  std::int64_t n = 0;
  for (const ParamRef& p : refs) n += p.node->value.numel();
  CHECK(n == 2 * (3 * 64 * 64) + 4 * 64);  // two dense convs + two BN affine pairs
}

TEST_CASE("depthwise-separable blocks are strictly smaller than dense ones") {
  struct Cfg {
    std::int64_t in, out, stride;
  };
  for (const Cfg& c : {Cfg{64, 64, 1}, Cfg{64, 128, 2}, Cfg{128, 256, 2}, Cfg{512, 512, 1}}) {
    CAPTURE(c.in);
    CAPTURE(c.out);
    const bool projected = c.stride != 1 || c.in != c.out;
    CHECK(mobile_block_params(c.in, c.out, projected) <
          residual_block_params(c.in, c.out, projected));
  }
  // And end to end for the full networks at both output sizes.
  for (std::int64_t m : {2, 3})
    CHECK(imunet_params_by_hand(m) < resnet18_params_by_hand(m));
}

TEST_CASE("model size ratio lands in the published band") {
  const double ratio = static_cast<double>(imunet_params_by_hand(2)) /
                       static_cast<double>(resnet18_params_by_hand(2));
  CHECK(ratio >= 0.25);
  CHECK(ratio <= 0.45);
}

TEST_CASE("cost report rows carry the documented conventions") {
  Rng rng(9);
  Model model = build_imunet(2, rng);
  CostReport report = count_costs(model);

  std::int64_t sum_params = 0, sum_macs = 0, sum_flops = 0;
  for (const CostRow& r : report.rows) {
    sum_params += r.params;
    sum_macs += r.macs;
    sum_flops += r.flops;
    CHECK(r.params >= 0);
    CHECK(r.macs >= 0);
    CHECK(r.flops >= 0);
  }
  CHECK(report.total_params == sum_params);
  CHECK(report.total_macs == sum_macs);
  CHECK(report.total_flops == sum_flops);

  bool saw_conv1 = false, saw_fc1 = false;
  for (const CostRow& r : report.rows) {
    if (r.layer == "conv1") {
      saw_conv1 = true;
      CHECK(r.macs == 268800);  // 7 * 6 * 64 * 100
      CHECK(r.flops == 2 * 268800);
    }
    if (r.layer == "fc1") {
      saw_fc1 = true;
      CHECK(r.params == 128 * 512 + 512);
      CHECK(r.macs == 128 * 512);
    }
  }
  CHECK(saw_conv1);
  CHECK(saw_fc1);
}

TEST_CASE("cost report renders as table and csv") {
  Rng rng(10);
  Model model = build_mobilenet_1d(3, rng);
  CostReport report = count_costs(model);
  const std::string csv = report.csv();
  CHECK(csv.rfind("layer,params,macs,flops\n", 0) == 0);
  std::size_t lines = 0;
  for (char c : csv)
    if (c == '\n') ++lines;
  CHECK(lines == report.rows.size() + 1);

  const std::string table = report.text_table();
  CHECK(table.find("total") != std::string::npos);
  CHECK(table.find(std::to_string(report.total_params)) != std::string::npos);
}

TEST_CASE("inference is bit-identical across repeated forward passes") {
  Rng rng(11);
  Model model = build_imunet(2, rng);
  Rng rx(12);
  Tensor x = Tensor::randn({2, 6, 200}, rx, 0.5);
  Tensor y1 = model.predict(x);
  Tensor y2 = model.predict(x);
  REQUIRE(y1.same_shape(y2));
  for (std::size_t i = 0; i < y1.data.size(); ++i) CHECK(y1.data[i] == y2.data[i]);
}

TEST_CASE("fixed seed rebuilds the identical network") {
  Rng r1(13), r2(13);
  Model a = build_resnet18_1d(2, r1);
  Model b = build_resnet18_1d(2, r2);
  Rng rx(14);
  Tensor x = Tensor::randn({1, 6, 200}, rx, 0.5);
  Tensor ya = a.predict(x);
  Tensor yb = b.predict(x);
  for (std::size_t i = 0; i < ya.data.size(); ++i) CHECK(ya.data[i] == yb.data[i]);
}
