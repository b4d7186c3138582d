#include <doctest.h>

#include <cmath>
#include <vector>

#include "oracles.hpp"
#include "saenet/blocks.hpp"
#include "saenet/checks.hpp"
#include "saenet/gradcheck.hpp"

using namespace saenet;

namespace {

// y = x * W^T + b computed with the direct-loop matmul.
Tensor<double> fc_direct(const Tensor<double>& x, const Tensor<double>& w,
                         const Tensor<double>& b) {
  Tensor<double> wt({w.dim(1), w.dim(0)});
  for (int64_t i = 0; i < w.dim(0); ++i)
    for (int64_t j = 0; j < w.dim(1); ++j) wt[wt.offset2(j, i)] = w[w.offset2(i, j)];
  Tensor<double> y = oracle::matmul_direct(x, wt);
  for (int64_t r = 0; r < y.dim(0); ++r)
    for (int64_t c = 0; c < y.dim(1); ++c) y[y.offset2(r, c)] += b[c];
  return y;
}

Tensor<double> relu_direct(Tensor<double> x) {
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = std::max(x[i], 0.0);
  return x;
}

Tensor<double> sigmoid_direct(Tensor<double> x) {
  for (int64_t i = 0; i < x.numel(); ++i) x[i] = 1.0 / (1.0 + std::exp(-x[i]));
  return x;
}

template <typename T>
void zero_params(std::vector<Param<T>*> params) {
  for (auto* p : params)
    for (int64_t i = 0; i < p->value.numel(); ++i) p->value[i] = 0;
}

// Same-seed blocks draw identical conv/bn weights because gates are created
// last; this checks the premise before tests rely on it.
template <typename T>
void require_same_convs(BottleneckBlock<T>& a, BottleneckBlock<T>& b) {
  REQUIRE(a.conv1.weight.value.numel() == b.conv1.weight.value.numel());
  for (int64_t i = 0; i < a.conv1.weight.value.numel(); ++i)
    REQUIRE(a.conv1.weight.value[i] == b.conv1.weight.value[i]);
  for (int64_t i = 0; i < a.conv3.weight.value.numel(); ++i)
    REQUIRE(a.conv3.weight.value[i] == b.conv3.weight.value[i]);
}

} // namespace

TEST_CASE("se_gate: zero excitation weights give 0.5 everywhere, range is (0,1)") {
  Rng rng(201);
  SEGate<double> gate("g", 64, 32, rng);
  auto u = oracle::random_tensor<double>({2, 64, 3, 3}, rng);

  for (int64_t i = 0; i < gate.fc2.weight.value.numel(); ++i) gate.fc2.weight.value[i] = 0;
  for (int64_t i = 0; i < gate.fc2.bias.value.numel(); ++i) gate.fc2.bias.value[i] = 0;
  Pass<double> pass(false);
  auto gates = gate.forward(pass, Var<double>::leaf(u, false));
  REQUIRE(gates.value().shape() == Shape{2, 64});
  for (int64_t i = 0; i < gates.value().numel(); ++i) CHECK(gates.value()[i] == 0.5);

  SEGate<double> gate2("g2", 64, 32, rng);
  Pass<double> pass2(false);
  auto gates2 = gate2.forward(pass2, Var<double>::leaf(u, false));
  for (int64_t i = 0; i < gates2.value().numel(); ++i) {
    CHECK(gates2.value()[i] > 0.0);
    CHECK(gates2.value()[i] < 1.0);
  }
}

TEST_CASE("se_gate matches the pool-fc-relu-fc-sigmoid oracle") {
  Rng rng(202);
  SEGate<double> gate("g", 64, 32, rng);
  auto u = oracle::random_tensor<double>({1, 64, 3, 3}, rng);

  Pass<double> pass(false);
  auto got = gate.forward(pass, Var<double>::leaf(u, false));

  auto z = oracle::global_avg_pool_direct(u);
  auto expected = sigmoid_direct(fc_direct(
      relu_direct(fc_direct(z, gate.fc1.weight.value, gate.fc1.bias.value)),
      gate.fc2.weight.value, gate.fc2.bias.value));
  CHECK(oracle::max_abs_diff(got.value(), expected) < 1e-12);
}

TEST_CASE("sae_gate: cardinality 1 with concat merge reproduces se_gate exactly") {
  Rng rng(203);
  SaEConfig cfg;
  cfg.reduction = 32;
  cfg.cardinality = 1;
  cfg.merge = MergeMode::kConcat;
  SaEGate<double> sae("sae", 64, cfg, rng);

  SEGate<double> se("se", 64, 32, rng);
  se.fc1.weight.value = sae.branches[0].weight.value.clone();
  se.fc1.bias.value = sae.branches[0].bias.value.clone();
  se.fc2.weight.value = sae.excite.weight.value.clone();
  se.fc2.bias.value = sae.excite.bias.value.clone();

  for (int trial = 0; trial < 3; ++trial) {
    auto u = oracle::random_tensor<double>({2, 64, 4, 4}, rng);
    Pass<double> p1(false), p2(false);
    auto a = sae.forward(p1, Var<double>::leaf(u, false));
    auto b = se.forward(p2, Var<double>::leaf(u, false));
    for (int64_t i = 0; i < a.value().numel(); ++i) CHECK(a.value()[i] == b.value()[i]);
  }
}

TEST_CASE("sae_gate: identical branches under sum merge equal one branch scaled by 4") {
  Rng rng(204);
  SaEConfig cfg;
  cfg.reduction = 32;
  cfg.cardinality = 4;
  cfg.merge = MergeMode::kSum;
  SaEGate<double> gate("sae", 64, cfg, rng);
  for (int64_t i = 1; i < 4; ++i) {
    gate.branches[static_cast<size_t>(i)].weight.value = gate.branches[0].weight.value.clone();
    gate.branches[static_cast<size_t>(i)].bias.value = gate.branches[0].bias.value.clone();
  }
  auto u = oracle::random_tensor<double>({2, 64, 3, 3}, rng);

  Pass<double> pass(false);
  auto got = gate.forward(pass, Var<double>::leaf(u, false));

  auto z = oracle::global_avg_pool_direct(u);
  auto b = relu_direct(fc_direct(z, gate.branches[0].weight.value, gate.branches[0].bias.value));
  for (int64_t i = 0; i < b.numel(); ++i) b[i] *= 4.0;
  auto expected =
      sigmoid_direct(fc_direct(b, gate.excite.weight.value, gate.excite.bias.value));
  CHECK(oracle::max_abs_diff(got.value(), expected) < 1e-12);
}

TEST_CASE("sae_gate: width 256 with r=32 card=4 concat matches the published stage shape") {
  Rng rng(205);
  SaEConfig cfg;
  cfg.reduction = 32;
  cfg.cardinality = 4;
  cfg.merge = MergeMode::kConcat;
  SaEGate<double> gate("sae", 256, cfg, rng);

  REQUIRE(gate.branches.size() == 4);
  for (const auto& b : gate.branches) CHECK(b.weight.value.shape() == Shape{8, 256});
  CHECK(gate.excite.weight.value.shape() == Shape{256, 32});

  std::vector<Param<double>*> params;
  gate.collect(params);
  int64_t total = 0;
  for (auto* p : params) total += p->value.numel();
  CHECK(total == 4 * (256 * 8 + 8) + (32 * 256 + 256));
  CHECK(total == 16672);
}

TEST_CASE("sae_gate: sum and concat merges give gates of identical shape") {
  Rng rng(206);
  SaEConfig concat_cfg;
  concat_cfg.reduction = 32;
  concat_cfg.cardinality = 4;
  SaEConfig sum_cfg = concat_cfg;
  sum_cfg.merge = MergeMode::kSum;
  SaEGate<double> a("a", 64, concat_cfg, rng);
  SaEGate<double> b("b", 64, sum_cfg, rng);
  CHECK(a.excite.in_features() == 8);
  CHECK(b.excite.in_features() == 2);

  auto u = oracle::random_tensor<double>({3, 64, 2, 2}, rng);
  Pass<double> p1(false), p2(false);
  CHECK(a.forward(p1, Var<double>::leaf(u, false)).value().shape() == Shape{3, 64});
  CHECK(b.forward(p2, Var<double>::leaf(u, false)).value().shape() == Shape{3, 64});
}

TEST_CASE("sae_gate configuration errors") {
  Rng rng(207);
  SaEConfig cfg;
  cfg.reduction = 32;
  CHECK_THROWS_AS((SaEGate<double>("g", 100, cfg, rng)), ConfigError);

  cfg.cardinality = 0;
  CHECK_THROWS_AS((SaEGate<double>("g", 64, cfg, rng)), ConfigError);

  SaEConfig good;
  good.reduction = 32;
  good.cardinality = 4;
  SaEGate<double> gate("g", 64, good, rng);
  // Flipping the merge mode after construction leaves the excite layer sized
  // for concatenation.
  gate.cfg.merge = MergeMode::kSum;
  Pass<double> pass(false);
  auto u = oracle::random_tensor<double>({1, 64, 2, 2}, rng);
  CHECK_THROWS_AS(gate.forward(pass, Var<double>::leaf(u, false)), ConfigError);
}

TEST_CASE("bottleneck: dead branch reduces to relu(x) in every mode") {
  for (auto mode : {BlockMode::kPlain, BlockMode::kAggregated, BlockMode::kSe, BlockMode::kSae}) {
    CAPTURE(to_string(mode));
    Rng rng(208);
    BottleneckSpec spec;
    spec.in_channels = 64;
    spec.width = 16;
    spec.out_channels = 64;
    spec.stride = 1;
    spec.groups = mode == BlockMode::kAggregated ? 4 : 1;
    spec.mode = mode;
    spec.sae.reduction = 32;
    spec.sae.cardinality = 4;
    BottleneckBlock<double> block("blk", spec, rng);
    REQUIRE_FALSE(block.proj_conv.has_value());

    std::vector<Param<double>*> params;
    block.conv1.collect(params);
    block.conv2.collect(params);
    block.conv3.collect(params);
    zero_params(params);
    for (int64_t i = 0; i < block.bn3.gamma.value.numel(); ++i) block.bn3.gamma.value[i] = 0;

    auto x = oracle::random_tensor<double>({2, 64, 4, 4}, rng);
    Pass<double> pass(true);
    auto out = block.forward(pass, Var<double>::leaf(x, false));
    REQUIRE(out.value().shape() == x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) CHECK(out.value()[i] == std::max(x[i], 0.0));
  }
}

TEST_CASE("bottleneck: aggregated mode with groups=1 equals plain mode") {
  Rng rng_a(209), rng_b(209);
  BottleneckSpec spec;
  spec.in_channels = 32;
  spec.width = 8;
  spec.out_channels = 32;
  spec.mode = BlockMode::kPlain;
  BottleneckBlock<double> plain("blk", spec, rng_a);
  spec.mode = BlockMode::kAggregated;
  spec.groups = 1;
  BottleneckBlock<double> agg("blk", spec, rng_b);
  require_same_convs(plain, agg);

  Rng rng(210);
  auto x = oracle::random_tensor<double>({2, 32, 5, 5}, rng);
  Pass<double> p1(true), p2(true);
  auto a = plain.forward(p1, Var<double>::leaf(x, false));
  auto b = agg.forward(p2, Var<double>::leaf(x, false));
  for (int64_t i = 0; i < a.value().numel(); ++i) CHECK(a.value()[i] == b.value()[i]);
}

TEST_CASE("bottleneck: saturated sae gate matches the plain block") {
  Rng rng_a(211), rng_b(211);
  BottleneckSpec spec;
  spec.in_channels = 64;
  spec.width = 16;
  spec.out_channels = 64;
  spec.mode = BlockMode::kPlain;
  BottleneckBlock<double> plain("blk", spec, rng_a);
  spec.mode = BlockMode::kSae;
  spec.sae.reduction = 32;
  spec.sae.cardinality = 4;
  BottleneckBlock<double> gated("blk", spec, rng_b);
  require_same_convs(plain, gated);

  for (int64_t i = 0; i < gated.sae->excite.bias.value.numel(); ++i)
    gated.sae->excite.bias.value[i] = 40.0;

  Rng rng(212);
  auto x = oracle::random_tensor<double>({2, 64, 4, 4}, rng);
  Pass<double> p1(true), p2(true);
  auto a = plain.forward(p1, Var<double>::leaf(x, false));
  auto b = gated.forward(p2, Var<double>::leaf(x, false));
  CHECK(oracle::max_abs_diff(a.value(), b.value()) < 1e-6);
}

TEST_CASE("bottleneck: output shape equals skip shape across strides and widths") {
  Rng rng(213);
  struct Case {
    int64_t in, width, out, stride;
  };
  for (const auto& c : {Case{64, 16, 64, 1}, Case{64, 32, 128, 2}, Case{3, 4, 8, 1}}) {
    BottleneckSpec spec;
    spec.in_channels = c.in;
    spec.width = c.width;
    spec.out_channels = c.out;
    spec.stride = c.stride;
    spec.mode = BlockMode::kPlain;
    BottleneckBlock<double> block("blk", spec, rng);
    auto x = oracle::random_tensor<double>({2, c.in, 8, 8}, rng);
    Pass<double> pass(true);
    auto out = block.forward(pass, Var<double>::leaf(x, false));
    CHECK(out.value().shape() == Shape{2, c.out, 8 / c.stride, 8 / c.stride});
  }
}

TEST_CASE("bottleneck: gate on the branch input is supported") {
  Rng rng(214);
  BottleneckSpec spec;
  spec.in_channels = 64;
  spec.width = 16;
  spec.out_channels = 128;
  spec.stride = 2;
  spec.mode = BlockMode::kSae;
  spec.sae.reduction = 32;
  spec.sae.cardinality = 4;
  spec.sae.gate_placement = GatePlacement::kOnBranchInput;
  BottleneckBlock<double> block("blk", spec, rng);
  // Input placement sizes the gate on the block input width.
  CHECK(block.sae->channels == 64);
  auto x = oracle::random_tensor<double>({2, 64, 6, 6}, rng);
  Pass<double> pass(true);
  auto out = block.forward(pass, Var<double>::leaf(x, false));
  CHECK(out.value().shape() == Shape{2, 128, 3, 3});
  CHECK(out.value().all_finite());
}

TEST_CASE("every named finite-difference target passes grad_check at the default step") {
  for (const auto& name : check_names()) {
    CAPTURE(name);
    Rng rng(215);
    auto target = named_check(name, rng);
    auto report = grad_check(target, 1e-4, rng);
    INFO(format_report(report, target.name));
    CHECK(report.pass);
  }
}

TEST_CASE("named_check rejects unknown target names") {
  Rng rng(218);
  CHECK_THROWS_AS(named_check("block-unknown", rng), ConfigError);
  CHECK(check_names().size() == 13);
}

TEST_CASE("cross_entropy: uniform, confident, and random-oracle cases") {
  Tensor<double> uniform({1, 100});
  auto v = Var<double>::leaf(uniform, false);
  CHECK(cross_entropy(v, {42}).value()[0] == doctest::Approx(std::log(100.0)).epsilon(1e-12));

  Rng rng(216);
  auto confident = oracle::random_tensor<double>({3, 10}, rng);
  std::vector<int64_t> labels = {1, 7, 3};
  for (int64_t r = 0; r < 3; ++r) confident[confident.offset2(r, labels[r])] += 40.0;
  auto cv = Var<double>::leaf(confident, false);
  CHECK(cross_entropy(cv, labels).value()[0] < 1e-10);

  auto logits = oracle::random_tensor<double>({4, 10}, rng, -3, 3);
  std::vector<int64_t> rand_labels = {9, 0, 4, 4};
  auto lv = Var<double>::leaf(logits, false);
  CHECK(std::abs(cross_entropy(lv, rand_labels).value()[0] -
                 oracle::cross_entropy_direct(logits, rand_labels)) < 1e-10);
}
