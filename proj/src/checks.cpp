#include "saenet/checks.hpp"

#include <memory>

#include "saenet/blocks.hpp"

namespace saenet {

namespace {

Tensor<double> uniform_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(shape);
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform(lo, hi);
  return t;
}

Var<double> projection_loss(const Var<double>& out, const Tensor<double>& direction) {
  Var<double> dir = Var<double>::leaf(direction, false);
  return scale(sum_all(mul(out, dir)), 1.0 / double(direction.numel()));
}

// Targets over bare ops: every leaf tensor is differentiated, only the first
// (the input) is redrawn on a kink resample.
CheckTarget<double> raw_target(
    const std::string& name, std::vector<std::string> leaf_names,
    std::vector<Tensor<double>> leaves, Tensor<double> direction,
    std::function<Var<double>(const std::vector<Var<double>>&)> run) {
  struct State {
    std::vector<Tensor<double>> leaves;
    Tensor<double> direction;
  };
  auto st = std::make_shared<State>(State{std::move(leaves), std::move(direction)});
  CheckTarget<double> t;
  t.name = name;
  t.leaf_names = std::move(leaf_names);
  for (auto& tensor : st->leaves) t.leaf_values.push_back(&tensor);
  t.forward = [st, run]() {
    ForwardResult<double> r;
    for (auto& tensor : st->leaves) r.leaves.push_back(Var<double>::leaf(tensor, true));
    r.loss = projection_loss(run(r.leaves), st->direction);
    return r;
  };
  t.resample = [st](Rng& rng) {
    for (int64_t i = 0; i < st->leaves[0].numel(); ++i) st->leaves[0][i] = rng.uniform(-1.0, 1.0);
  };
  return t;
}

// Targets over a Pass-bound module (gate or block). Leaves are the input plus
// every collected parameter.
template <typename M>
CheckTarget<double> module_target(
    const std::string& name, std::shared_ptr<M> module, Tensor<double> input,
    std::function<Var<double>(M&, Pass<double>&, const Var<double>&)> run, Rng& rng) {
  struct State {
    std::shared_ptr<M> module;
    Tensor<double> input;
    Tensor<double> direction;
    std::vector<Param<double>*> params;
  };
  auto st = std::make_shared<State>();
  st->module = std::move(module);
  st->input = std::move(input);
  st->direction = uniform_tensor(st->input.shape(), rng);
  st->module->collect(st->params);

  CheckTarget<double> t;
  t.name = name;
  t.leaf_names.push_back("input");
  t.leaf_values.push_back(&st->input);
  for (Param<double>* p : st->params) {
    t.leaf_names.push_back(p->name);
    t.leaf_values.push_back(&p->value);
  }
  t.forward = [st, run]() {
    Pass<double> pass(true);
    Var<double> x = Var<double>::leaf(st->input, true);
    Var<double> out = run(*st->module, pass, x);
    ForwardResult<double> r;
    r.loss = projection_loss(out, st->direction);
    r.leaves.push_back(x);
    for (Param<double>* p : st->params)
      for (auto& [bound, var] : pass.bound)
        if (bound == p) {
          r.leaves.push_back(var);
          break;
        }
    return r;
  };
  t.resample = [st](Rng& rng2) {
    for (int64_t i = 0; i < st->input.numel(); ++i) st->input[i] = rng2.uniform(-1.0, 1.0);
  };
  return t;
}

CheckTarget<double> block_check(const std::string& name, BlockMode mode, int64_t groups,
                                MergeMode merge, GatePlacement placement, Rng& rng) {
  BottleneckSpec bs;
  bs.in_channels = 64;
  bs.width = 8;
  bs.out_channels = 64;
  bs.groups = groups;
  bs.mode = mode;
  bs.sae.merge = merge;
  bs.sae.gate_placement = placement;
  auto block = std::make_shared<BottleneckBlock<double>>(name, bs, rng);
  return module_target<BottleneckBlock<double>>(
      name, block, uniform_tensor({2, 64, 4, 4}, rng),
      [](BottleneckBlock<double>& b, Pass<double>& pass, const Var<double>& x) {
        return b.forward(pass, x);
      },
      rng);
}

} // namespace

std::vector<std::string> check_names() {
  return {"fc",       "conv2d",     "conv-grouped",  "batchnorm",
          "gate-se",  "gate-sae",   "gate-sae-sum",  "block-plain",
          "block-aggregated", "block-se", "block-sae", "block-sae-sum",
          "block-sae-input"};
}

CheckTarget<double> named_check(const std::string& name, Rng& rng) {
  if (name == "fc") {
    Tensor<double> x = uniform_tensor({4, 6}, rng);
    Tensor<double> w = uniform_tensor({3, 6}, rng);
    Tensor<double> b = uniform_tensor({3}, rng);
    return raw_target(name, {"x", "weight", "bias"}, {x, w, b}, uniform_tensor({4, 3}, rng),
                      [](const std::vector<Var<double>>& l) { return linear(l[0], l[1], l[2]); });
  }
  if (name == "conv2d") {
    ConvSpec spec{3, 4, 3, 3, 1, 1, 1};
    Tensor<double> x = uniform_tensor({2, 3, 6, 6}, rng);
    Tensor<double> w = uniform_tensor({4, 3, 3, 3}, rng, -0.5, 0.5);
    Tensor<double> b = uniform_tensor({4}, rng);
    return raw_target(name, {"x", "weight", "bias"}, {x, w, b}, uniform_tensor({2, 4, 6, 6}, rng),
                      [spec](const std::vector<Var<double>>& l) {
                        return conv2d(l[0], l[1], l[2], spec);
                      });
  }
  if (name == "conv-grouped") {
    ConvSpec spec{4, 6, 3, 3, 1, 1, 2};
    Tensor<double> x = uniform_tensor({2, 4, 5, 5}, rng);
    Tensor<double> w = uniform_tensor({6, 2, 3, 3}, rng, -0.5, 0.5);
    return raw_target(name, {"x", "weight"}, {x, w}, uniform_tensor({2, 6, 5, 5}, rng),
                      [spec](const std::vector<Var<double>>& l) {
                        return conv2d(l[0], l[1], spec);
                      });
  }
  if (name == "batchnorm") {
    Tensor<double> x = uniform_tensor({3, 4, 5, 5}, rng);
    Tensor<double> gamma = uniform_tensor({4}, rng, 0.5, 1.5);
    Tensor<double> beta = uniform_tensor({4}, rng, -0.5, 0.5);
    return raw_target(name, {"x", "gamma", "beta"}, {x, gamma, beta},
                      uniform_tensor({3, 4, 5, 5}, rng),
                      [](const std::vector<Var<double>>& l) {
                        return batchnorm2d_train(l[0], l[1], l[2], 1e-5);
                      });
  }
  if (name == "gate-se") {
    auto gate = std::make_shared<SEGate<double>>("se", 64, 32, rng);
    return module_target<SEGate<double>>(
        name, gate, uniform_tensor({1, 64, 4, 4}, rng),
        [](SEGate<double>& g, Pass<double>& pass, const Var<double>& u) {
          return channel_scale(u, g.forward(pass, u));
        },
        rng);
  }
  if (name == "gate-sae" || name == "gate-sae-sum") {
    SaEConfig cfg;
    cfg.merge = name == "gate-sae" ? MergeMode::kConcat : MergeMode::kSum;
    auto gate = std::make_shared<SaEGate<double>>("sae", 64, cfg, rng);
    return module_target<SaEGate<double>>(
        name, gate, uniform_tensor({1, 64, 4, 4}, rng),
        [](SaEGate<double>& g, Pass<double>& pass, const Var<double>& u) {
          return channel_scale(u, g.forward(pass, u));
        },
        rng);
  }
  if (name == "block-plain")
    return block_check(name, BlockMode::kPlain, 1, MergeMode::kConcat,
                       GatePlacement::kOnBranchOutput, rng);
  if (name == "block-aggregated")
    return block_check(name, BlockMode::kAggregated, 4, MergeMode::kConcat,
                       GatePlacement::kOnBranchOutput, rng);
  if (name == "block-se")
    return block_check(name, BlockMode::kSe, 1, MergeMode::kConcat,
                       GatePlacement::kOnBranchOutput, rng);
  if (name == "block-sae")
    return block_check(name, BlockMode::kSae, 1, MergeMode::kConcat,
                       GatePlacement::kOnBranchOutput, rng);
  if (name == "block-sae-sum")
    return block_check(name, BlockMode::kSae, 1, MergeMode::kSum,
                       GatePlacement::kOnBranchOutput, rng);
  if (name == "block-sae-input")
    return block_check(name, BlockMode::kSae, 1, MergeMode::kConcat,
                       GatePlacement::kOnBranchInput, rng);

  std::string known;
  for (const auto& n : check_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown check target '" + name + "', known targets: " + known);
}

} // namespace saenet
