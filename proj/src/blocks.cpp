#include "saenet/blocks.hpp"

#include <cmath>

namespace saenet {

namespace {

template <typename T>
Tensor<T> kaiming_normal(const Shape& shape, int64_t fan_in, Rng& rng) {
  Tensor<T> t(shape);
  const double std = std::sqrt(2.0 / static_cast<double>(fan_in));
  for (int64_t i = 0; i < t.numel(); ++i) t[i] = static_cast<T>(rng.normal() * std);
  return t;
}

int64_t squeezed_width(int64_t channels, int64_t reduction) {
  SaEConfig cfg;
  cfg.reduction = reduction;
  cfg.cardinality = 1;
  cfg.validate(channels);
  return channels / reduction;
}

} // namespace

MergeMode parse_merge(const std::string& s) {
  if (s == "concat") return MergeMode::kConcat;
  if (s == "sum") return MergeMode::kSum;
  throw ConfigError("unknown merge mode '" + s + "' (want concat or sum)");
}

GatePlacement parse_gate_placement(const std::string& s) {
  if (s == "output") return GatePlacement::kOnBranchOutput;
  if (s == "input") return GatePlacement::kOnBranchInput;
  throw ConfigError("unknown gate placement '" + s + "' (want output or input)");
}

BlockMode parse_block_mode(const std::string& s) {
  if (s == "plain") return BlockMode::kPlain;
  if (s == "aggregated") return BlockMode::kAggregated;
  if (s == "se") return BlockMode::kSe;
  if (s == "sae") return BlockMode::kSae;
  throw ConfigError("unknown block mode '" + s + "'");
}

std::string to_string(MergeMode m) { return m == MergeMode::kConcat ? "concat" : "sum"; }
std::string to_string(GatePlacement p) {
  return p == GatePlacement::kOnBranchOutput ? "output" : "input";
}
std::string to_string(BlockMode m) {
  switch (m) {
    case BlockMode::kPlain: return "plain";
    case BlockMode::kAggregated: return "aggregated";
    case BlockMode::kSe: return "se";
    case BlockMode::kSae: return "sae";
  }
  return "?";
}

void SaEConfig::validate(int64_t channels) const {
  if (reduction <= 0) throw ConfigError("reduction must be positive");
  if (cardinality < 1) throw ConfigError("cardinality must be >= 1");
  if (channels % reduction != 0) {
    throw ConfigError("gated width " + std::to_string(channels) +
                      " is not divisible by reduction " + std::to_string(reduction));
  }
}

int64_t SaEConfig::merged_width(int64_t channels) const {
  const int64_t squeeze = channels / reduction;
  return merge == MergeMode::kConcat ? cardinality * squeeze : squeeze;
}

template <typename T>
Linear<T>::Linear(const std::string& name, int64_t in, int64_t out, Rng& rng)
    : weight(name + ".weight", kaiming_normal<T>({out, in}, in, rng)),
      bias(name + ".bias", Tensor<T>({out})) {}

template <typename T>
Var<T> Linear<T>::forward(Pass<T>& pass, const Var<T>& x) {
  return linear(x, pass.bind(weight), pass.bind(bias));
}

template <typename T>
void Linear<T>::collect(std::vector<Param<T>*>& out) {
  out.push_back(&weight);
  out.push_back(&bias);
}

template <typename T>
Conv2dLayer<T>::Conv2dLayer(const std::string& name, const ConvSpec& cs, bool with_bias,
                            Rng& rng)
    : spec(cs) {
  spec.validate();
  const int64_t fan_in = (spec.in_channels / spec.groups) * spec.kh * spec.kw;
  weight = Param<T>(name + ".weight",
                    kaiming_normal<T>(
                        {spec.out_channels, spec.in_channels / spec.groups, spec.kh, spec.kw},
                        fan_in, rng));
  if (with_bias) bias.emplace(name + ".bias", Tensor<T>({spec.out_channels}));
}

template <typename T>
Var<T> Conv2dLayer<T>::forward(Pass<T>& pass, const Var<T>& x) {
  if (bias) return conv2d(x, pass.bind(weight), pass.bind(*bias), spec);
  return conv2d(x, pass.bind(weight), spec);
}

template <typename T>
void Conv2dLayer<T>::collect(std::vector<Param<T>*>& out) {
  out.push_back(&weight);
  if (bias) out.push_back(&*bias);
}

template <typename T>
BatchNorm2dLayer<T>::BatchNorm2dLayer(const std::string& n, int64_t channels, T eps_, T momentum_)
    : name(n),
      gamma(n + ".gamma", Tensor<T>::ones({channels})),
      beta(n + ".beta", Tensor<T>({channels})),
      stats(channels),
      eps(eps_),
      momentum(momentum_) {}

template <typename T>
Var<T> BatchNorm2dLayer<T>::forward(Pass<T>& pass, const Var<T>& x) {
  Var<T> g = pass.bind(gamma);
  Var<T> b = pass.bind(beta);
  if (!pass.train) return batchnorm2d_eval(x, g, b, stats, eps);
  Tensor<T> mean, var;
  Var<T> out = batchnorm2d_train(x, g, b, eps, &mean, &var);
  for (int64_t c = 0; c < mean.numel(); ++c) {
    stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mean[c];
    stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * var[c];
  }
  return out;
}

template <typename T>
void BatchNorm2dLayer<T>::collect(std::vector<Param<T>*>& out) {
  out.push_back(&gamma);
  out.push_back(&beta);
}

template <typename T>
void BatchNorm2dLayer<T>::collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out) {
  out.emplace_back(name + ".running_mean", &stats.mean);
  out.emplace_back(name + ".running_var", &stats.var);
}

template <typename T>
SEGate<T>::SEGate(const std::string& name, int64_t channels, int64_t reduction, Rng& rng)
    : fc1(name + ".fc1", channels, squeezed_width(channels, reduction), rng),
      fc2(name + ".fc2", channels / reduction, channels, rng) {}

template <typename T>
Var<T> SEGate<T>::forward(Pass<T>& pass, const Var<T>& u) {
  auto z = global_avg_pool(u);
  return sigmoid(fc2.forward(pass, relu(fc1.forward(pass, z))));
}

template <typename T>
void SEGate<T>::collect(std::vector<Param<T>*>& out) {
  fc1.collect(out);
  fc2.collect(out);
}

template <typename T>
SaEGate<T>::SaEGate(const std::string& name, int64_t channels_, const SaEConfig& cfg_, Rng& rng)
    : cfg(cfg_),
      channels(channels_),
      branches([&] {
        cfg_.validate(channels_);
        std::vector<Linear<T>> made;
        made.reserve(static_cast<size_t>(cfg_.cardinality));
        for (int64_t i = 0; i < cfg_.cardinality; ++i)
          made.emplace_back(name + ".branch" + std::to_string(i), channels_,
                            channels_ / cfg_.reduction, rng);
        return made;
      }()),
      excite(name + ".excite", cfg_.merged_width(channels_), channels_, rng) {}

template <typename T>
Var<T> SaEGate<T>::forward(Pass<T>& pass, const Var<T>& u) {
  if (excite.in_features() != cfg.merged_width(channels)) {
    throw ConfigError("excite expects " + std::to_string(cfg.merged_width(channels)) +
                      " inputs for merge=" + to_string(cfg.merge) + " but has " +
                      std::to_string(excite.in_features()));
  }
  auto z = global_avg_pool(u);
  std::vector<Var<T>> outs;
  outs.reserve(branches.size());
  for (auto& branch : branches) outs.push_back(relu(branch.forward(pass, z)));
  Var<T> merged;
  if (cfg.merge == MergeMode::kConcat) {
    merged = concat_channels(outs);
  } else {
    merged = outs[0];
    for (size_t i = 1; i < outs.size(); ++i) merged = add(merged, outs[i]);
  }
  return sigmoid(excite.forward(pass, merged));
}

template <typename T>
void SaEGate<T>::collect(std::vector<Param<T>*>& out) {
  for (auto& b : branches) b.collect(out);
  excite.collect(out);
}

template <typename T>
BottleneckBlock<T>::BottleneckBlock(const std::string& name, const BottleneckSpec& bs, Rng& rng)
    : spec(bs),
      conv1(name + ".conv1", ConvSpec{bs.in_channels, bs.width, 1, 1, 1, 0, 1}, false, rng),
      bn1(name + ".bn1", bs.width),
      conv2(name + ".conv2", ConvSpec{bs.width, bs.width, 3, 3, bs.stride, 1, bs.groups}, false,
            rng),
      bn2(name + ".bn2", bs.width),
      conv3(name + ".conv3", ConvSpec{bs.width, bs.out_channels, 1, 1, 1, 0, 1}, false, rng),
      bn3(name + ".bn3", bs.out_channels) {
  if (bs.in_channels != bs.out_channels || bs.stride != 1) {
    proj_conv.emplace(name + ".proj",
                      ConvSpec{bs.in_channels, bs.out_channels, 1, 1, bs.stride, 0, 1}, false,
                      rng);
    proj_bn.emplace(name + ".proj_bn", bs.out_channels);
  }
  const int64_t gated = spec.sae.gate_placement == GatePlacement::kOnBranchOutput
                            ? bs.out_channels
                            : bs.in_channels;
  if (bs.mode == BlockMode::kSe) {
    se.emplace(name + ".se", gated, bs.sae.reduction, rng);
  } else if (bs.mode == BlockMode::kSae) {
    sae.emplace(name + ".sae", gated, bs.sae, rng);
  }
}

template <typename T>
Var<T> BottleneckBlock<T>::forward(Pass<T>& pass, const Var<T>& x) {
  Var<T> branch_in = x;
  if (spec.sae.gate_placement == GatePlacement::kOnBranchInput) {
    if (se) branch_in = channel_scale(x, se->forward(pass, x));
    if (sae) branch_in = channel_scale(x, sae->forward(pass, x));
  }
  auto f = relu(bn1.forward(pass, conv1.forward(pass, branch_in)));
  f = relu(bn2.forward(pass, conv2.forward(pass, f)));
  f = bn3.forward(pass, conv3.forward(pass, f));
  if (spec.sae.gate_placement == GatePlacement::kOnBranchOutput) {
    if (se) f = channel_scale(f, se->forward(pass, f));
    if (sae) f = channel_scale(f, sae->forward(pass, f));
  }
  Var<T> skip = x;
  if (proj_conv) skip = proj_bn->forward(pass, proj_conv->forward(pass, skip));
  if (skip.value().dim(1) != f.value().dim(1)) {
    throw DimensionError("skip carries " + std::to_string(skip.value().dim(1)) +
                         " channels but the branch produced " +
                         std::to_string(f.value().dim(1)) + " and no projection is configured");
  }
  return relu(add(skip, f));
}

template <typename T>
void BottleneckBlock<T>::collect(std::vector<Param<T>*>& out) {
  conv1.collect(out);
  bn1.collect(out);
  conv2.collect(out);
  bn2.collect(out);
  conv3.collect(out);
  bn3.collect(out);
  if (proj_conv) proj_conv->collect(out);
  if (proj_bn) proj_bn->collect(out);
  if (se) se->collect(out);
  if (sae) sae->collect(out);
}

template <typename T>
void BottleneckBlock<T>::collect_buffers(
    std::vector<std::pair<std::string, Tensor<T>*>>& out) {
  bn1.collect_buffers(out);
  bn2.collect_buffers(out);
  bn3.collect_buffers(out);
  if (proj_bn) proj_bn->collect_buffers(out);
}

#define SAENET_INSTANTIATE_BLOCKS(T)                                                              \
  template struct Linear<T>;                                                                      \
  template struct Conv2dLayer<T>;                                                                 \
  template struct BatchNorm2dLayer<T>;                                                            \
  template struct SEGate<T>;                                                                      \
  template struct SaEGate<T>;                                                                     \
  template struct BottleneckBlock<T>;

SAENET_INSTANTIATE_BLOCKS(float)
SAENET_INSTANTIATE_BLOCKS(double)

#undef SAENET_INSTANTIATE_BLOCKS

} // namespace saenet
