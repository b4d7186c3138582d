#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "saenet/autograd.hpp"
#include "saenet/param.hpp"
#include "saenet/rng.hpp"
#include "saenet/tensor.hpp"

namespace saenet {

enum class MergeMode { kConcat, kSum };
enum class GatePlacement { kOnBranchOutput, kOnBranchInput };
enum class BlockMode { kPlain, kAggregated, kSe, kSae };

MergeMode parse_merge(const std::string& s);
GatePlacement parse_gate_placement(const std::string& s);
BlockMode parse_block_mode(const std::string& s);
std::string to_string(MergeMode m);
std::string to_string(GatePlacement p);
std::string to_string(BlockMode m);

struct SaEConfig {
  int64_t reduction = 32;
  int64_t cardinality = 4;
  MergeMode merge = MergeMode::kConcat;
  GatePlacement gate_placement = GatePlacement::kOnBranchOutput;

  // channels = width of the tensor the gate scales.
  void validate(int64_t channels) const;
  // Excite input width: card*C/r when concatenating, C/r when summing.
  int64_t merged_width(int64_t channels) const;
};

template <typename T>
struct Linear {
  Param<T> weight; // (out, in)
  Param<T> bias;   // (out)

  Linear(const std::string& name, int64_t in, int64_t out, Rng& rng);
  Var<T> forward(Pass<T>& pass, const Var<T>& x);
  int64_t in_features() const { return weight.value.dim(1); }
  int64_t out_features() const { return weight.value.dim(0); }
  void collect(std::vector<Param<T>*>& out);
};

template <typename T>
struct Conv2dLayer {
  ConvSpec spec;
  Param<T> weight; // (O, I/groups, kh, kw)
  std::optional<Param<T>> bias;

  Conv2dLayer(const std::string& name, const ConvSpec& spec, bool with_bias, Rng& rng);
  Var<T> forward(Pass<T>& pass, const Var<T>& x);
  void collect(std::vector<Param<T>*>& out);
};

template <typename T>
struct BatchNorm2dLayer {
  std::string name;
  Param<T> gamma, beta;
  RunningStats<T> stats;
  T eps;
  T momentum;

  BatchNorm2dLayer(const std::string& name, int64_t channels, T eps = T(1e-5),
                   T momentum = T(0.1));
  // Train mode normalizes by batch statistics and folds them into the running
  // estimates; eval mode reads the running estimates.
  Var<T> forward(Pass<T>& pass, const Var<T>& x);
  void collect(std::vector<Param<T>*>& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out);
};

template <typename T>
struct SEGate {
  Linear<T> fc1; // C -> C/r
  Linear<T> fc2; // C/r -> C

  SEGate(const std::string& name, int64_t channels, int64_t reduction, Rng& rng);
  Var<T> forward(Pass<T>& pass, const Var<T>& u);
  void collect(std::vector<Param<T>*>& out);
};

template <typename T>
struct SaEGate {
  SaEConfig cfg;
  int64_t channels;
  std::vector<Linear<T>> branches; // card x (C -> C/r)
  Linear<T> excite;                // merged_width -> C

  SaEGate(const std::string& name, int64_t channels, const SaEConfig& cfg, Rng& rng);
  Var<T> forward(Pass<T>& pass, const Var<T>& u);
  void collect(std::vector<Param<T>*>& out);
};

struct BottleneckSpec {
  int64_t in_channels = 0;
  int64_t width = 0; // channel count of the 3x3 conv
  int64_t out_channels = 0;
  int64_t stride = 1; // applied at the 3x3 conv
  int64_t groups = 1; // 1 for plain/se, the cardinality for aggregated paths
  BlockMode mode = BlockMode::kPlain;
  SaEConfig sae; // reduction used by se, full config by sae
};

// conv1x1 -> bn -> relu -> conv3x3(stride, groups) -> bn -> relu -> conv1x1
// -> bn -> [gate] -> + skip -> relu, with a projection shortcut when the
// shape changes.
template <typename T>
struct BottleneckBlock {
  BottleneckSpec spec;
  Conv2dLayer<T> conv1;
  BatchNorm2dLayer<T> bn1;
  Conv2dLayer<T> conv2;
  BatchNorm2dLayer<T> bn2;
  Conv2dLayer<T> conv3;
  BatchNorm2dLayer<T> bn3;
  std::optional<Conv2dLayer<T>> proj_conv;
  std::optional<BatchNorm2dLayer<T>> proj_bn;
  std::optional<SEGate<T>> se;
  std::optional<SaEGate<T>> sae;

  BottleneckBlock(const std::string& name, const BottleneckSpec& spec, Rng& rng);
  Var<T> forward(Pass<T>& pass, const Var<T>& x);
  void collect(std::vector<Param<T>*>& out);
  void collect_buffers(std::vector<std::pair<std::string, Tensor<T>*>>& out);
};

} // namespace saenet
