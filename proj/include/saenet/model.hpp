#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "saenet/blocks.hpp"

namespace saenet {

// One residual stage: `repeats` bottleneck blocks at a fixed output width.
// The first block maps in_channels -> out_channels and carries the stride;
// the rest run out_channels -> out_channels at stride 1.
struct StageSpec {
  int64_t in_channels = 0;
  int64_t width = 0; // 3x3 conv channels inside each block
  int64_t out_channels = 0;
  int64_t repeats = 0;
  int64_t stride = 1;
  int64_t groups = 1;
};

struct StemSpec {
  int64_t out_channels = 64;
  int64_t kernel = 7;
  int64_t stride = 2;
  int64_t padding = 3;
  bool maxpool = true; // 3x3 stride-2 pool after the stem relu
};

struct ArchSpec {
  std::string name;
  StemSpec stem;
  std::vector<StageSpec> stages;
  int64_t num_classes = 1000;
  BlockMode mode = BlockMode::kPlain;
  SaEConfig sae; // reduction used by se mode, full config by sae mode

  void validate() const;
};

// Named architectures: resnet50, se-resnet50, sae-resnet50, sae-resnext50,
// their -cifar variants, and sae-small (a tiny net for smoke runs). Throws
// ConfigError on an unknown name.
ArchSpec preset(const std::string& name);
std::vector<std::string> preset_names();

template <typename T>
struct Model {
  ArchSpec arch;
  Conv2dLayer<T> stem_conv;
  BatchNorm2dLayer<T> stem_bn;
  std::vector<BottleneckBlock<T>> blocks;
  Linear<T> head;

  Model(const ArchSpec& arch, uint64_t seed);
  Model(const ArchSpec& arch, Rng rng);
  // x: (N, 3, H, W) -> logits (N, num_classes)
  Var<T> forward(Pass<T>& pass, const Var<T>& x);
  std::vector<Param<T>*> parameters();
  std::vector<std::pair<std::string, Tensor<T>*>> buffers();
  int64_t param_count();
};

struct SummaryRow {
  std::string name;
  Shape out_shape; // (C, H, W) after the layer, (num_classes) for the head
  int64_t params = 0;
};

struct ModelSummary {
  std::vector<SummaryRow> rows;
  int64_t total = 0;
  std::string to_csv() const;
};

int64_t total_params(const std::vector<SummaryRow>& rows);

// Shapes are propagated analytically; no forward pass runs.
template <typename T>
ModelSummary summarize(Model<T>& model, int64_t in_h, int64_t in_w);

// Writes one stem_filter_NNN.pgm per stem output channel (kernel averaged
// over input channels, min-max scaled to [0, 255]) plus stem_montage.pgm
// tiling them in row-major order.
template <typename T>
void export_first_conv_filters(Model<T>& model, const std::string& dir);

} // namespace saenet
