#include "saenet/model.hpp"

#include <array>
#include <cmath>
#include <cstdio>
#include <filesystem>

#include "saenet/pgm.hpp"

namespace saenet {

void ArchSpec::validate() const {
  if (stem.out_channels <= 0 || stem.kernel <= 0 || stem.stride <= 0 || stem.padding < 0)
    throw ConfigError("arch " + name + ": bad stem geometry");
  if (num_classes <= 0)
    throw ConfigError("arch " + name + ": num_classes must be positive, got " +
                      std::to_string(num_classes));
  int64_t prev = stem.out_channels;
  for (size_t i = 0; i < stages.size(); ++i) {
    const StageSpec& st = stages[i];
    if (st.width <= 0 || st.out_channels <= 0 || st.repeats <= 0 || st.stride <= 0 ||
        st.groups <= 0)
      throw ConfigError("arch " + name + ": stage " + std::to_string(i) +
                        " has non-positive dimensions");
    if (st.in_channels != prev)
      throw ConfigError("arch " + name + ": stage " + std::to_string(i) + " expects " +
                        std::to_string(st.in_channels) + " input channels but the previous " +
                        "layer produces " + std::to_string(prev));
    if (st.width % st.groups != 0)
      throw ConfigError("arch " + name + ": stage " + std::to_string(i) + " width " +
                        std::to_string(st.width) + " is not divisible by groups " +
                        std::to_string(st.groups));
    prev = st.out_channels;
  }
}

namespace {

// Table-1 trunk: 7x7/64 stride-2 stem, 3x3 stride-2 maxpool, stages of
// 3/4/6/3 bottlenecks ending at 2048 channels.
ArchSpec imagenet_arch(const std::string& name, const std::array<int64_t, 4>& widths,
                       int64_t groups, BlockMode mode) {
  ArchSpec a;
  a.name = name;
  a.stem = StemSpec{64, 7, 2, 3, true};
  const std::array<int64_t, 4> outs = {256, 512, 1024, 2048};
  const std::array<int64_t, 4> repeats = {3, 4, 6, 3};
  int64_t in = a.stem.out_channels;
  for (int i = 0; i < 4; ++i) {
    a.stages.push_back({in, widths[i], outs[i], repeats[i], i == 0 ? 1 : 2, groups});
    in = outs[i];
  }
  a.num_classes = 1000;
  a.mode = mode;
  return a;
}

// Desk-scale variant: 3x3 stride-1 stem without pooling, two blocks per
// stage, quartered channel counts, 100-way head.
ArchSpec cifar_arch(const std::string& name, const std::array<int64_t, 4>& widths,
                    int64_t groups, BlockMode mode) {
  ArchSpec a;
  a.name = name;
  a.stem = StemSpec{64, 3, 1, 1, false};
  const std::array<int64_t, 4> outs = {64, 128, 256, 512};
  int64_t in = a.stem.out_channels;
  for (int i = 0; i < 4; ++i) {
    a.stages.push_back({in, widths[i], outs[i], 2, i == 0 ? 1 : 2, groups});
    in = outs[i];
  }
  a.num_classes = 100;
  a.mode = mode;
  return a;
}

ArchSpec small_arch() {
  ArchSpec a;
  a.name = "sae-small";
  a.stem = StemSpec{8, 3, 1, 1, false};
  a.stages.push_back({8, 8, 32, 1, 1, 1});
  a.num_classes = 8;
  a.mode = BlockMode::kSae;
  a.sae.reduction = 8;
  return a;
}

} // namespace

ArchSpec preset(const std::string& name) {
  if (name == "resnet50")
    return imagenet_arch(name, {64, 128, 256, 512}, 1, BlockMode::kPlain);
  if (name == "se-resnet50")
    return imagenet_arch(name, {64, 128, 256, 512}, 1, BlockMode::kSe);
  if (name == "sae-resnet50")
    return imagenet_arch(name, {64, 128, 256, 512}, 1, BlockMode::kSae);
  if (name == "sae-resnext50")
    return imagenet_arch(name, {128, 256, 512, 1024}, 32, BlockMode::kSae);
  if (name == "resnet50-cifar")
    return cifar_arch(name, {16, 32, 64, 128}, 1, BlockMode::kPlain);
  if (name == "se-resnet50-cifar")
    return cifar_arch(name, {16, 32, 64, 128}, 1, BlockMode::kSe);
  if (name == "sae-resnet50-cifar" || name == "sae-resnet-cifar")
    return cifar_arch("sae-resnet50-cifar", {16, 32, 64, 128}, 1, BlockMode::kSae);
  if (name == "sae-resnext50-cifar")
    return cifar_arch(name, {32, 64, 128, 256}, 32, BlockMode::kSae);
  if (name == "sae-small") return small_arch();
  std::string known;
  for (const auto& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "', known presets: " + known);
}

std::vector<std::string> preset_names() {
  return {"resnet50",       "se-resnet50",        "sae-resnet50",
          "sae-resnext50",  "resnet50-cifar",     "se-resnet50-cifar",
          "sae-resnet50-cifar", "sae-resnet-cifar", "sae-resnext50-cifar",
          "sae-small"};
}

namespace {

const ArchSpec& validated(const ArchSpec& a) {
  a.validate();
  return a;
}

ConvSpec stem_conv_spec(const ArchSpec& a) {
  return ConvSpec{3, a.stem.out_channels, a.stem.kernel, a.stem.kernel, a.stem.stride,
                  a.stem.padding, 1};
}

int64_t head_in_channels(const ArchSpec& a) {
  return a.stages.empty() ? a.stem.out_channels : a.stages.back().out_channels;
}

template <typename T>
std::vector<BottleneckBlock<T>> make_blocks(const ArchSpec& a, Rng& rng) {
  std::vector<BottleneckBlock<T>> blocks;
  for (size_t s = 0; s < a.stages.size(); ++s) {
    const StageSpec& st = a.stages[s];
    for (int64_t b = 0; b < st.repeats; ++b) {
      BottleneckSpec bs;
      bs.in_channels = b == 0 ? st.in_channels : st.out_channels;
      bs.width = st.width;
      bs.out_channels = st.out_channels;
      bs.stride = b == 0 ? st.stride : 1;
      bs.groups = st.groups;
      bs.mode = a.mode;
      bs.sae = a.sae;
      std::string name = "stage" + std::to_string(s + 1) + ".block" + std::to_string(b);
      blocks.emplace_back(name, bs, rng);
    }
  }
  return blocks;
}

} // namespace

template <typename T>
Model<T>::Model(const ArchSpec& a, uint64_t seed) : Model(a, Rng(seed)) {}

template <typename T>
Model<T>::Model(const ArchSpec& a, Rng rng)
    : arch(validated(a)),
      stem_conv("stem.conv", stem_conv_spec(a), false, rng),
      stem_bn("stem.bn", a.stem.out_channels),
      blocks(make_blocks<T>(a, rng)),
      head("head", head_in_channels(a), a.num_classes, rng) {}

template <typename T>
Var<T> Model<T>::forward(Pass<T>& pass, const Var<T>& x) {
  Var<T> h = stem_conv.forward(pass, x);
  h = stem_bn.forward(pass, h);
  h = relu(h);
  if (arch.stem.maxpool) h = maxpool2d(h, 3, 2, 1);
  for (auto& block : blocks) h = block.forward(pass, h);
  h = global_avg_pool(h);
  return head.forward(pass, h);
}

template <typename T>
std::vector<Param<T>*> Model<T>::parameters() {
  std::vector<Param<T>*> out;
  stem_conv.collect(out);
  stem_bn.collect(out);
  for (auto& block : blocks) block.collect(out);
  head.collect(out);
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::buffers() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  stem_bn.collect_buffers(out);
  for (auto& block : blocks) block.collect_buffers(out);
  return out;
}

template <typename T>
int64_t Model<T>::param_count() {
  int64_t total = 0;
  for (Param<T>* p : parameters()) total += p->value.numel();
  return total;
}

int64_t total_params(const std::vector<SummaryRow>& rows) {
  int64_t total = 0;
  for (const auto& row : rows) total += row.params;
  return total;
}

namespace {

std::string shape_x(const Shape& s) {
  std::string out;
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) out += "x";
    out += std::to_string(s[i]);
  }
  return out;
}

template <typename T>
int64_t collected_params(std::vector<Param<T>*> params) {
  int64_t total = 0;
  for (Param<T>* p : params) total += p->value.numel();
  return total;
}

} // namespace

std::string ModelSummary::to_csv() const {
  std::string out = "layer,out_shape,params\n";
  for (const auto& row : rows)
    out += row.name + "," + shape_x(row.out_shape) + "," + std::to_string(row.params) + "\n";
  out += "total,," + std::to_string(total) + "\n";
  return out;
}

template <typename T>
ModelSummary summarize(Model<T>& model, int64_t in_h, int64_t in_w) {
  ModelSummary s;
  const ArchSpec& a = model.arch;
  auto [h, w] = model.stem_conv.spec.out_hw(in_h, in_w);
  std::vector<Param<T>*> tmp;
  model.stem_conv.collect(tmp);
  s.rows.push_back({"stem.conv", {a.stem.out_channels, h, w}, collected_params(tmp)});
  tmp.clear();
  model.stem_bn.collect(tmp);
  s.rows.push_back({"stem.bn", {a.stem.out_channels, h, w}, collected_params(tmp)});
  if (a.stem.maxpool) {
    h = (h + 2 - 3) / 2 + 1;
    w = (w + 2 - 3) / 2 + 1;
    s.rows.push_back({"stem.pool", {a.stem.out_channels, h, w}, 0});
  }
  size_t bi = 0;
  for (size_t st = 0; st < a.stages.size(); ++st) {
    for (int64_t b = 0; b < a.stages[st].repeats; ++b, ++bi) {
      BottleneckBlock<T>& block = model.blocks[bi];
      if (block.spec.stride != 1) {
        h = (h - 1) / block.spec.stride + 1;
        w = (w - 1) / block.spec.stride + 1;
      }
      tmp.clear();
      block.collect(tmp);
      s.rows.push_back({"stage" + std::to_string(st + 1) + ".block" + std::to_string(b),
                        {block.spec.out_channels, h, w},
                        collected_params(tmp)});
    }
  }
  int64_t c = head_in_channels(a);
  s.rows.push_back({"gap", {c}, 0});
  tmp.clear();
  model.head.collect(tmp);
  s.rows.push_back({"head", {a.num_classes}, collected_params(tmp)});
  s.total = total_params(s.rows);
  return s;
}

template <typename T>
void export_first_conv_filters(Model<T>& model, const std::string& dir) {
  std::filesystem::create_directories(dir);
  const Tensor<T>& weight = model.stem_conv.weight.value;
  int64_t out_c = weight.dim(0), in_c = weight.dim(1);
  int64_t kh = weight.dim(2), kw = weight.dim(3);

  std::vector<PgmImage> cells;
  for (int64_t o = 0; o < out_c; ++o) {
    std::vector<T> mean(static_cast<size_t>(kh * kw), T(0));
    for (int64_t i = 0; i < in_c; ++i)
      for (int64_t y = 0; y < kh; ++y)
        for (int64_t x = 0; x < kw; ++x)
          mean[static_cast<size_t>(y * kw + x)] +=
              weight.data()[((o * in_c + i) * kh + y) * kw + x] / T(in_c);
    T lo = mean[0], hi = mean[0];
    for (T v : mean) {
      lo = std::min(lo, v);
      hi = std::max(hi, v);
    }
    PgmImage img;
    img.width = kw;
    img.height = kh;
    img.pixels.resize(mean.size(), 128);
    if (hi > lo) {
      for (size_t i = 0; i < mean.size(); ++i)
        img.pixels[i] =
            static_cast<uint8_t>(std::llround(double(mean[i] - lo) / double(hi - lo) * 255.0));
    }
    char fname[32];
    std::snprintf(fname, sizeof(fname), "stem_filter_%03d.pgm", static_cast<int>(o));
    write_pgm(dir + "/" + fname, img);
    cells.push_back(std::move(img));
  }

  int64_t cols = static_cast<int64_t>(std::ceil(std::sqrt(double(out_c))));
  int64_t rows = (out_c + cols - 1) / cols;
  PgmImage montage;
  montage.width = cols * kw;
  montage.height = rows * kh;
  montage.pixels.assign(static_cast<size_t>(montage.width * montage.height), 0);
  for (int64_t o = 0; o < out_c; ++o) {
    int64_t r0 = (o / cols) * kh, c0 = (o % cols) * kw;
    for (int64_t y = 0; y < kh; ++y)
      for (int64_t x = 0; x < kw; ++x)
        montage.pixels[static_cast<size_t>((r0 + y) * montage.width + c0 + x)] =
            cells[static_cast<size_t>(o)].pixels[static_cast<size_t>(y * kw + x)];
  }
  write_pgm(dir + "/stem_montage.pgm", montage);
}

#define SAENET_INSTANTIATE_MODEL(T)                                               \
  template struct Model<T>;                                                       \
  template ModelSummary summarize<T>(Model<T>&, int64_t, int64_t);                \
  template void export_first_conv_filters<T>(Model<T>&, const std::string&);

SAENET_INSTANTIATE_MODEL(float)
SAENET_INSTANTIATE_MODEL(double)

} // namespace saenet
