#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "saenet/rng.hpp"
#include "saenet/tensor.hpp"

namespace saenet {

// Raw 8-bit image corpus, one CHW record per sample.
struct Dataset {
  int64_t n = 0;
  int64_t c = 3;
  int64_t h = 32;
  int64_t w = 32;
  std::vector<uint8_t> images; // n * c * h * w
  std::vector<int64_t> labels;
  std::string split;

  int64_t image_bytes() const { return c * h * w; }
  const uint8_t* image_ptr(int64_t i) const { return images.data() + i * image_bytes(); }
  int64_t max_label() const;
};

struct Preproc {
  std::array<double, 3> mean = {0.0, 0.0, 0.0};
  std::array<double, 3> std = {1.0, 1.0, 1.0};
  bool random_crop = false;
  int64_t crop_pad = 4;
  bool hflip = false;
  int64_t target_size = 0; // bilinear-resize to this side when > 0 and != source

  void validate() const;
};

// Frozen CIFAR-100 channel statistics plus the conventional crop/flip recipe.
Preproc cifar_train_preproc();
Preproc cifar_eval_preproc();

// Binary records of 1 coarse byte + 1 fine byte + c*h*w pixel bytes (plane
// per channel, row-major). Non-32x32x3 corpora carry a meta.csv sidecar next
// to the .bin giving c,h,w.
Dataset load_cifar_bin(const std::string& path, int64_t expected_n, const std::string& split);
void write_cifar_bin(const std::string& path, const Dataset& ds);
std::pair<Dataset, Dataset> load_cifar100(const std::string& dir);

// Balanced K-class corpus: class k is a constant gray level plus seeded
// uniform noise of the given amplitude, so templates stay linearly separable.
Dataset synthetic_dataset(int64_t classes, int64_t per_class, std::array<int64_t, 3> chw,
                          uint64_t seed, int64_t noise = 12);

// Grayscale P5 files listed in labels.csv ("filename,label" with header),
// replicated to three channels.
Dataset load_pgm_folder(const std::string& dir);

// In-place horizontal mirror of one CHW image.
template <typename T>
void hflip_chw(T* image, int64_t c, int64_t h, int64_t w);

// align-corners=false sampling; source pixel centers sit at x + 0.5.
template <typename T>
Tensor<T> bilinear_resize(const Tensor<T>& nchw, int64_t out_h, int64_t out_w);

template <typename T>
struct Batch {
  Tensor<T> images; // (B, C, H, W), normalized floats
  std::vector<int64_t> labels;
  std::vector<int64_t> indices; // dataset rows this batch was drawn from
};

// One epoch of seeded batches. Train mode shuffles and augments; eval mode
// walks the dataset in order untouched. Two streams with equal arguments
// produce identical batches.
template <typename T>
class BatchStream {
 public:
  BatchStream(const Dataset& ds, int64_t batch_size, uint64_t epoch_seed, const Preproc& preproc,
              bool train);
  bool next(Batch<T>& out);
  int64_t num_batches() const;

 private:
  const Dataset* ds_;
  int64_t batch_size_;
  Preproc preproc_;
  bool train_;
  Rng rng_;
  std::vector<int64_t> order_;
  int64_t cursor_ = 0;
};

} // namespace saenet
