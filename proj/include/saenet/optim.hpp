#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "saenet/dataio.hpp"
#include "saenet/model.hpp"

namespace saenet {

struct TrainConfig {
  double lr0 = 0.01;
  double momentum = 0.9;
  double weight_decay = 1e-4;
  double decay = 0.1;
  int64_t step_epochs = 15;
  int64_t epochs = 50;
  int64_t batch_size = 256;
  int64_t seed = 0;
  bool f64 = false;
  int64_t max_steps = 0; // 0 = unlimited; otherwise stop after this many updates
  bool augment = true;

  void validate() const;
};

double lr_at_epoch(const TrainConfig& cfg, int64_t epoch);

// g' = grad + weight_decay * param; velocity = momentum * velocity + g';
// param -= lr * velocity.
template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, T lr, T momentum, T weight_decay);

struct Metrics {
  int64_t epoch = 0;
  double mean_loss = 0.0;
  double top1 = 0.0;
  double top5 = 0.0;
};

// Rank of the true class in one logit row; equal logits rank the lower class
// index first.
template <typename T>
int64_t logit_rank(const T* row, int64_t classes, int64_t label);

// top1/top5 fractions plus mean cross-entropy over pre-computed logits.
template <typename T>
Metrics metrics_from_logits(const Tensor<T>& logits, const std::vector<int64_t>& labels);

template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& ds, const Preproc& preproc, int64_t batch_size);

struct TrainResult {
  std::vector<Metrics> log; // per-epoch: train mean_loss + val top1/top5
  double train_top1 = 0.0;  // eval-mode pass over the training set afterwards
  int64_t steps = 0;
  std::string ckpt_path;
  std::string metrics_path;
};

// Writes {run_dir}/metrics.csv while running and checkpoints the best val
// top-1 weights to {run_dir}/best.ckpt (+ manifest.csv).
template <typename T>
TrainResult train_model(Model<T>& model, const Dataset& train_ds, const Dataset& val_ds,
                        const TrainConfig& cfg, const Preproc& train_pp, const Preproc& eval_pp,
                        const std::string& run_dir);

} // namespace saenet
