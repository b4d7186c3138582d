#include "saenet/optim.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "saenet/autograd.hpp"
#include "saenet/checkpoint.hpp"

namespace saenet {

void TrainConfig::validate() const {
  if (lr0 < 0.0) throw ConfigError("lr0 must be >= 0, got " + std::to_string(lr0));
  if (momentum < 0.0 || momentum >= 1.0)
    throw ConfigError("momentum must be in [0, 1), got " + std::to_string(momentum));
  if (weight_decay < 0.0)
    throw ConfigError("weight_decay must be >= 0, got " + std::to_string(weight_decay));
  if (!(decay > 0.0 && decay <= 1.0))
    throw ConfigError("decay must be in (0, 1], got " + std::to_string(decay));
  if (step_epochs < 1) throw ConfigError("step_epochs must be >= 1");
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (max_steps < 0) throw ConfigError("max_steps must be >= 0");
}

double lr_at_epoch(const TrainConfig& cfg, int64_t epoch) {
  if (epoch < 0 || epoch >= cfg.epochs)
    throw ContractError("epoch " + std::to_string(epoch) + " outside [0, " +
                        std::to_string(cfg.epochs) + ")");
  // Iterated multiplication instead of pow: the default decimal schedule then
  // reproduces 0.001/0.0001/0.00001 to the last bit on any libm.
  double lr = cfg.lr0;
  for (int64_t k = epoch / cfg.step_epochs; k > 0; --k) lr *= cfg.decay;
  return lr;
}

template <typename T>
void sgd_step(const std::vector<Param<T>*>& params, T lr, T momentum, T weight_decay) {
  for (Param<T>* p : params) {
    T* value = p->value.data();
    T* grad = p->grad.data();
    T* velocity = p->velocity.data();
    for (int64_t i = 0; i < p->value.numel(); ++i) {
      if (!std::isfinite(double(grad[i])))
        throw NumericError("non-finite gradient for " + p->name);
      T g = grad[i] + weight_decay * value[i];
      velocity[i] = momentum * velocity[i] + g;
      value[i] -= lr * velocity[i];
    }
  }
}

template <typename T>
int64_t logit_rank(const T* row, int64_t classes, int64_t label) {
  T mine = row[label];
  int64_t rank = 0;
  for (int64_t j = 0; j < classes; ++j)
    if (row[j] > mine || (row[j] == mine && j < label)) ++rank;
  return rank;
}

template <typename T>
Metrics metrics_from_logits(const Tensor<T>& logits, const std::vector<int64_t>& labels) {
  if (logits.rank() != 2)
    throw DimensionError("metrics expect (N, classes) logits, got " + shape_str(logits.shape()));
  int64_t n = logits.dim(0), k = logits.dim(1);
  if (static_cast<int64_t>(labels.size()) != n)
    throw DimensionError("got " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(n) + " logit rows");
  Metrics m;
  double loss = 0.0;
  for (int64_t i = 0; i < n; ++i) {
    int64_t label = labels[i];
    if (label < 0 || label >= k)
      throw DataError("label " + std::to_string(label) + " outside [0, " + std::to_string(k) +
                      ") at row " + std::to_string(i));
    const T* row = logits.data() + i * k;
    int64_t rank = logit_rank(row, k, label);
    if (rank < 1) m.top1 += 1.0;
    if (rank < 5) m.top5 += 1.0;
    double hi = double(row[0]);
    for (int64_t j = 1; j < k; ++j) hi = std::max(hi, double(row[j]));
    double lse = 0.0;
    for (int64_t j = 0; j < k; ++j) lse += std::exp(double(row[j]) - hi);
    loss += hi + std::log(lse) - double(row[label]);
  }
  m.top1 /= double(n);
  m.top5 /= double(n);
  m.mean_loss = loss / double(n);
  return m;
}

template <typename T>
Metrics evaluate(Model<T>& model, const Dataset& ds, const Preproc& preproc, int64_t batch_size) {
  if (ds.n == 0) throw ContractError("evaluate over an empty dataset");
  if (ds.max_label() >= model.arch.num_classes)
    throw DataError("dataset label " + std::to_string(ds.max_label()) +
                    " does not fit a " + std::to_string(model.arch.num_classes) + "-way head");
  BatchStream<T> stream(ds, batch_size, 0, preproc, false);
  Metrics total;
  int64_t seen = 0;
  Batch<T> batch;
  while (stream.next(batch)) {
    Pass<T> pass(false);
    Var<T> logits = model.forward(pass, Var<T>::leaf(batch.images, false));
    Metrics m = metrics_from_logits(logits.value(), batch.labels);
    int64_t b = batch.images.dim(0);
    total.top1 += m.top1 * b;
    total.top5 += m.top5 * b;
    total.mean_loss += m.mean_loss * b;
    seen += b;
  }
  total.top1 /= double(seen);
  total.top5 /= double(seen);
  total.mean_loss /= double(seen);
  return total;
}

namespace {

uint64_t epoch_seed(int64_t seed, int64_t epoch) {
  return static_cast<uint64_t>(seed) ^ mix64(static_cast<uint64_t>(epoch) + 1);
}

} // namespace

template <typename T>
TrainResult train_model(Model<T>& model, const Dataset& train_ds, const Dataset& val_ds,
                        const TrainConfig& cfg, const Preproc& train_pp, const Preproc& eval_pp,
                        const std::string& run_dir) {
  cfg.validate();
  train_pp.validate();
  eval_pp.validate();
  if (train_ds.n == 0 || val_ds.n == 0) throw ContractError("train and val datasets must be non-empty");
  if (train_ds.max_label() >= model.arch.num_classes)
    throw DataError("training label " + std::to_string(train_ds.max_label()) +
                    " does not fit a " + std::to_string(model.arch.num_classes) + "-way head");

  std::filesystem::create_directories(run_dir);
  TrainResult result;
  result.metrics_path = run_dir + "/metrics.csv";
  result.ckpt_path = run_dir + "/best.ckpt";
  std::string manifest_path = run_dir + "/manifest.csv";
  std::ofstream metrics(result.metrics_path);
  if (!metrics) throw IoError("cannot open " + result.metrics_path + " for writing");
  metrics << "epoch,lr,train_loss,val_top1,val_top5\n" << std::flush;

  Preproc tpp = train_pp;
  if (!cfg.augment) {
    tpp.random_crop = false;
    tpp.hflip = false;
  }

  std::vector<Param<T>*> params = model.parameters();
  double best_top1 = -1.0;
  bool out_of_steps = false;

  for (int64_t epoch = 0; epoch < cfg.epochs && !out_of_steps; ++epoch) {
    double lr = lr_at_epoch(cfg, epoch);
    BatchStream<T> stream(train_ds, cfg.batch_size, epoch_seed(cfg.seed, epoch), tpp, true);
    double loss_sum = 0.0;
    int64_t seen = 0;
    Batch<T> batch;
    while (stream.next(batch)) {
      if (cfg.max_steps > 0 && result.steps >= cfg.max_steps) {
        out_of_steps = true;
        break;
      }
      for (Param<T>* p : params) p->zero_grad();
      Pass<T> pass(true);
      Var<T> logits;
      try {
        logits = model.forward(pass, Var<T>::leaf(batch.images, false));
      } catch (const DegenerateBatchError& e) {
        std::cerr << "warning: skipping batch at epoch " << epoch << " step " << result.steps
                  << ": " << e.what() << "\n";
        continue;
      }
      Var<T> loss = cross_entropy(logits, batch.labels);
      double loss_value = double(loss.value()[0]);
      if (!std::isfinite(loss_value))
        throw NumericError("loss became non-finite at epoch " + std::to_string(epoch) +
                           " step " + std::to_string(result.steps));
      backward(loss);
      pass.collect_grads();
      sgd_step(params, T(lr), T(cfg.momentum), T(cfg.weight_decay));
      result.steps += 1;
      int64_t b = batch.images.dim(0);
      loss_sum += loss_value * b;
      seen += b;
    }
    if (seen == 0) break; // step budget ran out before this epoch started

    Metrics row = evaluate(model, val_ds, eval_pp, cfg.batch_size);
    row.epoch = epoch;
    row.mean_loss = loss_sum / double(seen);
    result.log.push_back(row);

    char line[160];
    std::snprintf(line, sizeof(line), "%lld,%.8g,%.6f,%.4f,%.4f\n",
                  static_cast<long long>(epoch), lr, row.mean_loss, row.top1, row.top5);
    metrics << line << std::flush;

    if (row.top1 > best_top1) {
      best_top1 = row.top1;
      save_checkpoint(model, result.ckpt_path, manifest_path);
    }
  }

  result.train_top1 = evaluate(model, train_ds, eval_pp, cfg.batch_size).top1;
  return result;
}

#define SAENET_INSTANTIATE_OPTIM(T)                                                          \
  template void sgd_step<T>(const std::vector<Param<T>*>&, T, T, T);                         \
  template int64_t logit_rank<T>(const T*, int64_t, int64_t);                                \
  template Metrics metrics_from_logits<T>(const Tensor<T>&, const std::vector<int64_t>&);    \
  template Metrics evaluate<T>(Model<T>&, const Dataset&, const Preproc&, int64_t);          \
  template TrainResult train_model<T>(Model<T>&, const Dataset&, const Dataset&,             \
                                      const TrainConfig&, const Preproc&, const Preproc&,    \
                                      const std::string&);

SAENET_INSTANTIATE_OPTIM(float)
SAENET_INSTANTIATE_OPTIM(double)

} // namespace saenet
