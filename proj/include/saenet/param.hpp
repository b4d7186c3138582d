#pragma once

#include <string>
#include <utility>
#include <vector>

#include "saenet/autograd.hpp"
#include "saenet/tensor.hpp"

namespace saenet {

// A trainable tensor with its optimizer state. grad is zeroed between steps;
// velocity is the SGD momentum slot.
template <typename T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> velocity;

  Param() = default;
  Param(std::string n, Tensor<T> v)
      : name(std::move(n)),
        value(std::move(v)),
        grad(value.shape()),
        velocity(value.shape()) {}

  void zero_grad() {
    for (int64_t i = 0; i < grad.numel(); ++i) grad[i] = 0;
  }
};

// One forward pass. Layers bind their params here so the trainer can pull
// analytic gradients off the tape afterwards. train=false builds no tape and
// runs batchnorm off running statistics.
template <typename T>
struct Pass {
  bool train = false;

  explicit Pass(bool train_mode) : train(train_mode) {}

  Var<T> bind(Param<T>& p) {
    Var<T> v = Var<T>::leaf(p.value, train);
    bound.emplace_back(&p, v);
    return v;
  }

  // Adds each bound param's tape gradient into param.grad.
  void collect_grads() {
    for (auto& [param, var] : bound) {
      if (!var.has_grad()) continue;
      const Tensor<T>& g = var.grad();
      for (int64_t i = 0; i < g.numel(); ++i) param->grad[i] += g[i];
    }
  }

  std::vector<std::pair<Param<T>*, Var<T>>> bound;
};

} // namespace saenet
