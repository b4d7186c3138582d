#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <utility>
#include <vector>

#include "saenet/kernels.hpp"
#include "saenet/tensor.hpp"

namespace saenet {

namespace detail {

template <typename T>
struct Node {
  Tensor<T> value;
  Tensor<T> grad;
  bool has_grad = false;
  bool requires_grad = false;
  bool consumed = false;
  std::string op;
  std::vector<std::shared_ptr<Node<T>>> parents;
  // Reads this node's grad and accumulates into the parents. Cleared after the
  // backward pass to release saved forward values.
  std::function<void()> backward_fn;
};

} // namespace detail

// Handle to a tape node. Copies share the node.
template <typename T>
class Var {
 public:
  Var() = default;

  static Var leaf(Tensor<T> value, bool requires_grad) {
    auto n = std::make_shared<detail::Node<T>>();
    n->value = std::move(value);
    n->requires_grad = requires_grad;
    n->op = "leaf";
    return wrap(std::move(n));
  }

  static Var wrap(std::shared_ptr<detail::Node<T>> n) {
    Var v;
    v.node_ = std::move(n);
    return v;
  }

  bool defined() const { return node_ != nullptr; }
  const Tensor<T>& value() const { return check()->value; }
  bool requires_grad() const { return check()->requires_grad; }
  bool has_grad() const { return check()->has_grad; }

  // Gradient of the last backward pass. Throws if none was accumulated.
  const Tensor<T>& grad() const {
    if (!check()->has_grad) {
      throw ContractError("grad requested on node '" + node_->op + "' with no gradient");
    }
    return node_->grad;
  }

  // Adds g into this node's gradient, allocating zeros on first use. Const in
  // the shared_ptr sense: copies of the handle share mutable node state.
  void accumulate_grad(const Tensor<T>& g) const {
    Tensor<T>& dst = ensure_grad();
    if (!dst.same_shape(g)) {
      throw DimensionError("gradient shape " + shape_str(g.shape()) + " != value shape " +
                           shape_str(dst.shape()));
    }
    for (int64_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
  }

  // Zero-initialized gradient buffer for backward rules that accumulate in
  // place.
  Tensor<T>& ensure_grad() const {
    const auto& n = check();
    if (!n->has_grad) {
      n->grad = Tensor<T>(n->value.shape());
      n->has_grad = true;
    }
    return n->grad;
  }

  std::shared_ptr<detail::Node<T>> node() const { return node_; }

 private:
  const std::shared_ptr<detail::Node<T>>& check() const {
    if (!node_) throw ContractError("use of empty Var");
    return node_;
  }

  std::shared_ptr<detail::Node<T>> node_;
};

// Builds a non-leaf node. `inputs` become parents (only those requiring grad);
// `backward` receives the upstream gradient and must accumulate into the
// inputs it captured. Exposed so tests can register custom rules.
template <typename T>
Var<T> make_op(const std::string& op, Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::function<void(const Tensor<T>&)> backward);

// Reverse-mode sweep from a scalar loss. Leaf gradients accumulate by
// addition across fan-out. A second sweep over the same tape throws
// ContractError; rebuild the forward pass instead.
template <typename T>
void backward(const Var<T>& loss);

// Count of forward elements that landed within 1e-3 of a relu kink or a
// maxpool tie since the last reset. The gradient checker resamples when this
// is nonzero because finite differences straddle the non-smooth point.
int64_t kink_hits();
void reset_kink_hits();
inline constexpr double kKinkMargin = 1e-3;

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const ConvSpec& spec);
template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              const ConvSpec& spec);

// Train-mode batchnorm; backward differentiates through the batch statistics.
// The statistics of this batch are written to *batch_mean / *batch_var when
// non-null (for running-stat updates).
template <typename T>
Var<T> batchnorm2d_train(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, T eps,
                         Tensor<T>* batch_mean = nullptr, Tensor<T>* batch_var = nullptr);

// Eval-mode batchnorm: an affine map with constant mean/var.
template <typename T>
Var<T> batchnorm2d_eval(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                        const RunningStats<T>& stats, T eps);

template <typename T>
Var<T> relu(const Var<T>& x);
template <typename T>
Var<T> sigmoid(const Var<T>& x);
template <typename T>
Var<T> global_avg_pool(const Var<T>& x);
template <typename T>
Var<T> maxpool2d(const Var<T>& x, int64_t kernel, int64_t stride, int64_t padding);
template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b);

// x (N,in) with weight (out,in): y = x * W^T + bias.
template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias);

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b);
template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts);
template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t begin, int64_t end);
template <typename T>
Var<T> channel_scale(const Var<T>& input, const Var<T>& gates);
template <typename T>
Var<T> sum_all(const Var<T>& x);
template <typename T>
Var<T> scale(const Var<T>& x, T factor);

// Mean cross-entropy over rows of logits (N,C) against integer labels.
template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int64_t>& labels);

} // namespace saenet
