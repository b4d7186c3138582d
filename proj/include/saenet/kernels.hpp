#pragma once

#include <optional>
#include <utility>
#include <vector>

#include "saenet/tensor.hpp"

namespace saenet {

// Convolution geometry. groups partitions input and output channels into
// independent convolutions; cardinality-32 grouped convs use groups = 32.
struct ConvSpec {
  int64_t in_channels = 0;
  int64_t out_channels = 0;
  int64_t kh = 1;
  int64_t kw = 1;
  int64_t stride = 1;
  int64_t padding = 0;
  int64_t groups = 1;

  void validate() const;
  // floor((H + 2*padding - kh)/stride) + 1; throws ConfigError if non-positive.
  std::pair<int64_t, int64_t> out_hw(int64_t h, int64_t w) const;
};

// input NCHW, weight OIHW with I = in_channels/groups, bias O (optional).
template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 const ConvSpec& spec);

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, std::nullptr_t,
                 const ConvSpec& spec) {
  return conv2d(input, weight, static_cast<const Tensor<T>*>(nullptr), spec);
}

// Gradients of conv2d. grad_input may be skipped (nullptr) when the input
// needs no gradient.
template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                     const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias);

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b);

// a(R,K) row-major times b(C,K) row-major, i.e. A * B^T -> (R,C).
template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b);

// a(K,R) row-major times b(K,C) row-major, i.e. A^T * B -> (R,C).
template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input);

// Per-channel running statistics owned by a batch-norm layer. Variance is
// stored biased (divided by N*H*W) so that eval after a momentum-1 train
// step reproduces the train-mode output exactly.
template <typename T>
struct RunningStats {
  Tensor<T> mean;
  Tensor<T> var;

  explicit RunningStats(int64_t channels)
      : mean(Tensor<T>::zeros({channels})), var(Tensor<T>::ones({channels})) {}
};

// Train-mode core: normalizes by batch statistics and reports them.
template <typename T>
Tensor<T> batchnorm2d_train(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            T eps, Tensor<T>* batch_mean, Tensor<T>* batch_var);

template <typename T>
Tensor<T> batchnorm2d_eval(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const RunningStats<T>& stats, T eps);

// Full op: train mode updates running stats in place with
// running = (1-momentum)*running + momentum*batch.
template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      RunningStats<T>& stats, bool train, T eps, T momentum);

template <typename T>
void batchnorm2d_backward(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& batch_mean, const Tensor<T>& batch_var, T eps,
                          const Tensor<T>& grad_out, Tensor<T>* grad_input,
                          Tensor<T>* grad_gamma, Tensor<T>* grad_beta);

// Channel-axis concatenation of rank-2 (N,C) or rank-4 (N,C,H,W) parts.
template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts);

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int64_t begin, int64_t end);

// out[n,c,h,w] = input[n,c,h,w] * gates[n,c]
template <typename T>
Tensor<T> channel_scale(const Tensor<T>& input, const Tensor<T>& gates);

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b);

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b);

// x(N,C) + bias(C) broadcast over rows.
template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& x, const Tensor<T>& bias);

template <typename T>
Tensor<T> relu(const Tensor<T>& x);

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x);

// Row-wise softmax with max subtraction; rows sum to 1.
template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x);

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x); // scalar tensor {1}

// Max pooling; ties pick the first (lowest-index) element of the window.
// argmax, when given, receives the flat input index feeding each output.
template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int64_t kernel, int64_t stride, int64_t padding,
                    std::vector<int64_t>* argmax = nullptr);

} // namespace saenet
