#include "saenet/kernels.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <string>
#include <vector>

namespace saenet {

namespace {

// C(M,N) += A(M,K) * B(K,N), all row-major. Callers pre-fill C (zeros or a
// broadcast bias). The j loop runs over contiguous memory and the k-order per
// output element is fixed, so results are bit-stable for a given shape.
template <typename T>
void gemm_nn(const T* a, const T* b, T* c, int64_t m, int64_t k, int64_t n) {
  for (int64_t i = 0; i < m; ++i) {
    T* crow = c + i * n;
    const T* arow = a + i * k;
    for (int64_t p = 0; p < k; ++p) {
      const T av = arow[p];
      if (av == T(0)) continue;
      const T* brow = b + p * n;
      for (int64_t j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  }
}

// Dot product with eight fixed partial accumulators (vectorizable without
// changing the result between runs).
template <typename T>
T dot8(const T* a, const T* b, int64_t n) {
  T acc[8] = {0, 0, 0, 0, 0, 0, 0, 0};
  int64_t i = 0;
  for (; i + 8 <= n; i += 8)
    for (int64_t l = 0; l < 8; ++l) acc[l] += a[i + l] * b[i + l];
  T tail = 0;
  for (; i < n; ++i) tail += a[i] * b[i];
  return ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail;
}

struct ConvGeom {
  int64_t n, in_c, in_h, in_w;
  int64_t out_c, out_h, out_w;
  int64_t group_in, group_out, patch; // patch = group_in*kh*kw
};

ConvGeom conv_geometry(const Shape& in_shape, const Shape& w_shape, const ConvSpec& spec) {
  if (in_shape.size() != 4) {
    throw DimensionError("conv2d: input rank " + std::to_string(in_shape.size()) +
                         " != 4 (want NCHW)");
  }
  if (w_shape.size() != 4) {
    throw DimensionError("conv2d: weight rank " + std::to_string(w_shape.size()) +
                         " != 4 (want OIHW)");
  }
  spec.validate();
  ConvGeom g;
  g.n = in_shape[0];
  g.in_c = in_shape[1];
  g.in_h = in_shape[2];
  g.in_w = in_shape[3];
  if (g.in_c != spec.in_channels) {
    throw DimensionError("conv2d: input channel axis 1 has " + std::to_string(g.in_c) +
                         " channels but spec.in_channels is " + std::to_string(spec.in_channels));
  }
  g.group_in = spec.in_channels / spec.groups;
  g.group_out = spec.out_channels / spec.groups;
  if (w_shape[0] != spec.out_channels || w_shape[1] != g.group_in || w_shape[2] != spec.kh ||
      w_shape[3] != spec.kw) {
    throw DimensionError("conv2d: weight shape " + shape_str(w_shape) + " != expected (" +
                         std::to_string(spec.out_channels) + "," + std::to_string(g.group_in) +
                         "," + std::to_string(spec.kh) + "," + std::to_string(spec.kw) + ")");
  }
  g.out_c = spec.out_channels;
  auto [oh, ow] = spec.out_hw(g.in_h, g.in_w);
  g.out_h = oh;
  g.out_w = ow;
  g.patch = g.group_in * spec.kh * spec.kw;
  return g;
}

// col(k, m): k = (ic_local*kh + y)*kw + x, m = (n*out_h + oh)*out_w + ow.
// Channels [c0, c0+group_in) of the input feed this group.
template <typename T>
void im2col(const Tensor<T>& input, const ConvGeom& g, const ConvSpec& spec, int64_t c0,
            T* col) {
  const int64_t cols = g.n * g.out_h * g.out_w;
  const T* in = input.data();
  for (int64_t ic = 0; ic < g.group_in; ++ic)
    for (int64_t y = 0; y < spec.kh; ++y)
      for (int64_t x = 0; x < spec.kw; ++x) {
        T* row = col + ((ic * spec.kh + y) * spec.kw + x) * cols;
        for (int64_t n = 0; n < g.n; ++n) {
          const T* plane = in + ((n * g.in_c + c0 + ic) * g.in_h) * g.in_w;
          for (int64_t oh = 0; oh < g.out_h; ++oh) {
            const int64_t ih = oh * spec.stride - spec.padding + y;
            T* dst = row + (n * g.out_h + oh) * g.out_w;
            if (ih < 0 || ih >= g.in_h) {
              std::fill(dst, dst + g.out_w, T(0));
              continue;
            }
            const T* src = plane + ih * g.in_w;
            int64_t iw = -spec.padding + x;
            for (int64_t ow = 0; ow < g.out_w; ++ow, iw += spec.stride)
              dst[ow] = (iw >= 0 && iw < g.in_w) ? src[iw] : T(0);
          }
        }
      }
}

// Scatter-add of a column-matrix gradient back onto the input window.
template <typename T>
void col2im_add(const T* col, const ConvGeom& g, const ConvSpec& spec, int64_t c0,
                Tensor<T>& grad_input) {
  const int64_t cols = g.n * g.out_h * g.out_w;
  T* out = grad_input.data();
  for (int64_t ic = 0; ic < g.group_in; ++ic)
    for (int64_t y = 0; y < spec.kh; ++y)
      for (int64_t x = 0; x < spec.kw; ++x) {
        const T* row = col + ((ic * spec.kh + y) * spec.kw + x) * cols;
        for (int64_t n = 0; n < g.n; ++n) {
          T* plane = out + ((n * g.in_c + c0 + ic) * g.in_h) * g.in_w;
          for (int64_t oh = 0; oh < g.out_h; ++oh) {
            const int64_t ih = oh * spec.stride - spec.padding + y;
            if (ih < 0 || ih >= g.in_h) continue;
            const T* src = row + (n * g.out_h + oh) * g.out_w;
            T* dst = plane + ih * g.in_w;
            int64_t iw = -spec.padding + x;
            for (int64_t ow = 0; ow < g.out_w; ++ow, iw += spec.stride)
              if (iw >= 0 && iw < g.in_w) dst[iw] += src[ow];
          }
        }
      }
}

template <typename T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
  if (!a.same_shape(b)) {
    throw DimensionError(std::string(op) + ": shapes differ, " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
  }
}

} // namespace

void ConvSpec::validate() const {
  if (in_channels <= 0 || out_channels <= 0 || kh <= 0 || kw <= 0 || stride <= 0 ||
      padding < 0 || groups <= 0) {
    throw ConfigError("conv spec has non-positive geometry");
  }
  if (in_channels % groups != 0 || out_channels % groups != 0) {
    throw ConfigError("conv spec: groups " + std::to_string(groups) + " must divide in_channels " +
                      std::to_string(in_channels) + " and out_channels " +
                      std::to_string(out_channels));
  }
}

std::pair<int64_t, int64_t> ConvSpec::out_hw(int64_t h, int64_t w) const {
  const int64_t oh = (h + 2 * padding - kh) / stride + 1;
  const int64_t ow = (w + 2 * padding - kw) / stride + 1;
  if (h + 2 * padding < kh || w + 2 * padding < kw || oh <= 0 || ow <= 0) {
    throw ConfigError("conv output size is non-positive for input " + std::to_string(h) + "x" +
                      std::to_string(w) + " with kernel " + std::to_string(kh) + "x" +
                      std::to_string(kw) + " stride " + std::to_string(stride) + " padding " +
                      std::to_string(padding));
  }
  return {oh, ow};
}

template <typename T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>* bias,
                 const ConvSpec& spec) {
  const ConvGeom g = conv_geometry(input.shape(), weight.shape(), spec);
  if (bias && bias->shape() != Shape{g.out_c}) {
    throw DimensionError("conv2d: bias shape " + shape_str(bias->shape()) + " != (" +
                         std::to_string(g.out_c) + ")");
  }
  Tensor<T> out({g.n, g.out_c, g.out_h, g.out_w});
  const int64_t cols = g.n * g.out_h * g.out_w;
  const int64_t plane = g.out_h * g.out_w;
  std::vector<T> col(static_cast<size_t>(g.patch * cols));
  std::vector<T> res(static_cast<size_t>(g.group_out * cols));
  for (int64_t grp = 0; grp < spec.groups; ++grp) {
    im2col(input, g, spec, grp * g.group_in, col.data());
    for (int64_t o = 0; o < g.group_out; ++o) {
      const T b = bias ? (*bias)[grp * g.group_out + o] : T(0);
      std::fill(res.begin() + o * cols, res.begin() + (o + 1) * cols, b);
    }
    gemm_nn(weight.data() + grp * g.group_out * g.patch, col.data(), res.data(), g.group_out,
            g.patch, cols);
    for (int64_t o = 0; o < g.group_out; ++o)
      for (int64_t n = 0; n < g.n; ++n)
        std::memcpy(out.data() + out.offset4(n, grp * g.group_out + o, 0, 0),
                    res.data() + o * cols + n * plane, sizeof(T) * static_cast<size_t>(plane));
  }
  return out;
}

template <typename T>
void conv2d_backward(const Tensor<T>& input, const Tensor<T>& weight, const ConvSpec& spec,
                     const Tensor<T>& grad_out, Tensor<T>* grad_input, Tensor<T>* grad_weight,
                     Tensor<T>* grad_bias) {
  const ConvGeom g = conv_geometry(input.shape(), weight.shape(), spec);
  if (grad_out.shape() != Shape{g.n, g.out_c, g.out_h, g.out_w}) {
    throw DimensionError("conv2d backward: upstream shape " + shape_str(grad_out.shape()) +
                         " mismatches output");
  }
  const int64_t cols = g.n * g.out_h * g.out_w;
  const int64_t plane = g.out_h * g.out_w;
  std::vector<T> col(static_cast<size_t>(g.patch * cols));
  std::vector<T> dy(static_cast<size_t>(g.group_out * cols));
  std::vector<T> dcol;
  if (grad_input) dcol.resize(static_cast<size_t>(g.patch * cols));

  for (int64_t grp = 0; grp < spec.groups; ++grp) {
    for (int64_t o = 0; o < g.group_out; ++o)
      for (int64_t n = 0; n < g.n; ++n)
        std::memcpy(dy.data() + o * cols + n * plane,
                    grad_out.data() + grad_out.offset4(n, grp * g.group_out + o, 0, 0),
                    sizeof(T) * static_cast<size_t>(plane));

    if (grad_bias) {
      for (int64_t o = 0; o < g.group_out; ++o) {
        T acc = 0;
        const T* row = dy.data() + o * cols;
        for (int64_t m = 0; m < cols; ++m) acc += row[m];
        (*grad_bias)[grp * g.group_out + o] += acc;
      }
    }
    if (grad_weight) {
      im2col(input, g, spec, grp * g.group_in, col.data());
      T* dw = grad_weight->data() + grp * g.group_out * g.patch;
      for (int64_t o = 0; o < g.group_out; ++o)
        for (int64_t k = 0; k < g.patch; ++k)
          dw[o * g.patch + k] += dot8(dy.data() + o * cols, col.data() + k * cols, cols);
    }
    if (grad_input) {
      std::fill(dcol.begin(), dcol.end(), T(0));
      const T* w = weight.data() + grp * g.group_out * g.patch;
      for (int64_t o = 0; o < g.group_out; ++o) {
        const T* dyrow = dy.data() + o * cols;
        for (int64_t k = 0; k < g.patch; ++k) {
          const T wv = w[o * g.patch + k];
          if (wv == T(0)) continue;
          T* drow = dcol.data() + k * cols;
          for (int64_t m = 0; m < cols; ++m) drow[m] += wv * dyrow[m];
        }
      }
      col2im_add(dcol.data(), g, spec, grp * g.group_in, *grad_input);
    }
  }
}

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2) {
    throw DimensionError("matmul: both operands must be rank 2, got " + shape_str(a.shape()) +
                         " and " + shape_str(b.shape()));
  }
  if (a.dim(1) != b.dim(0)) {
    throw DimensionError("matmul: inner dimensions differ, a axis 1 is " +
                         std::to_string(a.dim(1)) + " but b axis 0 is " +
                         std::to_string(b.dim(0)));
  }
  Tensor<T> out({a.dim(0), b.dim(1)});
  gemm_nn(a.data(), b.data(), out.data(), a.dim(0), a.dim(1), b.dim(1));
  return out;
}

template <typename T>
Tensor<T> matmul_nt(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(1) != b.dim(1)) {
    throw DimensionError("matmul_nt: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const int64_t rows = a.dim(0), cols = b.dim(0), inner = a.dim(1);
  Tensor<T> out({rows, cols});
  for (int64_t i = 0; i < rows; ++i)
    for (int64_t j = 0; j < cols; ++j)
      out[out.offset2(i, j)] = dot8(a.data() + i * inner, b.data() + j * inner, inner);
  return out;
}

template <typename T>
Tensor<T> matmul_tn(const Tensor<T>& a, const Tensor<T>& b) {
  if (a.rank() != 2 || b.rank() != 2 || a.dim(0) != b.dim(0)) {
    throw DimensionError("matmul_tn: incompatible shapes " + shape_str(a.shape()) + " and " +
                         shape_str(b.shape()));
  }
  const int64_t rows = a.dim(1), cols = b.dim(1), inner = a.dim(0);
  Tensor<T> out({rows, cols});
  for (int64_t r = 0; r < inner; ++r) {
    const T* brow = b.data() + r * cols;
    for (int64_t i = 0; i < rows; ++i) {
      const T av = a[a.offset2(r, i)];
      if (av == T(0)) continue;
      T* crow = out.data() + i * cols;
      for (int64_t j = 0; j < cols; ++j) crow[j] += av * brow[j];
    }
  }
  return out;
}

template <typename T>
Tensor<T> global_avg_pool(const Tensor<T>& input) {
  if (input.rank() != 4) {
    throw DimensionError("global_avg_pool: input rank " + std::to_string(input.rank()) +
                         " != 4 (want NCHW)");
  }
  const int64_t n_batch = input.dim(0), channels = input.dim(1);
  const int64_t hw = input.dim(2) * input.dim(3);
  Tensor<T> out({n_batch, channels});
  const T* in = input.data();
  for (int64_t nc = 0; nc < n_batch * channels; ++nc) {
    T acc = 0;
    const T* p = in + nc * hw;
    for (int64_t i = 0; i < hw; ++i) acc += p[i];
    out[nc] = acc / static_cast<T>(hw);
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d_train(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                            T eps, Tensor<T>* batch_mean, Tensor<T>* batch_var) {
  if (input.rank() != 4) {
    throw DimensionError("batchnorm2d: input rank " + std::to_string(input.rank()) + " != 4");
  }
  const int64_t n_batch = input.dim(0), channels = input.dim(1);
  const int64_t hw = input.dim(2) * input.dim(3);
  const int64_t m = n_batch * hw;
  if (m < 2) {
    throw DegenerateBatchError("batchnorm2d: train mode needs N*H*W >= 2, got " +
                               std::to_string(m));
  }
  if (gamma.shape() != Shape{channels} || beta.shape() != Shape{channels}) {
    throw DimensionError("batchnorm2d: gamma/beta must have shape (" + std::to_string(channels) +
                         ")");
  }
  Tensor<T> mean({channels}), var({channels});
  const T* in = input.data();
  for (int64_t c = 0; c < channels; ++c) {
    T acc = 0;
    for (int64_t n = 0; n < n_batch; ++n) {
      const T* p = in + (n * channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) acc += p[i];
    }
    const T mu = acc / static_cast<T>(m);
    T vacc = 0;
    for (int64_t n = 0; n < n_batch; ++n) {
      const T* p = in + (n * channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        const T d = p[i] - mu;
        vacc += d * d;
      }
    }
    mean[c] = mu;
    var[c] = vacc / static_cast<T>(m);
  }
  Tensor<T> out(input.shape());
  T* o = out.data();
  for (int64_t c = 0; c < channels; ++c) {
    const T inv = T(1) / std::sqrt(var[c] + eps);
    const T scale = gamma[c] * inv;
    const T shift = beta[c] - mean[c] * scale;
    for (int64_t n = 0; n < n_batch; ++n) {
      const T* p = in + (n * channels + c) * hw;
      T* q = o + (n * channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = p[i] * scale + shift;
    }
  }
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  return out;
}

template <typename T>
Tensor<T> batchnorm2d_eval(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                           const RunningStats<T>& stats, T eps) {
  if (input.rank() != 4) {
    throw DimensionError("batchnorm2d: input rank " + std::to_string(input.rank()) + " != 4");
  }
  const int64_t n_batch = input.dim(0), channels = input.dim(1);
  const int64_t hw = input.dim(2) * input.dim(3);
  Tensor<T> out(input.shape());
  const T* in = input.data();
  T* o = out.data();
  for (int64_t c = 0; c < channels; ++c) {
    const T inv = T(1) / std::sqrt(stats.var[c] + eps);
    const T scale = gamma[c] * inv;
    const T shift = beta[c] - stats.mean[c] * scale;
    for (int64_t n = 0; n < n_batch; ++n) {
      const T* p = in + (n * channels + c) * hw;
      T* q = o + (n * channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) q[i] = p[i] * scale + shift;
    }
  }
  return out;
}

template <typename T>
Tensor<T> batchnorm2d(const Tensor<T>& input, const Tensor<T>& gamma, const Tensor<T>& beta,
                      RunningStats<T>& stats, bool train, T eps, T momentum) {
  if (!train) return batchnorm2d_eval(input, gamma, beta, stats, eps);
  Tensor<T> mean, var;
  Tensor<T> out = batchnorm2d_train(input, gamma, beta, eps, &mean, &var);
  for (int64_t c = 0; c < mean.numel(); ++c) {
    stats.mean[c] = (T(1) - momentum) * stats.mean[c] + momentum * mean[c];
    stats.var[c] = (T(1) - momentum) * stats.var[c] + momentum * var[c];
  }
  return out;
}

template <typename T>
void batchnorm2d_backward(const Tensor<T>& input, const Tensor<T>& gamma,
                          const Tensor<T>& batch_mean, const Tensor<T>& batch_var, T eps,
                          const Tensor<T>& grad_out, Tensor<T>* grad_input,
                          Tensor<T>* grad_gamma, Tensor<T>* grad_beta) {
  const int64_t n_batch = input.dim(0), channels = input.dim(1);
  const int64_t hw = input.dim(2) * input.dim(3);
  const int64_t m = n_batch * hw;
  const T* in = input.data();
  const T* dy = grad_out.data();
  for (int64_t c = 0; c < channels; ++c) {
    const T mu = batch_mean[c];
    const T inv = T(1) / std::sqrt(batch_var[c] + eps);
    T sum_dy = 0, sum_dy_xhat = 0;
    for (int64_t n = 0; n < n_batch; ++n) {
      const T* p = in + (n * channels + c) * hw;
      const T* q = dy + (n * channels + c) * hw;
      for (int64_t i = 0; i < hw; ++i) {
        sum_dy += q[i];
        sum_dy_xhat += q[i] * (p[i] - mu) * inv;
      }
    }
    if (grad_beta) (*grad_beta)[c] += sum_dy;
    if (grad_gamma) (*grad_gamma)[c] += sum_dy_xhat;
    if (grad_input) {
      const T scale = gamma[c] * inv;
      const T mean_dy = sum_dy / static_cast<T>(m);
      const T mean_dy_xhat = sum_dy_xhat / static_cast<T>(m);
      T* gx = grad_input->data();
      for (int64_t n = 0; n < n_batch; ++n) {
        const T* p = in + (n * channels + c) * hw;
        const T* q = dy + (n * channels + c) * hw;
        T* r = gx + (n * channels + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const T xhat = (p[i] - mu) * inv;
          r[i] += scale * (q[i] - mean_dy - xhat * mean_dy_xhat);
        }
      }
    }
  }
}

template <typename T>
Tensor<T> concat_channels(const std::vector<Tensor<T>>& parts) {
  if (parts.empty()) throw DimensionError("concat_channels: no parts");
  const int rank = parts.front().rank();
  if (rank != 2 && rank != 4) {
    throw DimensionError("concat_channels: parts must be rank 2 or 4, got rank " +
                         std::to_string(rank));
  }
  int64_t total_c = 0;
  for (const auto& p : parts) {
    if (p.rank() != rank) throw DimensionError("concat_channels: mixed ranks");
    for (int axis = 0; axis < rank; ++axis) {
      if (axis == 1) continue;
      if (p.dim(axis) != parts.front().dim(axis)) {
        throw DimensionError("concat_channels: axis " + std::to_string(axis) + " differs, " +
                             std::to_string(p.dim(axis)) + " vs " +
                             std::to_string(parts.front().dim(axis)));
      }
    }
    total_c += p.dim(1);
  }
  Shape out_shape = parts.front().shape();
  out_shape[1] = total_c;
  Tensor<T> out(out_shape);
  const int64_t n_batch = out.dim(0);
  const int64_t inner = (rank == 4) ? out.dim(2) * out.dim(3) : 1;
  int64_t c_off = 0;
  for (const auto& p : parts) {
    const int64_t pc = p.dim(1);
    for (int64_t n = 0; n < n_batch; ++n)
      std::memcpy(out.data() + (n * total_c + c_off) * inner, p.data() + n * pc * inner,
                  sizeof(T) * static_cast<size_t>(pc * inner));
    c_off += pc;
  }
  return out;
}

template <typename T>
Tensor<T> slice_channels(const Tensor<T>& input, int64_t begin, int64_t end) {
  const int rank = input.rank();
  if (rank != 2 && rank != 4) throw DimensionError("slice_channels: rank must be 2 or 4");
  const int64_t channels = input.dim(1);
  if (begin < 0 || end > channels || begin >= end) {
    throw DimensionError("slice_channels: range [" + std::to_string(begin) + "," +
                         std::to_string(end) + ") invalid for " + std::to_string(channels) +
                         " channels");
  }
  Shape out_shape = input.shape();
  out_shape[1] = end - begin;
  Tensor<T> out(out_shape);
  const int64_t n_batch = input.dim(0);
  const int64_t inner = (rank == 4) ? input.dim(2) * input.dim(3) : 1;
  for (int64_t n = 0; n < n_batch; ++n)
    std::memcpy(out.data() + n * (end - begin) * inner,
                input.data() + (n * channels + begin) * inner,
                sizeof(T) * static_cast<size_t>((end - begin) * inner));
  return out;
}

template <typename T>
Tensor<T> channel_scale(const Tensor<T>& input, const Tensor<T>& gates) {
  if (input.rank() != 4 || gates.rank() != 2) {
    throw DimensionError("channel_scale: want NCHW input and (N,C) gates, got " +
                         shape_str(input.shape()) + " and " + shape_str(gates.shape()));
  }
  if (gates.dim(0) != input.dim(0) || gates.dim(1) != input.dim(1)) {
    throw DimensionError("channel_scale: gate channel axis 1 is " + std::to_string(gates.dim(1)) +
                         " but input has " + std::to_string(input.dim(1)) + " channels");
  }
  Tensor<T> out(input.shape());
  const int64_t hw = input.dim(2) * input.dim(3);
  const T* in = input.data();
  T* o = out.data();
  for (int64_t nc = 0; nc < input.dim(0) * input.dim(1); ++nc) {
    const T gate = gates[nc];
    for (int64_t i = 0; i < hw; ++i) o[nc * hw + i] = in[nc * hw + i] * gate;
  }
  return out;
}

template <typename T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "add");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] + b[i];
  return out;
}

template <typename T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
  check_same_shape(a, b, "mul");
  Tensor<T> out(a.shape());
  for (int64_t i = 0; i < a.numel(); ++i) out[i] = a[i] * b[i];
  return out;
}

template <typename T>
Tensor<T> add_bias_rows(const Tensor<T>& x, const Tensor<T>& bias) {
  if (x.rank() != 2 || bias.rank() != 1 || bias.dim(0) != x.dim(1)) {
    throw DimensionError("add_bias_rows: want (N,C) + (C), got " + shape_str(x.shape()) +
                         " and " + shape_str(bias.shape()));
  }
  Tensor<T> out(x.shape());
  const int64_t cols = x.dim(1);
  for (int64_t r = 0; r < x.dim(0); ++r)
    for (int64_t c = 0; c < cols; ++c) out[r * cols + c] = x[r * cols + c] + bias[c];
  return out;
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) out[i] = x[i] > T(0) ? x[i] : T(0);
  return out;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> out(x.shape());
  for (int64_t i = 0; i < x.numel(); ++i) {
    const T v = x[i];
    if (v >= T(0)) {
      out[i] = T(1) / (T(1) + std::exp(-v));
    } else {
      const T e = std::exp(v);
      out[i] = e / (T(1) + e);
    }
  }
  return out;
}

template <typename T>
Tensor<T> softmax_rows(const Tensor<T>& x) {
  if (x.rank() != 2) {
    throw DimensionError("softmax_rows: input rank " + std::to_string(x.rank()) + " != 2");
  }
  const int64_t rows = x.dim(0), cols = x.dim(1);
  Tensor<T> out(x.shape());
  for (int64_t r = 0; r < rows; ++r) {
    const T* p = x.data() + r * cols;
    T* q = out.data() + r * cols;
    T mx = p[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
    T denom = 0;
    for (int64_t c = 0; c < cols; ++c) {
      q[c] = std::exp(p[c] - mx);
      denom += q[c];
    }
    for (int64_t c = 0; c < cols; ++c) q[c] /= denom;
  }
  return out;
}

template <typename T>
Tensor<T> sum_all(const Tensor<T>& x) {
  T acc = 0;
  for (int64_t i = 0; i < x.numel(); ++i) acc += x[i];
  return Tensor<T>::scalar(acc);
}

template <typename T>
Tensor<T> maxpool2d(const Tensor<T>& input, int64_t kernel, int64_t stride, int64_t padding,
                    std::vector<int64_t>* argmax) {
  if (input.rank() != 4) {
    throw DimensionError("maxpool2d: input rank " + std::to_string(input.rank()) + " != 4");
  }
  const int64_t n_batch = input.dim(0), channels = input.dim(1);
  const int64_t in_h = input.dim(2), in_w = input.dim(3);
  const int64_t out_h = (in_h + 2 * padding - kernel) / stride + 1;
  const int64_t out_w = (in_w + 2 * padding - kernel) / stride + 1;
  if (out_h <= 0 || out_w <= 0) throw ConfigError("maxpool2d: non-positive output size");
  Tensor<T> out({n_batch, channels, out_h, out_w});
  if (argmax) argmax->assign(static_cast<size_t>(out.numel()), -1);
  const T* in = input.data();
  int64_t oi = 0;
  for (int64_t n = 0; n < n_batch; ++n)
    for (int64_t c = 0; c < channels; ++c) {
      const T* plane = in + (n * channels + c) * in_h * in_w;
      for (int64_t oh = 0; oh < out_h; ++oh)
        for (int64_t ow = 0; ow < out_w; ++ow, ++oi) {
          T best = -std::numeric_limits<T>::infinity();
          int64_t best_idx = -1;
          for (int64_t y = 0; y < kernel; ++y) {
            const int64_t ih = oh * stride - padding + y;
            if (ih < 0 || ih >= in_h) continue;
            for (int64_t x = 0; x < kernel; ++x) {
              const int64_t iw = ow * stride - padding + x;
              if (iw < 0 || iw >= in_w) continue;
              const T v = plane[ih * in_w + iw];
              if (v > best) {
                best = v;
                best_idx = (n * channels + c) * in_h * in_w + ih * in_w + iw;
              }
            }
          }
          out[oi] = best;
          if (argmax) (*argmax)[static_cast<size_t>(oi)] = best_idx;
        }
    }
  return out;
}

#define SAENET_INSTANTIATE_KERNELS(T)                                                             \
  template Tensor<T> conv2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>*,                 \
                            const ConvSpec&);                                                     \
  template void conv2d_backward(const Tensor<T>&, const Tensor<T>&, const ConvSpec&,              \
                                const Tensor<T>&, Tensor<T>*, Tensor<T>*, Tensor<T>*);            \
  template Tensor<T> matmul(const Tensor<T>&, const Tensor<T>&);                                  \
  template Tensor<T> matmul_nt(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> matmul_tn(const Tensor<T>&, const Tensor<T>&);                               \
  template Tensor<T> global_avg_pool(const Tensor<T>&);                                           \
  template Tensor<T> batchnorm2d_train(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&, T,   \
                                       Tensor<T>*, Tensor<T>*);                                   \
  template Tensor<T> batchnorm2d_eval(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,       \
                                      const RunningStats<T>&, T);                                 \
  template Tensor<T> batchnorm2d(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,            \
                                 RunningStats<T>&, bool, T, T);                                   \
  template void batchnorm2d_backward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,        \
                                     const Tensor<T>&, T, const Tensor<T>&, Tensor<T>*,           \
                                     Tensor<T>*, Tensor<T>*);                                     \
  template Tensor<T> concat_channels(const std::vector<Tensor<T>>&);                              \
  template Tensor<T> slice_channels(const Tensor<T>&, int64_t, int64_t);                          \
  template Tensor<T> channel_scale(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> add(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> mul(const Tensor<T>&, const Tensor<T>&);                                     \
  template Tensor<T> add_bias_rows(const Tensor<T>&, const Tensor<T>&);                           \
  template Tensor<T> relu(const Tensor<T>&);                                                      \
  template Tensor<T> sigmoid(const Tensor<T>&);                                                   \
  template Tensor<T> softmax_rows(const Tensor<T>&);                                              \
  template Tensor<T> sum_all(const Tensor<T>&);                                                   \
  template Tensor<T> maxpool2d(const Tensor<T>&, int64_t, int64_t, int64_t,                       \
                               std::vector<int64_t>*);

SAENET_INSTANTIATE_KERNELS(float)
SAENET_INSTANTIATE_KERNELS(double)

#undef SAENET_INSTANTIATE_KERNELS

} // namespace saenet
