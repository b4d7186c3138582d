#include "saenet/autograd.hpp"

#include <cmath>
#include <unordered_set>

namespace saenet {

namespace {

thread_local int64_t g_kink_hits = 0;

template <typename T>
Tensor<T> ones_like(const Tensor<T>& t) {
  return Tensor<T>::full(t.shape(), T(1));
}

} // namespace

int64_t kink_hits() { return g_kink_hits; }
void reset_kink_hits() { g_kink_hits = 0; }

template <typename T>
Var<T> make_op(const std::string& op, Tensor<T> value, const std::vector<Var<T>>& inputs,
               std::function<void(const Tensor<T>&)> backward) {
  auto node = std::make_shared<detail::Node<T>>();
  node->value = std::move(value);
  node->op = op;
  for (const auto& in : inputs) {
    if (in.defined() && in.requires_grad()) node->parents.push_back(in.node());
  }
  node->requires_grad = !node->parents.empty();
  if (node->requires_grad) {
    detail::Node<T>* raw = node.get();
    node->backward_fn = [raw, fn = std::move(backward)]() { fn(raw->grad); };
  }
  return Var<T>::wrap(std::move(node));
}

template <typename T>
void backward(const Var<T>& loss) {
  if (!loss.defined()) throw ContractError("backward: empty Var");
  auto root = loss.node();
  if (root->value.numel() != 1) {
    throw ContractError("backward: loss must be scalar, got shape " +
                        shape_str(root->value.shape()));
  }
  if (root->consumed) {
    throw ContractError("backward: tape already consumed; rerun the forward pass");
  }
  if (!root->requires_grad) {
    throw ContractError("backward: loss does not depend on any differentiable input");
  }

  std::vector<detail::Node<T>*> order;
  std::unordered_set<detail::Node<T>*> seen;
  struct Frame {
    detail::Node<T>* n;
    size_t next;
  };
  std::vector<Frame> stack;
  stack.push_back({root.get(), 0});
  seen.insert(root.get());
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.n->consumed) {
      throw ContractError("backward: tape already consumed at op '" + f.n->op + "'");
    }
    if (f.next < f.n->parents.size()) {
      detail::Node<T>* p = f.n->parents[f.next++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }

  root->grad = ones_like(root->value);
  root->has_grad = true;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::Node<T>* n = *it;
    if (n->backward_fn && n->has_grad) n->backward_fn();
    n->consumed = true;
    n->backward_fn = nullptr;
  }
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const ConvSpec& spec) {
  Tensor<T> out = conv2d(input.value(), weight.value(), static_cast<const Tensor<T>*>(nullptr),
                         spec);
  Var<T> x = input, w = weight;
  return make_op<T>("conv2d", std::move(out), {input, weight}, [x, w, spec](const Tensor<T>& dy) {
    Tensor<T>* gx = x.requires_grad() ? &x.ensure_grad() : nullptr;
    Tensor<T>* gw = w.requires_grad() ? &w.ensure_grad() : nullptr;
    conv2d_backward(x.value(), w.value(), spec, dy, gx, gw, static_cast<Tensor<T>*>(nullptr));
  });
}

template <typename T>
Var<T> conv2d(const Var<T>& input, const Var<T>& weight, const Var<T>& bias,
              const ConvSpec& spec) {
  const Tensor<T>& b = bias.value();
  Tensor<T> out = conv2d(input.value(), weight.value(), &b, spec);
  Var<T> x = input, w = weight, bv = bias;
  return make_op<T>("conv2d", std::move(out), {input, weight, bias},
                    [x, w, bv, spec](const Tensor<T>& dy) {
                      Tensor<T>* gx =
                          x.requires_grad() ? &x.ensure_grad() : nullptr;
                      Tensor<T>* gw =
                          w.requires_grad() ? &w.ensure_grad() : nullptr;
                      Tensor<T>* gb =
                          bv.requires_grad() ? &bv.ensure_grad() : nullptr;
                      conv2d_backward(x.value(), w.value(), spec, dy, gx, gw, gb);
                    });
}

template <typename T>
Var<T> batchnorm2d_train(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta, T eps,
                         Tensor<T>* batch_mean, Tensor<T>* batch_var) {
  Tensor<T> mean, var;
  Tensor<T> out = batchnorm2d_train(input.value(), gamma.value(), beta.value(), eps, &mean, &var);
  if (batch_mean) *batch_mean = mean;
  if (batch_var) *batch_var = var;
  Var<T> x = input, g = gamma, b = beta;
  return make_op<T>("batchnorm2d_train", std::move(out), {input, gamma, beta},
                    [x, g, b, mean, var, eps](const Tensor<T>& dy) {
                      Tensor<T>* gx =
                          x.requires_grad() ? &x.ensure_grad() : nullptr;
                      Tensor<T>* gg =
                          g.requires_grad() ? &g.ensure_grad() : nullptr;
                      Tensor<T>* gb =
                          b.requires_grad() ? &b.ensure_grad() : nullptr;
                      batchnorm2d_backward(x.value(), g.value(), mean, var, eps, dy, gx, gg, gb);
                    });
}

template <typename T>
Var<T> batchnorm2d_eval(const Var<T>& input, const Var<T>& gamma, const Var<T>& beta,
                        const RunningStats<T>& stats, T eps) {
  Tensor<T> out = batchnorm2d_eval(input.value(), gamma.value(), beta.value(), stats, eps);
  Var<T> x = input, g = gamma, b = beta;
  Tensor<T> mean = stats.mean.clone(), var = stats.var.clone();
  return make_op<T>(
      "batchnorm2d_eval", std::move(out), {input, gamma, beta},
      [x, g, b, mean, var, eps](const Tensor<T>& dy) {
        const Tensor<T>& in = x.value();
        const int64_t n_batch = in.dim(0), channels = in.dim(1);
        const int64_t hw = in.dim(2) * in.dim(3);
        Tensor<T>* gx = x.requires_grad() ? &x.ensure_grad() : nullptr;
        Tensor<T>* gg = g.requires_grad() ? &g.ensure_grad() : nullptr;
        Tensor<T>* gb = b.requires_grad() ? &b.ensure_grad() : nullptr;
        for (int64_t c = 0; c < channels; ++c) {
          const T inv = T(1) / std::sqrt(var[c] + eps);
          const T scale = g.value()[c] * inv;
          T sum_dy = 0, sum_dy_xhat = 0;
          for (int64_t n = 0; n < n_batch; ++n) {
            const int64_t base = (n * channels + c) * hw;
            for (int64_t i = 0; i < hw; ++i) {
              const T d = dy[base + i];
              sum_dy += d;
              sum_dy_xhat += d * (in[base + i] - mean[c]) * inv;
              if (gx) (*gx)[base + i] += d * scale;
            }
          }
          if (gg) (*gg)[c] += sum_dy_xhat;
          if (gb) (*gb)[c] += sum_dy;
        }
      });
}

template <typename T>
Var<T> relu(const Var<T>& x) {
  const Tensor<T>& in = x.value();
  const T margin = static_cast<T>(kKinkMargin);
  for (int64_t i = 0; i < in.numel(); ++i)
    if (in[i] > -margin && in[i] < margin) ++g_kink_hits;
  Tensor<T> out = relu(in);
  Var<T> xv = x;
  return make_op<T>("relu", std::move(out), {x}, [xv](const Tensor<T>& dy) {
    const Tensor<T>& in = xv.value();
    Tensor<T>& gx = xv.ensure_grad();
    for (int64_t i = 0; i < in.numel(); ++i)
      if (in[i] > T(0)) gx[i] += dy[i];
  });
}

template <typename T>
Var<T> sigmoid(const Var<T>& x) {
  Tensor<T> out = sigmoid(x.value());
  Var<T> xv = x;
  Tensor<T> saved = out;
  return make_op<T>("sigmoid", std::move(out), {x}, [xv, saved](const Tensor<T>& dy) {
    Tensor<T>& gx = xv.ensure_grad();
    for (int64_t i = 0; i < saved.numel(); ++i)
      gx[i] += dy[i] * saved[i] * (T(1) - saved[i]);
  });
}

template <typename T>
Var<T> global_avg_pool(const Var<T>& x) {
  Tensor<T> out = global_avg_pool(x.value());
  Var<T> xv = x;
  const int64_t hw = x.value().dim(2) * x.value().dim(3);
  return make_op<T>("global_avg_pool", std::move(out), {x}, [xv, hw](const Tensor<T>& dy) {
    Tensor<T>& gx = xv.ensure_grad();
    const T inv = T(1) / static_cast<T>(hw);
    for (int64_t nc = 0; nc < dy.numel(); ++nc) {
      const T g = dy[nc] * inv;
      for (int64_t i = 0; i < hw; ++i) gx[nc * hw + i] += g;
    }
  });
}

template <typename T>
Var<T> maxpool2d(const Var<T>& x, int64_t kernel, int64_t stride, int64_t padding) {
  std::vector<int64_t> argmax;
  Tensor<T> out = maxpool2d(x.value(), kernel, stride, padding, &argmax);
  // A second window element within the margin of the max makes the op locally
  // non-smooth; report it like a relu kink.
  {
    const Tensor<T>& in = x.value();
    const T margin = static_cast<T>(kKinkMargin);
    const int64_t in_h = in.dim(2), in_w = in.dim(3);
    const int64_t channels = in.dim(1);
    int64_t oi = 0;
    for (int64_t n = 0; n < in.dim(0); ++n)
      for (int64_t c = 0; c < channels; ++c)
        for (int64_t oh = 0; oh < out.dim(2); ++oh)
          for (int64_t ow = 0; ow < out.dim(3); ++ow, ++oi) {
            const T best = out[oi];
            int64_t close = 0;
            for (int64_t y = 0; y < kernel; ++y) {
              const int64_t ih = oh * stride - padding + y;
              if (ih < 0 || ih >= in_h) continue;
              for (int64_t xk = 0; xk < kernel; ++xk) {
                const int64_t iw = ow * stride - padding + xk;
                if (iw < 0 || iw >= in_w) continue;
                if (best - in[in.offset4(n, c, ih, iw)] < margin) ++close;
              }
            }
            if (close > 1) ++g_kink_hits;
          }
  }
  Var<T> xv = x;
  return make_op<T>("maxpool2d", std::move(out), {x},
                    [xv, argmax = std::move(argmax)](const Tensor<T>& dy) {
                      Tensor<T>& gx = xv.ensure_grad();
                      for (size_t oi = 0; oi < argmax.size(); ++oi)
                        gx[argmax[oi]] += dy[static_cast<int64_t>(oi)];
                    });
}

template <typename T>
Var<T> matmul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = matmul(a.value(), b.value());
  Var<T> av = a, bv = b;
  return make_op<T>("matmul", std::move(out), {a, b}, [av, bv](const Tensor<T>& dy) {
    if (av.requires_grad()) av.accumulate_grad(matmul_nt(dy, bv.value()));
    if (bv.requires_grad()) bv.accumulate_grad(matmul_tn(av.value(), dy));
  });
}

template <typename T>
Var<T> linear(const Var<T>& x, const Var<T>& weight, const Var<T>& bias) {
  Tensor<T> out = add_bias_rows(matmul_nt(x.value(), weight.value()), bias.value());
  Var<T> xv = x, wv = weight, bv = bias;
  return make_op<T>("linear", std::move(out), {x, weight, bias},
                    [xv, wv, bv](const Tensor<T>& dy) {
                      if (xv.requires_grad())
                        xv.accumulate_grad(matmul(dy, wv.value()));
                      if (wv.requires_grad())
                        wv.accumulate_grad(matmul_tn(dy, xv.value()));
                      if (bv.requires_grad()) {
                        Tensor<T>& gb = bv.ensure_grad();
                        const int64_t cols = dy.dim(1);
                        for (int64_t r = 0; r < dy.dim(0); ++r)
                          for (int64_t c = 0; c < cols; ++c) gb[c] += dy[r * cols + c];
                      }
                    });
}

template <typename T>
Var<T> add(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = add(a.value(), b.value());
  Var<T> av = a, bv = b;
  return make_op<T>("add", std::move(out), {a, b}, [av, bv](const Tensor<T>& dy) {
    if (av.requires_grad()) av.accumulate_grad(dy);
    if (bv.requires_grad()) bv.accumulate_grad(dy);
  });
}

template <typename T>
Var<T> mul(const Var<T>& a, const Var<T>& b) {
  Tensor<T> out = mul(a.value(), b.value());
  Var<T> av = a, bv = b;
  return make_op<T>("mul", std::move(out), {a, b}, [av, bv](const Tensor<T>& dy) {
    if (av.requires_grad()) av.accumulate_grad(mul(dy, bv.value()));
    if (bv.requires_grad()) bv.accumulate_grad(mul(dy, av.value()));
  });
}

template <typename T>
Var<T> concat_channels(const std::vector<Var<T>>& parts) {
  std::vector<Tensor<T>> values;
  values.reserve(parts.size());
  for (const auto& p : parts) values.push_back(p.value());
  Tensor<T> out = concat_channels(values);
  std::vector<Var<T>> saved = parts;
  return make_op<T>("concat_channels", std::move(out), parts, [saved](const Tensor<T>& dy) {
    int64_t off = 0;
    for (const auto& p : saved) {
      const int64_t pc = p.value().dim(1);
      if (p.requires_grad())
        p.accumulate_grad(slice_channels(dy, off, off + pc));
      off += pc;
    }
  });
}

template <typename T>
Var<T> slice_channels(const Var<T>& x, int64_t begin, int64_t end) {
  Tensor<T> out = slice_channels(x.value(), begin, end);
  Var<T> xv = x;
  return make_op<T>("slice_channels", std::move(out), {x}, [xv, begin, end](const Tensor<T>& dy) {
    Tensor<T>& gx = xv.ensure_grad();
    const Shape& s = xv.value().shape();
    const int64_t channels = s[1];
    const int64_t inner = (s.size() == 4) ? s[2] * s[3] : 1;
    const int64_t span = end - begin;
    for (int64_t n = 0; n < s[0]; ++n)
      for (int64_t c = 0; c < span; ++c)
        for (int64_t i = 0; i < inner; ++i)
          gx[(n * channels + begin + c) * inner + i] += dy[(n * span + c) * inner + i];
  });
}

template <typename T>
Var<T> channel_scale(const Var<T>& input, const Var<T>& gates) {
  Tensor<T> out = channel_scale(input.value(), gates.value());
  Var<T> xv = input, gv = gates;
  return make_op<T>("channel_scale", std::move(out), {input, gates},
                    [xv, gv](const Tensor<T>& dy) {
                      const Tensor<T>& in = xv.value();
                      const int64_t hw = in.dim(2) * in.dim(3);
                      if (xv.requires_grad())
                        xv.accumulate_grad(channel_scale(dy, gv.value()));
                      if (gv.requires_grad()) {
                        Tensor<T>& gg = gv.ensure_grad();
                        for (int64_t nc = 0; nc < gg.numel(); ++nc) {
                          T acc = 0;
                          for (int64_t i = 0; i < hw; ++i)
                            acc += dy[nc * hw + i] * in[nc * hw + i];
                          gg[nc] += acc;
                        }
                      }
                    });
}

template <typename T>
Var<T> sum_all(const Var<T>& x) {
  Tensor<T> out = sum_all(x.value());
  Var<T> xv = x;
  return make_op<T>("sum_all", std::move(out), {x}, [xv](const Tensor<T>& dy) {
    Tensor<T>& gx = xv.ensure_grad();
    const T g = dy[0];
    for (int64_t i = 0; i < gx.numel(); ++i) gx[i] += g;
  });
}

template <typename T>
Var<T> scale(const Var<T>& x, T factor) {
  Tensor<T> out(x.value().shape());
  for (int64_t i = 0; i < out.numel(); ++i) out[i] = x.value()[i] * factor;
  Var<T> xv = x;
  return make_op<T>("scale", std::move(out), {x}, [xv, factor](const Tensor<T>& dy) {
    Tensor<T>& gx = xv.ensure_grad();
    for (int64_t i = 0; i < dy.numel(); ++i) gx[i] += dy[i] * factor;
  });
}

template <typename T>
Var<T> cross_entropy(const Var<T>& logits, const std::vector<int64_t>& labels) {
  const Tensor<T>& z = logits.value();
  if (z.rank() != 2) {
    throw DimensionError("cross_entropy: logits rank " + std::to_string(z.rank()) + " != 2");
  }
  const int64_t rows = z.dim(0), cols = z.dim(1);
  if (static_cast<int64_t>(labels.size()) != rows) {
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " +
                         std::to_string(rows) + " logit rows");
  }
  for (int64_t r = 0; r < rows; ++r) {
    if (labels[r] < 0 || labels[r] >= cols) {
      throw DataError("cross_entropy: label " + std::to_string(labels[r]) + " at row " +
                      std::to_string(r) + " outside [0," + std::to_string(cols) + ")");
    }
  }
  Tensor<T> probs = softmax_rows(z);
  T loss = 0;
  for (int64_t r = 0; r < rows; ++r) {
    const T* p = z.data() + r * cols;
    T mx = p[0];
    for (int64_t c = 1; c < cols; ++c) mx = std::max(mx, p[c]);
    T lse = 0;
    for (int64_t c = 0; c < cols; ++c) lse += std::exp(p[c] - mx);
    loss += std::log(lse) + mx - p[labels[r]];
  }
  loss /= static_cast<T>(rows);
  Var<T> zv = logits;
  return make_op<T>("cross_entropy", Tensor<T>::scalar(loss), {logits},
                    [zv, probs, labels](const Tensor<T>& dy) {
                      Tensor<T>& gz = zv.ensure_grad();
                      const int64_t rows = probs.dim(0), cols = probs.dim(1);
                      const T g = dy[0] / static_cast<T>(rows);
                      for (int64_t r = 0; r < rows; ++r)
                        for (int64_t c = 0; c < cols; ++c) {
                          T v = probs[r * cols + c];
                          if (c == labels[r]) v -= T(1);
                          gz[r * cols + c] += g * v;
                        }
                    });
}

#define SAENET_INSTANTIATE_AUTOGRAD(T)                                                            \
  template Var<T> make_op(const std::string&, Tensor<T>, const std::vector<Var<T>>&,              \
                          std::function<void(const Tensor<T>&)>);                                 \
  template void backward(const Var<T>&);                                                          \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const ConvSpec&);                          \
  template Var<T> conv2d(const Var<T>&, const Var<T>&, const Var<T>&, const ConvSpec&);           \
  template Var<T> batchnorm2d_train(const Var<T>&, const Var<T>&, const Var<T>&, T, Tensor<T>*,   \
                                    Tensor<T>*);                                                  \
  template Var<T> batchnorm2d_eval(const Var<T>&, const Var<T>&, const Var<T>&,                   \
                                   const RunningStats<T>&, T);                                    \
  template Var<T> relu(const Var<T>&);                                                            \
  template Var<T> sigmoid(const Var<T>&);                                                         \
  template Var<T> global_avg_pool(const Var<T>&);                                                 \
  template Var<T> maxpool2d(const Var<T>&, int64_t, int64_t, int64_t);                            \
  template Var<T> matmul(const Var<T>&, const Var<T>&);                                           \
  template Var<T> linear(const Var<T>&, const Var<T>&, const Var<T>&);                            \
  template Var<T> add(const Var<T>&, const Var<T>&);                                              \
  template Var<T> mul(const Var<T>&, const Var<T>&);                                              \
  template Var<T> concat_channels(const std::vector<Var<T>>&);                                    \
  template Var<T> slice_channels(const Var<T>&, int64_t, int64_t);                                \
  template Var<T> channel_scale(const Var<T>&, const Var<T>&);                                    \
  template Var<T> sum_all(const Var<T>&);                                                         \
  template Var<T> scale(const Var<T>&, T);                                                        \
  template Var<T> cross_entropy(const Var<T>&, const std::vector<int64_t>&);

SAENET_INSTANTIATE_AUTOGRAD(float)
SAENET_INSTANTIATE_AUTOGRAD(double)

#undef SAENET_INSTANTIATE_AUTOGRAD

} // namespace saenet
