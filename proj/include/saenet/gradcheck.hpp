#pragma once

#include <functional>
#include <string>
#include <vector>

#include "saenet/autograd.hpp"
#include "saenet/rng.hpp"
#include "saenet/tensor.hpp"

namespace saenet {

template <typename T>
struct ForwardResult {
  Var<T> loss;
  // Leaf Vars of this tape, aligned with CheckTarget::leaf_names.
  std::vector<Var<T>> leaves;
};

// A differentiable module under test. `forward` builds a fresh tape from the
// current contents of `leaf_values`; the checker perturbs those tensors in
// place for finite differences. `resample` redraws them when the forward pass
// lands too close to a relu kink or pooling tie.
template <typename T>
struct CheckTarget {
  std::string name;
  std::vector<std::string> leaf_names;
  std::vector<Tensor<T>*> leaf_values;
  std::function<ForwardResult<T>()> forward;
  std::function<void(Rng&)> resample;
};

template <typename T>
struct GradCheckEntry {
  std::string name;
  T max_rel_err = 0;
  bool finite = true;
};

template <typename T>
struct GradCheckReport {
  std::vector<GradCheckEntry<T>> entries;
  T max_rel_err = 0;
  T tolerance = 0;
  bool pass = false;
  // Empty on pass; otherwise names the offending parameter or condition.
  std::string failure;
  int resamples = 0;
};

inline constexpr double kFdStep = 1e-5;
// Relative error denominator floor, so a dead-zero finite difference still
// compares against the analytic value instead of dividing by zero.
inline constexpr double kFdFloor = 1e-6;
inline constexpr int kMaxResamples = 20;

// Central-difference check of every element of every leaf.
template <typename T>
GradCheckReport<T> grad_check(CheckTarget<T>& target, T tolerance, Rng& rng, T h = T(kFdStep));

template <typename T>
std::string format_report(const GradCheckReport<T>& report, const std::string& target_name);

} // namespace saenet
