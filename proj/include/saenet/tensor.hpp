#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <memory>
#include <numeric>
#include <string>
#include <vector>

#include "saenet/error.hpp"

namespace saenet {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::string s = "(";
  for (size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ",";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

// Dense n-dimensional array, contiguous row-major. Activations use NCHW,
// conv weights OIHW. Storage is shared between copies and reshaped views;
// the shape of a constructed tensor never changes. Treat tensors as
// immutable once written: kernels allocate fresh outputs, and only the
// optimizer updates values in place (it is the sole owner of its buffers).
template <typename T>
class Tensor {
  static_assert(std::is_floating_point_v<T>, "Tensor element type must be a float type");

public:
  Tensor() : shape_{0}, data_(std::make_shared<std::vector<T>>()) {}

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    check_shape(shape_);
    data_ = std::make_shared<std::vector<T>>(static_cast<size_t>(shape_numel(shape_)), T(0));
  }

  Tensor(Shape shape, std::vector<T> values) : shape_(std::move(shape)) {
    check_shape(shape_);
    if (static_cast<int64_t>(values.size()) != shape_numel(shape_)) {
      throw DimensionError("tensor data length " + std::to_string(values.size()) +
                           " does not match shape " + shape_str(shape_));
    }
    data_ = std::make_shared<std::vector<T>>(std::move(values));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, T value) {
    Tensor t(std::move(shape));
    std::fill(t.data_->begin(), t.data_->end(), value);
    return t;
  }

  static Tensor ones(Shape shape) { return full(std::move(shape), T(1)); }

  static Tensor scalar(T value) { return Tensor({1}, {value}); }

  const Shape& shape() const { return shape_; }
  int rank() const { return static_cast<int>(shape_.size()); }
  int64_t numel() const { return static_cast<int64_t>(data_->size()); }

  int64_t dim(int axis) const {
    if (axis < 0) axis += rank();
    if (axis < 0 || axis >= rank()) {
      throw DimensionError("axis " + std::to_string(axis) + " out of range for rank " +
                           std::to_string(rank()));
    }
    return shape_[static_cast<size_t>(axis)];
  }

  const T* data() const { return data_->data(); }
  T* data() { return data_->data(); }

  T operator[](int64_t i) const { return (*data_)[static_cast<size_t>(i)]; }
  T& operator[](int64_t i) { return (*data_)[static_cast<size_t>(i)]; }

  // Linear offset helpers for the two layouts the kernels use.
  int64_t offset4(int64_t n, int64_t c, int64_t h, int64_t w) const {
    return ((n * shape_[1] + c) * shape_[2] + h) * shape_[3] + w;
  }
  int64_t offset2(int64_t r, int64_t c) const { return r * shape_[1] + c; }

  T at(std::initializer_list<int64_t> idx) const {
    return (*data_)[static_cast<size_t>(index_of(idx))];
  }
  T& at(std::initializer_list<int64_t> idx) {
    return (*data_)[static_cast<size_t>(index_of(idx))];
  }

  // New view over the same storage. Element count must match.
  Tensor reshape(Shape new_shape) const {
    check_shape(new_shape);
    if (shape_numel(new_shape) != numel()) {
      throw DimensionError("reshape " + shape_str(shape_) + " -> " + shape_str(new_shape) +
                           " changes element count");
    }
    Tensor view;
    view.shape_ = std::move(new_shape);
    view.data_ = data_;
    return view;
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  bool all_finite() const {
    for (T v : *data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  template <typename U>
  Tensor<U> cast() const {
    std::vector<U> out(data_->size());
    for (size_t i = 0; i < data_->size(); ++i) out[i] = static_cast<U>((*data_)[i]);
    return Tensor<U>(shape_, std::move(out));
  }

  Tensor clone() const { return Tensor(shape_, std::vector<T>(*data_)); }

private:
  static void check_shape(const Shape& shape) {
    for (int64_t d : shape) {
      if (d <= 0) throw DimensionError("non-positive dimension in shape " + shape_str(shape));
    }
  }

  int64_t index_of(std::initializer_list<int64_t> idx) const {
    if (static_cast<int>(idx.size()) != rank()) {
      throw DimensionError("index rank " + std::to_string(idx.size()) +
                           " does not match tensor rank " + std::to_string(rank()));
    }
    int64_t off = 0;
    int axis = 0;
    for (int64_t i : idx) {
      off = off * shape_[static_cast<size_t>(axis)] + i;
      ++axis;
    }
    return off;
  }

  Shape shape_;
  std::shared_ptr<std::vector<T>> data_;
};

} // namespace saenet
