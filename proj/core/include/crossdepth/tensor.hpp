#pragma once

#include <cstdint>
#include <initializer_list>
#include <memory>
#include <string>
#include <vector>

namespace crossdepth {

using Shape = std::vector<std::int64_t>;

// Dense row-major double tensor. Copies are shallow (shared storage);
// clone() deep-copies. Every op in ops.hpp allocates a fresh output, so
// sharing is safe as long as callers only mutate tensors they own
// exclusively (parameters, gradient buffers).
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }
  static Tensor full(Shape shape, double value);
  static Tensor ones(Shape shape) { return full(std::move(shape), 1.0); }
  static Tensor scalar(double value) { return full({1}, value); }
  static Tensor from(std::initializer_list<double> values, Shape shape);

  const Shape& shape() const { return shape_; }
  std::int64_t rank() const { return static_cast<std::int64_t>(shape_.size()); }
  std::int64_t dim(std::int64_t i) const { return shape_[static_cast<std::size_t>(i)]; }
  std::int64_t numel() const { return numel_; }
  bool defined() const { return data_ != nullptr; }

  double* data() { return data_->data(); }
  const double* data() const { return data_->data(); }

  double& operator[](std::int64_t i) { return (*data_)[static_cast<std::size_t>(i)]; }
  double operator[](std::int64_t i) const { return (*data_)[static_cast<std::size_t>(i)]; }

  // (c, y, x) indexing into a rank-3 tensor, (n, c, y, x) into rank-4.
  double& at3(std::int64_t c, std::int64_t y, std::int64_t x) {
    return (*this)[(c * shape_[1] + y) * shape_[2] + x];
  }
  double at3(std::int64_t c, std::int64_t y, std::int64_t x) const {
    return (*this)[(c * shape_[1] + y) * shape_[2] + x];
  }
  double& at4(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) {
    return (*this)[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }
  double at4(std::int64_t n, std::int64_t c, std::int64_t y, std::int64_t x) const {
    return (*this)[((n * shape_[1] + c) * shape_[2] + y) * shape_[3] + x];
  }

  Tensor clone() const;
  // O(1): shares storage under a new shape with the same element count.
  Tensor reshaped(Shape shape) const;

  void fill(double value);
  void zero() { fill(0.0); }

  bool all_finite() const;
  double min() const;
  double max() const;
  double sum() const;

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool equals(const Tensor& other) const;  // bit-wise

  std::string shape_str() const;

 private:
  Shape shape_;
  std::int64_t numel_ = 0;
  std::shared_ptr<std::vector<double>> data_;
};

std::int64_t shape_numel(const Shape& shape);
std::string shape_to_string(const Shape& shape);

// Stacks equal-shaped tensors along a new leading dim.
Tensor stack0(const std::vector<Tensor>& parts);

}  // namespace crossdepth
