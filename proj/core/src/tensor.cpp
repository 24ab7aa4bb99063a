#include "crossdepth/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>

namespace crossdepth {

std::int64_t shape_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d < 0) throw std::invalid_argument("negative dimension in shape " + shape_to_string(shape));
    n *= d;
  }
  return n;
}

std::string shape_to_string(const Shape& shape) {
  std::ostringstream os;
  os << "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ",";
    os << shape[i];
  }
  os << ")";
  return os.str();
}

Tensor::Tensor(Shape shape)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)),
      data_(std::make_shared<std::vector<double>>(static_cast<std::size_t>(numel_), 0.0)) {}

Tensor::Tensor(Shape shape, std::vector<double> values)
    : shape_(std::move(shape)), numel_(shape_numel(shape_)),
      data_(std::make_shared<std::vector<double>>(std::move(values))) {
  if (static_cast<std::int64_t>(data_->size()) != numel_)
    throw std::invalid_argument("value count does not match shape " + shape_to_string(shape_));
}

Tensor Tensor::full(Shape shape, double value) {
  Tensor t(std::move(shape));
  t.fill(value);
  return t;
}

Tensor Tensor::from(std::initializer_list<double> values, Shape shape) {
  return Tensor(std::move(shape), std::vector<double>(values));
}

Tensor Tensor::clone() const {
  Tensor t;
  t.shape_ = shape_;
  t.numel_ = numel_;
  t.data_ = std::make_shared<std::vector<double>>(*data_);
  return t;
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != numel_)
    throw std::invalid_argument("reshape " + shape_to_string(shape_) + " -> " +
                                shape_to_string(shape) + " changes element count");
  Tensor t;
  t.shape_ = std::move(shape);
  t.numel_ = numel_;
  t.data_ = data_;
  return t;
}

void Tensor::fill(double value) { std::fill(data_->begin(), data_->end(), value); }

bool Tensor::all_finite() const {
  const double* p = data();
  for (std::int64_t i = 0; i < numel_; ++i)
    if (!std::isfinite(p[i])) return false;
  return true;
}

double Tensor::min() const {
  double m = std::numeric_limits<double>::infinity();
  const double* p = data();
  for (std::int64_t i = 0; i < numel_; ++i) m = std::min(m, p[i]);
  return m;
}

double Tensor::max() const {
  double m = -std::numeric_limits<double>::infinity();
  const double* p = data();
  for (std::int64_t i = 0; i < numel_; ++i) m = std::max(m, p[i]);
  return m;
}

double Tensor::sum() const {
  double s = 0.0;
  const double* p = data();
  for (std::int64_t i = 0; i < numel_; ++i) s += p[i];
  return s;
}

bool Tensor::equals(const Tensor& other) const {
  if (shape_ != other.shape_) return false;
  return std::memcmp(data(), other.data(), static_cast<std::size_t>(numel_) * sizeof(double)) == 0;
}

std::string Tensor::shape_str() const { return shape_to_string(shape_); }

Tensor stack0(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw std::invalid_argument("stack0: empty input");
  Shape out_shape;
  out_shape.push_back(static_cast<std::int64_t>(parts.size()));
  for (auto d : parts[0].shape()) out_shape.push_back(d);
  Tensor out(out_shape);
  const std::int64_t stride = parts[0].numel();
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (!parts[i].same_shape(parts[0]))
      throw std::invalid_argument("stack0: mismatched part shapes");
    std::memcpy(out.data() + static_cast<std::int64_t>(i) * stride, parts[i].data(),
                static_cast<std::size_t>(stride) * sizeof(double));
  }
  return out;
}

}  // namespace crossdepth
