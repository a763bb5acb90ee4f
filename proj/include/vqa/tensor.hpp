#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "vqa/errors.hpp"

namespace vqa {

using Shape = std::vector<int64_t>;

inline int64_t shape_numel(const Shape& shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  return n;
}

inline std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < shape.size(); ++i) os << (i ? "," : "") << shape[i];
  os << "]";
  return os.str();
}

// Dense row-major double tensor. The single numeric carrier for frames,
// feature maps, feature vectors and parameters.
class Tensor {
 public:
  Tensor() = default;

  explicit Tensor(Shape shape) : shape_(std::move(shape)) {
    validate_shape();
    data_.assign(static_cast<std::size_t>(shape_numel(shape_)), 0.0);
  }

  Tensor(Shape shape, std::vector<double> data)
      : shape_(std::move(shape)), data_(std::move(data)) {
    validate_shape();
    if (shape_numel(shape_) != static_cast<int64_t>(data_.size()))
      throw DataError("tensor data length " + std::to_string(data_.size()) +
                      " does not match shape " + shape_str(shape_));
  }

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape)); }

  static Tensor full(Shape shape, double value) {
    Tensor t(std::move(shape));
    for (double& v : t.data_) v = value;
    return t;
  }

  static Tensor scalar(double value) { return Tensor({1}, {value}); }

  static Tensor vector(std::vector<double> values) {
    auto n = static_cast<int64_t>(values.size());
    return Tensor({n}, std::move(values));
  }

  const Shape& shape() const { return shape_; }
  int64_t dim(std::size_t i) const { return shape_.at(i); }
  std::size_t rank() const { return shape_.size(); }
  int64_t numel() const { return static_cast<int64_t>(data_.size()); }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  double& operator[](int64_t i) { return data_[static_cast<std::size_t>(i)]; }
  double operator[](int64_t i) const { return data_[static_cast<std::size_t>(i)]; }

  // Row-major accessors for the common ranks.
  double& at3(int64_t c, int64_t y, int64_t x) {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double at3(int64_t c, int64_t y, int64_t x) const {
    return data_[static_cast<std::size_t>((c * shape_[1] + y) * shape_[2] + x)];
  }
  double& at2(int64_t r, int64_t c) {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }
  double at2(int64_t r, int64_t c) const {
    return data_[static_cast<std::size_t>(r * shape_[1] + c)];
  }

  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

  double item() const {
    if (numel() != 1)
      throw StateError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }

  bool all_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  // Index of the first non-finite entry, or -1.
  int64_t first_nonfinite() const {
    for (std::size_t i = 0; i < data_.size(); ++i)
      if (!std::isfinite(data_[i])) return static_cast<int64_t>(i);
    return -1;
  }

 private:
  void validate_shape() const {
    for (int64_t d : shape_)
      if (d <= 0)
        throw DataError("non-positive dimension in shape " + shape_str(shape_));
  }

  Shape shape_;
  std::vector<double> data_;
};

inline bool bit_equal(const Tensor& a, const Tensor& b) {
  if (!a.same_shape(b)) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i] || std::signbit(a[i]) != std::signbit(b[i])) return false;
  return true;
}

}  // namespace vqa
