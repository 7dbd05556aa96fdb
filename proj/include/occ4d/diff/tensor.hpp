#pragma once

#include <cstddef>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "occ4d/error.hpp"

namespace occ4d::diff {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_size(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) {
    os << (i ? "," : "") << s[i];
  }
  os << ']';
  return os.str();
}

/// Dense row-major array of doubles.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0)
      : shape_(std::move(shape)), data_(shape_size(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != shape_size(shape_)) {
      fail(ErrorKind::shape, "Tensor: data length " + std::to_string(data_.size()) +
                                 " does not match shape " + shape_str(shape_));
    }
  }

  static Tensor scalar(double v) { return Tensor({1, 1}, v); }
  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::size_t rows() const {
    require_matrix();
    return shape_[0];
  }
  std::size_t cols() const {
    require_matrix();
    return shape_[1];
  }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * shape_[1] + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * shape_[1] + c]; }

  double item() const {
    if (data_.size() != 1) {
      fail(ErrorKind::shape, "Tensor::item on tensor of shape " + shape_str(shape_));
    }
    return data_[0];
  }

  std::span<double> span() { return data_; }
  std::span<const double> span() const { return data_; }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::vector<double>& values() { return data_; }
  const std::vector<double>& values() const { return data_; }

  Tensor reshaped(Shape s) const { return Tensor(std::move(s), data_); }

  Tensor& operator+=(const Tensor& o) {
    require_same(o, "+=");
    for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += o.data_[i];
    return *this;
  }

  void require_same(const Tensor& o, const char* what) const {
    if (shape_ != o.shape_) {
      fail(ErrorKind::shape, std::string(what) + ": shape mismatch " + shape_str(shape_) +
                                 " vs " + shape_str(o.shape_));
    }
  }

  bool operator==(const Tensor& o) const { return shape_ == o.shape_ && data_ == o.data_; }

 private:
  void require_matrix() const {
    if (shape_.size() != 2) {
      fail(ErrorKind::shape, "expected a matrix, got shape " + shape_str(shape_));
    }
  }

  Shape shape_;
  std::vector<double> data_;
};

}  // namespace occ4d::diff
