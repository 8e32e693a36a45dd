#pragma once

#include <cstddef>
#include <span>
#include <vector>

namespace duscloud::nn {

// Dense row-major array of doubles with an optional same-length gradient
// accumulator. Most of the pipeline only uses rank-2 tensors; rows() is the
// leading dimension and cols() the product of the rest.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);
  Tensor(std::vector<std::size_t> shape, std::vector<double> data);

  static Tensor matrix(std::size_t rows, std::size_t cols, double fill = 0.0) {
    return Tensor({rows, cols}, fill);
  }

  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t size() const { return data_.size(); }
  std::size_t rows() const { return shape_.empty() ? 1 : shape_.front(); }
  std::size_t cols() const { return rows() == 0 ? 0 : size() / rows(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* ptr() { return data_.data(); }
  const double* ptr() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }

  bool has_grad() const { return !grad_.empty() || data_.empty(); }
  void enable_grad() { grad_.assign(data_.size(), 0.0); }
  void zero_grad() { grad_.assign(data_.size(), 0.0); }
  void drop_grad() { grad_.clear(); }
  std::span<double> grad() { return grad_; }
  std::span<const double> grad() const { return grad_; }

  // Same data under a new shape; throws ShapeMismatch if the element count differs.
  Tensor reshaped(std::vector<std::size_t> shape) const;

  bool all_finite() const;

 private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

std::size_t element_count(const std::vector<std::size_t>& shape);

}  // namespace duscloud::nn
