#include "duscloud/nn/tensor.hpp"

#include <cmath>
#include <functional>
#include <numeric>

#include "duscloud/error.hpp"

namespace duscloud::nn {

std::size_t element_count(const std::vector<std::size_t>& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(element_count(shape_), fill) {}

Tensor::Tensor(std::vector<std::size_t> shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  if (data_.size() != element_count(shape_)) {
    throw Error(ErrorKind::kShapeMismatch, "tensor data length " + std::to_string(data_.size()) +
                                               " does not match shape volume " +
                                               std::to_string(element_count(shape_)));
  }
}

Tensor Tensor::reshaped(std::vector<std::size_t> shape) const {
  if (element_count(shape) != data_.size()) throw Error(ErrorKind::kShapeMismatch, "reshape changes element count");
  return Tensor(std::move(shape), data_);
}

bool Tensor::all_finite() const {
  for (double v : data_) {
    if (!std::isfinite(v)) return false;
  }
  return true;
}

}  // namespace duscloud::nn
