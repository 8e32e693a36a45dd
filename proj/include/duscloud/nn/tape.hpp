#pragma once

#include <cstddef>
#include <functional>
#include <limits>
#include <span>
#include <vector>

#include "duscloud/nn/tensor.hpp"

namespace duscloud::nn {

class Tape;

// Handle to a value recorded on a Tape. Cheap to copy; only valid while the
// tape that produced it is alive.
class Var {
 public:
  Var() = default;

  const Tensor& value() const;
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  Tape& tape() const { return *tape_; }
  std::size_t id() const { return id_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  friend class Tape;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

// Linear record of a forward computation for reverse-mode differentiation.
// With recording disabled the tape still evaluates values but keeps no
// backward closures, which is what frozen-model inference uses.
class Tape {
 public:
  // Receives the node's own value and its accumulated output gradient.
  using BackwardFn = std::function<void(Tape&, const Tensor&, std::span<const double>)>;
  static constexpr std::size_t kNoParam = std::numeric_limits<std::size_t>::max();

  explicit Tape(bool record = true);
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  bool recording() const { return record_; }

  Var constant(Tensor value);
  Var input(Tensor value);
  // Borrowed parameter value; `key` identifies the slot gradients flow back to.
  Var parameter(const Tensor& value, std::size_t key);

  const Tensor& value(Var v) const;
  bool requires_grad(Var v) const;

  // Gradient of the last backward() root with respect to v (empty if v was not
  // reached).
  std::span<const double> grad(Var v) const;

  void backward(Var root, std::span<const double> seed);
  void backward(Var root);

  // Calls fn(key, grad) for each parameter node reached by backward().
  void for_each_parameter_grad(const std::function<void(std::size_t, std::span<const double>)>& fn) const;

  std::size_t node_count() const { return nodes_.size(); }

  // Op-implementer interface.
  Var record(Tensor value, bool requires_grad, BackwardFn fn);
  std::span<double> grad_buffer(Var v);

 private:
  struct Node {
    Tensor owned;
    const Tensor* borrowed = nullptr;
    std::vector<double> grad;
    BackwardFn backward;
    std::size_t param_key = kNoParam;
    bool requires_grad = false;

    const Tensor& value() const { return borrowed ? *borrowed : owned; }
  };

  std::vector<Node> nodes_;
  bool record_;
};

inline const Tensor& Var::value() const { return tape_->value(*this); }

}  // namespace duscloud::nn
