#include "duscloud/nn/tape.hpp"

#include "duscloud/error.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace duscloud::nn {
namespace {

// Training allocates and frees the same multi-megabyte buffers every step.
// glibc would hand those to mmap and fault them in again each time.
void keep_large_blocks_on_heap() {
#if defined(__GLIBC__)
  static const bool once = [] {
    mallopt(M_MMAP_THRESHOLD, 512 * 1024 * 1024);
    mallopt(M_TRIM_THRESHOLD, 1024 * 1024 * 1024);
    return true;
  }();
  (void)once;
#endif
}

}  // namespace

Tape::Tape(bool record) : record_(record) {
  keep_large_blocks_on_heap();
  nodes_.reserve(256);
}

Var Tape::constant(Tensor value) {
  Node node;
  node.owned = std::move(value);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::input(Tensor value) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::parameter(const Tensor& value, std::size_t key) {
  Node node;
  node.borrowed = &value;
  node.param_key = key;
  node.requires_grad = record_;
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

Var Tape::record(Tensor value, bool requires_grad, BackwardFn fn) {
  Node node;
  node.owned = std::move(value);
  node.requires_grad = record_ && requires_grad;
  if (node.requires_grad) node.backward = std::move(fn);
  nodes_.push_back(std::move(node));
  return Var(this, nodes_.size() - 1);
}

const Tensor& Tape::value(Var v) const { return nodes_.at(v.id()).value(); }

bool Tape::requires_grad(Var v) const { return nodes_.at(v.id()).requires_grad; }

std::span<const double> Tape::grad(Var v) const { return nodes_.at(v.id()).grad; }

std::span<double> Tape::grad_buffer(Var v) {
  Node& node = nodes_.at(v.id());
  if (node.grad.empty()) node.grad.assign(node.value().size(), 0.0);
  return node.grad;
}

void Tape::backward(Var root, std::span<const double> seed) {
  if (!record_) throw Error(ErrorKind::kMissingGradient, "backward() on a non-recording tape");
  Node& r = nodes_.at(root.id());
  if (seed.size() != r.value().size()) throw Error(ErrorKind::kShapeMismatch, "backward seed has wrong size");
  if (!r.requires_grad) return;
  for (auto& node : nodes_) node.grad.clear();
  r.grad.assign(seed.begin(), seed.end());
  for (std::size_t i = root.id() + 1; i-- > 0;) {
    Node& node = nodes_[i];
    if (node.grad.empty() || !node.backward) continue;
    node.backward(*this, node.value(), node.grad);
  }
}

void Tape::backward(Var root) {
  const double one = 1.0;
  backward(root, std::span<const double>(&one, 1));
}

void Tape::for_each_parameter_grad(const std::function<void(std::size_t, std::span<const double>)>& fn) const {
  for (const auto& node : nodes_) {
    if (node.param_key != kNoParam && !node.grad.empty()) fn(node.param_key, node.grad);
  }
}

}  // namespace duscloud::nn
