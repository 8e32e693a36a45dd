#include "duscloud/nn/param_store.hpp"

#include <cmath>

#include "duscloud/error.hpp"

namespace duscloud::nn {

std::size_t ParamStore::add(std::string name, Tensor value) {
  if (by_name_.count(name)) throw Error(ErrorKind::kInvalidArgument, "duplicate parameter name '" + name + "'");
  value.enable_grad();
  const std::size_t id = params_.size();
  by_name_.emplace(name, id);
  params_.push_back(Parameter{std::move(name), std::move(value), {}, {}});
  return id;
}

std::size_t ParamStore::add_uniform(std::string name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng) {
  Tensor t(std::move(shape));
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  for (auto& v : t.data()) v = rng.uniform(-bound, bound);
  return add(std::move(name), std::move(t));
}

std::optional<std::size_t> ParamStore::find(const std::string& name) const {
  auto it = by_name_.find(name);
  if (it == by_name_.end()) return std::nullopt;
  return it->second;
}

std::size_t ParamStore::index_of(const std::string& name) const {
  auto id = find(name);
  if (!id) throw Error(ErrorKind::kInvalidArgument, "unknown parameter '" + name + "'");
  return *id;
}

void ParamStore::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

void ParamStore::accumulate(const Tape& tape) {
  tape.for_each_parameter_grad([&](std::size_t key, std::span<const double> g) {
    auto& value = params_.at(key).value;
    if (!value.has_grad()) value.zero_grad();
    auto dst = value.grad();
    for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
  });
}

std::size_t ParamStore::scalar_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

bool ParamStore::same_values(const ParamStore& other) const {
  if (other.size() != size()) return false;
  for (std::size_t i = 0; i < size(); ++i) {
    const auto& a = params_[i];
    const auto& b = other.params_[i];
    if (a.name != b.name || a.value.shape() != b.value.shape()) return false;
    const auto av = a.value.data();
    const auto bv = b.value.data();
    if (!std::equal(av.begin(), av.end(), bv.begin())) return false;
  }
  return true;
}

void adam_step(ParamStore& store, const AdamConfig& config) {
  for (std::size_t i = 0; i < store.size(); ++i) {
    if (!store[i].value.has_grad()) {
      throw Error(ErrorKind::kMissingGradient, "parameter '" + store[i].name + "' has no gradient");
    }
  }
  const std::size_t t = store.step_count() + 1;
  const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(t));
  const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(t));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    auto w = p.value.data();
    auto g = p.value.grad();
    if (p.first_moment.size() != w.size()) p.first_moment.assign(w.size(), 0.0);
    if (p.second_moment.size() != w.size()) p.second_moment.assign(w.size(), 0.0);
    for (std::size_t j = 0; j < w.size(); ++j) {
      double& m = p.first_moment[j];
      double& v = p.second_moment[j];
      m = config.beta1 * m + (1.0 - config.beta1) * g[j];
      v = config.beta2 * v + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m / c1;
      const double v_hat = v / c2;
      w[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
  store.set_step_count(t);
}

}  // namespace duscloud::nn
