#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "duscloud/nn/tape.hpp"
#include "duscloud/nn/tensor.hpp"
#include "duscloud/rng.hpp"

namespace duscloud::nn {

struct Parameter {
  std::string name;
  Tensor value;
  std::vector<double> first_moment;
  std::vector<double> second_moment;
};

// Named parameters in insertion order. Gradients live on each Parameter's
// value tensor.
class ParamStore {
 public:
  std::size_t add(std::string name, Tensor value);
  // Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialisation.
  std::size_t add_uniform(std::string name, std::vector<std::size_t> shape, std::size_t fan_in, Rng& rng);

  std::size_t size() const { return params_.size(); }
  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::optional<std::size_t> find(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  Var bind(Tape& tape, std::size_t index) const { return tape.parameter(params_.at(index).value, index); }

  void zero_grad();
  // Adds the parameter gradients reached by the tape's last backward pass.
  void accumulate(const Tape& tape);

  std::size_t scalar_count() const;
  std::size_t step_count() const { return steps_; }
  void set_step_count(std::size_t steps) { steps_ = steps; }

  bool same_values(const ParamStore& other) const;

 private:
  std::vector<Parameter> params_;
  std::unordered_map<std::string, std::size_t> by_name_;
  std::size_t steps_ = 0;
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every parameter. Throws MissingGradient
// if any parameter has no gradient buffer.
void adam_step(ParamStore& store, const AdamConfig& config);

}  // namespace duscloud::nn
