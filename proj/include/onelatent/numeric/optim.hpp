#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "onelatent/numeric/tensor.hpp"

namespace onelatent::numeric {

struct Parameter {
  std::string name;
  Tensor value;
  bool decay = true;  // decoupled weight decay applies to this tensor
};

struct AdamWConfig {
  double learning_rate = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double weight_decay = 0.01;
};

// Adaptive-moment optimizer with decoupled weight decay:
//   p <- p * (1 - lr*wd)
//   m <- b1*m + (1-b1)*g,  v <- b2*v + (1-b2)*g^2
//   p <- p - lr * (m / (1-b1^t)) / (sqrt(v / (1-b2^t)) + eps)
class AdamW {
 public:
  AdamW(std::vector<Parameter> params, AdamWConfig cfg);

  // Applies one update from the parameters' current grads (missing grads
  // count as zero) and bumps the step counter.
  void step();

  // Same rule, explicit gradients; grads[i] must match params[i] in size.
  void step(const std::vector<std::vector<double>>& grads);

  void zero_grad();

  std::uint64_t step_count() const { return step_; }
  const AdamWConfig& config() const { return cfg_; }
  void set_learning_rate(double lr) { cfg_.learning_rate = lr; }
  const std::vector<Parameter>& parameters() const { return params_; }
  const std::vector<double>& first_moment(std::size_t i) const { return m_[i]; }
  const std::vector<double>& second_moment(std::size_t i) const { return v_[i]; }

 private:
  void apply(std::size_t i, std::span<const double> g, double bc1, double bc2);

  std::vector<Parameter> params_;
  AdamWConfig cfg_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  std::uint64_t step_ = 0;
};

}  // namespace onelatent::numeric
