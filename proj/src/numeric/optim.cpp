#include "onelatent/numeric/optim.hpp"

#include <cmath>

#include "onelatent/util/error.hpp"

namespace onelatent::numeric {

AdamW::AdamW(std::vector<Parameter> params, AdamWConfig cfg) : params_(std::move(params)), cfg_(cfg) {
  if (!(cfg_.learning_rate > 0.0) || cfg_.weight_decay < 0.0) {
    throw ContractViolation("AdamW: learning rate must be positive and weight decay non-negative");
  }
  for (const auto& p : params_) {
    m_.emplace_back(p.value.numel(), 0.0);
    v_.emplace_back(p.value.numel(), 0.0);
  }
}

void AdamW::apply(std::size_t i, std::span<const double> g, double bc1, double bc2) {
  auto& p = params_[i];
  auto w = p.value.mutable_data();
  auto& m = m_[i];
  auto& v = v_[i];
  const double lr = cfg_.learning_rate;
  const double decay = p.decay ? lr * cfg_.weight_decay : 0.0;
  for (std::size_t j = 0; j < w.size(); ++j) {
    const double gj = g.empty() ? 0.0 : g[j];
    if (decay != 0.0) w[j] -= decay * w[j];
    m[j] = cfg_.beta1 * m[j] + (1.0 - cfg_.beta1) * gj;
    v[j] = cfg_.beta2 * v[j] + (1.0 - cfg_.beta2) * gj * gj;
    const double mhat = m[j] / bc1;
    const double vhat = v[j] / bc2;
    w[j] -= lr * mhat / (std::sqrt(vhat) + cfg_.epsilon);
  }
}

void AdamW::step() {
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) apply(i, params_[i].value.grad(), bc1, bc2);
}

void AdamW::step(const std::vector<std::vector<double>>& grads) {
  if (grads.size() != params_.size()) throw ContractViolation("AdamW::step: one gradient per parameter required");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (grads[i].size() != params_[i].value.numel()) {
      throw ContractViolation("AdamW::step: gradient shape differs from parameter " + params_[i].name);
    }
  }
  ++step_;
  const double t = static_cast<double>(step_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (std::size_t i = 0; i < params_.size(); ++i) apply(i, grads[i], bc1, bc2);
}

void AdamW::zero_grad() {
  for (auto& p : params_) p.value.zero_grad();
}

}  // namespace onelatent::numeric
