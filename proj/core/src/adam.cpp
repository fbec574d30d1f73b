#include "detectornet/adam.hpp"

#include <cmath>

#include "detectornet/error.hpp"

namespace dnet {

void adam_step(ParamStore& store, AdamState& state) {
  for (const auto& [name, param] : store) {
    if (!param.has_grad()) throw StateError("parameter '" + name + "' has no gradient");
  }
  const auto& opt = state.options_;
  state.step_ += 1;
  const double t = static_cast<double>(state.step_);
  const double correction1 = 1.0 - std::pow(opt.beta1, t);
  const double correction2 = 1.0 - std::pow(opt.beta2, t);

  for (const auto& [name, param] : store) {
    Tensor p = param;
    auto& mom = state.moments_[name];
    if (mom.first.size() != p.numel()) {
      mom.first.assign(p.numel(), 0.0);
      mom.second.assign(p.numel(), 0.0);
    }
    auto values = p.mutable_values();
    const auto grad = p.grad();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double g = grad[i] + opt.weight_decay * values[i];
      mom.first[i] = opt.beta1 * mom.first[i] + (1.0 - opt.beta1) * g;
      mom.second[i] = opt.beta2 * mom.second[i] + (1.0 - opt.beta2) * g * g;
      const double m_hat = mom.first[i] / correction1;
      const double v_hat = mom.second[i] / correction2;
      values[i] -= opt.lr * m_hat / (std::sqrt(v_hat) + opt.eps);
    }
  }
}

}  // namespace dnet
