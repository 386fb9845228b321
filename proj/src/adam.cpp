#include "ulab/adam.hpp"

#include <cmath>

#include "ulab/error.hpp"

namespace ulab {

void adam_step(AdamState& state, std::span<const NamedParam> params, float lr) {
  require(lr > 0.0f, ErrorKind::config, "learning rate must be positive");
  state.step += 1;
  double bc1 = 1.0 - std::pow(static_cast<double>(state.beta1), static_cast<double>(state.step));
  double bc2 = 1.0 - std::pow(static_cast<double>(state.beta2), static_cast<double>(state.step));
  float inv_bc1 = static_cast<float>(1.0 / bc1);
  float inv_bc2 = static_cast<float>(1.0 / bc2);

  for (const auto& [name, p] : params) {
    auto& mom = state.moments[name];
    size_t n = static_cast<size_t>(p->size());
    if (mom.m.empty()) {
      mom.m.assign(n, 0.0f);
      mom.v.assign(n, 0.0f);
    }
    require(mom.m.size() == n, ErrorKind::dimension, "optimizer state shape mismatch: " + name);

    auto data = p->data();
    if (!p->has_grad()) {
      // zero gradient: moments decay, update stays zero only when they were zero
      for (size_t i = 0; i < n; ++i) {
        mom.m[i] *= state.beta1;
        mom.v[i] *= state.beta2;
        float mhat = mom.m[i] * inv_bc1;
        float vhat = mom.v[i] * inv_bc2;
        data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
      }
      continue;
    }
    auto grad = p->grad();
    for (size_t i = 0; i < n; ++i) {
      float g = grad[i];
      mom.m[i] = state.beta1 * mom.m[i] + (1.0f - state.beta1) * g;
      mom.v[i] = state.beta2 * mom.v[i] + (1.0f - state.beta2) * g * g;
      float mhat = mom.m[i] * inv_bc1;
      float vhat = mom.v[i] * inv_bc2;
      data[i] -= lr * mhat / (std::sqrt(vhat) + state.eps);
    }
    p->check_finite(("parameter after adam step: " + name).c_str());
  }
}

void zero_grads(std::span<const NamedParam> params) {
  for (const auto& [name, p] : params) {
    (void)name;
    p->zero_grad();
  }
}

}  // namespace ulab
