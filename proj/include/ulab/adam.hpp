#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ulab/tensor.hpp"

namespace ulab {

// Adaptive-moment optimizer state. beta1 = 0.9, beta2 = 0.999, eps = 1e-8,
// bias correction, zero weight decay. Moments are keyed by parameter name
// and initialized to zeros on the first step.
struct AdamState {
  float beta1 = 0.9f;
  float beta2 = 0.999f;
  float eps = 1e-8f;
  int64_t step = 0;

  struct Moments {
    std::vector<float> m;
    std::vector<float> v;
  };
  std::map<std::string, Moments> moments;
};

using NamedParam = std::pair<std::string, TensorPtr>;

// One update over all parameters using the gradients accumulated on them.
// Parameters without a gradient buffer are treated as zero-gradient.
void adam_step(AdamState& state, std::span<const NamedParam> params, float lr);

void zero_grads(std::span<const NamedParam> params);

}  // namespace ulab
