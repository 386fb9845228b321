#pragma once

#include <functional>
#include <string>
#include <vector>

#include "ulab/tensor.hpp"

namespace ulab {

// Ordered record of executed primitive operations. Ops append themselves at
// execution time, so every node appears after the producers of its inputs
// and a single reverse sweep is a valid reverse-topological traversal.
class Tape {
 public:
  struct Node {
    const char* op;
    std::vector<TensorPtr> inputs;
    TensorPtr output;
    std::function<void()> pull;  // accumulates input grads from output grad
  };

  void record(const char* op, std::vector<TensorPtr> inputs, TensorPtr output,
              std::function<void()> pull);

  size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  const Node& node(size_t i) const { return nodes_[i]; }

  // Seeds d(loss)/d(loss) = 1 and replays the tape backward once, visiting
  // each recorded operation exactly once. The tape is consumed afterwards.
  void run_backward(const TensorPtr& loss);

 private:
  std::vector<Node> nodes_;
  bool consumed_ = false;
};

// Accumulates gradients of `loss` into every tensor reachable on the tape;
// parameter tensors keep them, intermediates may be dropped by the caller.
void backward(Tape& tape, const TensorPtr& loss);

}  // namespace ulab
