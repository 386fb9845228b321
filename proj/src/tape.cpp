#include "ulab/tape.hpp"

#include <algorithm>
#include <cmath>

namespace ulab {

void Tape::record(const char* op, std::vector<TensorPtr> inputs, TensorPtr output,
                  std::function<void()> pull) {
  require(!consumed_, ErrorKind::usage, "recording on a consumed tape");
  nodes_.push_back(Node{op, std::move(inputs), std::move(output), std::move(pull)});
}

void Tape::run_backward(const TensorPtr& loss) {
  require(!consumed_, ErrorKind::usage, "backward on a tape that was already consumed");
  require(loss && loss->size() == 1, ErrorKind::usage, "backward requires a scalar loss");
  bool recorded = std::any_of(nodes_.begin(), nodes_.end(),
                              [&](const Node& n) { return n.output == loss; });
  require(recorded, ErrorKind::usage, "loss was not recorded on this tape");
  consumed_ = true;

  loss->ensure_grad();
  loss->grad()[0] = 1.0f;

  for (size_t i = nodes_.size(); i > 0; --i) {
    Node& n = nodes_[i - 1];
    // no downstream contribution reached this output: nothing to propagate
    if (!n.output->has_grad()) continue;
    n.pull();
  }

  for (size_t i = 0; i < nodes_.size(); ++i) {
    for (const TensorPtr& in : nodes_[i].inputs) {
      if (!in->is_param || !in->has_grad()) continue;
      for (float g : std::span<const float>(in->grad())) {
        if (!std::isfinite(g)) fail(ErrorKind::data, "non-finite parameter gradient");
      }
    }
  }
}

void backward(Tape& tape, const TensorPtr& loss) { tape.run_backward(loss); }

}  // namespace ulab
