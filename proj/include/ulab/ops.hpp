#pragma once

#include <optional>
#include <span>

#include "ulab/tape.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

// Reverse-mode primitives. Every op validates shapes, computes the forward
// value, checks the result for non-finite values, and (when `tape` is
// non-null) records a pull closure that accumulates input gradients from the
// output gradient. Passing tape == nullptr gives a plain forward evaluation.

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b);
TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b);
// x: [m x n], bias: [n]; adds bias to every row
TensorPtr add_row(Tape* tape, const TensorPtr& x, const TensorPtr& bias);
TensorPtr mul_scalar(Tape* tape, const TensorPtr& x, float s);
TensorPtr sum(Tape* tape, const TensorPtr& x);
TensorPtr mean(Tape* tape, const TensorPtr& x);
TensorPtr gelu(Tape* tape, const TensorPtr& x);

// Row-wise layer normalization: y = (x - mu) / sqrt(var + eps) * gamma + beta
TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, float eps = 1e-5f);

// out[r] = tok_emb[ids[r]] + pos_emb[r]; backward scatters into both tables.
TensorPtr embed(Tape* tape, const TensorPtr& tok_emb, const TensorPtr& pos_emb,
                std::span<const int> ids);

// Multi-head self-attention over already-projected q, k, v ([T x d] each)
// with a causal mask; row t attends to rows 0..t.
TensorPtr causal_self_attention(Tape* tape, const TensorPtr& q, const TensorPtr& k,
                                const TensorPtr& v, int n_heads);

// Numerically stable row-wise log-softmax (max subtraction); each output row
// r satisfies logsumexp(out[r]) == 0.
TensorPtr log_softmax_rows(Tape* tape, const TensorPtr& z);

// Mean over rows of -log p(targets[r] | row r of logits).
TensorPtr nll_loss(Tape* tape, const TensorPtr& logits, std::span<const int> targets);

// Sum over rows of -log(1 - p(targets[r] | row r)). Computed through the
// complementary logsumexp identity, never through 1 - exp(logp): the per-row
// value is logsumexp(z) - logsumexp(z without the target entry), which stays
// finite as p -> 1. Per-token probability is clamped at 1 - 1e-12 (the value
// is capped, the gradient keeps its direction); `clamped`, when given, is set
// if any row hit the clamp.
TensorPtr unlikelihood_loss(Tape* tape, const TensorPtr& logits,
                            std::span<const int> targets, bool* clamped = nullptr);

// Loss value above which the per-token unlikelihood term is clamped:
// -log(1e-12).
inline constexpr float kUnlikelihoodClamp = 27.631021f;

}  // namespace ulab
