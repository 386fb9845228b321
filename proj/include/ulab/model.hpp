#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "ulab/adam.hpp"
#include "ulab/ops.hpp"
#include "ulab/tape.hpp"
#include "ulab/tensor.hpp"

namespace ulab {

struct ModelConfig {
  int vocab_size = 260;
  int d_model = 128;
  int n_layers = 4;
  int n_heads = 4;
  int d_ff = 512;
  int max_seq_len = 256;
  uint64_t seed = 0;

  void validate() const;
  bool operator==(const ModelConfig&) const = default;
};

struct LayerParams {
  TensorPtr ln1_g, ln1_b;
  TensorPtr wq, bq, wk, bk, wv, bv, wo, bo;
  TensorPtr ln2_g, ln2_b;
  TensorPtr w1, b1, w2, b2;
};

// Decoder-only causal transformer: learned token + absolute position
// embeddings, pre-norm attention/MLP blocks, untied output projection.
class ModelState {
 public:
  ModelConfig config;
  TensorPtr tok_emb;  // [V x d]
  TensorPtr pos_emb;  // [ctx x d]
  std::vector<LayerParams> layers;
  TensorPtr lnf_g, lnf_b;
  TensorPtr w_out;  // [d x V]
  TensorPtr b_out;  // [V]

  // Weights drawn from seeded normal(0, 0.02); biases and norm offsets zero,
  // norm scales one. Deterministic in config.seed.
  static ModelState init(const ModelConfig& config);

  std::vector<NamedParam> named_parameters() const;
  int64_t parameter_count() const;
  ModelState clone() const;

  std::vector<uint8_t> serialize() const;
  static ModelState deserialize(std::span<const uint8_t> bytes);
  void save(const std::string& path) const;
  static ModelState load(const std::string& path);

  // Content hash of the serialized checkpoint (config + all tensors).
  std::string checkpoint_id() const;
};

// Row t holds the logits for the token at position t+1 given tokens 0..t;
// causal masking is enforced inside the attention op. Records on `tape`
// when one is given.
TensorPtr forward_logits(const ModelState& state, std::span<const int> tokens,
                         Tape* tape = nullptr);

// Full-sequence forward that also captures the per-layer attention keys and
// values, so generation can branch off any prefix without recomputing it.
struct PrefixScan {
  int t_len = 0;
  std::vector<MatrixRM> k;  // per layer, [T x d]
  std::vector<MatrixRM> v;
  TensorPtr logits;  // [T x V]
};
PrefixScan scan_sequence(const ModelState& state, std::span<const int> tokens);

// Incremental greedy-decoding state: per-layer key/value rows for every
// consumed position plus the logits of the latest position.
class DecodeState {
 public:
  DecodeState(const ModelState& state, int capacity);
  static DecodeState from_scan(const ModelState& state, const PrefixScan& scan, int rows,
                               int capacity);

  int length() const { return len_; }
  int capacity() const { return cap_; }
  std::span<const float> last_logits() const { return logits_; }

  // Appends one token and advances the cache by one position.
  void append(int token);

 private:
  const ModelState* model_;
  int cap_ = 0;
  int len_ = 0;
  std::vector<MatrixRM> kcache_, vcache_;  // per layer, [cap x d]
  std::vector<float> logits_;              // [V]
};

struct GenerationRequest {
  std::vector<int> prefix;            // conditioning tokens, without BOS
  int max_new_tokens = 0;             // generation budget
  std::optional<int> stop_token;      // EOS; generation stops before emitting it
  int bos_id = 256;                   // prepended to the prefix; empty prefix decodes from BOS alone
};

// Greedy decoding: at each step appends the argmax of the next-token logits,
// ties broken by lowest token id. Stops at max_new_tokens or stop_token,
// whichever comes first. Output excludes the prefix.
std::vector<int> generate_greedy(const ModelState& state, const GenerationRequest& request);

int argmax_lowest(std::span<const float> v);

// Mean token-level negative log-likelihood over all positions of all
// sequences (each conditioned on bos_id + its own preceding tokens).
double mean_token_nll(const ModelState& state, std::span<const std::vector<int>> corpus,
                      int bos_id);

// exp(mean token-level NLL) over the corpus.
double perplexity(const ModelState& state, std::span<const std::vector<int>> corpus, int bos_id);

}  // namespace ulab
