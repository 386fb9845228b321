#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ulab/rng.hpp"

namespace ulab {

// Byte-level vocabulary: ids 0-255 are raw bytes, followed by the reserved
// specials. tokenize/detokenize round-trips arbitrary byte strings exactly
// (specials are stripped on the way out).
struct Vocab {
  static constexpr int BOS = 256;
  static constexpr int EOS = 257;
  static constexpr int PAD = 258;
  static constexpr int UNK = 259;
  static constexpr int SIZE = 260;

  static std::vector<int> tokenize(std::string_view text);
  static std::string detokenize(std::span<const int> tokens);
};

struct Document {
  std::string text;
  std::string domain;
};

struct Corpus {
  std::vector<Document> docs;
  std::string id;  // content hash over (domain, text) pairs

  static Corpus from_docs(std::vector<Document> docs);
  // One domain per subdirectory; every regular file inside is one document.
  // If a manifest file is present at <dir>/manifest.txt, content hashes are
  // verified against it.
  static Corpus load_dir(const std::string& dir);

  int64_t total_tokens() const;
  std::vector<std::string> domains() const;                 // sorted, unique
  std::map<std::string, int64_t> domain_token_counts() const;
};

void write_manifest(const Corpus& corpus, const std::string& dir);

struct TargetWindow {
  int doc = 0;
  int offset = 0;  // token offset within the document
  std::string domain;
};

struct TargetSet {
  std::vector<std::vector<int>> sequences;  // each exactly t_len tokens
  std::vector<TargetWindow> windows;        // provenance, parallel to sequences
  std::string corpus_id;
  uint64_t seed = 0;
  int t_len = 0;

  TargetSet subset(size_t begin, size_t end) const;
};

// k distinct non-overlapping windows of exactly T tokens: every document is
// cut into consecutive disjoint blocks of T, the pooled blocks are
// seed-shuffled and the first k are taken.
TargetSet sample_targets(const Corpus& corpus, int k, int t_len, uint64_t seed);

struct ValidationSet {
  std::vector<std::vector<int>> sequences;
  std::vector<std::string> domains;  // parallel to sequences
  std::string corpus_id;
  uint64_t seed = 0;
  int t_len = 0;
  std::map<std::string, double> weights;

  std::string descriptor_digest() const;  // stable identity for caching
};

// m sequences of length T from a held-out corpus; per-domain counts follow
// weights*m by largest-remainder apportionment (within one sample of exact).
ValidationSet sample_validation(const Corpus& corpus, int m, int t_len, uint64_t seed,
                                const std::map<std::string, double>& domain_weights);

// Largest-remainder apportionment of m among the (sorted) weight keys.
std::map<std::string, int> apportion(const std::map<std::string, double>& weights, int m);

// No validation sequence may appear as a byte substring of any training
// document, and no target window as a substring of any validation sequence.
bool validation_disjoint_from(const Corpus& train, const ValidationSet& val);
bool targets_disjoint_from(const TargetSet& targets, const ValidationSet& val);

// Random T-token window (any offset) for pretraining batches.
std::vector<int> random_window(const Corpus& corpus, int t_len, Rng& rng);

}  // namespace ulab
