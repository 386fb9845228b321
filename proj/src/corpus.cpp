#include "ulab/corpus.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ulab/error.hpp"
#include "ulab/hash.hpp"

namespace fs = std::filesystem;

namespace ulab {

std::vector<int> Vocab::tokenize(std::string_view text) {
  std::vector<int> out;
  out.reserve(text.size());
  for (unsigned char c : text) out.push_back(static_cast<int>(c));
  return out;
}

std::string Vocab::detokenize(std::span<const int> tokens) {
  std::string out;
  out.reserve(tokens.size());
  for (int t : tokens) {
    require(t >= 0 && t < SIZE, ErrorKind::index, "token id outside vocabulary");
    if (t < 256) out.push_back(static_cast<char>(static_cast<unsigned char>(t)));
  }
  return out;
}

namespace {

std::string corpus_content_id(const std::vector<Document>& docs) {
  Fnv1a h;
  for (const auto& d : docs) {
    uint64_t dl = d.domain.size();
    uint64_t tl = d.text.size();
    h.update(&dl, sizeof(dl));
    h.update(d.domain);
    h.update(&tl, sizeof(tl));
    h.update(d.text);
  }
  return hex16(h.digest());
}

}  // namespace

Corpus Corpus::from_docs(std::vector<Document> docs) {
  for (const auto& d : docs) {
    require(!d.text.empty(), ErrorKind::config, "document text must be non-empty");
  }
  Corpus c;
  c.docs = std::move(docs);
  c.id = corpus_content_id(c.docs);
  return c;
}

Corpus Corpus::load_dir(const std::string& dir) {
  require(fs::is_directory(dir), ErrorKind::io, "corpus directory not found: " + dir);
  std::vector<Document> docs;
  std::vector<std::pair<std::string, std::string>> entries;  // rel path -> text
  std::vector<std::string> domains;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory()) domains.push_back(e.path().filename().string());
  }
  std::sort(domains.begin(), domains.end());
  for (const auto& domain : domains) {
    std::vector<std::string> files;
    for (const auto& e : fs::directory_iterator(fs::path(dir) / domain)) {
      if (e.is_regular_file()) files.push_back(e.path().filename().string());
    }
    std::sort(files.begin(), files.end());
    for (const auto& fname : files) {
      fs::path p = fs::path(dir) / domain / fname;
      std::ifstream f(p, std::ios::binary);
      require(f.good(), ErrorKind::io, "cannot read corpus file: " + p.string());
      std::ostringstream ss;
      ss << f.rdbuf();
      docs.push_back(Document{ss.str(), domain});
      entries.emplace_back(domain + "/" + fname, docs.back().text);
    }
  }
  require(!docs.empty(), ErrorKind::io, "no documents under corpus directory: " + dir);

  fs::path manifest = fs::path(dir) / "manifest.txt";
  if (fs::exists(manifest)) {
    std::ifstream mf(manifest);
    std::map<std::string, std::string> recorded;
    std::string line;
    while (std::getline(mf, line)) {
      if (line.empty() || line[0] == '#') continue;
      auto sp = line.find(' ');
      require(sp != std::string::npos, ErrorKind::io, "malformed manifest line: " + line);
      recorded[line.substr(sp + 1)] = line.substr(0, sp);
    }
    for (const auto& [rel, text] : entries) {
      auto it = recorded.find(rel);
      require(it != recorded.end(), ErrorKind::io, "file missing from manifest: " + rel);
      require(it->second == hex16(fnv1a64(text)), ErrorKind::io,
              "manifest hash mismatch for " + rel);
    }
  }
  return from_docs(std::move(docs));
}

int64_t Corpus::total_tokens() const {
  int64_t n = 0;
  for (const auto& d : docs) n += static_cast<int64_t>(d.text.size());
  return n;
}

std::vector<std::string> Corpus::domains() const {
  std::vector<std::string> out;
  for (const auto& d : docs) out.push_back(d.domain);
  std::sort(out.begin(), out.end());
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

std::map<std::string, int64_t> Corpus::domain_token_counts() const {
  std::map<std::string, int64_t> out;
  for (const auto& d : docs) out[d.domain] += static_cast<int64_t>(d.text.size());
  return out;
}

void write_manifest(const Corpus& corpus, const std::string& dir) {
  // Files are written as <domain>/<index>.txt by write_corpus_dir; the
  // manifest mirrors that layout.
  std::map<std::string, int> counters;
  std::ofstream f(fs::path(dir) / "manifest.txt", std::ios::trunc);
  require(f.good(), ErrorKind::io, "cannot write manifest under " + dir);
  f << "# <fnv1a64> <domain>/<file>\n";
  for (const auto& d : corpus.docs) {
    int idx = counters[d.domain]++;
    f << hex16(fnv1a64(d.text)) << " " << d.domain << "/" << std::to_string(idx) << ".txt\n";
  }
}

TargetSet TargetSet::subset(size_t begin, size_t end) const {
  require(begin <= end && end <= sequences.size(), ErrorKind::usage, "bad target subset range");
  TargetSet out;
  out.sequences.assign(sequences.begin() + static_cast<long>(begin),
                       sequences.begin() + static_cast<long>(end));
  out.windows.assign(windows.begin() + static_cast<long>(begin),
                     windows.begin() + static_cast<long>(end));
  out.corpus_id = corpus_id;
  out.seed = seed;
  out.t_len = t_len;
  return out;
}

namespace {

struct Block {
  int doc;
  int offset;
};

std::vector<Block> grid_blocks(const Corpus& corpus, int t_len,
                               const std::string& domain_filter = "") {
  std::vector<Block> blocks;
  for (int di = 0; di < static_cast<int>(corpus.docs.size()); ++di) {
    const auto& doc = corpus.docs[static_cast<size_t>(di)];
    if (!domain_filter.empty() && doc.domain != domain_filter) continue;
    int n = static_cast<int>(doc.text.size());
    for (int off = 0; off + t_len <= n; off += t_len) blocks.push_back(Block{di, off});
  }
  return blocks;
}

std::vector<int> window_tokens(const Corpus& corpus, const Block& b, int t_len) {
  const std::string& text = corpus.docs[static_cast<size_t>(b.doc)].text;
  return Vocab::tokenize(
      std::string_view(text).substr(static_cast<size_t>(b.offset), static_cast<size_t>(t_len)));
}

}  // namespace

TargetSet sample_targets(const Corpus& corpus, int k, int t_len, uint64_t seed) {
  require(k >= 0, ErrorKind::config, "target count must be >= 0");
  require(t_len >= 1, ErrorKind::config, "target length must be >= 1");
  TargetSet out;
  out.corpus_id = corpus.id;
  out.seed = seed;
  out.t_len = t_len;
  if (k == 0) return out;

  std::vector<Block> blocks = grid_blocks(corpus, t_len);
  require(static_cast<int>(blocks.size()) >= k, ErrorKind::capacity,
          "corpus has only " + std::to_string(blocks.size()) + " disjoint windows of length " +
              std::to_string(t_len) + ", need " + std::to_string(k));
  Rng rng(Rng::derive(seed, "targets"));
  shuffle(blocks, rng);
  for (int i = 0; i < k; ++i) {
    const Block& b = blocks[static_cast<size_t>(i)];
    out.sequences.push_back(window_tokens(corpus, b, t_len));
    out.windows.push_back(
        TargetWindow{b.doc, b.offset, corpus.docs[static_cast<size_t>(b.doc)].domain});
  }
  return out;
}

std::map<std::string, int> apportion(const std::map<std::string, double>& weights, int m) {
  double total = 0.0;
  for (const auto& [name, w] : weights) {
    require(w >= 0.0, ErrorKind::config, "negative domain weight: " + name);
    total += w;
  }
  require(total > 0.0, ErrorKind::config, "domain weights sum to zero");

  std::map<std::string, int> counts;
  std::vector<std::pair<double, std::string>> remainders;  // (-remainder, name) for stable sort
  int assigned = 0;
  for (const auto& [name, w] : weights) {
    double quota = static_cast<double>(m) * w / total;
    int base = static_cast<int>(quota);
    counts[name] = base;
    assigned += base;
    remainders.emplace_back(-(quota - base), name);
  }
  std::sort(remainders.begin(), remainders.end());
  for (int i = 0; assigned < m; ++i) {
    counts[remainders[static_cast<size_t>(i) % remainders.size()].second] += 1;
    ++assigned;
  }
  return counts;
}

ValidationSet sample_validation(const Corpus& corpus, int m, int t_len, uint64_t seed,
                                const std::map<std::string, double>& domain_weights) {
  require(m >= 1, ErrorKind::config, "validation size must be >= 1");
  require(t_len >= 1, ErrorKind::config, "validation length must be >= 1");
  auto present = corpus.domains();
  for (const auto& [name, w] : domain_weights) {
    if (w > 0.0) {
      require(std::binary_search(present.begin(), present.end(), name), ErrorKind::config,
              "weight given for a domain absent from the corpus: " + name);
    }
  }

  ValidationSet out;
  out.corpus_id = corpus.id;
  out.seed = seed;
  out.t_len = t_len;
  out.weights = domain_weights;

  auto counts = apportion(domain_weights, m);
  for (const auto& [domain, count] : counts) {
    if (count == 0) continue;
    std::vector<Block> blocks = grid_blocks(corpus, t_len, domain);
    require(static_cast<int>(blocks.size()) >= count, ErrorKind::capacity,
            "domain " + domain + " has only " + std::to_string(blocks.size()) +
                " windows, need " + std::to_string(count));
    Rng rng(Rng::derive(Rng::derive(seed, "validation"), domain));
    shuffle(blocks, rng);
    for (int i = 0; i < count; ++i) {
      out.sequences.push_back(window_tokens(corpus, blocks[static_cast<size_t>(i)], t_len));
      out.domains.push_back(domain);
    }
  }
  return out;
}

std::string ValidationSet::descriptor_digest() const {
  Fnv1a h;
  h.update(corpus_id);
  h.update(&seed, sizeof(seed));
  h.update(&t_len, sizeof(t_len));
  uint64_t m = sequences.size();
  h.update(&m, sizeof(m));
  for (const auto& [name, w] : weights) {
    h.update(name);
    h.update(&w, sizeof(w));
  }
  return hex16(h.digest());
}

bool validation_disjoint_from(const Corpus& train, const ValidationSet& val) {
  for (const auto& seq : val.sequences) {
    std::string bytes = Vocab::detokenize(seq);
    for (const auto& doc : train.docs) {
      if (doc.text.find(bytes) != std::string::npos) return false;
    }
  }
  return true;
}

bool targets_disjoint_from(const TargetSet& targets, const ValidationSet& val) {
  for (const auto& seq : targets.sequences) {
    std::string bytes = Vocab::detokenize(seq);
    for (const auto& vseq : val.sequences) {
      if (Vocab::detokenize(vseq).find(bytes) != std::string::npos) return false;
    }
  }
  return true;
}

std::vector<int> random_window(const Corpus& corpus, int t_len, Rng& rng) {
  // documents shorter than t_len cannot host a window; retry a bounded
  // number of times before giving up
  for (int attempt = 0; attempt < 1000; ++attempt) {
    const auto& doc = corpus.docs[static_cast<size_t>(rng.bounded(corpus.docs.size()))];
    int n = static_cast<int>(doc.text.size());
    if (n < t_len) continue;
    int off = static_cast<int>(rng.bounded(static_cast<uint64_t>(n - t_len + 1)));
    return Vocab::tokenize(
        std::string_view(doc.text).substr(static_cast<size_t>(off), static_cast<size_t>(t_len)));
  }
  fail(ErrorKind::capacity, "no document long enough for a window of " + std::to_string(t_len));
}

}  // namespace ulab
