#include "ulab/model.hpp"

#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>

#include "ulab/hash.hpp"
#include "ulab/rng.hpp"

static_assert(std::endian::native == std::endian::little,
              "checkpoint format assumes a little-endian host");

namespace ulab {

namespace {

constexpr char kMagic[4] = {'U', 'N', 'L', 'M'};
constexpr uint32_t kVersion = 1;
constexpr float kLnEps = 1e-5f;

TensorPtr init_weight(Rng& rng, std::vector<int> shape) {
  auto t = make_tensor(std::move(shape));
  for (float& v : t->data()) v = rng.normal(0.0f, 0.02f);
  t->is_param = true;
  return t;
}

TensorPtr init_const(std::vector<int> shape, float value) {
  auto t = make_tensor(std::move(shape));
  for (float& v : t->data()) v = value;
  t->is_param = true;
  return t;
}

void put_u32(std::vector<uint8_t>& out, uint32_t v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + 4);
}

void put_u64(std::vector<uint8_t>& out, uint64_t v) {
  const auto* p = reinterpret_cast<const uint8_t*>(&v);
  out.insert(out.end(), p, p + 8);
}

struct ByteReader {
  std::span<const uint8_t> bytes;
  size_t pos = 0;

  void read(void* dst, size_t n) {
    require(pos + n <= bytes.size(), ErrorKind::io, "checkpoint truncated");
    std::memcpy(dst, bytes.data() + pos, n);
    pos += n;
  }
  uint32_t u32() {
    uint32_t v;
    read(&v, 4);
    return v;
  }
  uint64_t u64() {
    uint64_t v;
    read(&v, 8);
    return v;
  }
};

}  // namespace

void ModelConfig::validate() const {
  require(vocab_size >= 2, ErrorKind::config, "vocab_size must be at least 2");
  require(d_model >= 1 && n_layers >= 1 && n_heads >= 1 && d_ff >= 1 && max_seq_len >= 1,
          ErrorKind::config, "model dimensions must be positive");
  require(d_model % n_heads == 0, ErrorKind::config, "n_heads must divide d_model");
}

ModelState ModelState::init(const ModelConfig& config) {
  config.validate();
  Rng rng(config.seed);
  ModelState s;
  s.config = config;
  int v = config.vocab_size;
  int d = config.d_model;
  int f = config.d_ff;
  s.tok_emb = init_weight(rng, {v, d});
  s.pos_emb = init_weight(rng, {config.max_seq_len, d});
  s.layers.resize(static_cast<size_t>(config.n_layers));
  for (auto& l : s.layers) {
    l.ln1_g = init_const({d}, 1.0f);
    l.ln1_b = init_const({d}, 0.0f);
    l.wq = init_weight(rng, {d, d});
    l.bq = init_const({d}, 0.0f);
    l.wk = init_weight(rng, {d, d});
    l.bk = init_const({d}, 0.0f);
    l.wv = init_weight(rng, {d, d});
    l.bv = init_const({d}, 0.0f);
    l.wo = init_weight(rng, {d, d});
    l.bo = init_const({d}, 0.0f);
    l.ln2_g = init_const({d}, 1.0f);
    l.ln2_b = init_const({d}, 0.0f);
    l.w1 = init_weight(rng, {d, f});
    l.b1 = init_const({f}, 0.0f);
    l.w2 = init_weight(rng, {f, d});
    l.b2 = init_const({d}, 0.0f);
  }
  s.lnf_g = init_const({d}, 1.0f);
  s.lnf_b = init_const({d}, 0.0f);
  s.w_out = init_weight(rng, {d, v});
  s.b_out = init_const({v}, 0.0f);
  return s;
}

std::vector<NamedParam> ModelState::named_parameters() const {
  std::vector<NamedParam> out;
  out.reserve(6 + layers.size() * 16);
  out.emplace_back("tok_emb", tok_emb);
  out.emplace_back("pos_emb", pos_emb);
  for (size_t i = 0; i < layers.size(); ++i) {
    const auto& l = layers[i];
    std::string p = "layer" + std::to_string(i) + ".";
    out.emplace_back(p + "ln1.g", l.ln1_g);
    out.emplace_back(p + "ln1.b", l.ln1_b);
    out.emplace_back(p + "attn.wq", l.wq);
    out.emplace_back(p + "attn.bq", l.bq);
    out.emplace_back(p + "attn.wk", l.wk);
    out.emplace_back(p + "attn.bk", l.bk);
    out.emplace_back(p + "attn.wv", l.wv);
    out.emplace_back(p + "attn.bv", l.bv);
    out.emplace_back(p + "attn.wo", l.wo);
    out.emplace_back(p + "attn.bo", l.bo);
    out.emplace_back(p + "ln2.g", l.ln2_g);
    out.emplace_back(p + "ln2.b", l.ln2_b);
    out.emplace_back(p + "mlp.w1", l.w1);
    out.emplace_back(p + "mlp.b1", l.b1);
    out.emplace_back(p + "mlp.w2", l.w2);
    out.emplace_back(p + "mlp.b2", l.b2);
  }
  out.emplace_back("final_ln.g", lnf_g);
  out.emplace_back("final_ln.b", lnf_b);
  out.emplace_back("out.w", w_out);
  out.emplace_back("out.b", b_out);
  return out;
}

int64_t ModelState::parameter_count() const {
  int64_t n = 0;
  for (const auto& [name, p] : named_parameters()) {
    (void)name;
    n += p->size();
  }
  return n;
}

ModelState ModelState::clone() const {
  ModelState out;
  out.config = config;
  auto copy = [](const TensorPtr& t) {
    auto c = make_tensor(t->shape(), std::vector<float>(t->data().begin(), t->data().end()));
    c->is_param = true;
    return c;
  };
  out.tok_emb = copy(tok_emb);
  out.pos_emb = copy(pos_emb);
  out.layers.reserve(layers.size());
  for (const auto& l : layers) {
    LayerParams c;
    c.ln1_g = copy(l.ln1_g);
    c.ln1_b = copy(l.ln1_b);
    c.wq = copy(l.wq);
    c.bq = copy(l.bq);
    c.wk = copy(l.wk);
    c.bk = copy(l.bk);
    c.wv = copy(l.wv);
    c.bv = copy(l.bv);
    c.wo = copy(l.wo);
    c.bo = copy(l.bo);
    c.ln2_g = copy(l.ln2_g);
    c.ln2_b = copy(l.ln2_b);
    c.w1 = copy(l.w1);
    c.b1 = copy(l.b1);
    c.w2 = copy(l.w2);
    c.b2 = copy(l.b2);
    out.layers.push_back(std::move(c));
  }
  out.lnf_g = copy(lnf_g);
  out.lnf_b = copy(lnf_b);
  out.w_out = copy(w_out);
  out.b_out = copy(b_out);
  return out;
}

std::vector<uint8_t> ModelState::serialize() const {
  std::vector<uint8_t> out;
  out.insert(out.end(), kMagic, kMagic + 4);
  put_u32(out, kVersion);
  put_u32(out, static_cast<uint32_t>(config.vocab_size));
  put_u32(out, static_cast<uint32_t>(config.d_model));
  put_u32(out, static_cast<uint32_t>(config.n_layers));
  put_u32(out, static_cast<uint32_t>(config.n_heads));
  put_u32(out, static_cast<uint32_t>(config.d_ff));
  put_u32(out, static_cast<uint32_t>(config.max_seq_len));
  put_u64(out, config.seed);

  auto params = named_parameters();
  put_u32(out, static_cast<uint32_t>(params.size()));
  for (const auto& [name, p] : params) {
    put_u32(out, static_cast<uint32_t>(name.size()));
    out.insert(out.end(), name.begin(), name.end());
    put_u32(out, static_cast<uint32_t>(p->ndim()));
    for (int i = 0; i < p->ndim(); ++i) put_u32(out, static_cast<uint32_t>(p->dim(i)));
    const auto* bytes = reinterpret_cast<const uint8_t*>(p->data().data());
    out.insert(out.end(), bytes, bytes + p->size() * 4);
  }
  put_u64(out, fnv1a64(out.data(), out.size()));
  return out;
}

ModelState ModelState::deserialize(std::span<const uint8_t> bytes) {
  require(bytes.size() >= 12, ErrorKind::io, "checkpoint too short");
  uint64_t expected = fnv1a64(bytes.data(), bytes.size() - 8);
  ByteReader r{bytes};
  char magic[4];
  r.read(magic, 4);
  require(std::memcmp(magic, kMagic, 4) == 0, ErrorKind::io, "bad checkpoint magic");
  require(r.u32() == kVersion, ErrorKind::io, "unsupported checkpoint version");

  ModelConfig cfg;
  cfg.vocab_size = static_cast<int>(r.u32());
  cfg.d_model = static_cast<int>(r.u32());
  cfg.n_layers = static_cast<int>(r.u32());
  cfg.n_heads = static_cast<int>(r.u32());
  cfg.d_ff = static_cast<int>(r.u32());
  cfg.max_seq_len = static_cast<int>(r.u32());
  cfg.seed = r.u64();
  cfg.validate();

  ModelState s = ModelState::init(cfg);  // allocates the right slots
  auto params = s.named_parameters();
  uint32_t count = r.u32();
  require(count == params.size(), ErrorKind::io, "checkpoint tensor count mismatch");
  for (auto& [name, p] : params) {
    uint32_t len = r.u32();
    std::string fname(len, '\0');
    r.read(fname.data(), len);
    require(fname == name, ErrorKind::io, "checkpoint tensor order mismatch: " + fname);
    uint32_t ndim = r.u32();
    require(ndim == static_cast<uint32_t>(p->ndim()), ErrorKind::io,
            "checkpoint tensor rank mismatch: " + fname);
    for (uint32_t i = 0; i < ndim; ++i) {
      require(static_cast<int>(r.u32()) == p->dim(static_cast<int>(i)), ErrorKind::io,
              "checkpoint tensor shape mismatch: " + fname);
    }
    r.read(p->data().data(), static_cast<size_t>(p->size()) * 4);
    p->check_finite(("checkpoint tensor " + fname).c_str());
  }
  uint64_t checksum = r.u64();
  require(checksum == expected, ErrorKind::io, "checkpoint checksum mismatch");
  require(r.pos == bytes.size(), ErrorKind::io, "trailing bytes after checkpoint");
  return s;
}

void ModelState::save(const std::string& path) const {
  auto bytes = serialize();
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  require(f.good(), ErrorKind::io, "cannot open checkpoint for writing: " + path);
  f.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  require(f.good(), ErrorKind::io, "checkpoint write failed: " + path);
}

ModelState ModelState::load(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  require(f.good(), ErrorKind::io, "cannot open checkpoint: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return deserialize(bytes);
}

std::string ModelState::checkpoint_id() const {
  auto bytes = serialize();
  return hex16(fnv1a64(bytes.data(), bytes.size()));
}

namespace {

struct ForwardCapture {
  TensorPtr logits;
  std::vector<TensorPtr> k, v;  // filled when capture_kv
};

ForwardCapture forward_impl(const ModelState& s, std::span<const int> tokens, Tape* tape,
                            bool capture_kv) {
  require(!tokens.empty(), ErrorKind::length, "forward requires at least one token");
  require(static_cast<int>(tokens.size()) <= s.config.max_seq_len, ErrorKind::length,
          "sequence longer than max_seq_len");

  ForwardCapture cap;
  TensorPtr h = embed(tape, s.tok_emb, s.pos_emb, tokens);
  for (const auto& l : s.layers) {
    TensorPtr a = layer_norm(tape, h, l.ln1_g, l.ln1_b, kLnEps);
    TensorPtr q = add_row(tape, matmul(tape, a, l.wq), l.bq);
    TensorPtr k = add_row(tape, matmul(tape, a, l.wk), l.bk);
    TensorPtr v = add_row(tape, matmul(tape, a, l.wv), l.bv);
    if (capture_kv) {
      cap.k.push_back(k);
      cap.v.push_back(v);
    }
    TensorPtr att = causal_self_attention(tape, q, k, v, s.config.n_heads);
    TensorPtr o = add_row(tape, matmul(tape, att, l.wo), l.bo);
    h = add(tape, h, o);
    TensorPtr m = layer_norm(tape, h, l.ln2_g, l.ln2_b, kLnEps);
    TensorPtr f1 = add_row(tape, matmul(tape, m, l.w1), l.b1);
    TensorPtr g = gelu(tape, f1);
    TensorPtr f2 = add_row(tape, matmul(tape, g, l.w2), l.b2);
    h = add(tape, h, f2);
  }
  TensorPtr hf = layer_norm(tape, h, s.lnf_g, s.lnf_b, kLnEps);
  cap.logits = add_row(tape, matmul(tape, hf, s.w_out), s.b_out);
  return cap;
}

void ln_row(const float* x, const float* g, const float* b, float* out, int n) {
  double mu = 0.0;
  for (int c = 0; c < n; ++c) mu += x[c];
  mu /= n;
  double var = 0.0;
  for (int c = 0; c < n; ++c) {
    double d = x[c] - mu;
    var += d * d;
  }
  var /= n;
  float istd = static_cast<float>(1.0 / std::sqrt(var + kLnEps));
  for (int c = 0; c < n; ++c) {
    out[c] = (x[c] - static_cast<float>(mu)) * istd * g[c] + b[c];
  }
}

float gelu_scalar(float v) {
  float u = 0.7978845608028654f * (v + 0.044715f * v * v * v);
  return 0.5f * v * (1.0f + std::tanh(u));
}

}  // namespace

TensorPtr forward_logits(const ModelState& state, std::span<const int> tokens, Tape* tape) {
  return forward_impl(state, tokens, tape, false).logits;
}

PrefixScan scan_sequence(const ModelState& state, std::span<const int> tokens) {
  ForwardCapture cap = forward_impl(state, tokens, nullptr, true);
  PrefixScan scan;
  scan.t_len = static_cast<int>(tokens.size());
  scan.logits = cap.logits;
  scan.k.reserve(cap.k.size());
  scan.v.reserve(cap.v.size());
  for (size_t i = 0; i < cap.k.size(); ++i) {
    scan.k.push_back(cap.k[i]->mat());
    scan.v.push_back(cap.v[i]->mat());
  }
  return scan;
}

DecodeState::DecodeState(const ModelState& state, int capacity) : model_(&state) {
  require(capacity >= 1 && capacity <= state.config.max_seq_len, ErrorKind::length,
          "decode capacity outside the model context");
  cap_ = capacity;
  int d = state.config.d_model;
  kcache_.assign(state.layers.size(), MatrixRM::Zero(cap_, d));
  vcache_.assign(state.layers.size(), MatrixRM::Zero(cap_, d));
  logits_.assign(static_cast<size_t>(state.config.vocab_size), 0.0f);
}

DecodeState DecodeState::from_scan(const ModelState& state, const PrefixScan& scan, int rows,
                                   int capacity) {
  require(rows >= 1 && rows <= scan.t_len, ErrorKind::usage,
          "prefix rows outside the scanned range");
  DecodeState ds(state, capacity);
  require(rows <= ds.cap_, ErrorKind::length, "prefix longer than decode capacity");
  for (size_t l = 0; l < ds.kcache_.size(); ++l) {
    ds.kcache_[l].topRows(rows) = scan.k[l].topRows(rows);
    ds.vcache_[l].topRows(rows) = scan.v[l].topRows(rows);
  }
  ds.len_ = rows;
  ConstMatMap logits = scan.logits->mat();
  for (int c = 0; c < logits.cols(); ++c) {
    ds.logits_[static_cast<size_t>(c)] = logits(rows - 1, c);
  }
  return ds;
}

void DecodeState::append(int token) {
  const ModelState& s = *model_;
  require(len_ < cap_, ErrorKind::length, "decode cache capacity exhausted");
  require(token >= 0 && token < s.config.vocab_size, ErrorKind::index,
          "token id outside vocabulary");
  int pos = len_;
  int d = s.config.d_model;
  int heads = s.config.n_heads;
  int hd = d / heads;
  float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  Eigen::RowVectorXf x = s.tok_emb->mat().row(token) + s.pos_emb->mat().row(pos);
  Eigen::RowVectorXf a(d), q(d), ctx(d), m(d);
  Eigen::RowVectorXf f1(s.config.d_ff);
  for (size_t li = 0; li < s.layers.size(); ++li) {
    const auto& l = s.layers[li];
    ln_row(x.data(), l.ln1_g->data().data(), l.ln1_b->data().data(), a.data(), d);
    q.noalias() = a * l.wq->mat();
    q += ConstVecMap(l.bq->data().data(), d).transpose();
    kcache_[li].row(pos).noalias() = a * l.wk->mat();
    kcache_[li].row(pos) += ConstVecMap(l.bk->data().data(), d).transpose();
    vcache_[li].row(pos).noalias() = a * l.wv->mat();
    vcache_[li].row(pos) += ConstVecMap(l.bv->data().data(), d).transpose();

    int n_ctx = pos + 1;
    for (int h = 0; h < heads; ++h) {
      int c0 = h * hd;
      Eigen::VectorXf scores =
          (kcache_[li].middleCols(c0, hd).topRows(n_ctx) * q.segment(c0, hd).transpose()) * scale;
      float mx = scores.maxCoeff();
      double denom = 0.0;
      for (int r = 0; r < n_ctx; ++r) {
        scores(r) = std::exp(scores(r) - mx);
        denom += scores(r);
      }
      scores *= static_cast<float>(1.0 / denom);
      ctx.segment(c0, hd).noalias() =
          scores.transpose() * vcache_[li].middleCols(c0, hd).topRows(n_ctx);
    }
    Eigen::RowVectorXf o = ctx * l.wo->mat();
    o += ConstVecMap(l.bo->data().data(), d).transpose();
    x += o;
    ln_row(x.data(), l.ln2_g->data().data(), l.ln2_b->data().data(), m.data(), d);
    f1.noalias() = m * l.w1->mat();
    f1 += ConstVecMap(l.b1->data().data(), s.config.d_ff).transpose();
    for (int c = 0; c < s.config.d_ff; ++c) f1(c) = gelu_scalar(f1(c));
    Eigen::RowVectorXf f2 = f1 * l.w2->mat();
    f2 += ConstVecMap(l.b2->data().data(), d).transpose();
    x += f2;
  }
  Eigen::RowVectorXf hf(d);
  ln_row(x.data(), s.lnf_g->data().data(), s.lnf_b->data().data(), hf.data(), d);
  Eigen::RowVectorXf logits = hf * s.w_out->mat();
  logits += ConstVecMap(s.b_out->data().data(), s.config.vocab_size).transpose();
  for (int c = 0; c < s.config.vocab_size; ++c) {
    float v = logits(c);
    require(std::isfinite(v), ErrorKind::data, "non-finite logit in decode step");
    logits_[static_cast<size_t>(c)] = v;
  }
  len_ = pos + 1;
}

int argmax_lowest(std::span<const float> v) {
  require(!v.empty(), ErrorKind::usage, "argmax of empty vector");
  int best = 0;
  for (int i = 1; i < static_cast<int>(v.size()); ++i) {
    if (v[static_cast<size_t>(i)] > v[static_cast<size_t>(best)]) best = i;
  }
  return best;
}

std::vector<int> generate_greedy(const ModelState& state, const GenerationRequest& request) {
  require(request.max_new_tokens >= 0, ErrorKind::config, "max_new_tokens must be >= 0");
  require(static_cast<int>(request.prefix.size()) < state.config.max_seq_len, ErrorKind::length,
          "prefix does not fit the model context");
  std::vector<int> out;
  if (request.max_new_tokens == 0) return out;

  int prefill = static_cast<int>(request.prefix.size()) + 1;  // BOS + prefix
  int capacity = std::min(state.config.max_seq_len, prefill + request.max_new_tokens);
  DecodeState ds(state, capacity);
  ds.append(request.bos_id);
  for (int tok : request.prefix) ds.append(tok);

  while (static_cast<int>(out.size()) < request.max_new_tokens) {
    int next = argmax_lowest(ds.last_logits());
    if (request.stop_token && next == *request.stop_token) break;
    out.push_back(next);
    if (static_cast<int>(out.size()) == request.max_new_tokens) break;
    if (ds.length() >= ds.capacity()) break;  // context exhausted
    ds.append(next);
  }
  return out;
}

double mean_token_nll(const ModelState& state, std::span<const std::vector<int>> corpus,
                      int bos_id) {
  require(!corpus.empty(), ErrorKind::usage, "empty corpus");
  double total = 0.0;
  int64_t count = 0;
  for (const auto& seq : corpus) {
    require(!seq.empty(), ErrorKind::usage, "empty sequence in corpus");
    std::vector<int> input;
    input.reserve(seq.size());
    input.push_back(bos_id);
    input.insert(input.end(), seq.begin(), seq.end() - 1);
    TensorPtr logits = forward_logits(state, input);
    ConstMatMap z = logits->mat();
    int n = logits->dim(1);
    for (int r = 0; r < z.rows(); ++r) {
      float mx = z.row(r).maxCoeff();
      double denom = 0.0;
      for (int c = 0; c < n; ++c) denom += std::exp(static_cast<double>(z(r, c)) - mx);
      double lse = mx + std::log(denom);
      total += lse - z(r, seq[static_cast<size_t>(r)]);
      ++count;
    }
  }
  return total / static_cast<double>(count);
}

double perplexity(const ModelState& state, std::span<const std::vector<int>> corpus, int bos_id) {
  return std::exp(mean_token_nll(state, corpus, bos_id));
}

}  // namespace ulab
