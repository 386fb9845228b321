#include "ulab/ops.hpp"

#include <cmath>
#include <vector>

namespace ulab {

namespace {

constexpr float kGeluC1 = 0.7978845608028654f;  // sqrt(2/pi)
constexpr float kGeluC2 = 0.044715f;

void check_rank2(const TensorPtr& t, const char* what) {
  require(t && t->ndim() == 2, ErrorKind::dimension, std::string(what) + " must be rank 2");
}

void check_targets(const TensorPtr& logits, std::span<const int> targets) {
  check_rank2(logits, "logits");
  require(static_cast<int>(targets.size()) == logits->dim(0), ErrorKind::dimension,
          "target count must match logits rows");
  int vocab = logits->dim(1);
  for (int t : targets) {
    require(t >= 0 && t < vocab, ErrorKind::index, "target id outside vocabulary");
  }
}

}  // namespace

TensorPtr matmul(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  check_rank2(a, "matmul lhs");
  check_rank2(b, "matmul rhs");
  require(a->dim(1) == b->dim(0), ErrorKind::dimension, "matmul inner dimensions disagree");

  auto out = make_tensor({a->dim(0), b->dim(1)});
  out->mat().noalias() = a->mat() * b->mat();
  out->check_finite("matmul output");
  if (tape) {
    tape->record("matmul", {a, b}, out, [a, b, out] {
      ConstMatMap g(out->grad().data(), out->rows(), out->cols());
      a->grad_mat().noalias() += g * b->mat().transpose();
      b->grad_mat().noalias() += a->mat().transpose() * g;
    });
  }
  return out;
}

TensorPtr add(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  require(a->same_shape(*b), ErrorKind::dimension, "add operands must have identical shapes");
  auto out = make_tensor(a->shape());
  out->mat() = a->mat() + b->mat();
  out->check_finite("add output");
  if (tape) {
    tape->record("add", {a, b}, out, [a, b, out] {
      ConstMatMap g(out->grad().data(), out->rows(), out->cols());
      a->grad_mat() += g;
      b->grad_mat() += g;
    });
  }
  return out;
}

TensorPtr add_row(Tape* tape, const TensorPtr& x, const TensorPtr& bias) {
  check_rank2(x, "add_row input");
  require(bias->ndim() == 1 && bias->dim(0) == x->dim(1), ErrorKind::dimension,
          "bias length must match columns");
  auto out = make_tensor(x->shape());
  out->mat() = x->mat().rowwise() + ConstVecMap(bias->data().data(), bias->size()).transpose();
  out->check_finite("add_row output");
  if (tape) {
    tape->record("add_row", {x, bias}, out, [x, bias, out] {
      ConstMatMap g(out->grad().data(), out->rows(), out->cols());
      x->grad_mat() += g;
      bias->grad_mat() += g.colwise().sum();
    });
  }
  return out;
}

TensorPtr mul_scalar(Tape* tape, const TensorPtr& x, float s) {
  auto out = make_tensor(x->shape());
  out->mat() = x->mat() * s;
  out->check_finite("mul_scalar output");
  if (tape) {
    tape->record("mul_scalar", {x}, out, [x, out, s] {
      ConstMatMap g(out->grad().data(), out->rows(), out->cols());
      x->grad_mat() += g * s;
    });
  }
  return out;
}

TensorPtr sum(Tape* tape, const TensorPtr& x) {
  double acc = 0.0;
  for (float v : x->data()) acc += v;
  auto out = make_scalar(static_cast<float>(acc));
  out->check_finite("sum output");
  if (tape) {
    tape->record("sum", {x}, out, [x, out] {
      float g = out->grad()[0];
      auto xg = x->grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g;
    });
  }
  return out;
}

TensorPtr mean(Tape* tape, const TensorPtr& x) {
  double acc = 0.0;
  for (float v : x->data()) acc += v;
  float inv = 1.0f / static_cast<float>(x->size());
  auto out = make_scalar(static_cast<float>(acc) * inv);
  out->check_finite("mean output");
  if (tape) {
    tape->record("mean", {x}, out, [x, out, inv] {
      float g = out->grad()[0] * inv;
      auto xg = x->grad();
      for (size_t i = 0; i < xg.size(); ++i) xg[i] += g;
    });
  }
  return out;
}

TensorPtr gelu(Tape* tape, const TensorPtr& x) {
  auto out = make_tensor(x->shape());
  auto xd = x->data();
  auto od = out->data();
  for (size_t i = 0; i < xd.size(); ++i) {
    float v = xd[i];
    float u = kGeluC1 * (v + kGeluC2 * v * v * v);
    od[i] = 0.5f * v * (1.0f + std::tanh(u));
  }
  out->check_finite("gelu output");
  if (tape) {
    tape->record("gelu", {x}, out, [x, out] {
      auto g = out->grad();
      auto xd2 = x->data();
      auto xg = x->grad();
      for (size_t i = 0; i < xg.size(); ++i) {
        float v = xd2[i];
        float u = kGeluC1 * (v + kGeluC2 * v * v * v);
        float th = std::tanh(u);
        float du = kGeluC1 * (1.0f + 3.0f * kGeluC2 * v * v);
        float d = 0.5f * (1.0f + th) + 0.5f * v * (1.0f - th * th) * du;
        xg[i] += g[i] * d;
      }
    });
  }
  return out;
}

TensorPtr layer_norm(Tape* tape, const TensorPtr& x, const TensorPtr& gamma,
                     const TensorPtr& beta, float eps) {
  check_rank2(x, "layer_norm input");
  int n = x->dim(1);
  require(gamma->ndim() == 1 && gamma->dim(0) == n, ErrorKind::dimension,
          "layer_norm gamma length must match columns");
  require(beta->ndim() == 1 && beta->dim(0) == n, ErrorKind::dimension,
          "layer_norm beta length must match columns");
  int m = x->dim(0);

  auto out = make_tensor(x->shape());
  auto xhat = std::make_shared<std::vector<float>>(static_cast<size_t>(m) * n);
  auto inv_std = std::make_shared<std::vector<float>>(static_cast<size_t>(m));

  auto xd = x->data();
  auto od = out->data();
  auto gd = gamma->data();
  auto bd = beta->data();
  for (int r = 0; r < m; ++r) {
    const float* row = xd.data() + static_cast<size_t>(r) * n;
    float* orow = od.data() + static_cast<size_t>(r) * n;
    float* hrow = xhat->data() + static_cast<size_t>(r) * n;
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += row[c];
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) {
      double d = row[c] - mu;
      var += d * d;
    }
    var /= n;
    float istd = static_cast<float>(1.0 / std::sqrt(var + eps));
    (*inv_std)[static_cast<size_t>(r)] = istd;
    for (int c = 0; c < n; ++c) {
      float h = (row[c] - static_cast<float>(mu)) * istd;
      hrow[c] = h;
      orow[c] = h * gd[c] + bd[c];
    }
  }
  out->check_finite("layer_norm output");
  if (tape) {
    tape->record("layer_norm", {x, gamma, beta}, out, [x, gamma, beta, out, xhat, inv_std, n, m] {
      auto g = out->grad();
      auto xg = x->grad();
      auto gg = gamma->grad();
      auto bg = beta->grad();
      auto gd2 = gamma->data();
      for (int r = 0; r < m; ++r) {
        const float* grow = g.data() + static_cast<size_t>(r) * n;
        const float* hrow = xhat->data() + static_cast<size_t>(r) * n;
        float* xgrow = xg.data() + static_cast<size_t>(r) * n;
        float istd = (*inv_std)[static_cast<size_t>(r)];
        double sum_dh = 0.0;
        double sum_dh_h = 0.0;
        for (int c = 0; c < n; ++c) {
          float dh = grow[c] * gd2[c];
          sum_dh += dh;
          sum_dh_h += static_cast<double>(dh) * hrow[c];
          gg[static_cast<size_t>(c)] += grow[c] * hrow[c];
          bg[static_cast<size_t>(c)] += grow[c];
        }
        float mean_dh = static_cast<float>(sum_dh / n);
        float mean_dh_h = static_cast<float>(sum_dh_h / n);
        for (int c = 0; c < n; ++c) {
          float dh = grow[c] * gd2[c];
          xgrow[c] += istd * (dh - mean_dh - hrow[c] * mean_dh_h);
        }
      }
    });
  }
  return out;
}

TensorPtr embed(Tape* tape, const TensorPtr& tok_emb, const TensorPtr& pos_emb,
                std::span<const int> ids) {
  check_rank2(tok_emb, "token embedding");
  check_rank2(pos_emb, "position embedding");
  require(tok_emb->dim(1) == pos_emb->dim(1), ErrorKind::dimension,
          "embedding widths disagree");
  int t_len = static_cast<int>(ids.size());
  require(t_len >= 1, ErrorKind::dimension, "embed requires at least one token");
  require(t_len <= pos_emb->dim(0), ErrorKind::length,
          "sequence longer than the position table");
  int vocab = tok_emb->dim(0);
  for (int id : ids) {
    require(id >= 0 && id < vocab, ErrorKind::index, "token id outside vocabulary");
  }
  int d = tok_emb->dim(1);
  auto out = make_tensor({t_len, d});
  for (int r = 0; r < t_len; ++r) {
    out->mat().row(r) = tok_emb->mat().row(ids[static_cast<size_t>(r)]) + pos_emb->mat().row(r);
  }
  out->check_finite("embed output");
  if (tape) {
    std::vector<int> ids_copy(ids.begin(), ids.end());
    tape->record("embed", {tok_emb, pos_emb}, out, [tok_emb, pos_emb, out, ids_copy, t_len] {
      ConstMatMap g(out->grad().data(), out->rows(), out->cols());
      auto tg = tok_emb->grad_mat();
      auto pg = pos_emb->grad_mat();
      for (int r = 0; r < t_len; ++r) {
        tg.row(ids_copy[static_cast<size_t>(r)]) += g.row(r);
        pg.row(r) += g.row(r);
      }
    });
  }
  return out;
}

TensorPtr causal_self_attention(Tape* tape, const TensorPtr& q, const TensorPtr& k,
                                const TensorPtr& v, int n_heads) {
  check_rank2(q, "attention q");
  require(q->same_shape(*k) && q->same_shape(*v), ErrorKind::dimension,
          "attention q/k/v shapes disagree");
  int t_len = q->dim(0);
  int d = q->dim(1);
  require(n_heads >= 1 && d % n_heads == 0, ErrorKind::dimension,
          "head count must divide the model width");
  int hd = d / n_heads;
  float scale = 1.0f / std::sqrt(static_cast<float>(hd));

  auto out = make_tensor({t_len, d});
  // per-head attention probabilities, kept for the backward pass
  auto probs = std::make_shared<std::vector<MatrixRM>>();
  probs->reserve(static_cast<size_t>(n_heads));

  for (int h = 0; h < n_heads; ++h) {
    int c0 = h * hd;
    auto qh = q->mat().middleCols(c0, hd);
    auto kh = k->mat().middleCols(c0, hd);
    auto vh = v->mat().middleCols(c0, hd);
    MatrixRM scores = (qh * kh.transpose()) * scale;  // [T x T]
    MatrixRM p = MatrixRM::Zero(t_len, t_len);
    for (int r = 0; r < t_len; ++r) {
      float mx = scores.row(r).head(r + 1).maxCoeff();
      double denom = 0.0;
      for (int c = 0; c <= r; ++c) {
        float e = std::exp(scores(r, c) - mx);
        p(r, c) = e;
        denom += e;
      }
      float inv = static_cast<float>(1.0 / denom);
      for (int c = 0; c <= r; ++c) p(r, c) *= inv;
    }
    out->mat().middleCols(c0, hd).noalias() = p * vh;
    probs->push_back(std::move(p));
  }
  out->check_finite("attention output");

  if (tape) {
    tape->record("causal_self_attention", {q, k, v}, out,
                 [q, k, v, out, probs, n_heads, hd, scale, t_len] {
                   ConstMatMap g(out->grad().data(), out->rows(), out->cols());
                   auto qg = q->grad_mat();
                   auto kg = k->grad_mat();
                   auto vg = v->grad_mat();
                   for (int h = 0; h < n_heads; ++h) {
                     int c0 = h * hd;
                     const MatrixRM& p = (*probs)[static_cast<size_t>(h)];
                     auto gh = g.middleCols(c0, hd);
                     auto qh = q->mat().middleCols(c0, hd);
                     auto kh = k->mat().middleCols(c0, hd);
                     auto vh = v->mat().middleCols(c0, hd);
                     MatrixRM dp = gh * vh.transpose();           // [T x T]
                     MatrixRM ds = MatrixRM::Zero(t_len, t_len);  // softmax backward per row
                     for (int r = 0; r < t_len; ++r) {
                       double dot = 0.0;
                       for (int c = 0; c <= r; ++c) dot += static_cast<double>(dp(r, c)) * p(r, c);
                       for (int c = 0; c <= r; ++c) {
                         ds(r, c) = p(r, c) * (dp(r, c) - static_cast<float>(dot));
                       }
                     }
                     qg.middleCols(c0, hd).noalias() += scale * (ds * kh);
                     kg.middleCols(c0, hd).noalias() += scale * (ds.transpose() * qh);
                     vg.middleCols(c0, hd).noalias() += p.transpose() * gh;
                   }
                 });
  }
  return out;
}

TensorPtr log_softmax_rows(Tape* tape, const TensorPtr& z) {
  check_rank2(z, "log_softmax input");
  require(z->dim(1) >= 2, ErrorKind::dimension, "log_softmax needs at least two columns");
  z->check_finite("log_softmax input");
  int m = z->dim(0);
  int n = z->dim(1);
  auto out = make_tensor(z->shape());
  auto zd = z->data();
  auto od = out->data();
  for (int r = 0; r < m; ++r) {
    const float* row = zd.data() + static_cast<size_t>(r) * n;
    float* orow = od.data() + static_cast<size_t>(r) * n;
    float mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < n; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    float lse = mx + static_cast<float>(std::log(denom));
    for (int c = 0; c < n; ++c) orow[c] = row[c] - lse;
  }
  out->check_finite("log_softmax output");
  if (tape) {
    tape->record("log_softmax_rows", {z}, out, [z, out, m, n] {
      auto g = out->grad();
      auto od2 = out->data();
      auto zg = z->grad();
      for (int r = 0; r < m; ++r) {
        const float* grow = g.data() + static_cast<size_t>(r) * n;
        const float* orow = od2.data() + static_cast<size_t>(r) * n;
        float* zgrow = zg.data() + static_cast<size_t>(r) * n;
        double gsum = 0.0;
        for (int c = 0; c < n; ++c) gsum += grow[c];
        for (int c = 0; c < n; ++c) {
          zgrow[c] += grow[c] - std::exp(orow[c]) * static_cast<float>(gsum);
        }
      }
    });
  }
  return out;
}

TensorPtr nll_loss(Tape* tape, const TensorPtr& logits, std::span<const int> targets) {
  check_targets(logits, targets);
  logits->check_finite("nll_loss input");
  int m = logits->dim(0);
  int n = logits->dim(1);
  auto zd = logits->data();
  auto lse = std::make_shared<std::vector<float>>(static_cast<size_t>(m));
  double acc = 0.0;
  for (int r = 0; r < m; ++r) {
    const float* row = zd.data() + static_cast<size_t>(r) * n;
    float mx = row[0];
    for (int c = 1; c < n; ++c) mx = std::max(mx, row[c]);
    double denom = 0.0;
    for (int c = 0; c < n; ++c) denom += std::exp(static_cast<double>(row[c]) - mx);
    float l = mx + static_cast<float>(std::log(denom));
    (*lse)[static_cast<size_t>(r)] = l;
    acc += static_cast<double>(l) - row[targets[static_cast<size_t>(r)]];
  }
  auto out = make_scalar(static_cast<float>(acc / m));
  out->check_finite("nll_loss output");
  if (tape) {
    std::vector<int> tcopy(targets.begin(), targets.end());
    tape->record("nll_loss", {logits}, out, [logits, out, lse, tcopy, m, n] {
      float gl = out->grad()[0] / static_cast<float>(m);
      auto zd2 = logits->data();
      auto zg = logits->grad();
      for (int r = 0; r < m; ++r) {
        const float* row = zd2.data() + static_cast<size_t>(r) * n;
        float* grow = zg.data() + static_cast<size_t>(r) * n;
        float l = (*lse)[static_cast<size_t>(r)];
        for (int c = 0; c < n; ++c) {
          float p = std::exp(row[c] - l);
          grow[c] += gl * (p - (c == tcopy[static_cast<size_t>(r)] ? 1.0f : 0.0f));
        }
      }
    });
  }
  return out;
}

TensorPtr unlikelihood_loss(Tape* tape, const TensorPtr& logits, std::span<const int> targets,
                            bool* clamped) {
  check_targets(logits, targets);
  logits->check_finite("unlikelihood_loss input");
  int m = logits->dim(0);
  int n = logits->dim(1);
  require(n >= 2, ErrorKind::dimension, "unlikelihood_loss needs at least two columns");
  auto zd = logits->data();
  auto lse_all = std::make_shared<std::vector<float>>(static_cast<size_t>(m));
  auto lse_ex = std::make_shared<std::vector<float>>(static_cast<size_t>(m));
  bool any_clamped = false;
  double acc = 0.0;
  for (int r = 0; r < m; ++r) {
    const float* row = zd.data() + static_cast<size_t>(r) * n;
    int t = targets[static_cast<size_t>(r)];
    float mx_all = row[0];
    for (int c = 1; c < n; ++c) mx_all = std::max(mx_all, row[c]);
    float mx_ex = t == 0 ? row[1] : row[0];
    for (int c = 0; c < n; ++c) {
      if (c != t) mx_ex = std::max(mx_ex, row[c]);
    }
    double s_all = 0.0;
    double s_ex = 0.0;
    for (int c = 0; c < n; ++c) {
      s_all += std::exp(static_cast<double>(row[c]) - mx_all);
      if (c != t) s_ex += std::exp(static_cast<double>(row[c]) - mx_ex);
    }
    float la = mx_all + static_cast<float>(std::log(s_all));
    float le = mx_ex + static_cast<float>(std::log(s_ex));
    (*lse_all)[static_cast<size_t>(r)] = la;
    (*lse_ex)[static_cast<size_t>(r)] = le;
    float term = std::max(la - le, 0.0f);  // -log(1 - p_target), >= 0
    if (term > kUnlikelihoodClamp) {
      term = kUnlikelihoodClamp;  // p clamped at 1 - 1e-12
      any_clamped = true;
    }
    acc += term;
  }
  if (clamped) *clamped = any_clamped;
  auto out = make_scalar(static_cast<float>(acc));
  out->check_finite("unlikelihood_loss output");
  if (tape) {
    std::vector<int> tcopy(targets.begin(), targets.end());
    tape->record("unlikelihood_loss", {logits}, out, [logits, out, lse_all, lse_ex, tcopy, m, n] {
      float gl = out->grad()[0];
      auto zd2 = logits->data();
      auto zg = logits->grad();
      for (int r = 0; r < m; ++r) {
        const float* row = zd2.data() + static_cast<size_t>(r) * n;
        float* grow = zg.data() + static_cast<size_t>(r) * n;
        int t = tcopy[static_cast<size_t>(r)];
        float la = (*lse_all)[static_cast<size_t>(r)];
        float le = (*lse_ex)[static_cast<size_t>(r)];
        for (int c = 0; c < n; ++c) {
          float p = std::exp(row[c] - la);
          float q = c == t ? 0.0f : std::exp(row[c] - le);
          grow[c] += gl * (p - q);
        }
      }
    });
  }
  return out;
}

}  // namespace ulab
