#pragma once

// Weights live in one flat float32 buffer with a fixed tensor order; all
// arithmetic runs in double. Inference is incremental (per-token) with
// per-layer key/value caches, so generation cost is linear in new tokens.
// Per-head attention outputs can be captured and additively edited before the
// output projection.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <numbers>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/lm/config.hpp"

namespace cotsteer::lm {

struct TensorInfo {
  std::string name;
  size_t rows, cols, offset;
  size_t count() const { return rows * cols; }
};

struct ModelWeights {
  ModelConfig cfg;
  std::vector<float> data;

  static std::vector<TensorInfo> layout(const ModelConfig& cfg) {
    const size_t d = cfg.d_model, ff = cfg.d_ff(), V = cfg.vocab_size, T = cfg.max_seq_len;
    std::vector<TensorInfo> out;
    size_t off = 0;
    auto add = [&](std::string name, size_t rows, size_t cols) {
      out.push_back({std::move(name), rows, cols, off});
      off += rows * cols;
    };
    add("tok_emb", V, d);
    add("pos_emb", T, d);
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      add(p + "ln1_g", 1, d);
      add(p + "ln1_b", 1, d);
      add(p + "wq", d, d);
      add(p + "bq", 1, d);
      add(p + "wk", d, d);
      add(p + "bk", 1, d);
      add(p + "wv", d, d);
      add(p + "bv", 1, d);
      add(p + "wo", d, d);
      add(p + "bo", 1, d);
      add(p + "ln2_g", 1, d);
      add(p + "ln2_b", 1, d);
      add(p + "w1", ff, d);
      add(p + "b1", 1, ff);
      add(p + "w2", d, ff);
      add(p + "b2", 1, d);
    }
    add("lnf_g", 1, d);
    add("lnf_b", 1, d);
    add("w_out", V, d);
    return out;
  }

  size_t param_count() const { return data.size(); }

  const TensorInfo& info(const std::string& name) const {
    cached_layout();
    for (const auto& t : layout_) {
      if (t.name == name) return t;
    }
    fail(Errc::config_invalid, "no tensor named " + name);
  }

  const float* tensor(const std::string& name) const { return data.data() + info(name).offset; }
  float* tensor(const std::string& name) { return data.data() + info(name).offset; }

  uint64_t checksum() const {
    uint64_t h = 1469598103934665603ULL;
    const unsigned char* p = reinterpret_cast<const unsigned char*>(data.data());
    for (size_t i = 0; i < data.size() * sizeof(float); ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
    return h;
  }

 private:
  void cached_layout() const {
    if (layout_.empty()) layout_ = layout(cfg);
  }
  mutable std::vector<TensorInfo> layout_;
};

inline ModelWeights init_model(const ModelConfig& cfg) {
  cfg.validate();
  ModelWeights w;
  w.cfg = cfg;
  const auto tensors = ModelWeights::layout(cfg);
  size_t total = 0;
  for (const auto& t : tensors) total += t.count();
  w.data.assign(total, 0.0f);

  Rng rng(cfg.seed);
  const double base_std = 0.02;
  // Residual-facing projections are shrunk by sqrt(2L), as usual for deep stacks.
  const double resid_std = base_std / std::sqrt(2.0 * cfg.n_layers);
  for (const auto& t : tensors) {
    const std::string suffix =
        t.name.find('.') == std::string::npos ? t.name : t.name.substr(t.name.find('.') + 1);
    float* p = w.data.data() + t.offset;
    if (suffix.ends_with("_g")) {
      std::fill(p, p + t.count(), 1.0f);
    } else if (suffix[0] == 'b' || suffix.ends_with("_b")) {
      // biases stay zero
    } else {
      const double std = (suffix == "wo" || suffix == "w2") ? resid_std : base_std;
      for (size_t i = 0; i < t.count(); ++i) p[i] = float(rng.next_normal() * std);
    }
  }
  return w;
}

struct CaptureSpec {
  int layer, head;
};

struct EditDirective {
  int layer, head;
  std::vector<double> delta;  // length d_head, added to the head output
  int from_pos = 0;           // first position the edit applies to
};

struct HeadActivation {
  int layer, head, position;
  std::vector<double> values;
};

struct ForwardResult {
  std::vector<std::vector<double>> logits;  // one row per position
  std::vector<HeadActivation> captured;
};

namespace detail {

inline void validate_hooks(const ModelConfig& cfg, const std::vector<CaptureSpec>& capture,
                           const std::vector<EditDirective>& edits) {
  for (const auto& c : capture) {
    if (c.layer < 0 || c.layer >= cfg.n_layers || c.head < 0 || c.head >= cfg.n_heads)
      fail(Errc::bad_request, "capture target out of range");
  }
  for (const auto& e : edits) {
    if (e.layer < 0 || e.layer >= cfg.n_layers || e.head < 0 || e.head >= cfg.n_heads)
      fail(Errc::bad_request, "edit target out of range");
    if ((int)e.delta.size() != cfg.d_head())
      fail(Errc::bad_request, "edit delta length must equal d_head");
    if (e.from_pos < 0) fail(Errc::bad_request, "edit from_pos must be non-negative");
  }
}

inline void layer_norm(const float* g, const float* b, const double* x, double* out, int d) {
  double mu = 0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0;
  for (int i = 0; i < d; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= d;
  const double rstd = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < d; ++i) out[i] = (x[i] - mu) * rstd * double(g[i]) + double(b[i]);
}

inline void matvec(const float* __restrict W, const float* bias, const double* __restrict x,
                   double* __restrict y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* row = W + size_t(r) * cols;
    double acc = bias ? double(bias[r]) : 0.0;
    for (int c = 0; c < cols; ++c) acc += double(row[c]) * x[c];
    y[r] = acc;
  }
}

inline double gelu(double x) { return 0.5 * x * (1.0 + std::erf(x / std::numbers::sqrt2)); }

struct LayerPtrs {
  const float *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1,
      *w2, *b2;
};

inline std::vector<LayerPtrs> resolve_layers(const ModelWeights& w) {
  std::vector<LayerPtrs> out;
  for (int l = 0; l < w.cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    out.push_back({w.tensor(p + "ln1_g"), w.tensor(p + "ln1_b"), w.tensor(p + "wq"),
                   w.tensor(p + "bq"), w.tensor(p + "wk"), w.tensor(p + "bk"),
                   w.tensor(p + "wv"), w.tensor(p + "bv"), w.tensor(p + "wo"),
                   w.tensor(p + "bo"), w.tensor(p + "ln2_g"), w.tensor(p + "ln2_b"),
                   w.tensor(p + "w1"), w.tensor(p + "b1"), w.tensor(p + "w2"),
                   w.tensor(p + "b2")});
  }
  return out;
}

// Incremental decoding state: one forward position at a time, caching keys
// and values per layer. All public entry points funnel through this, so
// full-sequence and token-by-token execution agree bit for bit.
class InferState {
 public:
  explicit InferState(const ModelWeights& w)
      : w_(w),
        layers_(resolve_layers(w)),
        tok_emb_(w.tensor("tok_emb")),
        pos_emb_(w.tensor("pos_emb")),
        lnf_g_(w.tensor("lnf_g")),
        lnf_b_(w.tensor("lnf_b")),
        w_out_(w.tensor("w_out")) {
    w.cfg.validate();
    kc_.resize(w.cfg.n_layers);
    vc_.resize(w.cfg.n_layers);
  }

  int pos() const { return t_; }

  std::vector<double> step(int token, const std::vector<CaptureSpec>& capture,
                           const std::vector<EditDirective>& edits,
                           std::vector<HeadActivation>* captured) {
    const ModelConfig& cfg = w_.cfg;
    const int d = cfg.d_model, dh = cfg.d_head(), H = cfg.n_heads, ff = cfg.d_ff();
    if (t_ >= cfg.max_seq_len)
      fail(Errc::seq_too_long, "sequence exceeds max_seq_len=" + std::to_string(cfg.max_seq_len));
    if (token < 0 || token >= cfg.vocab_size)
      fail(Errc::unknown_token, "token id out of range: " + std::to_string(token));

    std::vector<double> x(d), h1(d), q(d), k(d), v(d), z(d), o(d), h2(d), u(ff), a(ff);
    for (int i = 0; i < d; ++i)
      x[i] = double(tok_emb_[size_t(token) * d + i]) + double(pos_emb_[size_t(t_) * d + i]);

    for (int l = 0; l < cfg.n_layers; ++l) {
      const LayerPtrs& L = layers_[l];
      layer_norm(L.ln1_g, L.ln1_b, x.data(), h1.data(), d);
      matvec(L.wq, L.bq, h1.data(), q.data(), d, d);
      matvec(L.wk, L.bk, h1.data(), k.data(), d, d);
      matvec(L.wv, L.bv, h1.data(), v.data(), d, d);
      kc_[l].insert(kc_[l].end(), k.begin(), k.end());
      vc_[l].insert(vc_[l].end(), v.begin(), v.end());

      const int n_ctx = t_ + 1;
      const double scale = 1.0 / std::sqrt(double(dh));
      std::vector<double> scores(n_ctx);
      for (int h = 0; h < H; ++h) {
        const int hoff = h * dh;
        double mx = -1e300;
        for (int s = 0; s < n_ctx; ++s) {
          const double* ks = kc_[l].data() + size_t(s) * d + hoff;
          double acc = 0;
          for (int i = 0; i < dh; ++i) acc += q[hoff + i] * ks[i];
          scores[s] = acc * scale;
          mx = std::max(mx, scores[s]);
        }
        double denom = 0;
        for (int s = 0; s < n_ctx; ++s) {
          scores[s] = std::exp(scores[s] - mx);
          denom += scores[s];
        }
        for (int i = 0; i < dh; ++i) z[hoff + i] = 0.0;
        for (int s = 0; s < n_ctx; ++s) {
          const double p = scores[s] / denom;
          const double* vs = vc_[l].data() + size_t(s) * d + hoff;
          for (int i = 0; i < dh; ++i) z[hoff + i] += p * vs[i];
        }
      }
      for (const auto& e : edits) {
        if (e.layer != l || t_ < e.from_pos) continue;
        for (int i = 0; i < dh; ++i) z[e.head * dh + i] += e.delta[i];
      }
      if (captured) {
        for (const auto& c : capture) {
          if (c.layer != l) continue;
          HeadActivation act;
          act.layer = l;
          act.head = c.head;
          act.position = t_;
          act.values.assign(z.begin() + c.head * dh, z.begin() + (c.head + 1) * dh);
          captured->push_back(std::move(act));
        }
      }
      matvec(L.wo, L.bo, z.data(), o.data(), d, d);
      for (int i = 0; i < d; ++i) x[i] += o[i];

      layer_norm(L.ln2_g, L.ln2_b, x.data(), h2.data(), d);
      matvec(L.w1, L.b1, h2.data(), u.data(), ff, d);
      for (int i = 0; i < ff; ++i) a[i] = gelu(u[i]);
      matvec(L.w2, L.b2, a.data(), o.data(), d, ff);
      for (int i = 0; i < d; ++i) x[i] += o[i];
    }

    std::vector<double> xf(d), logits(cfg.vocab_size);
    layer_norm(lnf_g_, lnf_b_, x.data(), xf.data(), d);
    matvec(w_out_, nullptr, xf.data(), logits.data(), cfg.vocab_size, d);
    ++t_;
    return logits;
  }

 private:
  const ModelWeights& w_;
  std::vector<LayerPtrs> layers_;
  const float *tok_emb_, *pos_emb_, *lnf_g_, *lnf_b_, *w_out_;
  int t_ = 0;
  std::vector<std::vector<double>> kc_, vc_;
};

inline int sample_from_logits(const std::vector<double>& logits, double tau, Rng& rng) {
  if (tau == 0.0) {
    int best = 0;
    for (size_t i = 1; i < logits.size(); ++i)
      if (logits[i] > logits[best]) best = int(i);
    return best;
  }
  double mx = logits[0];
  for (double l : logits) mx = std::max(mx, l);
  std::vector<double> p(logits.size());
  double sum = 0;
  for (size_t i = 0; i < logits.size(); ++i) {
    p[i] = std::exp((logits[i] - mx) / tau);
    sum += p[i];
  }
  const double r = rng.next_double() * sum;
  double acc = 0;
  for (size_t i = 0; i < p.size(); ++i) {
    acc += p[i];
    if (r < acc) return int(i);
  }
  return int(p.size()) - 1;
}

}  // namespace detail

inline ForwardResult forward(const ModelWeights& w, const std::vector<int>& tokens,
                             const std::vector<CaptureSpec>& capture = {},
                             const std::vector<EditDirective>& edits = {}) {
  detail::validate_hooks(w.cfg, capture, edits);
  if ((int)tokens.size() > w.cfg.max_seq_len)
    fail(Errc::seq_too_long, "input length " + std::to_string(tokens.size()) + " exceeds " +
                                 std::to_string(w.cfg.max_seq_len));
  ForwardResult out;
  detail::InferState state(w);
  for (int tok : tokens) out.logits.push_back(state.step(tok, capture, edits, &out.captured));
  return out;
}

struct GenParams {
  double tau = 0.0;
  int max_new = 24;
  uint64_t seed = 0;
  int end_token = -1;  // stop when sampled; -1 disables
};

struct GenResult {
  std::vector<int> new_tokens;  // excludes the end token
};

inline GenResult generate(const ModelWeights& w, const std::vector<int>& prompt,
                          const GenParams& gp, const std::vector<EditDirective>& edits = {}) {
  detail::validate_hooks(w.cfg, {}, edits);
  if (prompt.empty()) fail(Errc::bad_request, "empty prompt");
  if ((int)prompt.size() > w.cfg.max_seq_len)
    fail(Errc::seq_too_long, "prompt length " + std::to_string(prompt.size()) + " exceeds " +
                                 std::to_string(w.cfg.max_seq_len));
  if (gp.tau < 0.0) fail(Errc::bad_request, "tau must be >= 0");

  detail::InferState state(w);
  std::vector<double> logits;
  for (int tok : prompt) logits = state.step(tok, {}, edits, nullptr);

  Rng rng(gp.seed);
  GenResult out;
  while ((int)out.new_tokens.size() < gp.max_new) {
    const int tok = detail::sample_from_logits(logits, gp.tau, rng);
    if (tok == gp.end_token) break;
    out.new_tokens.push_back(tok);
    if (state.pos() >= w.cfg.max_seq_len) break;  // context exhausted
    if ((int)out.new_tokens.size() >= gp.max_new) break;
    logits = state.step(tok, {}, edits, nullptr);
  }
  return out;
}

// Softmax over the final position restricted to the given option token ids.
inline std::vector<double> answer_distribution(const ModelWeights& w,
                                               const std::vector<int>& tokens,
                                               const std::vector<int>& option_ids,
                                               const std::vector<EditDirective>& edits = {}) {
  detail::validate_hooks(w.cfg, {}, edits);
  if (tokens.empty()) fail(Errc::bad_request, "empty prompt");
  if (option_ids.empty()) fail(Errc::unknown_option, "no option tokens given");
  for (int id : option_ids)
    if (id < 0 || id >= w.cfg.vocab_size)
      fail(Errc::unknown_option, "option token id out of range: " + std::to_string(id));
  if ((int)tokens.size() > w.cfg.max_seq_len)
    fail(Errc::seq_too_long, "input length exceeds max_seq_len");

  detail::InferState state(w);
  std::vector<double> logits;
  for (int tok : tokens) logits = state.step(tok, {}, edits, nullptr);

  double mx = -1e300;
  for (int id : option_ids) mx = std::max(mx, logits[id]);
  std::vector<double> p(option_ids.size());
  double sum = 0;
  for (size_t i = 0; i < option_ids.size(); ++i) {
    p[i] = std::exp(logits[option_ids[i]] - mx);
    sum += p[i];
  }
  for (auto& x : p) x /= sum;
  return p;
}

}  // namespace cotsteer::lm
