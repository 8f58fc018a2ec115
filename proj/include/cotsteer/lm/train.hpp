#pragma once

// Training-side forward/backward. The forward here processes a whole sequence
// at once and saves every intermediate needed for an exact backward pass; all
// math is double over the float32 parameter storage, so analytic gradients
// match finite differences of the actually-stored weights. corpus_loss,
// loss_gradient and train all share this one path.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

#include "cotsteer/common/errors.hpp"
#include "cotsteer/common/rng.hpp"
#include "cotsteer/lm/config.hpp"
#include "cotsteer/lm/model.hpp"

namespace cotsteer::lm {

struct TrainExample {
  TokenSeq seq;
  int loss_from = 1;  // first sequence position whose token is a target
};

struct TrainHyper {
  double lr = 1e-3;
  int steps = 100;
  int batch_size = 8;
  uint64_t seed = 0;
  double weight_decay = 0.01;
  double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
  int warmup_steps = 10;
  double final_lr_frac = 0.0;
  double clip_norm = 1.0;  // global L2; 0 disables

  void validate() const {
    if (!(lr > 0) || steps < 1 || batch_size < 1 || warmup_steps < 0 || clip_norm < 0 ||
        final_lr_frac < 0 || final_lr_frac > 1 || !(beta1 >= 0 && beta1 < 1) ||
        !(beta2 >= 0 && beta2 < 1))
      fail(Errc::config_invalid, "bad training hyperparameters");
  }
};

struct LoraConfig {
  int rank = 8;
  uint64_t seed = 0;
  double init_std = 0.02;
  double alpha = 16.0;
};

// Low-rank adapters on the attention q and v projections of every layer.
// Effective weight: W + scale * B * A with A (rank x d) random, B (d x rank)
// zero at init, so a fresh adapter is an exact no-op.
struct LoraState {
  LoraConfig cfg;
  std::vector<float> data;

  static std::vector<TensorInfo> layout(const ModelConfig& mc, int rank) {
    std::vector<TensorInfo> out;
    size_t off = 0;
    const size_t d = mc.d_model, r = size_t(rank);
    auto add = [&](std::string name, size_t rows, size_t cols) {
      out.push_back({std::move(name), rows, cols, off});
      off += rows * cols;
    };
    for (int l = 0; l < mc.n_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      add(p + "aq", r, d);
      add(p + "bq", d, r);
      add(p + "av", r, d);
      add(p + "bv", d, r);
    }
    return out;
  }

  static LoraState init(const ModelConfig& mc, const LoraConfig& lc) {
    mc.validate();
    if (lc.rank < 1 || lc.rank > mc.d_model)
      fail(Errc::config_invalid, "adapter rank out of range");
    LoraState st;
    st.cfg = lc;
    const auto tensors = layout(mc, lc.rank);
    size_t total = 0;
    for (const auto& t : tensors) total += t.count();
    st.data.assign(total, 0.0f);
    Rng rng(lc.seed);
    for (const auto& t : tensors) {
      const std::string suffix = t.name.substr(t.name.find('.') + 1);
      if (suffix[0] != 'a') continue;  // b* stay zero
      float* p = st.data.data() + t.offset;
      for (size_t i = 0; i < t.count(); ++i) p[i] = float(rng.next_normal() * lc.init_std);
    }
    return st;
  }

  double scale() const { return cfg.alpha / double(cfg.rank); }
};

struct TrainResult {
  ModelWeights weights;  // trained copy, or base merged with the adapters
  std::vector<double> losses;
  std::optional<LoraState> adapters;
};

namespace detail {

inline void validate_example(const ModelConfig& cfg, const TrainExample& ex) {
  const auto& ids = ex.seq.ids;
  if (ids.size() < 2) fail(Errc::bad_request, "training sequence needs at least two tokens");
  if ((int)ids.size() > cfg.max_seq_len)
    fail(Errc::seq_too_long, "training sequence exceeds max_seq_len");
  for (int id : ids)
    if (id < 0 || id >= cfg.vocab_size)
      fail(Errc::unknown_token, "training token id out of range: " + std::to_string(id));
  if (ex.loss_from < 1 || ex.loss_from >= (int)ids.size())
    fail(Errc::bad_request, "loss_from must lie in [1, len-1]");
}

inline size_t tensor_offset(const std::vector<TensorInfo>& layout, const std::string& name) {
  for (const auto& t : layout)
    if (t.name == name) return t.offset;
  fail(Errc::config_invalid, "no tensor named " + name);
}

struct LoraLayerPtrs {
  const float *aq, *bq, *av, *bv;
};

struct LoraAttach {
  const LoraState* st;
  int rank;
  double scale;
  std::vector<LoraLayerPtrs> layers;
};

inline LoraAttach attach_lora(const ModelConfig& mc, const LoraState& st) {
  LoraAttach at;
  at.st = &st;
  at.rank = st.cfg.rank;
  at.scale = st.scale();
  const auto layout = LoraState::layout(mc, st.cfg.rank);
  size_t total = 0;
  for (const auto& t : layout) total += t.count();
  if (st.data.size() != total) fail(Errc::config_invalid, "adapter state does not match model");
  for (int l = 0; l < mc.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    at.layers.push_back({st.data.data() + tensor_offset(layout, p + "aq"),
                         st.data.data() + tensor_offset(layout, p + "bq"),
                         st.data.data() + tensor_offset(layout, p + "av"),
                         st.data.data() + tensor_offset(layout, p + "bv")});
  }
  return at;
}

inline void layer_norm_fwd(const float* g, const float* b, const double* x, double* y, int d,
                           double& mu_out, double& rs_out) {
  double mu = 0;
  for (int i = 0; i < d; ++i) mu += x[i];
  mu /= d;
  double var = 0;
  for (int i = 0; i < d; ++i) {
    const double c = x[i] - mu;
    var += c * c;
  }
  var /= d;
  const double rs = 1.0 / std::sqrt(var + 1e-5);
  for (int i = 0; i < d; ++i) y[i] = (x[i] - mu) * rs * double(g[i]) + double(b[i]);
  mu_out = mu;
  rs_out = rs;
}

// dx_add accumulates; dg/db may be null.
inline void layer_norm_bwd(const float* g, const double* x, double mu, double rs,
                           const double* dy, double* dx_add, double* dg, double* db, int d) {
  double m1 = 0, m2 = 0;
  for (int i = 0; i < d; ++i) {
    const double xh = (x[i] - mu) * rs;
    const double t = dy[i] * double(g[i]);
    m1 += t;
    m2 += t * xh;
    if (dg) dg[i] += dy[i] * xh;
    if (db) db[i] += dy[i];
  }
  m1 /= d;
  m2 /= d;
  for (int i = 0; i < d; ++i) {
    const double xh = (x[i] - mu) * rs;
    dx_add[i] += rs * (dy[i] * double(g[i]) - m1 - xh * m2);
  }
}

// y[r] = bias[r] + sum_c W[r,c] x[c]
inline void mv(const float* __restrict W, const float* bias, const double* __restrict x,
               double* __restrict y, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const float* row = W + size_t(r) * cols;
    double acc = bias ? double(bias[r]) : 0.0;
    for (int c = 0; c < cols; ++c) acc += double(row[c]) * x[c];
    y[r] = acc;
  }
}

// dx[c] += sum_r W[r,c] dy[r], walking rows so access stays sequential
inline void mv_t_add(const float* __restrict W, const double* __restrict dy,
                     double* __restrict dx, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double dyr = dy[r];
    if (dyr == 0.0) continue;
    const float* row = W + size_t(r) * cols;
    for (int c = 0; c < cols; ++c) dx[c] += double(row[c]) * dyr;
  }
}

// dW[r,c] += dy[r] x[c], db[r] += dy[r]
inline void outer_add(double* __restrict dW, double* db, const double* __restrict dy,
                      const double* __restrict x, int rows, int cols) {
  for (int r = 0; r < rows; ++r) {
    const double dyr = dy[r];
    if (db) db[r] += dyr;
    if (dyr == 0.0) continue;
    double* row = dW + size_t(r) * cols;
    for (int c = 0; c < cols; ++c) row[c] += dyr * x[c];
  }
}

inline double dgelu(double x) {
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  const double cdf = 0.5 * (1.0 + std::erf(x / std::numbers::sqrt2));
  return cdf + x * inv_sqrt2pi * std::exp(-0.5 * x * x);
}

struct TrainLayerWork {
  std::vector<double> x_in, h1, q, k, v, z, x_mid, h2;  // n*d
  std::vector<double> u, a;                             // n*ff
  std::vector<double> probs;                            // H*n*n
  std::vector<double> mu1, rs1, mu2, rs2;               // n
  std::vector<double> aq, av;                           // n*rank
};

struct TrainWork {
  std::vector<TrainLayerWork> layers;
  std::vector<double> x_out, xf;     // n*d
  std::vector<double> logits, sm;    // n*V (sm rows filled for target rows only)
  std::vector<double> mu_f, rs_f;    // n
};

// Returns the example's masked mean cross-entropy and fills work.
inline double train_forward(const ModelWeights& w, const LoraAttach* lora,
                            const TrainExample& ex, TrainWork& work) {
  const ModelConfig& cfg = w.cfg;
  const int n = (int)ex.seq.ids.size();
  const int d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head(), ff = cfg.d_ff(),
            V = cfg.vocab_size;
  const int r = lora ? lora->rank : 0;
  const auto layers = resolve_layers(w);
  const float* tok_emb = w.tensor("tok_emb");
  const float* pos_emb = w.tensor("pos_emb");

  work.layers.resize(cfg.n_layers);
  for (auto& lw : work.layers) {
    lw.x_in.assign(size_t(n) * d, 0.0);
    lw.h1.assign(size_t(n) * d, 0.0);
    lw.q.assign(size_t(n) * d, 0.0);
    lw.k.assign(size_t(n) * d, 0.0);
    lw.v.assign(size_t(n) * d, 0.0);
    lw.z.assign(size_t(n) * d, 0.0);
    lw.x_mid.assign(size_t(n) * d, 0.0);
    lw.h2.assign(size_t(n) * d, 0.0);
    lw.u.assign(size_t(n) * ff, 0.0);
    lw.a.assign(size_t(n) * ff, 0.0);
    lw.probs.assign(size_t(H) * n * n, 0.0);
    lw.mu1.assign(n, 0.0);
    lw.rs1.assign(n, 0.0);
    lw.mu2.assign(n, 0.0);
    lw.rs2.assign(n, 0.0);
    if (r) {
      lw.aq.assign(size_t(n) * r, 0.0);
      lw.av.assign(size_t(n) * r, 0.0);
    }
  }
  work.x_out.assign(size_t(n) * d, 0.0);
  work.xf.assign(size_t(n) * d, 0.0);
  work.logits.assign(size_t(n) * V, 0.0);
  work.sm.assign(size_t(n) * V, 0.0);
  work.mu_f.assign(n, 0.0);
  work.rs_f.assign(n, 0.0);

  for (int p = 0; p < n; ++p) {
    double* x = work.layers[0].x_in.data() + size_t(p) * d;
    const int tok = ex.seq.ids[p];
    for (int i = 0; i < d; ++i)
      x[i] = double(tok_emb[size_t(tok) * d + i]) + double(pos_emb[size_t(p) * d + i]);
  }

  const double att_scale = 1.0 / std::sqrt(double(dh));
  for (int l = 0; l < cfg.n_layers; ++l) {
    TrainLayerWork& lw = work.layers[l];
    const LayerPtrs& L = layers[l];
    for (int p = 0; p < n; ++p) {
      const double* x = lw.x_in.data() + size_t(p) * d;
      double* h1 = lw.h1.data() + size_t(p) * d;
      layer_norm_fwd(L.ln1_g, L.ln1_b, x, h1, d, lw.mu1[p], lw.rs1[p]);
      double* q = lw.q.data() + size_t(p) * d;
      double* k = lw.k.data() + size_t(p) * d;
      double* v = lw.v.data() + size_t(p) * d;
      mv(L.wq, L.bq, h1, q, d, d);
      mv(L.wk, L.bk, h1, k, d, d);
      mv(L.wv, L.bv, h1, v, d, d);
      if (lora) {
        const LoraLayerPtrs& A = lora->layers[l];
        double* aq = lw.aq.data() + size_t(p) * r;
        double* av = lw.av.data() + size_t(p) * r;
        mv(A.aq, nullptr, h1, aq, r, d);
        mv(A.av, nullptr, h1, av, r, d);
        for (int i = 0; i < d; ++i) {
          double accq = 0, accv = 0;
          const float* bq_row = A.bq + size_t(i) * r;
          const float* bv_row = A.bv + size_t(i) * r;
          for (int j = 0; j < r; ++j) {
            accq += double(bq_row[j]) * aq[j];
            accv += double(bv_row[j]) * av[j];
          }
          q[i] += lora->scale * accq;
          v[i] += lora->scale * accv;
        }
      }
    }
    for (int h = 0; h < H; ++h) {
      const int hoff = h * dh;
      for (int p = 0; p < n; ++p) {
        const double* q = lw.q.data() + size_t(p) * d + hoff;
        double* pr = lw.probs.data() + (size_t(h) * n + p) * n;
        double mx = -1e300;
        for (int s = 0; s <= p; ++s) {
          const double* ks = lw.k.data() + size_t(s) * d + hoff;
          double acc = 0;
          for (int i = 0; i < dh; ++i) acc += q[i] * ks[i];
          pr[s] = acc * att_scale;
          mx = std::max(mx, pr[s]);
        }
        double denom = 0;
        for (int s = 0; s <= p; ++s) {
          pr[s] = std::exp(pr[s] - mx);
          denom += pr[s];
        }
        double* z = lw.z.data() + size_t(p) * d + hoff;
        for (int i = 0; i < dh; ++i) z[i] = 0.0;
        for (int s = 0; s <= p; ++s) {
          pr[s] /= denom;
          const double* vs = lw.v.data() + size_t(s) * d + hoff;
          for (int i = 0; i < dh; ++i) z[i] += pr[s] * vs[i];
        }
      }
    }
    std::vector<double> tmp(std::max(d, ff));
    for (int p = 0; p < n; ++p) {
      const double* x = lw.x_in.data() + size_t(p) * d;
      const double* z = lw.z.data() + size_t(p) * d;
      double* xm = lw.x_mid.data() + size_t(p) * d;
      mv(L.wo, L.bo, z, tmp.data(), d, d);
      for (int i = 0; i < d; ++i) xm[i] = x[i] + tmp[i];
      double* h2 = lw.h2.data() + size_t(p) * d;
      layer_norm_fwd(L.ln2_g, L.ln2_b, xm, h2, d, lw.mu2[p], lw.rs2[p]);
      double* u = lw.u.data() + size_t(p) * ff;
      double* a = lw.a.data() + size_t(p) * ff;
      mv(L.w1, L.b1, h2, u, ff, d);
      for (int i = 0; i < ff; ++i) a[i] = gelu(u[i]);
      double* xo = (l + 1 < cfg.n_layers ? work.layers[l + 1].x_in.data() : work.x_out.data()) +
                   size_t(p) * d;
      mv(L.w2, L.b2, a, tmp.data(), d, ff);
      for (int i = 0; i < d; ++i) xo[i] = xm[i] + tmp[i];
    }
  }

  const float* lnf_g = w.tensor("lnf_g");
  const float* lnf_b = w.tensor("lnf_b");
  const float* w_out = w.tensor("w_out");
  double loss = 0;
  int masked = 0;
  for (int p = 0; p < n; ++p) {
    const double* x = work.x_out.data() + size_t(p) * d;
    double* xf = work.xf.data() + size_t(p) * d;
    layer_norm_fwd(lnf_g, lnf_b, x, xf, d, work.mu_f[p], work.rs_f[p]);
    double* lg = work.logits.data() + size_t(p) * V;
    mv(w_out, nullptr, xf, lg, V, d);
    if (p + 1 < n && p + 1 >= ex.loss_from) {
      double mx = lg[0];
      for (int v2 = 1; v2 < V; ++v2) mx = std::max(mx, lg[v2]);
      double denom = 0;
      double* sm = work.sm.data() + size_t(p) * V;
      for (int v2 = 0; v2 < V; ++v2) {
        sm[v2] = std::exp(lg[v2] - mx);
        denom += sm[v2];
      }
      for (int v2 = 0; v2 < V; ++v2) sm[v2] /= denom;
      loss += std::log(denom) + mx - lg[ex.seq.ids[p + 1]];
      ++masked;
    }
  }
  return loss / masked;
}

struct LayerGradPtrs {
  double *ln1_g, *ln1_b, *wq, *bq, *wk, *bk, *wv, *bv, *wo, *bo, *ln2_g, *ln2_b, *w1, *b1, *w2,
      *b2;
};

struct LoraGradPtrs {
  double *aq, *bq, *av, *bv;
};

struct BackWork {
  std::vector<double> dx, dmid, dh, dq, dk, dv, dz;  // n*d
  std::vector<double> du, da;                        // n*ff
  std::vector<double> daq;                           // rank scratch
};

// scale multiplies this example's contribution. gbase/glora may each be null;
// dx propagation through both paths always runs when lora is attached.
inline void train_backward(const ModelWeights& w, const LoraAttach* lora, const TrainExample& ex,
                           const TrainWork& work, double scale, BackWork& bw, double* gbase,
                           double* glora) {
  const ModelConfig& cfg = w.cfg;
  const int n = (int)ex.seq.ids.size();
  const int d = cfg.d_model, H = cfg.n_heads, dh = cfg.d_head(), ff = cfg.d_ff(),
            V = cfg.vocab_size;
  const int r = lora ? lora->rank : 0;
  const auto layers = resolve_layers(w);
  const auto layout = ModelWeights::layout(cfg);

  std::vector<LayerGradPtrs> lg(cfg.n_layers);
  double *g_tok = nullptr, *g_pos = nullptr, *g_lnf_g = nullptr, *g_lnf_b = nullptr,
         *g_wout = nullptr;
  if (gbase) {
    auto at = [&](const std::string& name) { return gbase + tensor_offset(layout, name); };
    g_tok = at("tok_emb");
    g_pos = at("pos_emb");
    g_lnf_g = at("lnf_g");
    g_lnf_b = at("lnf_b");
    g_wout = at("w_out");
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      lg[l] = {at(p + "ln1_g"), at(p + "ln1_b"), at(p + "wq"), at(p + "bq"), at(p + "wk"),
               at(p + "bk"),    at(p + "wv"),    at(p + "bv"), at(p + "wo"), at(p + "bo"),
               at(p + "ln2_g"), at(p + "ln2_b"), at(p + "w1"), at(p + "b1"), at(p + "w2"),
               at(p + "b2")};
    }
  }
  std::vector<LoraGradPtrs> llg;
  if (glora) {
    const auto llayout = LoraState::layout(cfg, r);
    auto at = [&](const std::string& name) { return glora + tensor_offset(llayout, name); };
    for (int l = 0; l < cfg.n_layers; ++l) {
      const std::string p = "l" + std::to_string(l) + ".";
      llg.push_back({at(p + "aq"), at(p + "bq"), at(p + "av"), at(p + "bv")});
    }
  }

  bw.dx.assign(size_t(n) * d, 0.0);
  bw.dmid.assign(size_t(n) * d, 0.0);
  bw.dh.assign(size_t(n) * d, 0.0);
  bw.dq.assign(size_t(n) * d, 0.0);
  bw.dk.assign(size_t(n) * d, 0.0);
  bw.dv.assign(size_t(n) * d, 0.0);
  bw.dz.assign(size_t(n) * d, 0.0);
  bw.du.assign(size_t(n) * ff, 0.0);
  bw.da.assign(size_t(n) * ff, 0.0);
  if (r) bw.daq.assign(r, 0.0);

  int masked = 0;
  for (int p = 0; p < n - 1; ++p)
    if (p + 1 >= ex.loss_from) ++masked;
  const double lscale = scale / masked;

  const float* lnf_g = w.tensor("lnf_g");
  const float* w_out = w.tensor("w_out");
  std::vector<double> dlog(V), dxf(d);
  for (int p = 0; p < n; ++p) {
    if (!(p + 1 < n && p + 1 >= ex.loss_from)) continue;
    const double* sm = work.sm.data() + size_t(p) * V;
    const int tgt = ex.seq.ids[p + 1];
    for (int v2 = 0; v2 < V; ++v2) dlog[v2] = (sm[v2] - (v2 == tgt ? 1.0 : 0.0)) * lscale;
    const double* xf = work.xf.data() + size_t(p) * d;
    std::fill(dxf.begin(), dxf.end(), 0.0);
    mv_t_add(w_out, dlog.data(), dxf.data(), V, d);
    if (g_wout) outer_add(g_wout, nullptr, dlog.data(), xf, V, d);
    layer_norm_bwd(lnf_g, work.x_out.data() + size_t(p) * d, work.mu_f[p], work.rs_f[p],
                   dxf.data(), bw.dx.data() + size_t(p) * d, g_lnf_g, g_lnf_b, d);
  }

  const double att_scale = 1.0 / std::sqrt(double(dh));
  std::vector<double> dz_ff(std::max(d, ff)), dp(n);
  for (int l = cfg.n_layers - 1; l >= 0; --l) {
    const TrainLayerWork& lw = work.layers[l];
    const LayerPtrs& L = layers[l];

    // feed-forward block: x_out = x_mid + w2 gelu(w1 h2 + b1) + b2
    std::fill(bw.dmid.begin(), bw.dmid.end(), 0.0);
    for (int p = 0; p < n; ++p) {
      const double* dxo = bw.dx.data() + size_t(p) * d;
      double* da = bw.da.data() + size_t(p) * ff;
      std::fill(da, da + ff, 0.0);
      mv_t_add(L.w2, dxo, da, d, ff);
      if (gbase) outer_add(lg[l].w2, lg[l].b2, dxo, lw.a.data() + size_t(p) * ff, d, ff);
      double* du = bw.du.data() + size_t(p) * ff;
      const double* u = lw.u.data() + size_t(p) * ff;
      for (int i = 0; i < ff; ++i) du[i] = da[i] * dgelu(u[i]);
      double* dh2 = bw.dh.data() + size_t(p) * d;
      std::fill(dh2, dh2 + d, 0.0);
      mv_t_add(L.w1, du, dh2, ff, d);
      if (gbase) outer_add(lg[l].w1, lg[l].b1, du, lw.h2.data() + size_t(p) * d, ff, d);
      double* dmid = bw.dmid.data() + size_t(p) * d;
      for (int i = 0; i < d; ++i) dmid[i] += dxo[i];  // residual
      layer_norm_bwd(L.ln2_g, lw.x_mid.data() + size_t(p) * d, lw.mu2[p], lw.rs2[p], dh2, dmid,
                     gbase ? lg[l].ln2_g : nullptr, gbase ? lg[l].ln2_b : nullptr, d);
    }

    // attention block: x_mid = x_in + wo z + bo
    std::fill(bw.dz.begin(), bw.dz.end(), 0.0);
    for (int p = 0; p < n; ++p) {
      const double* dmid = bw.dmid.data() + size_t(p) * d;
      double* dz = bw.dz.data() + size_t(p) * d;
      mv_t_add(L.wo, dmid, dz, d, d);
      if (gbase) outer_add(lg[l].wo, lg[l].bo, dmid, lw.z.data() + size_t(p) * d, d, d);
    }
    std::fill(bw.dq.begin(), bw.dq.end(), 0.0);
    std::fill(bw.dk.begin(), bw.dk.end(), 0.0);
    std::fill(bw.dv.begin(), bw.dv.end(), 0.0);
    for (int h = 0; h < H; ++h) {
      const int hoff = h * dh;
      for (int p = 0; p < n; ++p) {
        const double* dz = bw.dz.data() + size_t(p) * d + hoff;
        const double* pr = lw.probs.data() + (size_t(h) * n + p) * n;
        double dot = 0;
        for (int s = 0; s <= p; ++s) {
          const double* vs = lw.v.data() + size_t(s) * d + hoff;
          double* dvs = bw.dv.data() + size_t(s) * d + hoff;
          double acc = 0;
          for (int i = 0; i < dh; ++i) {
            acc += dz[i] * vs[i];
            dvs[i] += pr[s] * dz[i];
          }
          dp[s] = acc;
          dot += pr[s] * acc;
        }
        double* dq = bw.dq.data() + size_t(p) * d + hoff;
        const double* q = lw.q.data() + size_t(p) * d + hoff;
        for (int s = 0; s <= p; ++s) {
          const double ds = pr[s] * (dp[s] - dot) * att_scale;
          if (ds == 0.0) continue;
          const double* ks = lw.k.data() + size_t(s) * d + hoff;
          double* dks = bw.dk.data() + size_t(s) * d + hoff;
          for (int i = 0; i < dh; ++i) {
            dq[i] += ds * ks[i];
            dks[i] += ds * q[i];
          }
        }
      }
    }
    // back through the q/k/v projections into h1, then ln1 into x_in
    for (int p = 0; p < n; ++p) {
      double* dh1 = bw.dh.data() + size_t(p) * d;
      std::fill(dh1, dh1 + d, 0.0);
      const double* dq = bw.dq.data() + size_t(p) * d;
      const double* dk = bw.dk.data() + size_t(p) * d;
      const double* dv = bw.dv.data() + size_t(p) * d;
      const double* h1 = lw.h1.data() + size_t(p) * d;
      mv_t_add(L.wq, dq, dh1, d, d);
      mv_t_add(L.wk, dk, dh1, d, d);
      mv_t_add(L.wv, dv, dh1, d, d);
      if (gbase) {
        outer_add(lg[l].wq, lg[l].bq, dq, h1, d, d);
        outer_add(lg[l].wk, lg[l].bk, dk, h1, d, d);
        outer_add(lg[l].wv, lg[l].bv, dv, h1, d, d);
      }
      if (lora) {
        const LoraLayerPtrs& A = lora->layers[l];
        for (int pass = 0; pass < 2; ++pass) {
          const double* dqv = pass == 0 ? dq : dv;
          const float* amat = pass == 0 ? A.aq : A.av;
          const float* bmat = pass == 0 ? A.bq : A.bv;
          const double* act = (pass == 0 ? lw.aq.data() : lw.av.data()) + size_t(p) * r;
          double* ga = glora ? (pass == 0 ? llg[l].aq : llg[l].av) : nullptr;
          double* gb = glora ? (pass == 0 ? llg[l].bq : llg[l].bv) : nullptr;
          // daq = scale * B^T dqv
          for (int j = 0; j < r; ++j) bw.daq[j] = 0.0;
          for (int i = 0; i < d; ++i) {
            const double di = dqv[i] * lora->scale;
            const float* brow = bmat + size_t(i) * r;
            for (int j = 0; j < r; ++j) bw.daq[j] += double(brow[j]) * di;
            if (gb) {
              double* gbrow = gb + size_t(i) * r;
              for (int j = 0; j < r; ++j) gbrow[j] += di * act[j];
            }
          }
          for (int j = 0; j < r; ++j) {
            const double dj = bw.daq[j];
            const float* arow = amat + size_t(j) * d;
            if (ga) {
              double* garow = ga + size_t(j) * d;
              for (int c = 0; c < d; ++c) garow[c] += dj * h1[c];
            }
            for (int c = 0; c < d; ++c) dh1[c] += double(arow[c]) * dj;
          }
        }
      }
      double* dxi = bw.dmid.data() + size_t(p) * d;  // reuse: becomes dx_in
      layer_norm_bwd(L.ln1_g, lw.x_in.data() + size_t(p) * d, lw.mu1[p], lw.rs1[p], dh1, dxi,
                     gbase ? lg[l].ln1_g : nullptr, gbase ? lg[l].ln1_b : nullptr, d);
    }
    std::swap(bw.dx, bw.dmid);  // dx now holds the gradient wrt this layer's input
  }

  if (gbase) {
    for (int p = 0; p < n; ++p) {
      const double* dx = bw.dx.data() + size_t(p) * d;
      double* gt = g_tok + size_t(ex.seq.ids[p]) * d;
      double* gp = g_pos + size_t(p) * d;
      for (int i = 0; i < d; ++i) {
        gt[i] += dx[i];
        gp[i] += dx[i];
      }
    }
  }
}

inline double lr_at(const TrainHyper& hp, int step) {
  if (step < hp.warmup_steps) return hp.lr * double(step + 1) / double(hp.warmup_steps);
  if (hp.steps <= hp.warmup_steps) return hp.lr;
  const double progress = double(step - hp.warmup_steps) / double(hp.steps - hp.warmup_steps);
  const double cosine = 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
  return hp.lr * (hp.final_lr_frac + (1.0 - hp.final_lr_frac) * cosine);
}

// Epoch-shuffled example index stream.
class IndexStream {
 public:
  IndexStream(size_t n, uint64_t seed) : rng_(seed), order_(n) {
    std::iota(order_.begin(), order_.end(), size_t(0));
    rng_.shuffle(order_);
  }
  size_t next() {
    if (pos_ == order_.size()) {
      rng_.shuffle(order_);
      pos_ = 0;
    }
    return order_[pos_++];
  }

 private:
  Rng rng_;
  std::vector<size_t> order_;
  size_t pos_ = 0;
};

inline std::vector<uint8_t> decay_mask(const std::vector<TensorInfo>& layout, size_t total) {
  std::vector<uint8_t> mask(total, 0);
  for (const auto& t : layout) {
    if (t.rows > 1 && t.cols > 1)
      std::fill(mask.begin() + t.offset, mask.begin() + t.offset + t.count(), uint8_t(1));
  }
  return mask;
}

}  // namespace detail

inline double corpus_loss(const ModelWeights& w, const std::vector<TrainExample>& corpus,
                          const LoraState* lora = nullptr) {
  if (corpus.empty()) fail(Errc::empty_corpus, "corpus is empty");
  std::optional<detail::LoraAttach> at;
  if (lora) at = detail::attach_lora(w.cfg, *lora);
  detail::TrainWork work;
  double total = 0;
  for (const auto& ex : corpus) {
    detail::validate_example(w.cfg, ex);
    total += detail::train_forward(w, at ? &*at : nullptr, ex, work);
  }
  return total / double(corpus.size());
}

inline std::vector<double> loss_gradient(const ModelWeights& w,
                                         const std::vector<TrainExample>& corpus,
                                         double* loss_out = nullptr) {
  if (corpus.empty()) fail(Errc::empty_corpus, "corpus is empty");
  std::vector<double> grad(w.data.size(), 0.0);
  detail::TrainWork work;
  detail::BackWork bw;
  double total = 0;
  for (const auto& ex : corpus) {
    detail::validate_example(w.cfg, ex);
    total += detail::train_forward(w, nullptr, ex, work);
    detail::train_backward(w, nullptr, ex, work, 1.0 / double(corpus.size()), bw, grad.data(),
                           nullptr);
  }
  if (loss_out) *loss_out = total / double(corpus.size());
  return grad;
}

inline std::vector<double> lora_loss_gradient(const ModelWeights& w, const LoraState& lora,
                                              const std::vector<TrainExample>& corpus,
                                              double* loss_out = nullptr) {
  if (corpus.empty()) fail(Errc::empty_corpus, "corpus is empty");
  detail::LoraAttach at = detail::attach_lora(w.cfg, lora);
  std::vector<double> grad(lora.data.size(), 0.0);
  detail::TrainWork work;
  detail::BackWork bw;
  double total = 0;
  for (const auto& ex : corpus) {
    detail::validate_example(w.cfg, ex);
    total += detail::train_forward(w, &at, ex, work);
    detail::train_backward(w, &at, ex, work, 1.0 / double(corpus.size()), bw, nullptr,
                           grad.data());
  }
  if (loss_out) *loss_out = total / double(corpus.size());
  return grad;
}

inline ModelWeights merge_lora(const ModelWeights& base, const LoraState& lora) {
  detail::LoraAttach at = detail::attach_lora(base.cfg, lora);
  ModelWeights out = base;
  const int d = base.cfg.d_model, r = at.rank;
  for (int l = 0; l < base.cfg.n_layers; ++l) {
    const std::string p = "l" + std::to_string(l) + ".";
    const detail::LoraLayerPtrs& A = at.layers[l];
    for (int pass = 0; pass < 2; ++pass) {
      float* W = out.tensor(p + (pass == 0 ? "wq" : "wv"));
      const float* bmat = pass == 0 ? A.bq : A.bv;
      const float* amat = pass == 0 ? A.aq : A.av;
      for (int i = 0; i < d; ++i) {
        const float* brow = bmat + size_t(i) * r;
        for (int c = 0; c < d; ++c) {
          double acc = 0;
          for (int j = 0; j < r; ++j) acc += double(brow[j]) * double(amat[size_t(j) * d + c]);
          W[size_t(i) * d + c] = float(double(W[size_t(i) * d + c]) + at.scale * acc);
        }
      }
    }
  }
  return out;
}

inline TrainResult train(const ModelWeights& base, const std::vector<TrainExample>& corpus,
                         const TrainHyper& hp, const LoraConfig* lora_cfg = nullptr) {
  if (corpus.empty()) fail(Errc::empty_corpus, "training corpus is empty");
  hp.validate();
  base.cfg.validate();
  for (const auto& ex : corpus) detail::validate_example(base.cfg, ex);

  ModelWeights work;
  std::optional<LoraState> lora;
  std::optional<detail::LoraAttach> at;
  if (lora_cfg) {
    lora = LoraState::init(base.cfg, *lora_cfg);
    at = detail::attach_lora(base.cfg, *lora);
  } else {
    work = base;
  }
  const ModelWeights& fwd_w = lora ? base : work;
  float* params = lora ? lora->data.data() : work.data.data();
  const size_t P = lora ? lora->data.size() : work.data.size();
  const auto mask = lora ? detail::decay_mask(LoraState::layout(base.cfg, lora_cfg->rank), P)
                         : detail::decay_mask(ModelWeights::layout(base.cfg), P);

  std::vector<double> grad(P), m(P, 0.0), v(P, 0.0);
  detail::IndexStream stream(corpus.size(), hp.seed);
  detail::TrainWork twork;
  detail::BackWork bwork;
  TrainResult res;

  for (int step = 0; step < hp.steps; ++step) {
    std::fill(grad.begin(), grad.end(), 0.0);
    double batch_loss = 0;
    for (int b = 0; b < hp.batch_size; ++b) {
      const TrainExample& ex = corpus[stream.next()];
      batch_loss +=
          detail::train_forward(fwd_w, at ? &*at : nullptr, ex, twork) / hp.batch_size;
      detail::train_backward(fwd_w, at ? &*at : nullptr, ex, twork, 1.0 / hp.batch_size, bwork,
                             lora ? nullptr : grad.data(), lora ? grad.data() : nullptr);
    }
    if (hp.clip_norm > 0) {
      double norm2 = 0;
      for (double g : grad) norm2 += g * g;
      const double norm = std::sqrt(norm2);
      if (norm > hp.clip_norm) {
        const double s = hp.clip_norm / norm;
        for (double& g : grad) g *= s;
      }
    }
    const double lr = detail::lr_at(hp, step);
    const double bc1 = 1.0 - std::pow(hp.beta1, step + 1);
    const double bc2 = 1.0 - std::pow(hp.beta2, step + 1);
    for (size_t i = 0; i < P; ++i) {
      m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * grad[i];
      v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * grad[i] * grad[i];
      double upd = lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + hp.adam_eps);
      if (mask[i]) upd += lr * hp.weight_decay * double(params[i]);
      params[i] = float(double(params[i]) - upd);
    }
    res.losses.push_back(batch_loss);
  }

  if (lora) {
    res.adapters = *lora;
    res.weights = merge_lora(base, *lora);
  } else {
    res.weights = std::move(work);
  }
  return res;
}

}  // namespace cotsteer::lm
