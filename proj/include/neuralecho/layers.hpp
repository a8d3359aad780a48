// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_LAYERS_HPP
#define NEURALECHO_LAYERS_HPP

#include <memory>
#include <string>

#include "neuralecho/graph.hpp"
#include "neuralecho/params.hpp"

namespace neuralecho {

// Binds ParamStore entries to tape leaves on demand, caching by name so every
// use of a parameter shares one node. After backward(), write_grads_back()
// accumulates the tape gradients into the store.
template <typename Real>
struct BoundParams {
  Tape<Real>* tape = nullptr;
  ParamStore<Real>* store = nullptr;
  bool trainable = true;
  std::vector<std::pair<std::string, Var>> bound;

  BoundParams(Tape<Real>& t, ParamStore<Real>& s, bool train = true)
      : tape(&t), store(&s), trainable(train) {}

  Var operator()(const std::string& name) {
    for (const auto& [n, v] : bound)
      if (n == name) return v;
    const auto& entry = store->at(name);
    Var v = trainable ? tape->leaf(entry.value) : tape->constant(entry.value);
    bound.emplace_back(name, v);
    return v;
  }

  void write_grads_back() {
    for (const auto& [name, var] : bound) {
      if (!tape->grad_allocated(var)) continue;
      const Tensor<Real>& g = tape->grad(var);
      Tensor<Real>& dst = store->at(name).grad;
      for (std::size_t i = 0; i < g.numel(); ++i) dst[i] += g[i];
    }
  }
};

// ---------------------------------------------------------------------------
// Parameter creation and initialization: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
// for matrices, zeros for biases. FiLM projections start at zero so the
// speaker path degenerates to LayerNorm(theta) + theta at initialization.
// ---------------------------------------------------------------------------

template <typename Real>
void init_uniform_fanin(Tensor<Real>& t, std::size_t fan_in, RandomStream& rng) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(std::max<std::size_t>(fan_in, 1)));
  for (auto& v : t.data) v = static_cast<Real>(rng.uniform(-bound, bound));
}

template <typename Real>
void create_linear(ParamStore<Real>& store, const std::string& prefix, std::size_t in,
                   std::size_t out, RandomStream& rng, bool zero = false) {
  Tensor<Real>& W = store.add(prefix + ".W", {in, out});
  if (!zero) init_uniform_fanin(W, in, rng);
  store.add(prefix + ".b", {out});
}

template <typename Real>
void create_conv1d(ParamStore<Real>& store, const std::string& prefix, std::size_t cout,
                   std::size_t cin, std::size_t ks, RandomStream& rng) {
  Tensor<Real>& W = store.add(prefix + ".W", {cout, cin, ks});
  init_uniform_fanin(W, cin * ks, rng);
  store.add(prefix + ".b", {cout});
}

template <typename Real>
void create_layer_norm(ParamStore<Real>& store, const std::string& prefix, std::size_t dim) {
  store.add(prefix + ".gain", {dim}).fill(Real(1));
  store.add(prefix + ".bias", {dim});
}

template <typename Real>
void create_gru(ParamStore<Real>& store, const std::string& prefix, std::size_t in,
                std::size_t hidden, RandomStream& rng) {
  for (const char* gate : {"z", "r", "c"}) {
    Tensor<Real>& W = store.add(prefix + ".W" + gate, {in, hidden});
    init_uniform_fanin(W, in, rng);
    Tensor<Real>& U = store.add(prefix + ".U" + gate, {hidden, hidden});
    init_uniform_fanin(U, hidden, rng);
    store.add(prefix + ".b" + gate, {hidden});
  }
}

template <typename Real>
void create_mhsa(ParamStore<Real>& store, const std::string& prefix, std::size_t dim,
                 RandomStream& rng) {
  for (const char* part : {"q", "k", "v", "o"}) {
    Tensor<Real>& W = store.add(prefix + ".W" + part, {dim, dim});
    init_uniform_fanin(W, dim, rng);
    store.add(prefix + ".b" + part, {dim});
  }
}

template <typename Real>
void create_film(ParamStore<Real>& store, const std::string& prefix, std::size_t emb_dim,
                 std::size_t feat_dim) {
  store.add(prefix + ".r.W", {emb_dim, feat_dim});
  store.add(prefix + ".r.b", {feat_dim});
  store.add(prefix + ".h.W", {emb_dim, feat_dim});
  store.add(prefix + ".h.b", {feat_dim});
  create_layer_norm(store, prefix + ".ln", feat_dim);
}

// ---------------------------------------------------------------------------
// GRU: single fused node with manual backpropagation through time. Strictly
// causal; h starts at zero. Convention: h_t = (1-z_t)*h_{t-1} + z_t * c_t
// with reset applied to h before the candidate matmul.
// ---------------------------------------------------------------------------

struct GruVars {
  Var Wz, Uz, bz, Wr, Ur, br, Wc, Uc, bc;
};

template <typename Real>
GruVars bind_gru(BoundParams<Real>& p, const std::string& prefix) {
  return GruVars{p(prefix + ".Wz"), p(prefix + ".Uz"), p(prefix + ".bz"),
                 p(prefix + ".Wr"), p(prefix + ".Ur"), p(prefix + ".br"),
                 p(prefix + ".Wc"), p(prefix + ".Uc"), p(prefix + ".bc")};
}

template <typename Real>
Var gru(Tape<Real>& tape, Var x, const GruVars& w) {
  const Tensor<Real>& vx = tape.val(x);
  check(vx.rank() == 2, "gru: expects [T, in]");
  const std::size_t T = vx.dim(0), In = vx.dim(1);
  const std::size_t H = tape.val(w.Wz).dim(1);
  check(tape.val(w.Wz).dim(0) == In, "gru: input width mismatch");

  struct Saved {
    Tensor<Real> z, r, c, h;  // all [T, H]
  };
  auto saved = std::make_shared<Saved>();
  saved->z = Tensor<Real>({T, H});
  saved->r = Tensor<Real>({T, H});
  saved->c = Tensor<Real>({T, H});
  saved->h = Tensor<Real>({T, H});

  const Tensor<Real>&Wz = tape.val(w.Wz), &Uz = tape.val(w.Uz), &bz = tape.val(w.bz);
  const Tensor<Real>&Wr = tape.val(w.Wr), &Ur = tape.val(w.Ur), &br = tape.val(w.br);
  const Tensor<Real>&Wc = tape.val(w.Wc), &Uc = tape.val(w.Uc), &bc = tape.val(w.bc);

  std::vector<Real> h_prev(H, Real(0)), rh(H), az(H), ar(H), ac(H);
  auto matvec_add = [](const Real* row_vec, const Tensor<Real>& M, std::vector<Real>& acc,
                       std::size_t rows, std::size_t cols) {
    for (std::size_t i = 0; i < rows; ++i) {
      const Real xv = row_vec[i];
      if (xv == Real(0)) continue;
      const Real* mr = M.data.data() + i * cols;
      for (std::size_t j = 0; j < cols; ++j) acc[j] += xv * mr[j];
    }
  };

  for (std::size_t t = 0; t < T; ++t) {
    const Real* xt = vx.data.data() + t * In;
    for (std::size_t j = 0; j < H; ++j) {
      az[j] = bz[j];
      ar[j] = br[j];
      ac[j] = bc[j];
    }
    matvec_add(xt, Wz, az, In, H);
    matvec_add(h_prev.data(), Uz, az, H, H);
    matvec_add(xt, Wr, ar, In, H);
    matvec_add(h_prev.data(), Ur, ar, H, H);
    for (std::size_t j = 0; j < H; ++j) {
      saved->z.at(t, j) = Real(1) / (Real(1) + std::exp(-az[j]));
      saved->r.at(t, j) = Real(1) / (Real(1) + std::exp(-ar[j]));
      rh[j] = saved->r.at(t, j) * h_prev[j];
    }
    matvec_add(xt, Wc, ac, In, H);
    matvec_add(rh.data(), Uc, ac, H, H);
    for (std::size_t j = 0; j < H; ++j) {
      saved->c.at(t, j) = std::tanh(ac[j]);
      const Real z = saved->z.at(t, j);
      h_prev[j] = (Real(1) - z) * h_prev[j] + z * saved->c.at(t, j);
      saved->h.at(t, j) = h_prev[j];
    }
  }

  Tensor<Real> out = saved->h;
  return tape.make_node(std::move(out), {x, w.Wz, w.Uz, w.bz, w.Wr, w.Ur, w.br, w.Wc, w.Uc, w.bc},
                        [x, w, saved, T, In, H](Tape<Real>& t, Var self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& vx2 = t.val(x);
    const Tensor<Real>&Wz = t.val(w.Wz), &Uz = t.val(w.Uz);
    const Tensor<Real>&Wr = t.val(w.Wr), &Ur = t.val(w.Ur);
    const Tensor<Real>&Wc = t.val(w.Wc), &Uc = t.val(w.Uc);

    const bool need_x = t.needs_grad(x);
    Tensor<Real>&gWz = t.grad(w.Wz), &gUz = t.grad(w.Uz), &gbz = t.grad(w.bz);
    Tensor<Real>&gWr = t.grad(w.Wr), &gUr = t.grad(w.Ur), &gbr = t.grad(w.br);
    Tensor<Real>&gWc = t.grad(w.Wc), &gUc = t.grad(w.Uc), &gbc = t.grad(w.bc);

    std::vector<Real> dh(H, Real(0)), dh_prev(H), daz(H), dar(H), dac(H), dtmp(H);
    for (std::size_t tt = T; tt-- > 0;) {
      const Real* xt = vx2.data.data() + tt * In;
      const Real* h_prev =
          tt == 0 ? nullptr : saved->h.data.data() + (tt - 1) * H;
      for (std::size_t j = 0; j < H; ++j) dh[j] += g[tt * H + j];

      for (std::size_t j = 0; j < H; ++j) {
        const Real z = saved->z.at(tt, j);
        const Real c = saved->c.at(tt, j);
        const Real hp = h_prev ? h_prev[j] : Real(0);
        const Real dz = dh[j] * (c - hp);
        const Real dc = dh[j] * z;
        dh_prev[j] = dh[j] * (Real(1) - z);
        dac[j] = dc * (Real(1) - c * c);
        daz[j] = dz * z * (Real(1) - z);
      }
      // candidate path: dUc uses r .* h_prev, and r gets its share via Uc^T
      for (std::size_t j = 0; j < H; ++j) dtmp[j] = Real(0);
      for (std::size_t i = 0; i < H; ++i) {
        const Real* ucr = Uc.data.data() + i * H;
        Real acc = 0;
        for (std::size_t j = 0; j < H; ++j) acc += dac[j] * ucr[j];
        dtmp[i] = acc;  // d(r .* h_prev)
      }
      for (std::size_t j = 0; j < H; ++j) {
        const Real r = saved->r.at(tt, j);
        const Real hp = h_prev ? h_prev[j] : Real(0);
        const Real dr = dtmp[j] * hp;
        dh_prev[j] += dtmp[j] * r;
        dar[j] = dr * r * (Real(1) - r);
      }

      // accumulate weight gradients
      for (std::size_t i = 0; i < In; ++i) {
        const Real xv = xt[i];
        if (xv != Real(0)) {
          Real *wz = gWz.data.data() + i * H, *wr = gWr.data.data() + i * H,
               *wc = gWc.data.data() + i * H;
          for (std::size_t j = 0; j < H; ++j) {
            wz[j] += xv * daz[j];
            wr[j] += xv * dar[j];
            wc[j] += xv * dac[j];
          }
        }
      }
      for (std::size_t i = 0; i < H; ++i) {
        const Real hp = h_prev ? h_prev[i] : Real(0);
        if (hp != Real(0)) {
          Real *uz = gUz.data.data() + i * H, *ur = gUr.data.data() + i * H;
          for (std::size_t j = 0; j < H; ++j) {
            uz[j] += hp * daz[j];
            ur[j] += hp * dar[j];
          }
          const Real rh = saved->r.at(tt, i) * hp;
          Real* uc = gUc.data.data() + i * H;
          for (std::size_t j = 0; j < H; ++j) uc[j] += rh * dac[j];
        }
      }
      for (std::size_t j = 0; j < H; ++j) {
        gbz[j] += daz[j];
        gbr[j] += dar[j];
        gbc[j] += dac[j];
      }

      if (need_x) {
        Tensor<Real>& gx = t.grad(x);
        Real* gxr = gx.data.data() + tt * In;
        for (std::size_t i = 0; i < In; ++i) {
          const Real *wz = Wz.data.data() + i * H, *wr = Wr.data.data() + i * H,
                     *wc = Wc.data.data() + i * H;
          Real acc = 0;
          for (std::size_t j = 0; j < H; ++j)
            acc += daz[j] * wz[j] + dar[j] * wr[j] + dac[j] * wc[j];
          gxr[i] += acc;
        }
      }

      // carry into h_{t-1}: recurrent matmuls
      for (std::size_t i = 0; i < H; ++i) {
        const Real *uz = Uz.data.data() + i * H, *ur = Ur.data.data() + i * H;
        Real acc = dh_prev[i];
        for (std::size_t j = 0; j < H; ++j) acc += daz[j] * uz[j] + dar[j] * ur[j];
        dh[i] = acc;
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Multi-head self-attention over time frames. Q, K and V are projections of
// the same input; each head applies scaled dot-product attention (optionally
// causally masked), and the concatenated heads go through an output
// projection. The ReLU and residual of the enhancement stack are applied by
// the caller.
// ---------------------------------------------------------------------------

struct MhsaVars {
  Var Wq, bq, Wk, bk, Wv, bv, Wo, bo;
  int heads = 4;
  bool causal = true;
};

template <typename Real>
MhsaVars bind_mhsa(BoundParams<Real>& p, const std::string& prefix, int heads, bool causal) {
  MhsaVars v{p(prefix + ".Wq"), p(prefix + ".bq"), p(prefix + ".Wk"), p(prefix + ".bk"),
             p(prefix + ".Wv"), p(prefix + ".bv"), p(prefix + ".Wo"), p(prefix + ".bo"),
             heads, causal};
  return v;
}

template <typename Real>
Var mhsa(Tape<Real>& tape, Var x, const MhsaVars& w) {
  const Tensor<Real>& vx = tape.val(x);
  check(vx.rank() == 2, "mhsa: expects [T, D]");
  const std::size_t T = vx.dim(0);
  const std::size_t width = tape.val(w.Wq).dim(1);
  check(width % static_cast<std::size_t>(w.heads) == 0, "mhsa: width not divisible by heads");
  const std::size_t head_dim = width / w.heads;
  const Real scale = static_cast<Real>(1.0 / std::sqrt(static_cast<double>(head_dim)));

  Var Q = tape.linear(x, w.Wq, w.bq);
  Var K = tape.linear(x, w.Wk, w.bk);
  Var V = tape.linear(x, w.Wv, w.bv);

  std::vector<Var> heads_out;
  for (int h = 0; h < w.heads; ++h) {
    const std::size_t c0 = h * head_dim, c1 = (h + 1) * head_dim;
    Var Qh = tape.slice_cols(Q, c0, c1);
    Var Kh = tape.slice_cols(K, c0, c1);
    Var Vh = tape.slice_cols(V, c0, c1);
    Var scores = tape.scale(tape.matmul_nt(Qh, Kh), scale);
    Var attn = tape.softmax_rows(scores, w.causal);
    heads_out.push_back(tape.matmul(attn, Vh));
  }
  Var cat = w.heads == 1 ? heads_out[0] : tape.concat_cols(heads_out);
  (void)T;
  return tape.linear(cat, w.Wo, w.bo);
}

// ---------------------------------------------------------------------------
// FiLM speaker fusion: theta_hat = theta + r(d_s) .* theta + h(d_s), followed
// by xi = LayerNorm(theta_hat) + theta. With zero-initialized projections the
// block reduces exactly to LayerNorm(theta) + theta.
// ---------------------------------------------------------------------------

struct FilmVars {
  Var Wr, br, Wh, bh, ln_gain, ln_bias;
};

template <typename Real>
FilmVars bind_film(BoundParams<Real>& p, const std::string& prefix) {
  return FilmVars{p(prefix + ".r.W"),     p(prefix + ".r.b"),  p(prefix + ".h.W"),
                  p(prefix + ".h.b"),     p(prefix + ".ln.gain"), p(prefix + ".ln.bias")};
}

template <typename Real>
Var film(Tape<Real>& tape, Var theta, Var d_s, const FilmVars& w) {
  const Tensor<Real>& vt = tape.val(theta);
  check(vt.rank() == 2, "film: expects [T, D]");
  const std::size_t T = vt.dim(0);
  check(tape.val(d_s).rank() == 2 && tape.val(d_s).dim(0) == 1, "film: embedding must be [1, E]");
  Var r = tape.linear(d_s, w.Wr, w.br);  // [1, D]
  Var h = tape.linear(d_s, w.Wh, w.bh);
  Var theta_hat =
      tape.add(tape.add(theta, tape.mul(theta, tape.broadcast_row(r, T))),
               tape.broadcast_row(h, T));
  return tape.add(tape.layer_norm(theta_hat, w.ln_gain, w.ln_bias), theta);
}

}  // namespace neuralecho

#endif  // NEURALECHO_LAYERS_HPP
