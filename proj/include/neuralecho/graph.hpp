// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_GRAPH_HPP
#define NEURALECHO_GRAPH_HPP

#include <functional>
#include <vector>

#include "neuralecho/tensor.hpp"

namespace neuralecho {

// Handle into a Tape. Plain index; a Var is only meaningful for the tape that
// produced it.
struct Var {
  int i = -1;
  bool valid() const { return i >= 0; }
};

// Reverse-mode autodiff tape. Nodes are recorded in creation order; backward
// walks them in reverse, so gradient accumulation order is deterministic.
// One tape describes one forward pass; training builds a fresh tape per step.
template <typename Real>
class Tape {
 public:
  Var constant(Tensor<Real> value) { return push(std::move(value), false); }

  Var leaf(const Tensor<Real>& value) {
    Tensor<Real> copy = value;
    return push(std::move(copy), true);
  }

  const Tensor<Real>& val(Var v) const { return nodes_[v.i].value; }

  bool needs_grad(Var v) const { return nodes_[v.i].requires_grad; }

  // Gradient buffer, allocated (zero-filled) on first touch.
  Tensor<Real>& grad(Var v) {
    Node& n = nodes_[v.i];
    if (n.grad.data.empty()) n.grad = Tensor<Real>(n.value.shape);
    return n.grad;
  }

  bool grad_allocated(Var v) const { return !nodes_[v.i].grad.data.empty(); }

  // Custom-node escape hatch used by the layer and signal nodes. backward is
  // called with the tape and the node's own index; it reads grad(self) and
  // accumulates into its parents.
  Var make_node(Tensor<Real> value, const std::vector<Var>& parents,
                std::function<void(Tape&, Var)> backward) {
    bool req = false;
    for (Var p : parents) req = req || nodes_[p.i].requires_grad;
    Var v = push(std::move(value), req);
    if (req) nodes_[v.i].backward = std::move(backward);
    return v;
  }

  void set_check_finite(bool on) { check_finite_ = on; }

  std::size_t size() const { return nodes_.size(); }

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var loss) {
    check(!backward_done_, "backward: called twice without a new forward pass");
    check(nodes_[loss.i].value.numel() == 1, "backward: loss must be scalar");
    check(nodes_[loss.i].requires_grad, "backward: loss does not depend on any parameter");
    backward_done_ = true;
    grad(loss)[0] = Real(1);
    for (int i = loss.i; i >= 0; --i) {
      Node& n = nodes_[i];
      if (n.grad.data.empty() || !n.backward) continue;
      n.backward(*this, Var{i});
    }
  }

  // ---- elementwise -------------------------------------------------------

  Var add(Var a, Var b) {
    check(same_shape(val(a), val(b)), "add: shape mismatch");
    Tensor<Real> y = val(a);
    const Tensor<Real>& vb = val(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] += vb[i];
    return make_node(std::move(y), {a, b}, [a, b](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor<Real>& ga = t.grad(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i];
      }
    });
  }

  Var sub(Var a, Var b) {
    check(same_shape(val(a), val(b)), "sub: shape mismatch");
    Tensor<Real> y = val(a);
    const Tensor<Real>& vb = val(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] -= vb[i];
    return make_node(std::move(y), {a, b}, [a, b](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      if (t.needs_grad(a)) {
        Tensor<Real>& ga = t.grad(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
      }
      if (t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] -= g[i];
      }
    });
  }

  Var mul(Var a, Var b) {
    check(same_shape(val(a), val(b)), "mul: shape mismatch");
    Tensor<Real> y = val(a);
    const Tensor<Real>& vb = val(b);
    for (std::size_t i = 0; i < y.numel(); ++i) y[i] *= vb[i];
    return make_node(std::move(y), {a, b}, [a, b](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& va = t.val(a);
      const Tensor<Real>& vb2 = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<Real>& ga = t.grad(a);
        for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * vb2[i];
      }
      if (t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t i = 0; i < g.numel(); ++i) gb[i] += g[i] * va[i];
      }
    });
  }

  Var neg(Var a) { return scale(a, Real(-1)); }

  Var scale(Var a, Real c) {
    Tensor<Real> y = val(a);
    for (auto& v : y.data) v *= c;
    return make_node(std::move(y), {a}, [a, c](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      if (!t.needs_grad(a)) return;
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += c * g[i];
    });
  }

  Var abs_op(Var a) {
    Tensor<Real> y = val(a);
    for (auto& v : y.data) v = std::abs(v);
    return make_node(std::move(y), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& va = t.val(a);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const Real s = va[i] > Real(0) ? Real(1) : (va[i] < Real(0) ? Real(-1) : Real(0));
        ga[i] += g[i] * s;
      }
    });
  }

  Var sum_all(Var a) {
    Tensor<Real> y({1});
    Real acc = 0;
    for (Real v : val(a).data) acc += v;
    y[0] = acc;
    return make_node(std::move(y), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Real g = t.grad(self)[0];
      Tensor<Real>& ga = t.grad(a);
      for (auto& v : ga.data) v += g;
    });
  }

  Var mean_all(Var a) {
    const Real inv = Real(1) / static_cast<Real>(val(a).numel());
    return scale(sum_all(a), inv);
  }

  // ---- activations -------------------------------------------------------

  Var sigmoid(Var a) {
    Tensor<Real> y = val(a);
    for (auto& v : y.data) v = Real(1) / (Real(1) + std::exp(-v));
    return make_node(std::move(y), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& y2 = t.val(self);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * y2[i] * (Real(1) - y2[i]);
    });
  }

  Var tanh_op(Var a) {
    Tensor<Real> y = val(a);
    for (auto& v : y.data) v = std::tanh(v);
    return make_node(std::move(y), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& y2 = t.val(self);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i] * (Real(1) - y2[i] * y2[i]);
    });
  }

  Var relu(Var a) { return leaky_relu(a, Real(0)); }

  Var leaky_relu(Var a, Real slope) {
    Tensor<Real> y = val(a);
    for (auto& v : y.data) v = v > Real(0) ? v : slope * v;
    return make_node(std::move(y), {a}, [a, slope](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& va = t.val(a);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i)
        ga[i] += g[i] * (va[i] > Real(0) ? Real(1) : slope);
    });
  }

  Var softplus(Var a) {
    Tensor<Real> y = val(a);
    for (auto& v : y.data) {
      if (v > Real(30))
        ;  // softplus(x) ~ x
      else if (v < Real(-30))
        v = std::exp(v);
      else
        v = std::log(Real(1) + std::exp(v));
    }
    return make_node(std::move(y), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& va = t.val(a);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) {
        const Real s = Real(1) / (Real(1) + std::exp(-va[i]));
        ga[i] += g[i] * s;
      }
    });
  }

  // ---- shape plumbing ----------------------------------------------------

  Var reshape(Var a, std::vector<std::size_t> shape) {
    check(Tensor<Real>::numel_of(shape) == val(a).numel(), "reshape: element count mismatch");
    Tensor<Real> y = val(a);
    y.shape = std::move(shape);
    return make_node(std::move(y), {a}, [a](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t i = 0; i < g.numel(); ++i) ga[i] += g[i];
    });
  }

  Var concat_cols(const std::vector<Var>& parts) {
    check(!parts.empty(), "concat_cols: no inputs");
    const std::size_t rows = val(parts[0]).dim(0);
    std::size_t cols = 0;
    for (Var p : parts) {
      check(val(p).rank() == 2 && val(p).dim(0) == rows, "concat_cols: row mismatch");
      cols += val(p).dim(1);
    }
    Tensor<Real> y({rows, cols});
    std::size_t off = 0;
    for (Var p : parts) {
      const Tensor<Real>& v = val(p);
      for (std::size_t r = 0; r < rows; ++r)
        std::copy(v.data.begin() + r * v.dim(1), v.data.begin() + (r + 1) * v.dim(1),
                  y.data.begin() + r * cols + off);
      off += v.dim(1);
    }
    std::vector<Var> parents = parts;
    return make_node(std::move(y), parents, [parents, rows, cols](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      std::size_t off2 = 0;
      for (Var p : parents) {
        const std::size_t d = t.val(p).dim(1);
        if (t.needs_grad(p)) {
          Tensor<Real>& gp = t.grad(p);
          for (std::size_t r = 0; r < rows; ++r)
            for (std::size_t c = 0; c < d; ++c) gp[r * d + c] += g[r * cols + off2 + c];
        }
        off2 += d;
      }
    });
  }

  Var slice_cols(Var a, std::size_t c0, std::size_t c1) {
    const Tensor<Real>& v = val(a);
    check(v.rank() == 2 && c0 < c1 && c1 <= v.dim(1), "slice_cols: bad range");
    const std::size_t rows = v.dim(0), cols = v.dim(1), d = c1 - c0;
    Tensor<Real> y({rows, d});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(v.data.begin() + r * cols + c0, v.data.begin() + r * cols + c1,
                y.data.begin() + r * d);
    return make_node(std::move(y), {a}, [a, c0, rows, cols, d](Tape& t, Var self) {
      if (!t.needs_grad(a)) return;
      const Tensor<Real>& g = t.grad(self);
      Tensor<Real>& ga = t.grad(a);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) ga[r * cols + c0 + c] += g[r * d + c];
    });
  }

  // Repeats a length-D vector as R rows.
  Var broadcast_row(Var v, std::size_t rows) {
    const Tensor<Real>& x = val(v);
    const std::size_t d = x.numel();
    Tensor<Real> y({rows, d});
    for (std::size_t r = 0; r < rows; ++r)
      std::copy(x.data.begin(), x.data.end(), y.data.begin() + r * d);
    return make_node(std::move(y), {v}, [v, rows, d](Tape& t, Var self) {
      if (!t.needs_grad(v)) return;
      const Tensor<Real>& g = t.grad(self);
      Tensor<Real>& gv = t.grad(v);
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t c = 0; c < d; ++c) gv[c] += g[r * d + c];
    });
  }

  // ---- dense algebra -----------------------------------------------------

  // y = x W (+ b). x: [M, K], W: [K, N], b: [N] (pass Var{} to skip).
  Var linear(Var x, Var W, Var b) {
    const Tensor<Real>& vx = val(x);
    const Tensor<Real>& vw = val(W);
    check(vx.rank() == 2 && vw.rank() == 2 && vx.dim(1) == vw.dim(0),
          "linear: shape mismatch");
    const std::size_t M = vx.dim(0), K = vx.dim(1), N = vw.dim(1);
    Tensor<Real> y({M, N});
    if (b.valid()) {
      const Tensor<Real>& vb = val(b);
      check(vb.numel() == N, "linear: bias size mismatch");
      for (std::size_t m = 0; m < M; ++m)
        std::copy(vb.data.begin(), vb.data.end(), y.data.begin() + m * N);
    }
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = 0; k < K; ++k) {
        const Real xv = vx[m * K + k];
        if (xv == Real(0)) continue;
        const Real* wr = vw.data.data() + k * N;
        Real* yr = y.data.data() + m * N;
        for (std::size_t n = 0; n < N; ++n) yr[n] += xv * wr[n];
      }
    std::vector<Var> parents = b.valid() ? std::vector<Var>{x, W, b} : std::vector<Var>{x, W};
    return make_node(std::move(y), parents, [x, W, b, M, K, N](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& vx2 = t.val(x);
      const Tensor<Real>& vw2 = t.val(W);
      if (t.needs_grad(x)) {
        Tensor<Real>& gx = t.grad(x);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t k = 0; k < K; ++k) {
            const Real* wr = vw2.data.data() + k * N;
            const Real* gr = g.data.data() + m * N;
            Real acc = 0;
            for (std::size_t n = 0; n < N; ++n) acc += gr[n] * wr[n];
            gx[m * K + k] += acc;
          }
      }
      if (t.needs_grad(W)) {
        Tensor<Real>& gw = t.grad(W);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t k = 0; k < K; ++k) {
            const Real xv = vx2[m * K + k];
            if (xv == Real(0)) continue;
            const Real* gr = g.data.data() + m * N;
            Real* wr = gw.data.data() + k * N;
            for (std::size_t n = 0; n < N; ++n) wr[n] += xv * gr[n];
          }
      }
      if (b.valid() && t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) gb[n] += g[m * N + n];
      }
    });
  }

  // y = a b. a: [M, K], b: [K, N].
  Var matmul(Var a, Var b) {
    const Tensor<Real>& va = val(a);
    const Tensor<Real>& vb = val(b);
    check(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(0), "matmul: shape mismatch");
    const std::size_t M = va.dim(0), K = va.dim(1), N = vb.dim(1);
    Tensor<Real> y({M, N});
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t k = 0; k < K; ++k) {
        const Real av = va[m * K + k];
        if (av == Real(0)) continue;
        const Real* br = vb.data.data() + k * N;
        Real* yr = y.data.data() + m * N;
        for (std::size_t n = 0; n < N; ++n) yr[n] += av * br[n];
      }
    return make_node(std::move(y), {a, b}, [a, b, M, K, N](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& va2 = t.val(a);
      const Tensor<Real>& vb2 = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<Real>& ga = t.grad(a);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t k = 0; k < K; ++k) {
            const Real* br = vb2.data.data() + k * N;
            const Real* gr = g.data.data() + m * N;
            Real acc = 0;
            for (std::size_t n = 0; n < N; ++n) acc += gr[n] * br[n];
            ga[m * K + k] += acc;
          }
      }
      if (t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t k = 0; k < K; ++k) {
            const Real av = va2[m * K + k];
            if (av == Real(0)) continue;
            const Real* gr = g.data.data() + m * N;
            Real* br = gb.data.data() + k * N;
            for (std::size_t n = 0; n < N; ++n) br[n] += av * gr[n];
          }
      }
    });
  }

  // y = a b^T. a: [M, K], b: [N, K].
  Var matmul_nt(Var a, Var b) {
    const Tensor<Real>& va = val(a);
    const Tensor<Real>& vb = val(b);
    check(va.rank() == 2 && vb.rank() == 2 && va.dim(1) == vb.dim(1),
          "matmul_nt: shape mismatch");
    const std::size_t M = va.dim(0), K = va.dim(1), N = vb.dim(0);
    Tensor<Real> y({M, N});
    for (std::size_t m = 0; m < M; ++m)
      for (std::size_t n = 0; n < N; ++n) {
        const Real* ar = va.data.data() + m * K;
        const Real* br = vb.data.data() + n * K;
        Real acc = 0;
        for (std::size_t k = 0; k < K; ++k) acc += ar[k] * br[k];
        y[m * N + n] = acc;
      }
    return make_node(std::move(y), {a, b}, [a, b, M, K, N](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& va2 = t.val(a);
      const Tensor<Real>& vb2 = t.val(b);
      if (t.needs_grad(a)) {
        Tensor<Real>& ga = t.grad(a);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) {
            const Real gv = g[m * N + n];
            if (gv == Real(0)) continue;
            const Real* br = vb2.data.data() + n * K;
            Real* ar = ga.data.data() + m * K;
            for (std::size_t k = 0; k < K; ++k) ar[k] += gv * br[k];
          }
      }
      if (t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t m = 0; m < M; ++m)
          for (std::size_t n = 0; n < N; ++n) {
            const Real gv = g[m * N + n];
            if (gv == Real(0)) continue;
            const Real* ar = va2.data.data() + m * K;
            Real* br = gb.data.data() + n * K;
            for (std::size_t k = 0; k < K; ++k) br[k] += gv * ar[k];
          }
      }
    });
  }

  // Batched 1-D convolution (cross-correlation) with same-padding, stride 1.
  // x: [B, Cin, L], w: [Cout, Cin, ks] with ks odd, b: [Cout] or Var{}.
  Var conv1d(Var x, Var w, Var b) {
    const Tensor<Real>& vx = val(x);
    const Tensor<Real>& vw = val(w);
    check(vx.rank() == 3 && vw.rank() == 3, "conv1d: expects [B,Cin,L] and [Cout,Cin,ks]");
    check(vx.dim(1) == vw.dim(1), "conv1d: channel mismatch");
    check(vw.dim(2) % 2 == 1, "conv1d: kernel length must be odd for same padding");
    const std::size_t B = vx.dim(0), Cin = vx.dim(1), L = vx.dim(2);
    const std::size_t Cout = vw.dim(0), ks = vw.dim(2);
    const long pad = static_cast<long>(ks / 2);
    Tensor<Real> y({B, Cout, L});
    if (b.valid()) {
      const Tensor<Real>& vb = val(b);
      check(vb.numel() == Cout, "conv1d: bias size mismatch");
      for (std::size_t bb = 0; bb < B; ++bb)
        for (std::size_t co = 0; co < Cout; ++co)
          for (std::size_t l = 0; l < L; ++l) y.at(bb, co, l) = vb[co];
    }
    for (std::size_t bb = 0; bb < B; ++bb)
      for (std::size_t co = 0; co < Cout; ++co)
        for (std::size_t ci = 0; ci < Cin; ++ci)
          for (std::size_t j = 0; j < ks; ++j) {
            const Real wv = vw.at(co, ci, j);
            if (wv == Real(0)) continue;
            const long shift = static_cast<long>(j) - pad;
            const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
            const std::size_t hi = shift > 0 ? L - static_cast<std::size_t>(shift) : L;
            const Real* xr = vx.data.data() + (bb * Cin + ci) * L;
            Real* yr = y.data.data() + (bb * Cout + co) * L;
            for (std::size_t l = lo; l < hi; ++l) yr[l] += wv * xr[l + shift];
          }
    std::vector<Var> parents = b.valid() ? std::vector<Var>{x, w, b} : std::vector<Var>{x, w};
    return make_node(std::move(y), parents,
                     [x, w, b, B, Cin, Cout, L, ks, pad](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& vx2 = t.val(x);
      const Tensor<Real>& vw2 = t.val(w);
      if (t.needs_grad(w)) {
        Tensor<Real>& gw = t.grad(w);
        for (std::size_t bb = 0; bb < B; ++bb)
          for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
              for (std::size_t j = 0; j < ks; ++j) {
                const long shift = static_cast<long>(j) - pad;
                const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                const std::size_t hi = shift > 0 ? L - static_cast<std::size_t>(shift) : L;
                const Real* xr = vx2.data.data() + (bb * Cin + ci) * L;
                const Real* gr = g.data.data() + (bb * Cout + co) * L;
                Real acc = 0;
                for (std::size_t l = lo; l < hi; ++l) acc += gr[l] * xr[l + shift];
                gw.at(co, ci, j) += acc;
              }
      }
      if (t.needs_grad(x)) {
        Tensor<Real>& gx = t.grad(x);
        for (std::size_t bb = 0; bb < B; ++bb)
          for (std::size_t co = 0; co < Cout; ++co)
            for (std::size_t ci = 0; ci < Cin; ++ci)
              for (std::size_t j = 0; j < ks; ++j) {
                const Real wv = vw2.at(co, ci, j);
                if (wv == Real(0)) continue;
                const long shift = static_cast<long>(j) - pad;
                const std::size_t lo = shift < 0 ? static_cast<std::size_t>(-shift) : 0;
                const std::size_t hi = shift > 0 ? L - static_cast<std::size_t>(shift) : L;
                Real* xr = gx.data.data() + (bb * Cin + ci) * L;
                const Real* gr = g.data.data() + (bb * Cout + co) * L;
                for (std::size_t l = lo; l < hi; ++l) xr[l + shift] += wv * gr[l];
              }
      }
      if (b.valid() && t.needs_grad(b)) {
        Tensor<Real>& gb = t.grad(b);
        for (std::size_t bb = 0; bb < B; ++bb)
          for (std::size_t co = 0; co < Cout; ++co) {
            const Real* gr = g.data.data() + (bb * Cout + co) * L;
            Real acc = 0;
            for (std::size_t l = 0; l < L; ++l) acc += gr[l];
            gb[co] += acc;
          }
      }
    });
  }

  // Per-row normalization over the last axis with learnable affine.
  Var layer_norm(Var x, Var gain, Var bias, Real eps = Real(1e-5)) {
    const Tensor<Real>& vx = val(x);
    check(vx.rank() == 2, "layer_norm: expects [rows, D]");
    const std::size_t R = vx.dim(0), D = vx.dim(1);
    check(val(gain).numel() == D && val(bias).numel() == D, "layer_norm: affine size mismatch");
    const Tensor<Real>& vg = val(gain);
    const Tensor<Real>& vb = val(bias);
    Tensor<Real> y({R, D});
    for (std::size_t r = 0; r < R; ++r) {
      const Real* xr = vx.data.data() + r * D;
      Real mu = 0;
      for (std::size_t d = 0; d < D; ++d) mu += xr[d];
      mu /= static_cast<Real>(D);
      Real var = 0;
      for (std::size_t d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
      var /= static_cast<Real>(D);
      const Real inv_std = Real(1) / std::sqrt(var + eps);
      Real* yr = y.data.data() + r * D;
      for (std::size_t d = 0; d < D; ++d) yr[d] = (xr[d] - mu) * inv_std * vg[d] + vb[d];
    }
    return make_node(std::move(y), {x, gain, bias}, [x, gain, bias, R, D, eps](Tape& t, Var self) {
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& vx2 = t.val(x);
      const Tensor<Real>& vg2 = t.val(gain);
      for (std::size_t r = 0; r < R; ++r) {
        const Real* xr = vx2.data.data() + r * D;
        const Real* gr = g.data.data() + r * D;
        Real mu = 0;
        for (std::size_t d = 0; d < D; ++d) mu += xr[d];
        mu /= static_cast<Real>(D);
        Real var = 0;
        for (std::size_t d = 0; d < D; ++d) var += (xr[d] - mu) * (xr[d] - mu);
        var /= static_cast<Real>(D);
        const Real inv_std = Real(1) / std::sqrt(var + eps);
        if (t.needs_grad(gain) || t.needs_grad(bias)) {
          Tensor<Real>& gg = t.grad(gain);
          Tensor<Real>& gb = t.grad(bias);
          for (std::size_t d = 0; d < D; ++d) {
            const Real xhat = (xr[d] - mu) * inv_std;
            gg[d] += gr[d] * xhat;
            gb[d] += gr[d];
          }
        }
        if (t.needs_grad(x)) {
          Tensor<Real>& gx = t.grad(x);
          Real mean_dxhat = 0, mean_dxhat_xhat = 0;
          for (std::size_t d = 0; d < D; ++d) {
            const Real xhat = (xr[d] - mu) * inv_std;
            const Real dxhat = gr[d] * vg2[d];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat;
          }
          mean_dxhat /= static_cast<Real>(D);
          mean_dxhat_xhat /= static_cast<Real>(D);
          Real* gxr = gx.data.data() + r * D;
          for (std::size_t d = 0; d < D; ++d) {
            const Real xhat = (xr[d] - mu) * inv_std;
            const Real dxhat = gr[d] * vg2[d];
            gxr[d] += (dxhat - mean_dxhat - xhat * mean_dxhat_xhat) * inv_std;
          }
        }
      }
    });
  }

  // Row-wise softmax over attention scores [T_q, T_k]. With causal = true,
  // keys beyond the query index are masked out (zero probability).
  Var softmax_rows(Var x, bool causal) {
    const Tensor<Real>& vx = val(x);
    check(vx.rank() == 2, "softmax_rows: expects [T, T]");
    const std::size_t R = vx.dim(0), C = vx.dim(1);
    Tensor<Real> y({R, C});
    for (std::size_t r = 0; r < R; ++r) {
      const std::size_t limit = causal ? std::min(r + 1, C) : C;
      const Real* xr = vx.data.data() + r * C;
      Real* yr = y.data.data() + r * C;
      Real mx = xr[0];
      for (std::size_t c = 1; c < limit; ++c) mx = std::max(mx, xr[c]);
      Real denom = 0;
      for (std::size_t c = 0; c < limit; ++c) {
        yr[c] = std::exp(xr[c] - mx);
        denom += yr[c];
      }
      for (std::size_t c = 0; c < limit; ++c) yr[c] /= denom;
      for (std::size_t c = limit; c < C; ++c) yr[c] = Real(0);
    }
    return make_node(std::move(y), {x}, [x, R, C, causal](Tape& t, Var self) {
      if (!t.needs_grad(x)) return;
      const Tensor<Real>& g = t.grad(self);
      const Tensor<Real>& y2 = t.val(self);
      Tensor<Real>& gx = t.grad(x);
      for (std::size_t r = 0; r < R; ++r) {
        const std::size_t limit = causal ? std::min(r + 1, C) : C;
        const Real* yr = y2.data.data() + r * C;
        const Real* gr = g.data.data() + r * C;
        Real dot = 0;
        for (std::size_t c = 0; c < limit; ++c) dot += yr[c] * gr[c];
        Real* gxr = gx.data.data() + r * C;
        for (std::size_t c = 0; c < limit; ++c) gxr[c] += yr[c] * (gr[c] - dot);
      }
    });
  }

 private:
  struct Node {
    Tensor<Real> value;
    Tensor<Real> grad;
    bool requires_grad = false;
    std::function<void(Tape&, Var)> backward;
  };

  Var push(Tensor<Real> value, bool requires_grad) {
    if (check_finite_)
      check(value.finite(), "tape: non-finite value produced at node ", nodes_.size());
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
  bool check_finite_ = false;
};

}  // namespace neuralecho

#endif  // NEURALECHO_GRAPH_HPP
