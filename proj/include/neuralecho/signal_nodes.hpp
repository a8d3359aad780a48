// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_SIGNAL_NODES_HPP
#define NEURALECHO_SIGNAL_NODES_HPP

#include <complex>
#include <memory>
#include <utility>

#include "neuralecho/graph.hpp"
#include "neuralecho/stft.hpp"

namespace neuralecho {

// Tap offset list for a complex ratio filter. Non-causal filters use the
// symmetric range tau_n in [-N, N] (N frames of look-ahead); causal filters
// shift the window to tau_n in [-2N, 0]. Frequency shifts always span [-K, K].
// Order: time shift outer, frequency shift inner.
inline std::vector<std::pair<int, int>> crf_offsets(int K, int N, bool causal) {
  std::vector<std::pair<int, int>> offsets;
  const int n_lo = causal ? -2 * N : -N;
  const int n_hi = causal ? 0 : N;
  for (int dn = n_lo; dn <= n_hi; ++dn)
    for (int dk = -K; dk <= K; ++dk) offsets.emplace_back(dk, dn);
  return offsets;
}

// Signal-level complex ratio filters: one (2K+1)x(2N+1) complex tap grid per
// time-frequency bin, stored [n][k][j] following crf_offsets order.
struct CrfFilters {
  int K = 1, N = 1;
  bool causal = false;
  int F = 0, T = 0;
  std::vector<std::complex<double>> taps;

  static CrfFilters zeros(int K, int N, bool causal, int F, int T) {
    CrfFilters crf;
    crf.K = K;
    crf.N = N;
    crf.causal = causal;
    crf.F = F;
    crf.T = T;
    crf.taps.assign(static_cast<std::size_t>(F) * T * crf.tap_count(), {0.0, 0.0});
    return crf;
  }

  static CrfFilters delta(int K, int N, bool causal, int F, int T) {
    CrfFilters crf = zeros(K, N, causal, F, T);
    const auto offsets = crf_offsets(K, N, causal);
    std::size_t center = 0;
    for (std::size_t j = 0; j < offsets.size(); ++j)
      if (offsets[j].first == 0 && offsets[j].second == 0) center = j;
    for (int n = 0; n < T; ++n)
      for (int k = 0; k < F; ++k) crf.at(k, n, center) = {1.0, 0.0};
    return crf;
  }

  int tap_count() const { return (2 * K + 1) * (2 * N + 1); }

  std::complex<double>& at(int k, int n, int j) {
    return taps[(static_cast<std::size_t>(n) * F + k) * tap_count() + j];
  }
  const std::complex<double>& at(int k, int n, int j) const {
    return taps[(static_cast<std::size_t>(n) * F + k) * tap_count() + j];
  }
};

// out(k, n) = sum_j taps(k, n, j) * S(k + dk_j, n + dn_j), zero outside.
inline Spectrogram apply_crf(const Spectrogram& S, const CrfFilters& crf) {
  check(crf.F == S.F && crf.T == S.T, "apply_crf: filter/spectrogram shape mismatch");
  const auto offsets = crf_offsets(crf.K, crf.N, crf.causal);
  Spectrogram out = S;
  for (int n = 0; n < S.T; ++n)
    for (int k = 0; k < S.F; ++k) {
      std::complex<double> acc{0.0, 0.0};
      for (std::size_t j = 0; j < offsets.size(); ++j) {
        const int kk = k + offsets[j].first;
        const int nn = n + offsets[j].second;
        if (kk < 0 || kk >= S.F || nn < 0 || nn >= S.T) continue;
        acc += crf.at(k, n, static_cast<int>(j)) * S.at(kk, nn);
      }
      out.at(k, n) = acc;
    }
  return out;
}

// ---------------------------------------------------------------------------
// Autodiff nodes. Complex T-F tensors live on the tape as [T, F] real pairs.
// ---------------------------------------------------------------------------

// Applies per-bin complex ratio filters held as conv-head output channels.
// taps: [T, 2J, F], channel 2j = Re, 2j+1 = Im of tap j (crf_offsets order).
// Returns [T, 2F]: columns [0, F) real part, [F, 2F) imaginary part.
template <typename Real>
Var apply_crf_node(Tape<Real>& tape, Var s_re, Var s_im, Var taps,
                   const std::vector<std::pair<int, int>>& offsets) {
  const Tensor<Real>& re = tape.val(s_re);
  const Tensor<Real>& im = tape.val(s_im);
  const Tensor<Real>& tp = tape.val(taps);
  check(re.rank() == 2 && same_shape(re, im), "apply_crf_node: bad spectrogram pair");
  const std::size_t T = re.dim(0), F = re.dim(1);
  const std::size_t J = offsets.size();
  check(tp.rank() == 3 && tp.dim(0) == T && tp.dim(1) == 2 * J && tp.dim(2) == F,
        "apply_crf_node: taps must be [T, 2J, F]");

  Tensor<Real> y({T, 2 * F});
  for (std::size_t n = 0; n < T; ++n)
    for (std::size_t j = 0; j < J; ++j) {
      const long kk0 = offsets[j].first;
      const long nn = static_cast<long>(n) + offsets[j].second;
      if (nn < 0 || nn >= static_cast<long>(T)) continue;
      const Real* a = tp.data.data() + (n * 2 * J + 2 * j) * F;
      const Real* b = a + F;
      const Real* c_row = re.data.data() + static_cast<std::size_t>(nn) * F;
      const Real* d_row = im.data.data() + static_cast<std::size_t>(nn) * F;
      Real* yr = y.data.data() + n * 2 * F;
      Real* yi = yr + F;
      const std::size_t k_lo = kk0 < 0 ? static_cast<std::size_t>(-kk0) : 0;
      const std::size_t k_hi = kk0 > 0 ? F - static_cast<std::size_t>(kk0) : F;
      for (std::size_t k = k_lo; k < k_hi; ++k) {
        const Real c = c_row[k + kk0];
        const Real d = d_row[k + kk0];
        yr[k] += a[k] * c - b[k] * d;
        yi[k] += a[k] * d + b[k] * c;
      }
    }

  return tape.make_node(std::move(y), {s_re, s_im, taps},
                        [s_re, s_im, taps, offsets, T, F, J](Tape<Real>& t, Var self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& re2 = t.val(s_re);
    const Tensor<Real>& im2 = t.val(s_im);
    const Tensor<Real>& tp2 = t.val(taps);
    const bool need_s = t.needs_grad(s_re) || t.needs_grad(s_im);
    const bool need_taps = t.needs_grad(taps);
    for (std::size_t n = 0; n < T; ++n)
      for (std::size_t j = 0; j < J; ++j) {
        const long kk0 = offsets[j].first;
        const long nn = static_cast<long>(n) + offsets[j].second;
        if (nn < 0 || nn >= static_cast<long>(T)) continue;
        const Real* a = tp2.data.data() + (n * 2 * J + 2 * j) * F;
        const Real* b = a + F;
        const Real* c_row = re2.data.data() + static_cast<std::size_t>(nn) * F;
        const Real* d_row = im2.data.data() + static_cast<std::size_t>(nn) * F;
        const Real* gr = g.data.data() + n * 2 * F;
        const Real* gi = gr + F;
        const std::size_t k_lo = kk0 < 0 ? static_cast<std::size_t>(-kk0) : 0;
        const std::size_t k_hi = kk0 > 0 ? F - static_cast<std::size_t>(kk0) : F;
        if (need_taps) {
          Tensor<Real>& gt = t.grad(taps);
          Real* ga = gt.data.data() + (n * 2 * J + 2 * j) * F;
          Real* gb = ga + F;
          for (std::size_t k = k_lo; k < k_hi; ++k) {
            const Real c = c_row[k + kk0];
            const Real d = d_row[k + kk0];
            ga[k] += gr[k] * c + gi[k] * d;
            gb[k] += -gr[k] * d + gi[k] * c;
          }
        }
        if (need_s) {
          Tensor<Real>& gre = t.grad(s_re);
          Tensor<Real>& gim = t.grad(s_im);
          Real* gc = gre.data.data() + static_cast<std::size_t>(nn) * F;
          Real* gd = gim.data.data() + static_cast<std::size_t>(nn) * F;
          for (std::size_t k = k_lo; k < k_hi; ++k) {
            gc[k + kk0] += gr[k] * a[k] + gi[k] * b[k];
            gd[k + kk0] += -gr[k] * b[k] + gi[k] * a[k];
          }
        }
      }
  });
}

// log(re^2 + im^2 + floor), elementwise over [T, F].
template <typename Real>
Var lps_node(Tape<Real>& tape, Var re, Var im, Real floor) {
  const Tensor<Real>& vr = tape.val(re);
  const Tensor<Real>& vi = tape.val(im);
  check(same_shape(vr, vi), "lps_node: shape mismatch");
  Tensor<Real> y = vr;
  for (std::size_t i = 0; i < y.numel(); ++i)
    y[i] = std::log(vr[i] * vr[i] + vi[i] * vi[i] + floor);
  return tape.make_node(std::move(y), {re, im}, [re, im, floor](Tape<Real>& t, Var self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& vr2 = t.val(re);
    const Tensor<Real>& vi2 = t.val(im);
    const bool nr = t.needs_grad(re), ni = t.needs_grad(im);
    if (!nr && !ni) return;
    Tensor<Real>& gr = t.grad(re);
    Tensor<Real>& gi = t.grad(im);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      const Real denom = vr2[i] * vr2[i] + vi2[i] * vi2[i] + floor;
      const Real s = Real(2) * g[i] / denom;
      if (nr) gr[i] += s * vr2[i];
      if (ni) gi[i] += s * vi2[i];
    }
  });
}

// sqrt(re^2 + im^2); the gradient is zeroed at exact zero magnitude.
template <typename Real>
Var magnitude_node(Tape<Real>& tape, Var re, Var im) {
  const Tensor<Real>& vr = tape.val(re);
  const Tensor<Real>& vi = tape.val(im);
  check(same_shape(vr, vi), "magnitude_node: shape mismatch");
  Tensor<Real> y = vr;
  for (std::size_t i = 0; i < y.numel(); ++i)
    y[i] = std::sqrt(vr[i] * vr[i] + vi[i] * vi[i]);
  return tape.make_node(std::move(y), {re, im}, [re, im](Tape<Real>& t, Var self) {
    const Tensor<Real>& g = t.grad(self);
    const Tensor<Real>& y2 = t.val(self);
    const Tensor<Real>& vr2 = t.val(re);
    const Tensor<Real>& vi2 = t.val(im);
    const bool nr = t.needs_grad(re), ni = t.needs_grad(im);
    if (!nr && !ni) return;
    Tensor<Real>& gr = t.grad(re);
    Tensor<Real>& gi = t.grad(im);
    for (std::size_t i = 0; i < g.numel(); ++i) {
      if (y2[i] <= Real(0)) continue;
      const Real s = g[i] / y2[i];
      if (nr) gr[i] += s * vr2[i];
      if (ni) gi[i] += s * vi2[i];
    }
  });
}

// Inverse STFT as a linear graph node: [T, F] complex pair -> [out_len] time
// samples. The backward pass is the exact adjoint of the windowed overlap-add
// synthesis.
template <typename Real>
Var istft_node(Tape<Real>& tape, Var re, Var im, const StftConfig& cfg, std::size_t out_len) {
  const Tensor<Real>& vr = tape.val(re);
  const Tensor<Real>& vi = tape.val(im);
  check(vr.rank() == 2 && same_shape(vr, vi), "istft_node: bad spectrogram pair");
  const std::size_t T = vr.dim(0), F = vr.dim(1);
  check(F == static_cast<std::size_t>(cfg.bins()), "istft_node: bin count mismatch");

  std::vector<std::complex<Real>> frames(T * F);
  for (std::size_t i = 0; i < T * F; ++i) frames[i] = {vr[i], vi[i]};
  std::vector<Real> samples = istft_frames(frames, static_cast<int>(T), cfg, out_len);
  Tensor<Real> y({out_len});
  y.data = std::move(samples);

  return tape.make_node(std::move(y), {re, im}, [re, im, cfg, T, F, out_len](Tape<Real>& t,
                                                                             Var self) {
    const bool nr = t.needs_grad(re), ni = t.needs_grad(im);
    if (!nr && !ni) return;
    const Tensor<Real>& g = t.grad(self);
    const int N = cfg.fft_size;
    const int pad = N / 2;
    const std::vector<Real> win = hann_window<Real>(N);

    // redo the normalization bookkeeping of the forward pass
    const std::size_t full = (T - 1) * cfg.hop + N;
    std::vector<Real> norm(full, Real(0));
    for (std::size_t n = 0; n < T; ++n)
      for (int tt = 0; tt < N; ++tt) norm[n * cfg.hop + tt] += win[tt] * win[tt];
    std::vector<Real> dacc(full, Real(0));
    for (std::size_t i = 0; i < out_len; ++i) {
      const std::size_t j = i + pad;
      if (j < full && norm[j] > Real(1e-10)) dacc[j] = g[i] / norm[j];
    }

    Tensor<Real>& gr = t.grad(re);
    Tensor<Real>& gi = t.grad(im);
    std::vector<Real> fg(N);
    for (std::size_t n = 0; n < T; ++n) {
      for (int tt = 0; tt < N; ++tt) fg[tt] = win[tt] * dacc[n * cfg.hop + tt];
      // adjoint of the real IDFT with Hermitian extension
      auto R = rfft(fg.data(), static_cast<std::size_t>(N));
      const Real inv_n = Real(1) / static_cast<Real>(N);
      if (nr) {
        gr[n * F + 0] += R[0].real() * inv_n;
        for (std::size_t k = 1; k + 1 < F; ++k)
          gr[n * F + k] += Real(2) * R[k].real() * inv_n;
        gr[n * F + F - 1] += R[F - 1].real() * inv_n;
      }
      if (ni) {
        for (std::size_t k = 1; k + 1 < F; ++k)
          gi[n * F + k] += Real(2) * R[k].imag() * inv_n;
        // DC and Nyquist imaginary parts never reach the output
      }
    }
  });
}

// Scale-invariant SDR of est against a fixed reference, in dB, clamped to
// +-clamp_db. The gradient is zero in the clamped regions.
template <typename Real>
Var si_sdr_node(Tape<Real>& tape, Var est, const std::vector<Real>& ref,
                Real clamp_db = Real(60)) {
  const Tensor<Real>& ve = tape.val(est);
  check(ve.numel() == ref.size(), "si_sdr_node: length mismatch");
  double dot_rr = 0.0, dot_er = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dot_rr += static_cast<double>(ref[i]) * ref[i];
    dot_er += static_cast<double>(ve[i]) * ref[i];
  }
  check(dot_rr > 1e-30, "si_sdr_node: silent reference");
  const double alpha = dot_er / dot_rr;
  const double P = alpha * alpha * dot_rr;
  double Q = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double e = alpha * ref[i] - static_cast<double>(ve[i]);
    Q += e * e;
  }
  double val;
  bool clamped = false;
  if (P <= 1e-30 || Q < 1e-30) {
    // degenerate projection scores worst-case; an exact match scores best
    val = P <= 1e-30 ? -clamp_db : clamp_db;
    clamped = true;
  } else {
    val = 10.0 * std::log10(P / Q);
    if (val > clamp_db) {
      val = clamp_db;
      clamped = true;
    } else if (val < -clamp_db) {
      val = -clamp_db;
      clamped = true;
    }
  }
  Tensor<Real> y({1});
  y[0] = static_cast<Real>(val);
  auto ref_copy = std::make_shared<std::vector<Real>>(ref);
  return tape.make_node(std::move(y), {est},
                        [est, ref_copy, alpha, P, Q, clamped](Tape<Real>& t, Var self) {
    if (!t.needs_grad(est) || clamped) return;
    const Real g = t.grad(self)[0];
    const Tensor<Real>& ve2 = t.val(est);
    Tensor<Real>& ge = t.grad(est);
    const std::vector<Real>& r = *ref_copy;
    const double c = 10.0 / std::log(10.0);
    for (std::size_t i = 0; i < r.size(); ++i) {
      const double err = alpha * r[i] - static_cast<double>(ve2[i]);
      ge[i] += g * static_cast<Real>(c * (2.0 * alpha * r[i] / P + 2.0 * err / Q));
    }
  });
}

}  // namespace neuralecho

#endif  // NEURALECHO_SIGNAL_NODES_HPP
