// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_FFT_HPP
#define NEURALECHO_FFT_HPP

#include <complex>
#include <vector>

#include "neuralecho/common.hpp"

namespace neuralecho {

// Iterative radix-2 FFT. Sizes are powers of two (the STFT config enforces
// this); good enough for 512-point frames and the convolution helper.
template <typename Real>
void fft_inplace(std::vector<std::complex<Real>>& a, bool inverse) {
  const std::size_t n = a.size();
  if (n < 2) return;
  check((n & (n - 1)) == 0, "fft: size must be a power of two, got ", n);

  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const double ang = 2.0 * kPi / static_cast<double>(len) * (inverse ? 1.0 : -1.0);
    const std::complex<Real> wlen(static_cast<Real>(std::cos(ang)),
                                  static_cast<Real>(std::sin(ang)));
    for (std::size_t i = 0; i < n; i += len) {
      std::complex<Real> w(1, 0);
      for (std::size_t k = 0; k < len / 2; ++k) {
        std::complex<Real> u = a[i + k];
        std::complex<Real> v = a[i + k + len / 2] * w;
        a[i + k] = u + v;
        a[i + k + len / 2] = u - v;
        w *= wlen;
      }
    }
  }
  if (inverse) {
    const Real inv_n = static_cast<Real>(1.0) / static_cast<Real>(n);
    for (auto& x : a) x *= inv_n;
  }
}

// Real-input FFT, one-sided output of n/2+1 bins.
template <typename Real>
std::vector<std::complex<Real>> rfft(const Real* x, std::size_t n) {
  std::vector<std::complex<Real>> buf(n);
  for (std::size_t i = 0; i < n; ++i) buf[i] = std::complex<Real>(x[i], 0);
  fft_inplace(buf, false);
  buf.resize(n / 2 + 1);
  return buf;
}

// Inverse of rfft. The spectrum is extended by Hermitian symmetry; imaginary
// parts of the DC and Nyquist bins do not contribute.
template <typename Real>
std::vector<Real> irfft(const std::complex<Real>* spec, std::size_t n) {
  std::vector<std::complex<Real>> buf(n);
  buf[0] = std::complex<Real>(spec[0].real(), 0);
  buf[n / 2] = std::complex<Real>(spec[n / 2].real(), 0);
  for (std::size_t k = 1; k < n / 2; ++k) {
    buf[k] = spec[k];
    buf[n - k] = std::conj(spec[k]);
  }
  fft_inplace(buf, true);
  std::vector<Real> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = buf[i].real();
  return out;
}

inline std::size_t next_pow2(std::size_t n) {
  std::size_t p = 1;
  while (p < n) p <<= 1;
  return p;
}

// FFT-based linear convolution, full length a+b-1.
inline std::vector<double> fft_convolve(const std::vector<double>& a,
                                        const std::vector<double>& b) {
  if (a.empty() || b.empty()) return {};
  const std::size_t out_len = a.size() + b.size() - 1;
  const std::size_t n = next_pow2(out_len);
  std::vector<std::complex<double>> fa(n), fb(n);
  for (std::size_t i = 0; i < a.size(); ++i) fa[i] = a[i];
  for (std::size_t i = 0; i < b.size(); ++i) fb[i] = b[i];
  fft_inplace(fa, false);
  fft_inplace(fb, false);
  for (std::size_t i = 0; i < n; ++i) fa[i] *= fb[i];
  fft_inplace(fa, true);
  std::vector<double> out(out_len);
  for (std::size_t i = 0; i < out_len; ++i) out[i] = fa[i].real();
  return out;
}

}  // namespace neuralecho

#endif  // NEURALECHO_FFT_HPP
