// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_STFT_HPP
#define NEURALECHO_STFT_HPP

#include <algorithm>
#include <complex>
#include <vector>

#include "neuralecho/audio.hpp"
#include "neuralecho/fft.hpp"

namespace neuralecho {

struct StftConfig {
  int fft_size = 512;
  int hop = 256;
  int sample_rate = 16000;  // 32 ms window at 512 points

  int bins() const { return fft_size / 2 + 1; }

  void validate() const {
    check(fft_size > 0 && (fft_size & (fft_size - 1)) == 0,
          "StftConfig: fft_size must be a power of two, got ", fft_size);
    check(hop > 0 && hop <= fft_size, "StftConfig: hop must be in (0, fft_size]");
    check(sample_rate > 0, "StftConfig: sample_rate must be positive");
  }

  bool operator==(const StftConfig&) const = default;
};

// Complex T-F matrix, F = fft_size/2 + 1 bins by T frames. Stored frame-major
// (frame n contiguous). num_samples remembers the analyzed signal length so
// istft can reproduce it exactly.
struct Spectrogram {
  std::vector<std::complex<double>> data;
  int F = 0;
  int T = 0;
  StftConfig config;
  std::size_t num_samples = 0;

  std::complex<double>& at(int k, int n) { return data[static_cast<std::size_t>(n) * F + k]; }
  const std::complex<double>& at(int k, int n) const {
    return data[static_cast<std::size_t>(n) * F + k];
  }

  void validate() const {
    check(F == config.bins(), "Spectrogram: F must equal fft_size/2+1");
    check(data.size() == static_cast<std::size_t>(F) * T, "Spectrogram: shape mismatch");
    for (const auto& z : data)
      check(std::isfinite(z.real()) && std::isfinite(z.imag()), "Spectrogram: non-finite entry");
  }
};

// Periodic Hann window; satisfies constant overlap-add at 50% hop.
template <typename Real>
std::vector<Real> hann_window(int n) {
  std::vector<Real> w(n);
  for (int t = 0; t < n; ++t)
    w[t] = static_cast<Real>(0.5 * (1.0 - std::cos(2.0 * kPi * t / n)));
  return w;
}

inline int stft_num_frames(std::size_t num_samples, const StftConfig& cfg) {
  // Centered framing: the signal is padded by fft_size/2 on both ends and
  // frames start every hop samples, giving floor(len/hop) + 1 frames.
  return static_cast<int>(num_samples / cfg.hop) + 1;
}

// Low-level analysis shared by the double-precision front end and the
// autodiff istft adjoint. Output is frame-major, F complex bins per frame.
template <typename Real>
std::vector<std::complex<Real>> stft_frames(const std::vector<Real>& samples,
                                            const StftConfig& cfg) {
  cfg.validate();
  const int N = cfg.fft_size;
  const int F = cfg.bins();
  const int T = stft_num_frames(samples.size(), cfg);
  const int pad = N / 2;
  const std::vector<Real> win = hann_window<Real>(N);

  std::vector<std::complex<Real>> out(static_cast<std::size_t>(F) * T);
  std::vector<Real> frame(N);
  for (int n = 0; n < T; ++n) {
    const long start = static_cast<long>(n) * cfg.hop - pad;
    for (int t = 0; t < N; ++t) {
      const long s = start + t;
      Real x = (s >= 0 && s < static_cast<long>(samples.size())) ? samples[s] : Real(0);
      frame[t] = win[t] * x;
    }
    auto spec = rfft(frame.data(), static_cast<std::size_t>(N));
    std::copy(spec.begin(), spec.end(), out.begin() + static_cast<std::size_t>(n) * F);
  }
  return out;
}

// Inverse: windowed overlap-add normalized by the per-sample window power sum.
// Reconstruction of stft_frames output is exact away from the padded edges.
template <typename Real>
std::vector<Real> istft_frames(const std::vector<std::complex<Real>>& frames, int T,
                               const StftConfig& cfg, std::size_t out_len) {
  cfg.validate();
  const int N = cfg.fft_size;
  const int F = cfg.bins();
  check(frames.size() == static_cast<std::size_t>(F) * T, "istft: frame buffer shape mismatch");
  const int pad = N / 2;
  const std::vector<Real> win = hann_window<Real>(N);

  const std::size_t full = static_cast<std::size_t>(T - 1) * cfg.hop + N;
  std::vector<Real> acc(full, Real(0));
  std::vector<Real> norm(full, Real(0));
  for (int n = 0; n < T; ++n) {
    auto frame = irfft(frames.data() + static_cast<std::size_t>(n) * F,
                       static_cast<std::size_t>(N));
    const std::size_t base = static_cast<std::size_t>(n) * cfg.hop;
    for (int t = 0; t < N; ++t) {
      acc[base + t] += win[t] * frame[t];
      norm[base + t] += win[t] * win[t];
    }
  }
  std::vector<Real> out(out_len, Real(0));
  for (std::size_t i = 0; i < out_len; ++i) {
    const std::size_t j = i + pad;
    if (j < full && norm[j] > Real(1e-10)) out[i] = acc[j] / norm[j];
  }
  return out;
}

inline Spectrogram stft(const AudioSignal& signal, const StftConfig& cfg) {
  signal.validate();
  check(signal.sample_rate == cfg.sample_rate, "stft: signal rate ", signal.sample_rate,
        " != config rate ", cfg.sample_rate);
  Spectrogram spec;
  spec.config = cfg;
  spec.F = cfg.bins();
  spec.T = stft_num_frames(signal.samples.size(), cfg);
  spec.num_samples = signal.samples.size();
  spec.data = stft_frames(signal.samples, cfg);
  return spec;
}

inline AudioSignal istft(const Spectrogram& spec) {
  spec.validate();
  const std::size_t out_len =
      spec.num_samples ? spec.num_samples
                       : static_cast<std::size_t>(spec.T - 1) * spec.config.hop;
  AudioSignal out;
  out.sample_rate = spec.config.sample_rate;
  out.samples = istft_frames(spec.data, spec.T, spec.config, out_len);
  return out;
}

// log(|S|^2 + floor), natural log. The floor bounds digital silence at
// ln(1e-12) = -27.63 by default.
inline std::vector<double> lps(const Spectrogram& spec, double floor = 1e-12) {
  check(floor > 0, "lps: floor must be positive");
  std::vector<double> out(spec.data.size());
  for (std::size_t i = 0; i < spec.data.size(); ++i) {
    const auto& z = spec.data[i];
    out[i] = std::log(z.real() * z.real() + z.imag() * z.imag() + floor);
  }
  return out;
}

// Per-utterance normalization: subtract each frequency bin's temporal mean,
// then divide by one global standard deviation (floored at 1e-8). Layout is
// frame-major [T x F] like Spectrogram::data.
inline std::vector<double> normalize_lps(const std::vector<double>& m, int F, int T) {
  check(m.size() == static_cast<std::size_t>(F) * T, "normalize_lps: shape mismatch");
  check(all_finite(m), "normalize_lps: non-finite input");
  std::vector<double> out(m.size());
  if (m.empty()) return out;
  std::vector<double> mean(F, 0.0);
  for (int n = 0; n < T; ++n)
    for (int k = 0; k < F; ++k) mean[k] += m[static_cast<std::size_t>(n) * F + k];
  for (int k = 0; k < F; ++k) mean[k] /= T;
  double var = 0.0;
  for (int n = 0; n < T; ++n)
    for (int k = 0; k < F; ++k) {
      const double c = m[static_cast<std::size_t>(n) * F + k] - mean[k];
      out[static_cast<std::size_t>(n) * F + k] = c;
      var += c * c;
    }
  var /= static_cast<double>(m.size());
  const double sigma = std::max(std::sqrt(var), 1e-8);
  for (auto& v : out) v /= sigma;
  return out;
}

// Causal variant: running per-bin means and running global sigma over frames
// <= n. Keeps frame n's features independent of any later frame, which the
// causal model mode requires.
inline std::vector<double> normalize_lps_causal(const std::vector<double>& m, int F, int T) {
  check(m.size() == static_cast<std::size_t>(F) * T, "normalize_lps_causal: shape mismatch");
  check(all_finite(m), "normalize_lps_causal: non-finite input");
  std::vector<double> out(m.size());
  std::vector<double> bin_sum(F, 0.0);
  double sq_sum = 0.0;
  for (int n = 0; n < T; ++n) {
    for (int k = 0; k < F; ++k) {
      const double v = m[static_cast<std::size_t>(n) * F + k];
      bin_sum[k] += v;
      sq_sum += v * v;
    }
    const double inv_cnt = 1.0 / (n + 1);
    // global variance = E[v^2] - mean over bins of per-bin running mean^2
    double mean_sq = 0.0;
    for (int k = 0; k < F; ++k) {
      const double mu = bin_sum[k] * inv_cnt;
      mean_sq += mu * mu;
    }
    const double var = std::max(sq_sum * inv_cnt / F - mean_sq / F, 0.0);
    const double sigma = std::max(std::sqrt(var), 1e-8);
    for (int k = 0; k < F; ++k) {
      const double mu = bin_sum[k] * inv_cnt;
      out[static_cast<std::size_t>(n) * F + k] =
          (m[static_cast<std::size_t>(n) * F + k] - mu) / sigma;
    }
  }
  return out;
}

}  // namespace neuralecho

#endif  // NEURALECHO_STFT_HPP
