// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_FEATURES_HPP
#define NEURALECHO_FEATURES_HPP

#include <complex>
#include <cstdint>
#include <fstream>
#include <vector>

#include "neuralecho/stft.hpp"

namespace neuralecho {

// Small dense Hermitian matrix, row-major.
struct HermMat {
  int m = 0;
  std::vector<std::complex<double>> a;

  explicit HermMat(int size = 0) : m(size), a(static_cast<std::size_t>(size) * size) {}

  std::complex<double>& at(int i, int j) { return a[static_cast<std::size_t>(i) * m + j]; }
  const std::complex<double>& at(int i, int j) const {
    return a[static_cast<std::size_t>(i) * m + j];
  }

  double hermitian_defect() const {
    double worst = 0.0;
    for (int i = 0; i < m; ++i)
      for (int j = 0; j <= i; ++j)
        worst = std::max(worst, std::abs(at(i, j) - std::conj(at(j, i))));
    return worst;
  }
};

// Rank-1 outer product u u^H, made exactly Hermitian by mirroring the lower
// triangle and forcing real diagonals.
inline HermMat herm_outer(const std::vector<std::complex<double>>& u) {
  const int m = static_cast<int>(u.size());
  HermMat out(m);
  for (int i = 0; i < m; ++i) {
    out.at(i, i) = std::norm(u[i]);
    for (int j = 0; j < i; ++j) {
      const std::complex<double> v = u[i] * std::conj(u[j]);
      out.at(i, j) = v;
      out.at(j, i) = std::conj(v);
    }
  }
  return out;
}

// Channel covariance of the stacked mic/far-end pair after removing the
// cross-channel mean.
inline HermMat channel_covariance(std::complex<double> mic, std::complex<double> farend) {
  const std::complex<double> mu = 0.5 * (mic + farend);
  return herm_outer({mic - mu, farend - mu});
}

// Lag vector [Z(k,n), Z(k,n-1), ..., Z(k,n-n_tau)]; indices before the first
// frame are zero-padded so features stay causal and fixed-size.
inline std::vector<std::complex<double>> temporal_lags(const Spectrogram& Z, int k, int n,
                                                       int n_tau) {
  std::vector<std::complex<double>> u(static_cast<std::size_t>(n_tau) + 1);
  for (int tau = 0; tau <= n_tau; ++tau)
    u[tau] = (n - tau >= 0) ? Z.at(k, n - tau) : std::complex<double>(0, 0);
  return u;
}

inline std::vector<std::complex<double>> frequency_lags(const Spectrogram& Z, int k, int n,
                                                        int k_tau) {
  std::vector<std::complex<double>> u(static_cast<std::size_t>(k_tau) + 1);
  for (int tau = 0; tau <= k_tau; ++tau)
    u[tau] = (k - tau >= 0) ? Z.at(k - tau, n) : std::complex<double>(0, 0);
  return u;
}

inline HermMat temporal_correlation(const Spectrogram& Z, int k, int n, int n_tau = 9) {
  check(n_tau >= 0, "temporal_correlation: n_tau must be >= 0");
  return herm_outer(temporal_lags(Z, k, n, n_tau));
}

inline HermMat frequency_correlation(const Spectrogram& Z, int k, int n, int k_tau = 9) {
  check(k_tau >= 0, "frequency_correlation: k_tau must be >= 0");
  return herm_outer(frequency_lags(Z, k, n, k_tau));
}

// Flattens the lower triangle of a Hermitian matrix, real parts then
// imaginary parts. Traversal order: diagonal entries first (row order), then
// strictly-lower entries row-major. Length is m(m+1) with the diagonal,
// m(m-1) without; diagonal imaginary parts are packed as exact zeros.
inline std::vector<double> pack_hermitian(const HermMat& M, bool include_diagonal) {
  check(M.hermitian_defect() <= 1e-10, "pack_hermitian: input is not Hermitian");
  std::vector<std::complex<double>> tri;
  tri.reserve(static_cast<std::size_t>(M.m) * (M.m + 1) / 2);
  if (include_diagonal)
    for (int i = 0; i < M.m; ++i) tri.push_back({M.at(i, i).real(), 0.0});
  for (int i = 0; i < M.m; ++i)
    for (int j = 0; j < i; ++j) tri.push_back(M.at(i, j));
  std::vector<double> out;
  out.reserve(tri.size() * 2);
  for (const auto& z : tri) out.push_back(z.real());
  for (const auto& z : tri) out.push_back(z.imag());
  return out;
}

inline constexpr int kStage1FeatureDim = 368;  // 6 + 4*90 + 2

// Per-(k,n) stage-1 feature vectors, layout [n][k][d].
struct FeatureTensor {
  int T = 0;
  int F = 0;
  int dim = 0;
  std::vector<double> data;

  double* at(int k, int n) {
    return data.data() + (static_cast<std::size_t>(n) * F + k) * dim;
  }
  const double* at(int k, int n) const {
    return data.data() + (static_cast<std::size_t>(n) * F + k) * dim;
  }
};

// Stage-1 input features: channel covariance pack (diagonal kept, 6), the two
// channels' temporal and frequency correlation packs (diagonal dropped, 4x90),
// and the two normalized LPS values. 6 + 360 + 2 = 368 per bin.
//
// causal_norm selects running LPS statistics so that frame n never sees later
// frames; the default uses whole-utterance statistics.
inline FeatureTensor assemble_stage1(const Spectrogram& Y, const Spectrogram& X,
                                     bool causal_norm = false, int n_tau = 9, int k_tau = 9,
                                     double lps_floor = 1e-12) {
  check(Y.F == X.F && Y.T == X.T, "assemble_stage1: mic/far-end shape mismatch");
  const int F = Y.F;
  const int T = Y.T;

  FeatureTensor feat;
  feat.T = T;
  feat.F = F;
  feat.dim = 6 + 2 * ((n_tau + 1) * n_tau + (k_tau + 1) * k_tau) + 2;
  check(n_tau != 9 || k_tau != 9 || feat.dim == kStage1FeatureDim,
        "assemble_stage1: unexpected feature dimension");
  feat.data.assign(static_cast<std::size_t>(T) * F * feat.dim, 0.0);

  const std::vector<double> lps_y_raw = lps(Y, lps_floor);
  const std::vector<double> lps_x_raw = lps(X, lps_floor);
  const std::vector<double> lps_y =
      causal_norm ? normalize_lps_causal(lps_y_raw, F, T) : normalize_lps(lps_y_raw, F, T);
  const std::vector<double> lps_x =
      causal_norm ? normalize_lps_causal(lps_x_raw, F, T) : normalize_lps(lps_x_raw, F, T);

  parallel_for(static_cast<std::size_t>(T), [&](std::size_t frame) {
    const int n = static_cast<int>(frame);
    for (int k = 0; k < F; ++k) {
      double* dst = feat.at(k, n);
      std::size_t off = 0;
      auto emit = [&](const std::vector<double>& pack) {
        std::copy(pack.begin(), pack.end(), dst + off);
        off += pack.size();
      };
      emit(pack_hermitian(channel_covariance(Y.at(k, n), X.at(k, n)), true));
      emit(pack_hermitian(temporal_correlation(Y, k, n, n_tau), false));
      emit(pack_hermitian(temporal_correlation(X, k, n, n_tau), false));
      emit(pack_hermitian(frequency_correlation(Y, k, n, k_tau), false));
      emit(pack_hermitian(frequency_correlation(X, k, n, k_tau), false));
      dst[off++] = lps_y[static_cast<std::size_t>(n) * F + k];
      dst[off++] = lps_x[static_cast<std::size_t>(n) * F + k];
      check(off == static_cast<std::size_t>(feat.dim), "assemble_stage1: layout bug");
    }
  });
  return feat;
}

// Debug dump: "NEFT" magic, version, dims, float32 little-endian payload.
inline void write_feature_dump(const FeatureTensor& feat, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "write_feature_dump: cannot open ", path);
  out.write("NEFT", 4);
  const std::uint32_t version = 1;
  out.write(reinterpret_cast<const char*>(&version), 4);
  const std::uint64_t dims[3] = {static_cast<std::uint64_t>(feat.T),
                                 static_cast<std::uint64_t>(feat.F),
                                 static_cast<std::uint64_t>(feat.dim)};
  out.write(reinterpret_cast<const char*>(dims), sizeof(dims));
  for (double v : feat.data) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
  check(out.good(), "write_feature_dump: write failed for ", path);
}

inline FeatureTensor read_feature_dump(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_feature_dump: cannot open ", path);
  char magic[4];
  in.read(magic, 4);
  check(in.good() && std::string(magic, 4) == "NEFT", "read_feature_dump: bad magic");
  std::uint32_t version = 0;
  in.read(reinterpret_cast<char*>(&version), 4);
  check(version == 1, "read_feature_dump: unsupported version ", version);
  std::uint64_t dims[3];
  in.read(reinterpret_cast<char*>(dims), sizeof(dims));
  FeatureTensor feat;
  feat.T = static_cast<int>(dims[0]);
  feat.F = static_cast<int>(dims[1]);
  feat.dim = static_cast<int>(dims[2]);
  feat.data.resize(static_cast<std::size_t>(feat.T) * feat.F * feat.dim);
  for (auto& v : feat.data) {
    float f;
    in.read(reinterpret_cast<char*>(&f), 4);
    v = f;
  }
  check(in.good(), "read_feature_dump: truncated file ", path);
  return feat;
}

}  // namespace neuralecho

#endif  // NEURALECHO_FEATURES_HPP
