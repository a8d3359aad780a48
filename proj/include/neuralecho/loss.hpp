// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_LOSS_HPP
#define NEURALECHO_LOSS_HPP

#include <vector>

#include "neuralecho/stft.hpp"

namespace neuralecho {

// Scale-invariant SDR in dB with the optimal scaling projection, clamped to
// +-clamp_db for reporting.
inline double si_sdr(const std::vector<double>& est, const std::vector<double>& ref,
                     double clamp_db = 60.0) {
  check(est.size() == ref.size(), "si_sdr: length mismatch");
  double dot_rr = 0.0, dot_er = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    dot_rr += ref[i] * ref[i];
    dot_er += est[i] * ref[i];
  }
  check(dot_rr > 1e-30, "si_sdr: silent reference");
  const double alpha = dot_er / dot_rr;
  const double target_energy = alpha * alpha * dot_rr;
  double err_energy = 0.0;
  for (std::size_t i = 0; i < ref.size(); ++i) {
    const double e = alpha * ref[i] - est[i];
    err_energy += e * e;
  }
  // degenerate projection (est orthogonal to ref, e.g. a zero estimate) is
  // the worst case, not a perfect one
  if (target_energy <= 1e-30) return -clamp_db;
  if (err_energy < 1e-30) return clamp_db;
  return std::clamp(10.0 * std::log10(target_energy / err_energy), -clamp_db, clamp_db);
}

// Mean over all bins of | |A| - |B| |.
inline double l1_mag(const Spectrogram& a, const Spectrogram& b) {
  check(a.F == b.F && a.T == b.T, "l1_mag: shape mismatch");
  if (a.data.empty()) return 0.0;
  double acc = 0.0;
  for (std::size_t i = 0; i < a.data.size(); ++i)
    acc += std::abs(std::abs(a.data[i]) - std::abs(b.data[i]));
  return acc / static_cast<double>(a.data.size());
}

}  // namespace neuralecho

#endif  // NEURALECHO_LOSS_HPP
