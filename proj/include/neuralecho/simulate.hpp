// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_SIMULATE_HPP
#define NEURALECHO_SIMULATE_HPP

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "neuralecho/audio.hpp"
#include "neuralecho/fft.hpp"

namespace neuralecho {

using Point3 = std::array<double, 3>;

inline double distance(const Point3& a, const Point3& b) {
  const double dx = a[0] - b[0], dy = a[1] - b[1], dz = a[2] - b[2];
  return std::sqrt(dx * dx + dy * dy + dz * dz);
}

// Shoebox room with one near-end talker, one loudspeaker and one noise source.
struct RoomSpec {
  Point3 dimensions{5.0, 4.0, 3.0};
  double rt60 = 0.3;
  Point3 source_pos{2.0, 1.5, 1.5};
  Point3 loudspeaker_pos{3.5, 2.5, 1.2};
  Point3 noise_pos{1.0, 3.0, 1.8};
  Point3 mic_pos{2.5, 2.0, 1.4};

  void validate() const {
    check(dimensions[0] > 0 && dimensions[1] > 0 && dimensions[2] > 0,
          "RoomSpec: dimensions must be positive");
    check(rt60 >= 0.0 && rt60 <= 0.6, "RoomSpec: rt60 must be in [0, 0.6] s, got ", rt60);
    for (const Point3* p : {&source_pos, &loudspeaker_pos, &noise_pos, &mic_pos})
      for (int i = 0; i < 3; ++i)
        check((*p)[i] > 0.0 && (*p)[i] < dimensions[i],
              "RoomSpec: position outside room along axis ", i);
  }
};

struct Rir {
  std::vector<double> taps;
  int sample_rate = 16000;
};

// Image-source RIR for a shoebox room. A uniform wall reflection coefficient
// is derived from rt60 via Sabine's formula; image amplitudes follow the
// 1/(4*pi*d) spherical spreading law with delays rounded to the nearest
// sample. rt60 = 0 degenerates to the direct path alone.
inline Rir image_source_rir(const RoomSpec& room, const Point3& src, const Point3& mic,
                            int max_order, int sample_rate = 16000) {
  room.validate();
  for (int i = 0; i < 3; ++i) {
    check(src[i] > 0.0 && src[i] < room.dimensions[i], "image_source_rir: source outside room");
    check(mic[i] > 0.0 && mic[i] < room.dimensions[i], "image_source_rir: mic outside room");
  }
  check(max_order >= 0, "image_source_rir: max_order must be >= 0");

  const double lx = room.dimensions[0], ly = room.dimensions[1], lz = room.dimensions[2];
  const double volume = lx * ly * lz;
  const double surface = 2.0 * (lx * ly + lx * lz + ly * lz);

  double beta = 0.0;  // wall reflection coefficient
  if (room.rt60 > 1e-9) {
    const double alpha = 0.1611 * volume / (surface * room.rt60);  // Sabine absorption
    if (alpha < 1.0) beta = std::sqrt(1.0 - alpha);
  }

  const double max_dist = kSoundSpeed * (room.rt60 + 0.05) + distance(src, mic);
  const std::size_t len =
      static_cast<std::size_t>(std::ceil(max_dist / kSoundSpeed * sample_rate)) + 2;
  Rir rir;
  rir.sample_rate = sample_rate;
  rir.taps.assign(len, 0.0);

  const int order = (room.rt60 > 1e-9) ? max_order : 0;
  for (int nx = -order; nx <= order; ++nx)
    for (int ny = -order; ny <= order; ++ny)
      for (int nz = -order; nz <= order; ++nz)
        for (int q = 0; q < 8; ++q) {
          const int qx = q & 1, qy = (q >> 1) & 1, qz = (q >> 2) & 1;
          if (order == 0 && (qx || qy || qz)) continue;
          const double ix = (1 - 2 * qx) * src[0] + 2.0 * nx * lx;
          const double iy = (1 - 2 * qy) * src[1] + 2.0 * ny * ly;
          const double iz = (1 - 2 * qz) * src[2] + 2.0 * nz * lz;
          const int refl = std::abs(nx - qx) + std::abs(nx) + std::abs(ny - qy) +
                           std::abs(ny) + std::abs(nz - qz) + std::abs(nz);
          const double d = distance({ix, iy, iz}, mic);
          if (d < 1e-6) continue;
          const double gain = (refl == 0 ? 1.0 : std::pow(beta, refl)) / (4.0 * kPi * d);
          if (std::abs(gain) < 1e-10) continue;
          const std::size_t delay =
              static_cast<std::size_t>(std::lround(d / kSoundSpeed * sample_rate));
          if (delay < rir.taps.size()) rir.taps[delay] += gain;
        }
  return rir;
}

// Cheap stand-in RIR for unit tests: unit direct tap followed by white noise
// under an exponential envelope reaching -60 dB at rt60.
inline Rir synthetic_decay_rir(double rt60, std::size_t length, std::uint64_t seed,
                               int sample_rate = 16000) {
  check(rt60 >= 0.0, "synthetic_decay_rir: rt60 must be >= 0");
  Rir rir;
  rir.sample_rate = sample_rate;
  if (rt60 <= 1e-9 || length <= 1) {
    rir.taps.assign(1, 1.0);
    return rir;
  }
  rir.taps.assign(length, 0.0);
  rir.taps[0] = 1.0;
  RandomStream rng(seed);
  const double decay = 6.908 / (rt60 * sample_rate);  // ln(10^3)
  for (std::size_t t = 1; t < length; ++t)
    rir.taps[t] = 0.5 * rng.normal() * std::exp(-decay * static_cast<double>(t));
  return rir;
}

inline std::vector<double> convolve(const std::vector<double>& x, const Rir& h,
                                    std::size_t out_len) {
  auto full = fft_convolve(x, h.taps);
  full.resize(out_len, 0.0);
  return full;
}

// Loudspeaker nonlinearity g(.) applied to the far-end signal before the echo
// path.
struct DistortionSpec {
  enum class Kind { kNone, kHardClip, kSigmoid };
  Kind kind = Kind::kNone;
  double clip_ratio = 0.8;    // fraction of the input peak
  double sigmoid_gain = 4.0;

  void validate() const {
    check(clip_ratio > 0.0 && clip_ratio <= 1.0, "DistortionSpec: clip_ratio in (0, 1]");
    check(sigmoid_gain > 0.0, "DistortionSpec: sigmoid_gain must be positive");
  }

  std::string name() const {
    switch (kind) {
      case Kind::kHardClip: return "hard_clip";
      case Kind::kSigmoid: return "sigmoid";
      default: return "none";
    }
  }
};

inline AudioSignal apply_distortion(const AudioSignal& x, const DistortionSpec& spec) {
  spec.validate();
  x.validate();
  if (spec.kind == DistortionSpec::Kind::kNone) return x;
  AudioSignal out = x;
  double peak = 0.0;
  for (double v : x.samples) peak = std::max(peak, std::abs(v));
  if (peak <= 0.0) return out;
  if (spec.kind == DistortionSpec::Kind::kHardClip) {
    const double limit = spec.clip_ratio * peak;
    for (double& v : out.samples) v = std::clamp(v, -limit, limit);
  } else {
    // odd sigmoid, rescaled back to the original peak
    for (double& v : out.samples) v = 2.0 / (1.0 + std::exp(-spec.sigmoid_gain * v)) - 1.0;
    double new_peak = 0.0;
    for (double v : out.samples) new_peak = std::max(new_peak, std::abs(v));
    if (new_peak > 0.0) {
      const double scale = peak / new_peak;
      for (double& v : out.samples) v *= scale;
    }
  }
  return out;
}

struct MixResult {
  AudioSignal y;        // microphone mixture
  AudioSignal echo;     // scaled reverberant echo x_r
  AudioSignal noise;    // scaled noise v
  double echo_scale = 1.0;
  double noise_scale = 1.0;
};

// Scales echo and noise against the reverberant target so the achieved SER
// and SNR hit the requested values, then forms y = s_r + x_r + v with a fixed
// summation order.
inline MixResult mix(const AudioSignal& s_r, const AudioSignal& x_r_raw,
                     const AudioSignal& v_raw, double ser_db, double snr_db) {
  check(s_r.samples.size() == x_r_raw.samples.size() &&
            s_r.samples.size() == v_raw.samples.size(),
        "mix: component lengths differ");
  const double rms_s = rms(s_r.samples);
  const double rms_x = rms(x_r_raw.samples);
  const double rms_v = rms(v_raw.samples);
  check(rms_s > 1e-8, "mix: silent target (undefined SER)");
  check(rms_x > 1e-8, "mix: silent echo (undefined SER)");

  MixResult out;
  out.echo_scale = rms_s / rms_x * std::pow(10.0, -ser_db / 20.0);
  out.noise_scale = rms_v > 1e-12 ? rms_s / rms_v * std::pow(10.0, -snr_db / 20.0) : 0.0;
  out.echo = x_r_raw;
  out.noise = v_raw;
  for (double& v : out.echo.samples) v *= out.echo_scale;
  for (double& v : out.noise.samples) v *= out.noise_scale;
  out.y.sample_rate = s_r.sample_rate;
  out.y.samples.resize(s_r.samples.size());
  for (std::size_t i = 0; i < s_r.samples.size(); ++i)
    out.y.samples[i] = s_r.samples[i] + out.echo.samples[i] + out.noise.samples[i];
  return out;
}

// Deterministic unit-norm stand-in for an externally trained speaker model.
inline std::vector<double> synth_speaker_embedding(const std::string& speaker_id,
                                                   std::uint64_t seed, int dim = 128) {
  RandomStream rng(derive_seed(seed, hash_string(speaker_id)));
  std::vector<double> e(dim);
  double norm_sq = 0.0;
  for (double& v : e) {
    v = rng.normal();
    norm_sq += v * v;
  }
  const double inv = 1.0 / std::sqrt(std::max(norm_sq, 1e-30));
  for (double& v : e) v *= inv;
  return e;
}

// Mean of the enrolled utterance vectors, renormalized to unit norm.
inline std::vector<double> enroll_embedding(
    const std::vector<std::vector<double>>& utterance_embeddings) {
  check(!utterance_embeddings.empty(), "enroll_embedding: empty enrollment list");
  const std::size_t dim = utterance_embeddings.front().size();
  std::vector<double> mean(dim, 0.0);
  for (const auto& e : utterance_embeddings) {
    check(e.size() == dim, "enroll_embedding: embedding dimensions differ");
    for (std::size_t i = 0; i < dim; ++i) mean[i] += e[i];
  }
  double norm_sq = 0.0;
  for (double& v : mean) {
    v /= static_cast<double>(utterance_embeddings.size());
    norm_sq += v * v;
  }
  const double norm = std::sqrt(norm_sq);
  check(norm >= 1e-8, "enroll_embedding: enrolled vectors cancel (norm < 1e-8)");
  for (double& v : mean) v /= norm;
  return mean;
}

// Reference automatic gain control used to build AGC training targets:
// frame-wise RMS tracking (32 ms frames, 16 ms hop) with asymmetric
// attack/release smoothing, gain clamped at max_gain_db and linearly
// interpolated between frames. Silent frames hold the previous gain.
inline AudioSignal reference_agc(const AudioSignal& s, double target_dbfs = -20.0,
                                 double max_gain_db = 30.0) {
  s.validate();
  AudioSignal out = s;
  if (s.samples.empty()) return out;

  const int frame = s.sample_rate * 32 / 1000;
  const int hop = s.sample_rate * 16 / 1000;
  const double target_rms = std::pow(10.0, target_dbfs / 20.0);
  const double max_gain = std::pow(10.0, max_gain_db / 20.0);
  const double attack = 0.5, release = 0.05;

  const int n_frames = static_cast<int>(s.samples.size() + hop - 1) / hop;
  std::vector<double> gains(n_frames, 1.0);
  double tracked = -1.0;  // sentinel until the first non-silent frame
  double gain = 1.0;
  for (int i = 0; i < n_frames; ++i) {
    double acc = 0.0;
    int count = 0;
    for (std::size_t t = static_cast<std::size_t>(i) * hop;
         t < s.samples.size() && t < static_cast<std::size_t>(i) * hop + frame; ++t, ++count)
      acc += s.samples[t] * s.samples[t];
    const double frame_rms = count ? std::sqrt(acc / count) : 0.0;
    if (frame_rms >= 1e-6) {
      if (tracked < 0.0)
        tracked = frame_rms;
      else
        tracked += (frame_rms > tracked ? attack : release) * (frame_rms - tracked);
      gain = std::clamp(target_rms / tracked, 0.0, max_gain);
    }
    gains[i] = gain;
  }

  for (std::size_t t = 0; t < s.samples.size(); ++t) {
    const int i = static_cast<int>(t / hop);
    double g = gains[i];
    if (i + 1 < n_frames) {
      const double frac = static_cast<double>(t - static_cast<std::size_t>(i) * hop) / hop;
      g = gains[i] + frac * (gains[i + 1] - gains[i]);
    }
    out.samples[t] *= g;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Synthetic signal pools. Used when no clean-speech / noise WAV directories
// are configured: harmonic tones with syllabic amplitude gating stand in for
// speech, filtered noise for the environment.
// ---------------------------------------------------------------------------

inline AudioSignal speech_shaped_signal(double duration_s, int sample_rate, RandomStream& rng) {
  AudioSignal out;
  out.sample_rate = sample_rate;
  const std::size_t n = static_cast<std::size_t>(duration_s * sample_rate);
  out.samples.assign(n, 0.0);
  if (n == 0) return out;

  const double f0 = rng.uniform(110.0, 240.0);
  const int harmonics = std::min(24, static_cast<int>(0.45 * sample_rate / f0));
  std::vector<double> amp(harmonics), phase(harmonics);
  const double formant1 = rng.uniform(400.0, 1400.0);
  const double formant2 = rng.uniform(1800.0, 3400.0);
  for (int h = 0; h < harmonics; ++h) {
    // gentle spectral tilt with two formant-ish bumps
    const double f = f0 * (h + 1);
    const double tilt = 1.0 / (1.0 + f / 1500.0);
    const double bump = 1.0 + 1.5 * std::exp(-std::pow((f - formant1) / 400.0, 2)) +
                        0.8 * std::exp(-std::pow((f - formant2) / 600.0, 2));
    amp[h] = tilt * bump * rng.uniform(0.5, 1.0);
    phase[h] = rng.uniform(0.0, 2.0 * kPi);
  }

  // syllabic on/off gating at roughly 3-5 Hz with raised-cosine edges
  const double syllable_rate = rng.uniform(3.0, 5.0);
  const std::size_t syl_len = static_cast<std::size_t>(sample_rate / syllable_rate);
  std::vector<double> env(n, 0.0);
  std::size_t pos = 0;
  while (pos < n) {
    const bool voiced = rng.uniform() < 0.6;
    const std::size_t seg = std::max<std::size_t>(
        static_cast<std::size_t>(syl_len * rng.uniform(0.6, 1.4)), 1);
    if (voiced) {
      const std::size_t ramp = std::min<std::size_t>(seg / 4, sample_rate / 100);
      for (std::size_t t = 0; t < seg && pos + t < n; ++t) {
        double e = 1.0;
        if (t < ramp) e = 0.5 * (1.0 - std::cos(kPi * t / ramp));
        if (seg - t <= ramp) e = std::min(e, 0.5 * (1.0 - std::cos(kPi * (seg - t) / ramp)));
        env[pos + t] = e;
      }
    }
    pos += seg;
  }

  // pitch drifts like natural speech: slow random walk plus light vibrato,
  // integrated into phase to keep the waveform continuous
  const double vibrato_rate = rng.uniform(4.0, 7.0);
  const double drift_pole = std::exp(-2.0 * kPi * 1.5 / sample_rate);
  const double drift_sigma = 0.08;
  double drift = 0.0;
  std::vector<double> theta(harmonics);
  for (int h = 0; h < harmonics; ++h) theta[h] = phase[h];
  for (std::size_t t = 0; t < n; ++t) {
    const double time = static_cast<double>(t) / sample_rate;
    drift = drift_pole * drift + (1.0 - drift_pole) * drift_sigma * rng.normal() * 40.0;
    const double f_inst =
        f0 * std::exp(std::clamp(drift, -0.2, 0.2)) *
        (1.0 + 0.01 * std::sin(2.0 * kPi * vibrato_rate * time));
    double v = 0.0;
    for (int h = 0; h < harmonics; ++h) {
      theta[h] += 2.0 * kPi * f_inst * (h + 1) / sample_rate;
      v += amp[h] * std::sin(theta[h]);
    }
    out.samples[t] = env[t] * v;
  }

  double peak = 0.0;
  for (double v : out.samples) peak = std::max(peak, std::abs(v));
  const double scale = peak > 0.0 ? 0.5 / peak : 1.0;
  bool any = false;
  for (double& v : out.samples) {
    v *= scale;
    any = any || std::abs(v) > 0.0;
  }
  if (!any) out.samples[0] = 1e-3;  // guard against an all-gated draw
  return out;
}

inline AudioSignal noise_signal(double duration_s, int sample_rate, RandomStream& rng) {
  AudioSignal out;
  out.sample_rate = sample_rate;
  const std::size_t n = static_cast<std::size_t>(duration_s * sample_rate);
  out.samples.assign(n, 0.0);
  double lp = 0.0;
  const double pole = rng.uniform(0.4, 0.9);  // darker or brighter noise
  for (std::size_t t = 0; t < n; ++t) {
    lp = pole * lp + (1.0 - pole) * rng.normal();
    out.samples[t] = lp;
  }
  const double r = rms(out.samples);
  if (r > 0.0)
    for (double& v : out.samples) v *= 0.1 / r;
  return out;
}

}  // namespace neuralecho

#endif  // NEURALECHO_SIMULATE_HPP
