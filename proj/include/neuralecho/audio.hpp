// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_AUDIO_HPP
#define NEURALECHO_AUDIO_HPP

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "neuralecho/common.hpp"

namespace neuralecho {

// Mono audio held as linear amplitudes, nominally in [-1, 1]. Samples are kept
// in double internally; WAV files store PCM16 or float32.
struct AudioSignal {
  std::vector<double> samples;
  int sample_rate = 16000;

  double duration_s() const {
    return sample_rate > 0 ? static_cast<double>(samples.size()) / sample_rate : 0.0;
  }

  void validate() const {
    check(sample_rate > 0, "AudioSignal: sample_rate must be positive, got ", sample_rate);
    check(all_finite(samples), "AudioSignal: non-finite sample");
  }
};

inline double rms(const std::vector<double>& x) {
  if (x.empty()) return 0.0;
  double acc = 0.0;
  for (double v : x) acc += v * v;
  return std::sqrt(acc / static_cast<double>(x.size()));
}

inline double rms_dbfs(const std::vector<double>& x) {
  double r = rms(x);
  return 20.0 * std::log10(std::max(r, 1e-12));
}

namespace wav_detail {

inline std::uint32_t read_u32(std::istream& in) {
  unsigned char b[4];
  in.read(reinterpret_cast<char*>(b), 4);
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

inline std::uint16_t read_u16(std::istream& in) {
  unsigned char b[2];
  in.read(reinterpret_cast<char*>(b), 2);
  return static_cast<std::uint16_t>(b[0] | (b[1] << 8));
}

inline void write_u32(std::ostream& out, std::uint32_t v) {
  unsigned char b[4] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff),
                        static_cast<unsigned char>((v >> 16) & 0xff),
                        static_cast<unsigned char>((v >> 24) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 4);
}

inline void write_u16(std::ostream& out, std::uint16_t v) {
  unsigned char b[2] = {static_cast<unsigned char>(v & 0xff),
                        static_cast<unsigned char>((v >> 8) & 0xff)};
  out.write(reinterpret_cast<char*>(b), 2);
}

inline float f32_from_le(const unsigned char* p) {
  std::uint32_t u = static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
                    (static_cast<std::uint32_t>(p[2]) << 16) |
                    (static_cast<std::uint32_t>(p[3]) << 24);
  float f;
  std::memcpy(&f, &u, 4);
  return f;
}

}  // namespace wav_detail

// Reads a mono RIFF/WAVE file. PCM16 (scaled by 1/32768) and IEEE float32 are
// accepted; anything else is rejected.
inline AudioSignal load_wav(const std::string& path) {
  using namespace wav_detail;
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "load_wav: cannot open ", path);

  char tag[4];
  in.read(tag, 4);
  check(in.good() && std::memcmp(tag, "RIFF", 4) == 0, "load_wav: not a RIFF file: ", path);
  read_u32(in);  // riff size
  in.read(tag, 4);
  check(in.good() && std::memcmp(tag, "WAVE", 4) == 0, "load_wav: not a WAVE file: ", path);

  std::uint16_t format = 0, channels = 0, bits = 0;
  std::uint32_t rate = 0;
  bool have_fmt = false;
  std::vector<unsigned char> data;
  bool have_data = false;

  while (in.read(tag, 4)) {
    std::uint32_t size = read_u32(in);
    if (!in.good()) break;
    if (std::memcmp(tag, "fmt ", 4) == 0) {
      check(size >= 16, "load_wav: malformed fmt chunk in ", path);
      format = read_u16(in);
      channels = read_u16(in);
      rate = read_u32(in);
      read_u32(in);  // byte rate
      read_u16(in);  // block align
      bits = read_u16(in);
      in.ignore(size - 16);
      have_fmt = true;
    } else if (std::memcmp(tag, "data", 4) == 0) {
      data.resize(size);
      if (size > 0) in.read(reinterpret_cast<char*>(data.data()), size);
      check(in.good() || size == 0, "load_wav: truncated data chunk in ", path);
      have_data = true;
    } else {
      in.ignore(size + (size & 1));  // chunks are word aligned
    }
    if (size & 1 && std::memcmp(tag, "data", 4) == 0) in.ignore(1);
  }

  check(have_fmt, "load_wav: missing fmt chunk in ", path);
  check(have_data, "load_wav: missing data chunk in ", path);
  check(channels == 1, "load_wav: expected mono, got ", channels, " channels in ", path);

  AudioSignal out;
  out.sample_rate = static_cast<int>(rate);
  if (format == 1 && bits == 16) {
    std::size_t n = data.size() / 2;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      std::int16_t s = static_cast<std::int16_t>(data[2 * i] | (data[2 * i + 1] << 8));
      out.samples[i] = static_cast<double>(s) / 32768.0;
    }
  } else if (format == 3 && bits == 32) {
    std::size_t n = data.size() / 4;
    out.samples.resize(n);
    for (std::size_t i = 0; i < n; ++i)
      out.samples[i] = static_cast<double>(f32_from_le(data.data() + 4 * i));
  } else {
    fail("load_wav: unsupported encoding (format=", format, ", bits=", bits, ") in ", path);
  }
  out.validate();
  return out;
}

// Writes mono float32 WAV. Samples outside [-1, 1] are preserved as-is; AGC
// outputs may legitimately exceed unity before the caller rescales.
inline void save_wav(const AudioSignal& signal, const std::string& path) {
  using namespace wav_detail;
  signal.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "save_wav: cannot open ", path, " for writing");

  const std::uint32_t n = static_cast<std::uint32_t>(signal.samples.size());
  const std::uint32_t data_bytes = n * 4;
  out.write("RIFF", 4);
  write_u32(out, 36 + data_bytes);
  out.write("WAVE", 4);
  out.write("fmt ", 4);
  write_u32(out, 16);
  write_u16(out, 3);  // IEEE float
  write_u16(out, 1);  // mono
  write_u32(out, static_cast<std::uint32_t>(signal.sample_rate));
  write_u32(out, static_cast<std::uint32_t>(signal.sample_rate) * 4);
  write_u16(out, 4);
  write_u16(out, 32);
  out.write("data", 4);
  write_u32(out, data_bytes);
  for (std::uint32_t i = 0; i < n; ++i) {
    float f = static_cast<float>(signal.samples[i]);
    std::uint32_t u;
    std::memcpy(&u, &f, 4);
    write_u32(out, u);
  }
  check(out.good(), "save_wav: write failed for ", path);
}

}  // namespace neuralecho

#endif  // NEURALECHO_AUDIO_HPP
