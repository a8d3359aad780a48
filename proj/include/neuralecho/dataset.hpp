// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_DATASET_HPP
#define NEURALECHO_DATASET_HPP

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "neuralecho/simulate.hpp"

namespace neuralecho {

namespace fs = std::filesystem;
using nlohmann::json;

struct SimConfig {
  double duration_s = 4.0;
  int sample_rate = 16000;
  int n_speakers = 16;
  int embedding_dim = 128;

  std::string rir_method = "image_source";  // or "synthetic"
  double rt60_min = 0.0;
  double rt60_max = 0.6;
  double room_min[3] = {3.0, 3.0, 2.5};
  double room_max[3] = {8.0, 6.0, 4.0};
  double wall_margin = 0.3;
  int max_order = 0;  // 0 = derive from rt60 and room size

  double ser_min = -10.0;
  double ser_max = 10.0;
  double snr_min = 0.0;
  double snr_max = 40.0;
  double bulk_delay_ms_min = 0.0;
  double bulk_delay_ms_max = 20.0;

  double p_no_distortion = 0.3;  // remainder split between clip and sigmoid
  double clip_ratio_min = 0.6;
  double clip_ratio_max = 0.95;
  double sigmoid_gain_min = 2.0;
  double sigmoid_gain_max = 6.0;

  std::string speech_dir;  // empty: synthetic speech-shaped pool
  std::string noise_dir;   // empty: synthetic noise pool
  bool allow_synthetic = true;

  double normalize_peak = 0.95;
  double agc_target_dbfs = -20.0;
  double agc_max_gain_db = 30.0;

  void validate() const {
    check(duration_s > 0.0, "simulate config: duration_s must be positive");
    check(sample_rate > 0, "simulate config: sample_rate must be positive");
    check(n_speakers > 0, "simulate config: n_speakers must be positive");
    check(rir_method == "image_source" || rir_method == "synthetic",
          "simulate config: rir_method must be image_source or synthetic");
    check(rt60_min >= 0.0 && rt60_max <= 0.6 && rt60_min <= rt60_max,
          "simulate config: rt60 range must lie in [0, 0.6]");
    check(ser_min <= ser_max && ser_min >= -10.0 && ser_max <= 10.0,
          "simulate config: SER range must lie in [-10, 10] dB");
    check(snr_min <= snr_max && snr_min >= 0.0 && snr_max <= 40.0,
          "simulate config: SNR range must lie in [0, 40] dB");
  }
};

struct ManifestRecord {
  std::string id;
  std::string mic_path, farend_path, target_path, echo_path, noise_path;
  std::string agc_target_path, embedding_path;
  std::string speaker_id;
  double ser_db = 0.0;
  double snr_db = 0.0;
  double rt60 = 0.0;
  std::uint64_t seed = 0;
};

struct DatasetManifest {
  fs::path root;  // directory the relative paths resolve against
  std::vector<ManifestRecord> records;

  std::string resolve(const std::string& rel) const { return (root / rel).string(); }
};

inline void write_embedding(const std::vector<double>& e, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  check(out.good(), "write_embedding: cannot open ", path);
  for (double v : e) {
    const float f = static_cast<float>(v);
    out.write(reinterpret_cast<const char*>(&f), 4);
  }
  check(out.good(), "write_embedding: write failed for ", path);
}

inline std::vector<double> read_embedding(const std::string& path, int expected_dim = 128) {
  std::ifstream in(path, std::ios::binary);
  check(in.good(), "read_embedding: cannot open ", path);
  std::vector<double> e;
  float f;
  while (in.read(reinterpret_cast<char*>(&f), 4)) e.push_back(f);
  check(static_cast<int>(e.size()) == expected_dim, "read_embedding: expected ", expected_dim,
        " floats in ", path, ", got ", e.size());
  return e;
}

namespace dataset_detail {

inline std::vector<std::string> list_wavs(const std::string& dir) {
  std::vector<std::string> files;
  for (const auto& entry : fs::directory_iterator(dir))
    if (entry.is_regular_file() && entry.path().extension() == ".wav")
      files.push_back(entry.path().string());
  std::sort(files.begin(), files.end());
  return files;
}

// Draws a clip of exactly duration_s from the pool (random crop, zero-padded
// tail) or synthesizes one when the pool is empty.
inline AudioSignal draw_clip(const std::vector<std::string>& pool, bool speech,
                             const SimConfig& cfg, RandomStream& rng) {
  const std::size_t want = static_cast<std::size_t>(cfg.duration_s * cfg.sample_rate);
  if (pool.empty()) {
    check(cfg.allow_synthetic, "make_dataset: signal pool is empty and synthetic fallback is disabled");
    return speech ? speech_shaped_signal(cfg.duration_s, cfg.sample_rate, rng)
                  : noise_signal(cfg.duration_s, cfg.sample_rate, rng);
  }
  const auto& path = pool[rng.uniform_index(pool.size())];
  AudioSignal sig = load_wav(path);
  check(sig.sample_rate == cfg.sample_rate, "make_dataset: ", path, " has rate ",
        sig.sample_rate, ", expected ", cfg.sample_rate, " (resampling unsupported)");
  AudioSignal out;
  out.sample_rate = cfg.sample_rate;
  out.samples.assign(want, 0.0);
  if (!sig.samples.empty()) {
    std::size_t start = 0;
    if (sig.samples.size() > want)
      start = rng.uniform_index(sig.samples.size() - want + 1);
    const std::size_t n = std::min(want, sig.samples.size() - start);
    std::copy(sig.samples.begin() + start, sig.samples.begin() + start + n,
              out.samples.begin());
  }
  return out;
}

inline Point3 random_point(const RoomSpec& room, double margin, RandomStream& rng) {
  Point3 p;
  for (int i = 0; i < 3; ++i)
    p[i] = rng.uniform(margin, room.dimensions[i] - margin);
  return p;
}

inline int derive_order(const RoomSpec& room, double rt60) {
  const double min_dim =
      std::min({room.dimensions[0], room.dimensions[1], room.dimensions[2]});
  return static_cast<int>(std::ceil(kSoundSpeed * rt60 / (2.0 * min_dim))) + 1;
}

}  // namespace dataset_detail

// Generates n_items mixtures under the Eq.-1 signal model: reverberant target
// h_s * s, distorted and reverberated far-end h_x * g(x), reverberant noise,
// mixed at a sampled SER/SNR, plus the AGC-leveled dry target and a speaker
// embedding. Everything derives from (cfg, seed, item index).
inline DatasetManifest make_dataset(const SimConfig& cfg, int n_items, std::uint64_t seed,
                                    const std::string& out_dir) {
  cfg.validate();
  check(n_items >= 0, "make_dataset: n_items must be >= 0");
  std::error_code ec;
  fs::create_directories(out_dir, ec);
  check(fs::is_directory(out_dir), "make_dataset: cannot create output dir ", out_dir);

  const std::vector<std::string> speech_pool =
      cfg.speech_dir.empty() ? std::vector<std::string>{} : dataset_detail::list_wavs(cfg.speech_dir);
  const std::vector<std::string> noise_pool =
      cfg.noise_dir.empty() ? std::vector<std::string>{} : dataset_detail::list_wavs(cfg.noise_dir);
  if (!cfg.speech_dir.empty())
    check(!speech_pool.empty() || cfg.allow_synthetic, "make_dataset: no WAVs in ", cfg.speech_dir);

  const std::uint64_t embedding_seed = derive_seed(seed, 0xE0B5EEDULL);

  DatasetManifest manifest;
  manifest.root = fs::path(out_dir);
  const fs::path manifest_path = manifest.root / "manifest.jsonl";
  std::ofstream mf(manifest_path, std::ios::trunc);
  check(mf.good(), "make_dataset: cannot write ", manifest_path.string());

  const std::size_t len = static_cast<std::size_t>(cfg.duration_s * cfg.sample_rate);
  for (int item = 0; item < n_items; ++item) {
    const std::uint64_t item_seed = derive_seed(seed, static_cast<std::uint64_t>(item));
    RandomStream rng(item_seed);

    char id[32];
    std::snprintf(id, sizeof(id), "item_%05d", item);
    char spk[32];
    std::snprintf(spk, sizeof(spk), "spk%04d",
                  static_cast<int>(rng.uniform_index(cfg.n_speakers)));

    AudioSignal s = dataset_detail::draw_clip(speech_pool, true, cfg, rng);
    AudioSignal x = dataset_detail::draw_clip(speech_pool, true, cfg, rng);
    AudioSignal v = dataset_detail::draw_clip(noise_pool, false, cfg, rng);
    check(rms(s.samples) > 1e-8 && rms(x.samples) > 1e-8,
          "make_dataset: drew a silent speech clip");
    if (rms(v.samples) <= 1e-8) {
      check(cfg.allow_synthetic, "make_dataset: drew a silent noise clip");
      v = noise_signal(cfg.duration_s, cfg.sample_rate, rng);
    }

    RoomSpec room;
    for (int i = 0; i < 3; ++i)
      room.dimensions[i] = rng.uniform(cfg.room_min[i], cfg.room_max[i]);
    room.rt60 = rng.uniform(cfg.rt60_min, cfg.rt60_max);
    room.mic_pos = dataset_detail::random_point(room, cfg.wall_margin, rng);
    room.source_pos = dataset_detail::random_point(room, cfg.wall_margin, rng);
    room.loudspeaker_pos = dataset_detail::random_point(room, cfg.wall_margin, rng);
    room.noise_pos = dataset_detail::random_point(room, cfg.wall_margin, rng);

    DistortionSpec dist;
    const double p = rng.uniform();
    if (p >= cfg.p_no_distortion)
      dist.kind = (p < cfg.p_no_distortion + 0.5 * (1.0 - cfg.p_no_distortion))
                      ? DistortionSpec::Kind::kHardClip
                      : DistortionSpec::Kind::kSigmoid;
    dist.clip_ratio = rng.uniform(cfg.clip_ratio_min, cfg.clip_ratio_max);
    dist.sigmoid_gain = rng.uniform(cfg.sigmoid_gain_min, cfg.sigmoid_gain_max);

    const double ser_db = rng.uniform(cfg.ser_min, cfg.ser_max);
    const double snr_db = rng.uniform(cfg.snr_min, cfg.snr_max);

    Rir h_s, h_x, h_v;
    if (cfg.rir_method == "image_source") {
      const int order = cfg.max_order > 0 ? cfg.max_order
                                          : dataset_detail::derive_order(room, room.rt60);
      h_s = image_source_rir(room, room.source_pos, room.mic_pos, order, cfg.sample_rate);
      h_x = image_source_rir(room, room.loudspeaker_pos, room.mic_pos, order, cfg.sample_rate);
      h_v = image_source_rir(room, room.noise_pos, room.mic_pos, order, cfg.sample_rate);
    } else {
      const std::size_t rir_len =
          static_cast<std::size_t>((room.rt60 + 0.02) * cfg.sample_rate) + 1;
      h_s = synthetic_decay_rir(room.rt60, rir_len, rng.next_u64(), cfg.sample_rate);
      h_x = synthetic_decay_rir(room.rt60, rir_len, rng.next_u64(), cfg.sample_rate);
      h_v = synthetic_decay_rir(room.rt60, rir_len, rng.next_u64(), cfg.sample_rate);
    }
    // device buffering on the echo path, on top of the acoustic delay in h_x
    const double bulk_ms = rng.uniform(cfg.bulk_delay_ms_min, cfg.bulk_delay_ms_max);
    const std::size_t bulk = static_cast<std::size_t>(bulk_ms * cfg.sample_rate / 1000.0);
    if (bulk > 0) h_x.taps.insert(h_x.taps.begin(), bulk, 0.0);

    AudioSignal s_r{convolve(s.samples, h_s, len), cfg.sample_rate};
    AudioSignal x_dist = apply_distortion(x, dist);
    AudioSignal x_r_raw{convolve(x_dist.samples, h_x, len), cfg.sample_rate};
    AudioSignal v_rev{convolve(v.samples, h_v, len), cfg.sample_rate};

    MixResult mixed = mix(s_r, x_r_raw, v_rev, ser_db, snr_db);

    double peak = 0.0;
    for (double vv : mixed.y.samples) peak = std::max(peak, std::abs(vv));
    if (peak > cfg.normalize_peak) {
      const double scale = cfg.normalize_peak / peak;
      for (auto* sig : {&s_r, &mixed.echo, &mixed.noise})
        for (double& vv : sig->samples) vv *= scale;
      // keep y = s_r + x_r + v exact after rescaling
      for (std::size_t i = 0; i < mixed.y.samples.size(); ++i)
        mixed.y.samples[i] = s_r.samples[i] + mixed.echo.samples[i] + mixed.noise.samples[i];
    }

    AudioSignal agc_target = reference_agc(s, cfg.agc_target_dbfs, cfg.agc_max_gain_db);
    const std::vector<double> emb =
        synth_speaker_embedding(spk, embedding_seed, cfg.embedding_dim);

    ManifestRecord rec;
    rec.id = id;
    rec.speaker_id = spk;
    rec.ser_db = ser_db;
    rec.snr_db = snr_db;
    rec.rt60 = room.rt60;
    rec.seed = item_seed;
    rec.mic_path = std::string(id) + "_mic.wav";
    rec.farend_path = std::string(id) + "_farend.wav";
    rec.target_path = std::string(id) + "_target.wav";
    rec.echo_path = std::string(id) + "_echo.wav";
    rec.noise_path = std::string(id) + "_noise.wav";
    rec.agc_target_path = std::string(id) + "_agc.wav";
    rec.embedding_path = std::string(id) + "_emb.f32";

    save_wav(mixed.y, manifest.resolve(rec.mic_path));
    save_wav(x, manifest.resolve(rec.farend_path));
    save_wav(s_r, manifest.resolve(rec.target_path));
    save_wav(mixed.echo, manifest.resolve(rec.echo_path));
    save_wav(mixed.noise, manifest.resolve(rec.noise_path));
    save_wav(agc_target, manifest.resolve(rec.agc_target_path));
    write_embedding(emb, manifest.resolve(rec.embedding_path));

    json j;
    j["id"] = rec.id;
    j["mic_path"] = rec.mic_path;
    j["farend_path"] = rec.farend_path;
    j["target_path"] = rec.target_path;
    j["echo_path"] = rec.echo_path;
    j["noise_path"] = rec.noise_path;
    j["agc_target_path"] = rec.agc_target_path;
    j["embedding_path"] = rec.embedding_path;
    j["speaker_id"] = rec.speaker_id;
    j["ser_db"] = rec.ser_db;
    j["snr_db"] = rec.snr_db;
    j["rt60"] = rec.rt60;
    j["seed"] = rec.seed;
    mf << j.dump() << "\n";

    manifest.records.push_back(std::move(rec));
  }
  mf.close();
  check(mf.good(), "make_dataset: manifest write failed");
  return manifest;
}

inline DatasetManifest load_manifest(const std::string& path) {
  std::ifstream in(path);
  check(in.good(), "load_manifest: cannot open ", path);
  DatasetManifest manifest;
  manifest.root = fs::path(path).parent_path();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      fail("load_manifest: ", path, ":", line_no, ": ", e.what());
    }
    ManifestRecord rec;
    rec.id = j.at("id").get<std::string>();
    rec.mic_path = j.at("mic_path").get<std::string>();
    rec.farend_path = j.at("farend_path").get<std::string>();
    rec.target_path = j.at("target_path").get<std::string>();
    rec.echo_path = j.at("echo_path").get<std::string>();
    rec.noise_path = j.at("noise_path").get<std::string>();
    rec.agc_target_path = j.at("agc_target_path").get<std::string>();
    rec.embedding_path = j.value("embedding_path", std::string());
    rec.speaker_id = j.value("speaker_id", std::string());
    rec.ser_db = j.at("ser_db").get<double>();
    rec.snr_db = j.at("snr_db").get<double>();
    rec.rt60 = j.value("rt60", 0.0);
    rec.seed = j.value("seed", std::uint64_t(0));
    manifest.records.push_back(std::move(rec));
  }
  return manifest;
}

struct VerifyReport {
  int n_records = 0;
  double max_identity_err = 0.0;
  double max_ser_err_db = 0.0;
  double max_snr_err_db = 0.0;
  bool ok = true;
};

// Recomputes the mixing identity and the achieved SER/SNR from the stored
// component WAVs.
inline VerifyReport verify_manifest(const DatasetManifest& manifest,
                                    double identity_tol = 1e-7, double ratio_tol_db = 0.01) {
  VerifyReport report;
  for (const auto& rec : manifest.records) {
    AudioSignal y = load_wav(manifest.resolve(rec.mic_path));
    AudioSignal s_r = load_wav(manifest.resolve(rec.target_path));
    AudioSignal x_r = load_wav(manifest.resolve(rec.echo_path));
    AudioSignal v = load_wav(manifest.resolve(rec.noise_path));
    check(y.samples.size() == s_r.samples.size() && y.samples.size() == x_r.samples.size() &&
              y.samples.size() == v.samples.size(),
          "verify: component lengths differ for ", rec.id);
    double err = 0.0;
    for (std::size_t i = 0; i < y.samples.size(); ++i)
      err = std::max(err, std::abs(y.samples[i] -
                                   (s_r.samples[i] + x_r.samples[i] + v.samples[i])));
    const double ser = 20.0 * std::log10(rms(s_r.samples) / std::max(rms(x_r.samples), 1e-30));
    const double snr = 20.0 * std::log10(rms(s_r.samples) / std::max(rms(v.samples), 1e-30));
    report.max_identity_err = std::max(report.max_identity_err, err);
    report.max_ser_err_db = std::max(report.max_ser_err_db, std::abs(ser - rec.ser_db));
    report.max_snr_err_db = std::max(report.max_snr_err_db, std::abs(snr - rec.snr_db));
    if (!rec.embedding_path.empty()) read_embedding(manifest.resolve(rec.embedding_path));
    load_wav(manifest.resolve(rec.agc_target_path));
    load_wav(manifest.resolve(rec.farend_path));
    ++report.n_records;
  }
  report.ok = report.max_identity_err < identity_tol &&
              report.max_ser_err_db < ratio_tol_db && report.max_snr_err_db < ratio_tol_db;
  return report;
}

}  // namespace neuralecho

#endif  // NEURALECHO_DATASET_HPP
