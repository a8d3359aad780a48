// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_CONFIG_HPP
#define NEURALECHO_CONFIG_HPP

#include <fstream>
#include <set>
#include <string>

#include <json.hpp>

#include "neuralecho/dataset.hpp"
#include "neuralecho/train.hpp"

namespace neuralecho {

// One JSON document drives every command; CLI flags override individual keys.
// Unknown keys are rejected so typos fail loudly instead of silently running
// with defaults.
struct RunConfig {
  ModelConfig model;
  LossConfig loss;
  SimConfig sim;
  Schedule schedule;
  struct Paths {
    std::string data;        // manifest path
    std::string out_dir;     // simulate output
    std::string checkpoint;  // train output / enhance-evaluate input
    std::string report;      // evaluate output
  } paths;

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["model"] = model.to_json();
    j["loss"] = {{"alpha", loss.alpha},
                 {"agc_task", loss.agc_task},
                 {"multitask_weight", loss.multitask_weight},
                 {"clamp_db", loss.clamp_db}};
    j["simulate"] = {{"duration_s", sim.duration_s},
                     {"sample_rate", sim.sample_rate},
                     {"n_speakers", sim.n_speakers},
                     {"embedding_dim", sim.embedding_dim},
                     {"rir_method", sim.rir_method},
                     {"rt60_min", sim.rt60_min},
                     {"rt60_max", sim.rt60_max},
                     {"room_min", {sim.room_min[0], sim.room_min[1], sim.room_min[2]}},
                     {"room_max", {sim.room_max[0], sim.room_max[1], sim.room_max[2]}},
                     {"wall_margin", sim.wall_margin},
                     {"max_order", sim.max_order},
                     {"ser_min", sim.ser_min},
                     {"ser_max", sim.ser_max},
                     {"snr_min", sim.snr_min},
                     {"snr_max", sim.snr_max},
                     {"bulk_delay_ms_min", sim.bulk_delay_ms_min},
                     {"bulk_delay_ms_max", sim.bulk_delay_ms_max},
                     {"p_no_distortion", sim.p_no_distortion},
                     {"clip_ratio_min", sim.clip_ratio_min},
                     {"clip_ratio_max", sim.clip_ratio_max},
                     {"sigmoid_gain_min", sim.sigmoid_gain_min},
                     {"sigmoid_gain_max", sim.sigmoid_gain_max},
                     {"speech_dir", sim.speech_dir},
                     {"noise_dir", sim.noise_dir},
                     {"allow_synthetic", sim.allow_synthetic},
                     {"normalize_peak", sim.normalize_peak},
                     {"agc_target_dbfs", sim.agc_target_dbfs},
                     {"agc_max_gain_db", sim.agc_max_gain_db}};
    j["schedule"] = {{"steps", schedule.steps},
                     {"lr", schedule.lr},
                     {"seed", schedule.seed},
                     {"clip_norm", schedule.clip_norm},
                     {"val_every", schedule.val_every},
                     {"val_fraction", schedule.val_fraction},
                     {"checkpoint_every", schedule.checkpoint_every},
                     {"cache_mb", schedule.cache_mb},
                     {"log_path", schedule.log_path}};
    j["paths"] = {{"data", paths.data},
                  {"out_dir", paths.out_dir},
                  {"checkpoint", paths.checkpoint},
                  {"report", paths.report}};
    return j;
  }

  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::string& path);
};

namespace config_detail {

inline void reject_unknown(const nlohmann::json& j, const std::set<std::string>& allowed,
                           const std::string& section) {
  if (!j.is_object()) config_fail("config: section '", section, "' must be an object");
  for (const auto& [key, value] : j.items())
    if (allowed.find(key) == allowed.end())
      config_fail("config: unknown key '", section.empty() ? key : section + "." + key, "'");
}

template <typename T>
void get_to(const nlohmann::json& j, const char* key, T& dst) {
  if (j.contains(key)) {
    try {
      dst = j.at(key).get<T>();
    } catch (const nlohmann::json::exception&) {
      config_fail("config: bad value type for '", key, "'");
    }
  }
}

}  // namespace config_detail

inline RunConfig RunConfig::from_json(const nlohmann::json& j) {
  using config_detail::get_to;
  using config_detail::reject_unknown;
  reject_unknown(j, {"model", "loss", "simulate", "schedule", "paths", "description"}, "");
  RunConfig cfg;

  if (j.contains("model")) {
    const auto& m = j.at("model");
    reject_unknown(m,
                   {"fft_size", "hop", "sample_rate", "crf_k", "crf_n", "n_tau", "k_tau",
                    "conv_kernel", "cov_proj_width", "attn_heads", "causal", "causal_crf",
                    "speaker_aware", "agc_branch", "embedding_dim", "lps_floor",
                    "leaky_slope"},
                   "model");
    try {
      cfg.model = ModelConfig::from_json(m);
    } catch (const Error& e) {
      config_fail(e.what());
    }
  }
  if (j.contains("loss")) {
    const auto& l = j.at("loss");
    reject_unknown(l, {"alpha", "agc_task", "multitask_weight", "clamp_db"}, "loss");
    get_to(l, "alpha", cfg.loss.alpha);
    get_to(l, "agc_task", cfg.loss.agc_task);
    get_to(l, "multitask_weight", cfg.loss.multitask_weight);
    get_to(l, "clamp_db", cfg.loss.clamp_db);
    cfg.loss.validate();
  }
  if (j.contains("simulate")) {
    const auto& s = j.at("simulate");
    reject_unknown(s,
                   {"duration_s", "sample_rate", "n_speakers", "embedding_dim", "rir_method",
                    "rt60_min", "rt60_max", "room_min", "room_max", "wall_margin", "max_order",
                    "ser_min", "ser_max", "snr_min", "snr_max", "bulk_delay_ms_min",
                    "bulk_delay_ms_max", "p_no_distortion", "clip_ratio_min", "clip_ratio_max",
                    "sigmoid_gain_min", "sigmoid_gain_max", "speech_dir", "noise_dir",
                    "allow_synthetic", "normalize_peak", "agc_target_dbfs", "agc_max_gain_db"},
                   "simulate");
    get_to(s, "duration_s", cfg.sim.duration_s);
    get_to(s, "sample_rate", cfg.sim.sample_rate);
    get_to(s, "n_speakers", cfg.sim.n_speakers);
    get_to(s, "embedding_dim", cfg.sim.embedding_dim);
    get_to(s, "rir_method", cfg.sim.rir_method);
    get_to(s, "rt60_min", cfg.sim.rt60_min);
    get_to(s, "rt60_max", cfg.sim.rt60_max);
    if (s.contains("room_min")) {
      auto v = s.at("room_min").get<std::vector<double>>();
      check(v.size() == 3, "config: simulate.room_min needs 3 values");
      std::copy(v.begin(), v.end(), cfg.sim.room_min);
    }
    if (s.contains("room_max")) {
      auto v = s.at("room_max").get<std::vector<double>>();
      check(v.size() == 3, "config: simulate.room_max needs 3 values");
      std::copy(v.begin(), v.end(), cfg.sim.room_max);
    }
    get_to(s, "wall_margin", cfg.sim.wall_margin);
    get_to(s, "max_order", cfg.sim.max_order);
    get_to(s, "ser_min", cfg.sim.ser_min);
    get_to(s, "ser_max", cfg.sim.ser_max);
    get_to(s, "snr_min", cfg.sim.snr_min);
    get_to(s, "snr_max", cfg.sim.snr_max);
    get_to(s, "bulk_delay_ms_min", cfg.sim.bulk_delay_ms_min);
    get_to(s, "bulk_delay_ms_max", cfg.sim.bulk_delay_ms_max);
    get_to(s, "p_no_distortion", cfg.sim.p_no_distortion);
    get_to(s, "clip_ratio_min", cfg.sim.clip_ratio_min);
    get_to(s, "clip_ratio_max", cfg.sim.clip_ratio_max);
    get_to(s, "sigmoid_gain_min", cfg.sim.sigmoid_gain_min);
    get_to(s, "sigmoid_gain_max", cfg.sim.sigmoid_gain_max);
    get_to(s, "speech_dir", cfg.sim.speech_dir);
    get_to(s, "noise_dir", cfg.sim.noise_dir);
    get_to(s, "allow_synthetic", cfg.sim.allow_synthetic);
    get_to(s, "normalize_peak", cfg.sim.normalize_peak);
    get_to(s, "agc_target_dbfs", cfg.sim.agc_target_dbfs);
    get_to(s, "agc_max_gain_db", cfg.sim.agc_max_gain_db);
    try {
      cfg.sim.validate();
    } catch (const Error& e) {
      config_fail(e.what());
    }
  }
  if (j.contains("schedule")) {
    const auto& s = j.at("schedule");
    reject_unknown(s,
                   {"steps", "lr", "seed", "clip_norm", "val_every", "val_fraction",
                    "checkpoint_every", "cache_mb", "log_path"},
                   "schedule");
    get_to(s, "steps", cfg.schedule.steps);
    get_to(s, "lr", cfg.schedule.lr);
    get_to(s, "seed", cfg.schedule.seed);
    get_to(s, "clip_norm", cfg.schedule.clip_norm);
    get_to(s, "val_every", cfg.schedule.val_every);
    get_to(s, "val_fraction", cfg.schedule.val_fraction);
    get_to(s, "checkpoint_every", cfg.schedule.checkpoint_every);
    get_to(s, "cache_mb", cfg.schedule.cache_mb);
    get_to(s, "log_path", cfg.schedule.log_path);
    try {
      cfg.schedule.validate();
    } catch (const Error& e) {
      config_fail(e.what());
    }
  }
  if (j.contains("paths")) {
    const auto& p = j.at("paths");
    reject_unknown(p, {"data", "out_dir", "checkpoint", "report"}, "paths");
    get_to(p, "data", cfg.paths.data);
    get_to(p, "out_dir", cfg.paths.out_dir);
    get_to(p, "checkpoint", cfg.paths.checkpoint);
    get_to(p, "report", cfg.paths.report);
  }
  return cfg;
}

inline RunConfig RunConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in.good()) config_fail("config: cannot open ", path);
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    config_fail("config: ", path, ": ", e.what());
  }
  return RunConfig::from_json(j);
}

inline void write_effective_config(const RunConfig& cfg, const std::string& dir) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  std::ofstream out(std::filesystem::path(dir) / "effective_config.json", std::ios::trunc);
  if (out.good()) out << cfg.to_json().dump(2) << "\n";
}

}  // namespace neuralecho

#endif  // NEURALECHO_CONFIG_HPP
