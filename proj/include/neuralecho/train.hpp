// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_TRAIN_HPP
#define NEURALECHO_TRAIN_HPP

#include <chrono>
#include <fstream>
#include <iostream>
#include <optional>

#include "neuralecho/dataset.hpp"
#include "neuralecho/loss.hpp"
#include "neuralecho/model.hpp"

namespace neuralecho {

struct Schedule {
  int steps = 200;            // total optimizer steps (utterance-level)
  double lr = 1e-3;
  std::uint64_t seed = 1;
  double clip_norm = 5.0;
  int val_every = 50;
  double val_fraction = 0.0;  // held-out tail of the manifest
  int checkpoint_every = 0;   // 0 = final only
  double cache_mb = 1024.0;   // feature cache budget
  std::string log_path;       // default: <checkpoint>.log.jsonl

  void validate() const {
    check(steps >= 0, "schedule: steps must be >= 0");
    check(lr > 0.0, "schedule: lr must be positive");
    check(clip_norm > 0.0, "schedule: clip_norm must be positive");
    check(val_fraction >= 0.0 && val_fraction < 1.0, "schedule: val_fraction in [0, 1)");
  }
};

struct TrainItemFiles {
  AudioSignal mic, farend, target;
  std::optional<AudioSignal> agc_target;
  std::optional<std::vector<double>> embedding;
};

inline TrainItemFiles load_item_files(const DatasetManifest& manifest,
                                      const ManifestRecord& rec, const ModelConfig& cfg,
                                      bool need_agc) {
  TrainItemFiles f;
  f.mic = load_wav(manifest.resolve(rec.mic_path));
  f.farend = load_wav(manifest.resolve(rec.farend_path));
  f.target = load_wav(manifest.resolve(rec.target_path));
  if (need_agc) f.agc_target = load_wav(manifest.resolve(rec.agc_target_path));
  if (cfg.speaker_aware) {
    check(!rec.embedding_path.empty(),
          "manifest record ", rec.id, " has no embedding_path (required by --speaker-aware)");
    f.embedding = read_embedding(manifest.resolve(rec.embedding_path), cfg.embedding_dim);
  }
  return f;
}

struct TrainResult {
  std::string checkpoint_path;
  int steps_run = 0;
  double final_loss = 0.0;
  std::vector<double> loss_history;
};

// Utterance-level training: shuffled (seeded) order, per-step forward /
// backward / global-norm clip / Adam, line-delimited JSON logging, divergence
// abort on non-finite loss.
inline TrainResult train(const DatasetManifest& manifest, const ModelConfig& cfg,
                         const LossConfig& loss_cfg, const Schedule& sched,
                         const std::string& checkpoint_out) {
  cfg.validate();
  loss_cfg.validate();
  sched.validate();
  check(!manifest.records.empty(), "train: manifest is empty");

  const int n_total = static_cast<int>(manifest.records.size());
  int n_val = sched.val_fraction > 0.0
                  ? std::max(1, static_cast<int>(n_total * sched.val_fraction))
                  : 0;
  if (n_val >= n_total) n_val = n_total - 1;
  const int n_train = n_total - n_val;

  ParamStore<float> params = create_model_params<float>(cfg, sched.seed);
  std::cerr << "model parameters: " << params.total_params() << "\n";

  const std::string log_path =
      sched.log_path.empty() ? checkpoint_out + ".log.jsonl" : sched.log_path;
  std::ofstream log(log_path, std::ios::trunc);
  check(log.good(), "train: cannot open log ", log_path);

  // cache prepared items while they fit in the budget; re-prepare otherwise
  std::vector<std::optional<ItemTensors<float>>> cache(n_train);
  double cache_used_mb = 0.0;
  auto prepare = [&](int idx) -> ItemTensors<float> {
    if (cache[idx].has_value()) return *cache[idx];
    const auto& rec = manifest.records[idx];
    TrainItemFiles f = load_item_files(manifest, rec, cfg, loss_cfg.agc_task);
    ItemTensors<float> item =
        prepare_item<float>(cfg, f.mic, f.farend, f.embedding, &f.target,
                            f.agc_target ? &*f.agc_target : nullptr);
    const double mb = static_cast<double>(item.features.numel() + 6 * item.y_re.numel()) *
                      sizeof(float) / 1e6;
    if (cache_used_mb + mb <= sched.cache_mb) {
      cache[idx] = item;
      cache_used_mb += mb;
    }
    return item;
  };

  const std::string config_json =
      nlohmann::json{{"model", cfg.to_json()},
                     {"loss",
                      {{"alpha", loss_cfg.alpha},
                       {"agc_task", loss_cfg.agc_task},
                       {"multitask_weight", loss_cfg.multitask_weight},
                       {"clamp_db", loss_cfg.clamp_db}}}}
          .dump();

  TrainResult result;
  result.checkpoint_path = checkpoint_out;

  std::vector<int> order(n_train);
  int epoch = -1;
  std::size_t pos = 0;
  for (int step = 1; step <= sched.steps; ++step) {
    if (pos == 0 || pos >= order.size()) {
      ++epoch;
      for (int i = 0; i < n_train; ++i) order[i] = i;
      RandomStream shuffle_rng(derive_seed(sched.seed, 0x5151 + epoch));
      for (int i = n_train - 1; i > 0; --i)
        std::swap(order[i], order[shuffle_rng.uniform_index(i + 1)]);
      pos = 0;
    }
    const int idx = order[pos++];
    ItemTensors<float> item = prepare(idx);

    Tape<float> tape;
    BoundParams<float> bound(tape, params, /*trainable=*/true);
    ModelOutputs<float> out = build_model(tape, bound, cfg, item);
    LossVars<float> lv = build_loss(tape, cfg, loss_cfg, out, item);

    const double loss_val = tape.val(lv.total)[0];
    if (!std::isfinite(loss_val))
      fail("train: diverged (non-finite loss) at step ", step, " on item ",
           manifest.records[idx].id);

    tape.backward(lv.total);
    params.zero_grads();
    bound.write_grads_back();
    const double grad_norm = params.clip_grad_norm(sched.clip_norm);
    adam_step(params, sched.lr);

    nlohmann::json line;
    line["step"] = step;
    line["loss"] = loss_val;
    line["si_sdr_term"] = static_cast<double>(tape.val(lv.si_sdr)[0]);
    line["l1_term"] = static_cast<double>(tape.val(lv.l1)[0]);
    line["agc_term"] = loss_cfg.agc_task ? static_cast<double>(tape.val(lv.agc)[0]) : 0.0;
    line["grad_norm"] = grad_norm;
    log << line.dump() << "\n";
    result.loss_history.push_back(loss_val);
    result.final_loss = loss_val;
    result.steps_run = step;

    if (n_val > 0 && sched.val_every > 0 && step % sched.val_every == 0) {
      double acc = 0.0;
      for (int vi = n_train; vi < n_total; ++vi) {
        const auto& rec = manifest.records[vi];
        TrainItemFiles f = load_item_files(manifest, rec, cfg, false);
        EnhanceResult res = enhance(params, cfg, f.mic, f.farend, f.embedding);
        acc += si_sdr(res.shat.samples, f.target.samples);
      }
      nlohmann::json vline;
      vline["step"] = step;
      vline["val_si_sdr"] = acc / n_val;
      log << vline.dump() << "\n";
    }
    if (sched.checkpoint_every > 0 && step % sched.checkpoint_every == 0)
      save_checkpoint(params, config_json, checkpoint_out + ".step" + std::to_string(step));
  }

  save_checkpoint(params, config_json, checkpoint_out);
  log.close();
  return result;
}

// ---------------------------------------------------------------------------
// Evaluation over a manifest: SI-SDR of the mixture and of the enhanced
// output against the reverberant clean target.
// ---------------------------------------------------------------------------

struct EvalRow {
  std::string id;
  double mixture_si_sdr = 0.0;
  double enhanced_si_sdr = 0.0;
};

struct EvalReport {
  std::vector<EvalRow> rows;
  double mean_mixture_si_sdr = 0.0;
  double mean_enhanced_si_sdr = 0.0;
  double mean_l1_mag = 0.0;
  double runtime_s = 0.0;

  nlohmann::json to_json() const {
    nlohmann::json rows_json = nlohmann::json::array();
    for (const auto& r : rows)
      rows_json.push_back({{"id", r.id},
                           {"mixture_si_sdr", r.mixture_si_sdr},
                           {"enhanced_si_sdr", r.enhanced_si_sdr}});
    return nlohmann::json{{"per_utterance", rows_json},
                          {"summary",
                           {{"count", rows.size()},
                            {"mean_mixture_si_sdr", mean_mixture_si_sdr},
                            {"mean_enhanced_si_sdr", mean_enhanced_si_sdr},
                            {"mean_l1_mag", mean_l1_mag},
                            {"delta_si_sdr", mean_enhanced_si_sdr - mean_mixture_si_sdr}}},
                          {"runtime_s", runtime_s}};
  }
};

inline EvalReport evaluate(const DatasetManifest& manifest, ParamStore<float>& params,
                           const ModelConfig& cfg) {
  const auto t0 = std::chrono::steady_clock::now();
  EvalReport report;
  report.rows.resize(manifest.records.size());
  std::vector<double> l1_values(manifest.records.size(), 0.0);

  parallel_for(manifest.records.size(), [&](std::size_t i) {
    const auto& rec = manifest.records[i];
    TrainItemFiles f = load_item_files(manifest, rec, cfg, false);
    EnhanceResult res = enhance(params, cfg, f.mic, f.farend, f.embedding);
    EvalRow row;
    row.id = rec.id;
    row.mixture_si_sdr = si_sdr(f.mic.samples, f.target.samples);
    row.enhanced_si_sdr = si_sdr(res.shat.samples, f.target.samples);
    const Spectrogram target_spec = stft(f.target, cfg.stft_config());
    l1_values[i] = l1_mag(res.shat_spec, target_spec);
    report.rows[i] = std::move(row);
  });

  for (std::size_t i = 0; i < report.rows.size(); ++i) {
    report.mean_mixture_si_sdr += report.rows[i].mixture_si_sdr;
    report.mean_enhanced_si_sdr += report.rows[i].enhanced_si_sdr;
    report.mean_l1_mag += l1_values[i];
  }
  if (!report.rows.empty()) {
    report.mean_mixture_si_sdr /= static_cast<double>(report.rows.size());
    report.mean_enhanced_si_sdr /= static_cast<double>(report.rows.size());
    report.mean_l1_mag /= static_cast<double>(report.rows.size());
  }
  report.runtime_s =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return report;
}

inline EvalReport evaluate_checkpoint(const DatasetManifest& manifest,
                                      const std::string& checkpoint_path,
                                      const std::string& report_path = {}) {
  CheckpointData data = load_checkpoint(checkpoint_path);
  const nlohmann::json header = nlohmann::json::parse(data.config_json);
  const ModelConfig cfg = ModelConfig::from_json(header.at("model"));
  ParamStore<float> params = create_model_params<float>(cfg, 0);
  restore_params(params, data);
  EvalReport report = evaluate(manifest, params, cfg);
  if (!report_path.empty()) {
    std::ofstream out(report_path, std::ios::trunc);
    check(out.good(), "evaluate: cannot write report ", report_path);
    out << report.to_json().dump(2) << "\n";
  }
  return report;
}

}  // namespace neuralecho

#endif  // NEURALECHO_TRAIN_HPP
