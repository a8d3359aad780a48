// SPDX-License-Identifier: Apache-2.0
//
// neuralecho: dataset simulation, training, enhancement, evaluation and
// gradient verification for the two-stage echo-cancellation model.

#include <filesystem>
#include <iostream>

#include <CLI11.hpp>

#include "neuralecho/config.hpp"
#include "neuralecho/gradcheck_suites.hpp"

namespace ne = neuralecho;
namespace fs = std::filesystem;

namespace {

ne::RunConfig load_config_or_default(const std::string& path) {
  if (path.empty()) return ne::RunConfig{};
  return ne::RunConfig::load(path);
}

void require_file(const std::string& path, const char* what) {
  if (path.empty() || !fs::exists(path))
    ne::config_fail(what, " not found: '", path, "'");
}

int cmd_simulate(const std::string& config_path, std::string out_dir, int n,
                 std::uint64_t seed, bool have_seed) {
  ne::RunConfig cfg = load_config_or_default(config_path);
  if (out_dir.empty()) out_dir = cfg.paths.out_dir;
  if (out_dir.empty()) ne::config_fail("simulate: --out (or paths.out_dir) is required");
  if (!have_seed) seed = cfg.schedule.seed;
  cfg.paths.out_dir = out_dir;
  ne::DatasetManifest manifest = ne::make_dataset(cfg.sim, n, seed, out_dir);
  ne::write_effective_config(cfg, out_dir);
  std::cout << "wrote " << manifest.records.size() << " records to "
            << (manifest.root / "manifest.jsonl").string() << "\n";
  return 0;
}

int cmd_train(const std::string& config_path, const std::string& data,
              const std::string& checkpoint_out, bool speaker_aware, bool agc, int steps,
              double lr, std::uint64_t seed, bool have_seed) {
  ne::RunConfig cfg = load_config_or_default(config_path);
  const std::string manifest_path = data.empty() ? cfg.paths.data : data;
  require_file(manifest_path, "train: manifest");
  const std::string out = checkpoint_out.empty() ? cfg.paths.checkpoint : checkpoint_out;
  if (out.empty()) ne::config_fail("train: --checkpoint-out (or paths.checkpoint) is required");

  if (speaker_aware) cfg.model.speaker_aware = true;
  if (agc) {
    cfg.model.agc_branch = true;
    cfg.loss.agc_task = true;
  }
  if (steps >= 0) cfg.schedule.steps = steps;
  if (lr > 0) cfg.schedule.lr = lr;
  if (have_seed) cfg.schedule.seed = seed;
  cfg.paths.data = manifest_path;
  cfg.paths.checkpoint = out;

  ne::DatasetManifest manifest = ne::load_manifest(manifest_path);
  if (cfg.model.speaker_aware)
    for (const auto& rec : manifest.records)
      if (rec.embedding_path.empty())
        ne::config_fail("train: --speaker-aware but record '", rec.id,
                        "' has no embedding_path");

  const fs::path out_dir = fs::path(out).parent_path();
  if (!out_dir.empty()) fs::create_directories(out_dir);
  ne::write_effective_config(cfg, out_dir.empty() ? "." : out_dir.string());

  ne::TrainResult result = ne::train(manifest, cfg.model, cfg.loss, cfg.schedule, out);
  std::cout << "trained " << result.steps_run << " steps, final loss " << result.final_loss
            << ", checkpoint " << result.checkpoint_path << "\n";
  return 0;
}

int cmd_enhance(const std::string& checkpoint, const std::string& mic_path,
                const std::string& farend_path, const std::string& embedding_path,
                bool emit_post_agc, const std::string& out_path) {
  require_file(checkpoint, "enhance: checkpoint");
  require_file(mic_path, "enhance: mic wav");
  require_file(farend_path, "enhance: far-end wav");
  if (out_path.empty()) ne::config_fail("enhance: --out is required");

  ne::CheckpointData data = ne::load_checkpoint(checkpoint);
  const nlohmann::json header = nlohmann::json::parse(data.config_json);
  const ne::ModelConfig cfg = ne::ModelConfig::from_json(header.at("model"));
  ne::ParamStore<float> params = ne::create_model_params<float>(cfg, 0);
  ne::restore_params(params, data);

  const ne::AudioSignal mic = ne::load_wav(mic_path);
  const ne::AudioSignal farend = ne::load_wav(farend_path);
  std::optional<std::vector<double>> embedding;
  if (!embedding_path.empty()) {
    require_file(embedding_path, "enhance: embedding");
    embedding = ne::read_embedding(embedding_path, cfg.embedding_dim);
  }
  if (cfg.speaker_aware && !embedding.has_value())
    ne::config_fail("enhance: checkpoint is speaker-aware; --embedding is required");
  if (emit_post_agc && !cfg.agc_branch)
    ne::config_fail("enhance: checkpoint has no AGC branch (--emit-post-agc)");

  ne::EnhanceResult result = ne::enhance(params, cfg, mic, farend, embedding, emit_post_agc);
  ne::save_wav(result.shat, out_path);
  std::cout << "wrote " << out_path << "\n";
  if (emit_post_agc) {
    fs::path agc_path(out_path);
    agc_path.replace_extension(".agc.wav");
    ne::save_wav(result.post_agc, agc_path.string());
    std::cout << "wrote " << agc_path.string() << "\n";
  }
  return 0;
}

int cmd_evaluate(const std::string& checkpoint, const std::string& data,
                 const std::string& report_path) {
  require_file(checkpoint, "evaluate: checkpoint");
  require_file(data, "evaluate: manifest");
  ne::DatasetManifest manifest = ne::load_manifest(data);
  ne::EvalReport report = ne::evaluate_checkpoint(manifest, checkpoint, report_path);
  std::cout << "utterances: " << report.rows.size()
            << "  mixture SI-SDR: " << report.mean_mixture_si_sdr
            << " dB  enhanced SI-SDR: " << report.mean_enhanced_si_sdr << " dB\n";
  if (!report_path.empty()) std::cout << "report written to " << report_path << "\n";
  return 0;
}

int cmd_gradcheck(const std::string& module) {
  const auto suites = ne::run_gradcheck_suites(module);
  if (suites.empty()) {
    std::cerr << "gradcheck: no suite matches '" << module << "'\n";
    return 2;
  }
  bool ok = true;
  for (const auto& s : suites) {
    s.report.print(std::cout);
    ok = ok && s.report.passed();
  }
  std::cout << (ok ? "gradcheck: all passed" : "gradcheck: FAILURES") << "\n";
  return ok ? 0 : 1;
}

int cmd_verify(const std::string& data) {
  require_file(data, "verify: manifest");
  ne::DatasetManifest manifest = ne::load_manifest(data);
  ne::VerifyReport report = ne::verify_manifest(manifest);
  std::cout << "records: " << report.n_records
            << "  max mixing-identity error: " << report.max_identity_err
            << "  max SER error: " << report.max_ser_err_db
            << " dB  max SNR error: " << report.max_snr_err_db << " dB\n";
  std::cout << (report.ok ? "verify: ok" : "verify: FAILED") << "\n";
  return report.ok ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"NeuralEcho: neural acoustic echo cancellation toolkit"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data, checkpoint, mic, farend, embedding, out, report,
      module;
  int n_items = 0;
  int steps = -1;
  double lr = 0.0;
  std::uint64_t seed = 0;
  bool speaker_aware = false, agc = false, emit_post_agc = false;

  auto* sim = app.add_subcommand("simulate", "Generate a synthetic AEC dataset");
  sim->add_option("--config", config_path, "JSON config file");
  sim->add_option("--out", out_dir, "output directory");
  sim->add_option("--n", n_items, "number of mixtures")->required();
  auto* sim_seed = sim->add_option("--seed", seed, "RNG seed");

  auto* tr = app.add_subcommand("train", "Train a model on a simulated manifest");
  tr->add_option("--config", config_path, "JSON config file");
  tr->add_option("--data", data, "manifest.jsonl path");
  tr->add_option("--checkpoint-out", checkpoint, "output checkpoint path");
  tr->add_flag("--speaker-aware", speaker_aware, "enable FiLM speaker conditioning");
  tr->add_flag("--agc", agc, "enable the AGC branch and multitask loss");
  tr->add_option("--steps", steps, "override schedule.steps");
  tr->add_option("--lr", lr, "override schedule.lr");
  auto* tr_seed = tr->add_option("--seed", seed, "override schedule.seed");

  auto* en = app.add_subcommand("enhance", "Run inference on a wav pair");
  en->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  en->add_option("--mic", mic, "microphone wav")->required();
  en->add_option("--farend", farend, "far-end reference wav")->required();
  en->add_option("--embedding", embedding, "speaker embedding file (128 float32)");
  en->add_flag("--emit-post-agc", emit_post_agc, "also write the AGC-branch output");
  en->add_option("--out", out, "output wav path")->required();

  auto* ev = app.add_subcommand("evaluate", "Evaluate a checkpoint over a manifest");
  ev->add_option("--checkpoint", checkpoint, "trained checkpoint")->required();
  ev->add_option("--data", data, "manifest.jsonl path")->required();
  ev->add_option("--report", report, "JSON report output path");

  auto* gc = app.add_subcommand("gradcheck", "Finite-difference gradient verification");
  gc->add_option("--module", module, "run only suites whose name contains this substring");
  gc->add_option("--config", config_path, "accepted for symmetry; suites are self-contained");

  auto* vf = app.add_subcommand("verify", "Re-check mixing identities of a manifest");
  vf->add_option("--data", data, "manifest.jsonl path")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (sim->parsed())
      return cmd_simulate(config_path, out_dir, n_items, seed, !sim_seed->empty());
    if (tr->parsed())
      return cmd_train(config_path, data, checkpoint, speaker_aware, agc, steps, lr, seed,
                       !tr_seed->empty());
    if (en->parsed()) return cmd_enhance(checkpoint, mic, farend, embedding, emit_post_agc, out);
    if (ev->parsed()) return cmd_evaluate(checkpoint, data, report);
    if (gc->parsed()) return cmd_gradcheck(module);
    if (vf->parsed()) return cmd_verify(data);
  } catch (const ne::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
