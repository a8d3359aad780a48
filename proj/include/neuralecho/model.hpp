// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_MODEL_HPP
#define NEURALECHO_MODEL_HPP

#include <optional>
#include <string>

#include <json.hpp>

#include "neuralecho/features.hpp"
#include "neuralecho/layers.hpp"
#include "neuralecho/signal_nodes.hpp"

namespace neuralecho {

// Two-stage enhancement model configuration. Widths that the architecture
// fixes elsewhere: the stage-1/stage-2 trunks run at F = fft_size/2 + 1 units
// (one per frequency bin), the per-bin feature vector is 368-dim, and the
// enhancement filter output is 3 complex taps per bin. cov_proj_width is the
// operating width of the covariance-conditioned attention stack; the shipped
// paper-scale value of 160 puts the total parameter count at ~2.6M.
struct ModelConfig {
  int fft_size = 512;
  int hop = 256;
  int sample_rate = 16000;

  int crf_k = 1;            // frequency half-width of the complex ratio filters
  int crf_n = 1;            // time half-width
  int n_tau = 9;            // temporal correlation shifts
  int k_tau = 9;            // frequency correlation shifts
  int conv_kernel = 3;      // cRF head kernel along the frequency axis

  int cov_proj_width = 160;
  int attn_heads = 4;

  bool causal = true;       // attention mask + causal feature normalization
  bool causal_crf = false;  // restrict cRF taps to tau_n in [-2N, 0]
  bool speaker_aware = false;
  bool agc_branch = false;
  int embedding_dim = 128;

  double lps_floor = 1e-12;
  double leaky_slope = 0.01;

  int bins() const { return fft_size / 2 + 1; }
  int tap_count() const { return (2 * crf_k + 1) * (2 * crf_n + 1); }
  int feature_dim() const {
    return 6 + 2 * ((n_tau + 1) * n_tau + (k_tau + 1) * k_tau) + 2;
  }
  StftConfig stft_config() const { return StftConfig{fft_size, hop, sample_rate}; }

  void validate() const {
    stft_config().validate();
    check(crf_k >= 0 && crf_n >= 0, "ModelConfig: crf_k/crf_n must be >= 0");
    check(n_tau >= 0 && k_tau >= 0, "ModelConfig: n_tau/k_tau must be >= 0");
    check(conv_kernel > 0 && conv_kernel % 2 == 1, "ModelConfig: conv_kernel must be odd");
    check(cov_proj_width > 0, "ModelConfig: cov_proj_width must be positive");
    check(attn_heads > 0 && cov_proj_width % attn_heads == 0,
          "ModelConfig: cov_proj_width must be divisible by attn_heads");
    check(embedding_dim > 0, "ModelConfig: embedding_dim must be positive");
    check(lps_floor > 0, "ModelConfig: lps_floor must be positive");
  }

  nlohmann::json to_json() const {
    nlohmann::json j;
    j["fft_size"] = fft_size;
    j["hop"] = hop;
    j["sample_rate"] = sample_rate;
    j["crf_k"] = crf_k;
    j["crf_n"] = crf_n;
    j["n_tau"] = n_tau;
    j["k_tau"] = k_tau;
    j["conv_kernel"] = conv_kernel;
    j["cov_proj_width"] = cov_proj_width;
    j["attn_heads"] = attn_heads;
    j["causal"] = causal;
    j["causal_crf"] = causal_crf;
    j["speaker_aware"] = speaker_aware;
    j["agc_branch"] = agc_branch;
    j["embedding_dim"] = embedding_dim;
    j["lps_floor"] = lps_floor;
    j["leaky_slope"] = leaky_slope;
    return j;
  }

  static ModelConfig from_json(const nlohmann::json& j) {
    ModelConfig c;
    c.fft_size = j.value("fft_size", c.fft_size);
    c.hop = j.value("hop", c.hop);
    c.sample_rate = j.value("sample_rate", c.sample_rate);
    c.crf_k = j.value("crf_k", c.crf_k);
    c.crf_n = j.value("crf_n", c.crf_n);
    c.n_tau = j.value("n_tau", c.n_tau);
    c.k_tau = j.value("k_tau", c.k_tau);
    c.conv_kernel = j.value("conv_kernel", c.conv_kernel);
    c.cov_proj_width = j.value("cov_proj_width", c.cov_proj_width);
    c.attn_heads = j.value("attn_heads", c.attn_heads);
    c.causal = j.value("causal", c.causal);
    c.causal_crf = j.value("causal_crf", c.causal_crf);
    c.speaker_aware = j.value("speaker_aware", c.speaker_aware);
    c.agc_branch = j.value("agc_branch", c.agc_branch);
    c.embedding_dim = j.value("embedding_dim", c.embedding_dim);
    c.lps_floor = j.value("lps_floor", c.lps_floor);
    c.leaky_slope = j.value("leaky_slope", c.leaky_slope);
    c.validate();
    return c;
  }
};

// Creates every parameter of the configured model in a fixed order; the order
// doubles as the checkpoint layout and the Adam/clip iteration order.
template <typename Real>
ParamStore<Real> create_model_params(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  const std::size_t F = static_cast<std::size_t>(cfg.bins());
  const std::size_t D = static_cast<std::size_t>(cfg.feature_dim());
  const std::size_t J2 = 2 * static_cast<std::size_t>(cfg.tap_count());
  const std::size_t P = static_cast<std::size_t>(cfg.cov_proj_width);
  const std::size_t ks = static_cast<std::size_t>(cfg.conv_kernel);
  RandomStream rng(derive_seed(seed, 0x11717ULL));

  ParamStore<Real> params;
  create_linear(params, "s1.proj", D, 1, rng);
  if (cfg.speaker_aware) create_film(params, "s1.film", cfg.embedding_dim, F);
  create_gru(params, "s1.gru", F, F, rng);
  create_conv1d(params, "s1.crf_aec", J2, 1, ks, rng);
  create_conv1d(params, "s1.crf_echo", J2, 1, ks, rng);

  create_linear(params, "s2.in", 3 * F, F, rng);
  if (cfg.speaker_aware) create_film(params, "s2.film", cfg.embedding_dim, F);
  create_gru(params, "s2.gru", F, F, rng);
  create_conv1d(params, "s2.crf_n", J2, 1, ks, rng);
  create_conv1d(params, "s2.crf_s", J2, 1, ks, rng);
  create_layer_norm(params, "s2.ln", 24 * F);
  create_linear(params, "s2.proj", 24 * F, P, rng);
  create_mhsa(params, "s2.attn1", P, rng);
  create_gru(params, "s2.gru2", P, P, rng);
  create_mhsa(params, "s2.attn2", P, rng);
  create_linear(params, "s2.out", P, 6 * F, rng);

  if (cfg.agc_branch) {
    create_gru(params, "agc.gru", F, F, rng);
    create_linear(params, "agc.out", F, F, rng);
  }
  return params;
}

inline std::size_t param_count(const ModelConfig& cfg) {
  return create_model_params<float>(cfg, 0).total_params();
}

// Everything one training/inference item contributes to the graph, already
// cast to the working precision. Spectrogram pairs are frame-major [T, F].
template <typename Real>
struct ItemTensors {
  int T = 0, F = 0;
  Tensor<Real> features;                // [T*F, D]
  Tensor<Real> y_re, y_im, x_re, x_im;  // [T, F]
  Tensor<Real> embedding;               // [1, E] when speaker conditioning is on
  bool has_embedding = false;
  std::size_t num_samples = 0;
  // loss targets (empty for pure inference)
  std::vector<Real> target_time;
  Tensor<Real> target_mag;      // |S_r|
  Tensor<Real> agc_target_mag;  // |stft(A(s))|
};

template <typename Real>
void spec_to_tensors(const Spectrogram& S, Tensor<Real>& re, Tensor<Real>& im) {
  re = Tensor<Real>({static_cast<std::size_t>(S.T), static_cast<std::size_t>(S.F)});
  im = Tensor<Real>({static_cast<std::size_t>(S.T), static_cast<std::size_t>(S.F)});
  for (std::size_t i = 0; i < S.data.size(); ++i) {
    re[i] = static_cast<Real>(S.data[i].real());
    im[i] = static_cast<Real>(S.data[i].imag());
  }
}

template <typename Real>
ItemTensors<Real> prepare_item(const ModelConfig& cfg, const AudioSignal& mic,
                               const AudioSignal& farend,
                               const std::optional<std::vector<double>>& embedding = {},
                               const AudioSignal* target = nullptr,
                               const AudioSignal* agc_target = nullptr) {
  check(mic.samples.size() == farend.samples.size(),
        "model input: mic/far-end length mismatch");
  check(mic.sample_rate == cfg.sample_rate && farend.sample_rate == cfg.sample_rate,
        "model input: sample rate must be ", cfg.sample_rate);
  const StftConfig sc = cfg.stft_config();
  const Spectrogram Y = stft(mic, sc);
  const Spectrogram X = stft(farend, sc);

  ItemTensors<Real> item;
  item.T = Y.T;
  item.F = Y.F;
  item.num_samples = mic.samples.size();

  const FeatureTensor feat = assemble_stage1(Y, X, cfg.causal, cfg.n_tau, cfg.k_tau,
                                             cfg.lps_floor);
  item.features = Tensor<Real>({static_cast<std::size_t>(feat.T) * feat.F,
                                static_cast<std::size_t>(feat.dim)});
  for (std::size_t i = 0; i < feat.data.size(); ++i)
    item.features[i] = static_cast<Real>(feat.data[i]);

  spec_to_tensors(Y, item.y_re, item.y_im);
  spec_to_tensors(X, item.x_re, item.x_im);

  if (embedding.has_value()) {
    check(static_cast<int>(embedding->size()) == cfg.embedding_dim,
          "model input: embedding must be ", cfg.embedding_dim, "-dim");
    item.embedding = Tensor<Real>({1, embedding->size()});
    for (std::size_t i = 0; i < embedding->size(); ++i)
      item.embedding[i] = static_cast<Real>((*embedding)[i]);
    item.has_embedding = true;
  }
  check(!cfg.speaker_aware || item.has_embedding,
        "model input: speaker-aware model needs an embedding");

  if (target != nullptr) {
    check(target->samples.size() == mic.samples.size(), "model input: target length mismatch");
    item.target_time.resize(target->samples.size());
    for (std::size_t i = 0; i < target->samples.size(); ++i)
      item.target_time[i] = static_cast<Real>(target->samples[i]);
    const Spectrogram Sr = stft(*target, sc);
    item.target_mag = Tensor<Real>({static_cast<std::size_t>(Sr.T),
                                    static_cast<std::size_t>(Sr.F)});
    for (std::size_t i = 0; i < Sr.data.size(); ++i)
      item.target_mag[i] = static_cast<Real>(std::abs(Sr.data[i]));
  }
  if (agc_target != nullptr && cfg.agc_branch) {
    AudioSignal padded = *agc_target;
    padded.samples.resize(mic.samples.size(), 0.0);  // frame alignment
    const Spectrogram As = stft(padded, sc);
    item.agc_target_mag = Tensor<Real>({static_cast<std::size_t>(As.T),
                                        static_cast<std::size_t>(As.F)});
    for (std::size_t i = 0; i < As.data.size(); ++i)
      item.agc_target_mag[i] = static_cast<Real>(std::abs(As.data[i]));
  }
  return item;
}

template <typename Real>
struct ModelOutputs {
  Var proj_feature;              // [T, F] stage-1 projection output
  Var y_aec_re, y_aec_im;        // stage-1 AEC output
  Var x_echo_re, x_echo_im;      // stage-1 echo estimate
  Var shat_re, shat_im;          // enhanced spectrogram
  Var agc_mag;                   // post-AGC magnitude (agc_branch only)
  Var fused_s1;                  // stage-1 trunk input after optional FiLM
};

namespace model_detail {

// Hermitian covariance of a mean-removed 3-channel complex estimate, packed
// per bin as [diag Re (3) | lower Re (3) | diag Im (3, exact zeros) |
// lower Im (3)] and laid out component-major across bins -> [T, 12F].
template <typename Real>
Var covariance_pack(Tape<Real>& tape, const std::array<Var, 3>& ch_re,
                    const std::array<Var, 3>& ch_im, std::size_t T, std::size_t F) {
  const Real third = Real(1) / Real(3);
  Var mu_re = tape.scale(tape.add(tape.add(ch_re[0], ch_re[1]), ch_re[2]), third);
  Var mu_im = tape.scale(tape.add(tape.add(ch_im[0], ch_im[1]), ch_im[2]), third);
  std::array<Var, 3> d_re, d_im;
  for (int c = 0; c < 3; ++c) {
    d_re[c] = tape.sub(ch_re[c], mu_re);
    d_im[c] = tape.sub(ch_im[c], mu_im);
  }
  std::vector<Var> blocks;
  // diagonal real parts: |d_c|^2
  for (int c = 0; c < 3; ++c)
    blocks.push_back(tape.add(tape.mul(d_re[c], d_re[c]), tape.mul(d_im[c], d_im[c])));
  // strictly-lower real parts, row-major: (1,0), (2,0), (2,1)
  const int pairs[3][2] = {{1, 0}, {2, 0}, {2, 1}};
  for (const auto& p : pairs)
    blocks.push_back(tape.add(tape.mul(d_re[p[0]], d_re[p[1]]),
                              tape.mul(d_im[p[0]], d_im[p[1]])));
  // diagonal imaginary parts are identically zero
  Var zero = tape.constant(Tensor<Real>({T, F}));
  for (int c = 0; c < 3; ++c) blocks.push_back(zero);
  // strictly-lower imaginary parts
  for (const auto& p : pairs)
    blocks.push_back(tape.sub(tape.mul(d_im[p[0]], d_re[p[1]]),
                              tape.mul(d_re[p[0]], d_im[p[1]])));
  return tape.concat_cols(blocks);
}

}  // namespace model_detail

// Builds the full two-stage graph on the given tape. Parameters come from a
// BoundParams wrapper (trainable or frozen); inputs come from ItemTensors.
template <typename Real>
ModelOutputs<Real> build_model(Tape<Real>& tape, BoundParams<Real>& p, const ModelConfig& cfg,
                               const ItemTensors<Real>& item) {
  cfg.validate();
  const std::size_t T = static_cast<std::size_t>(item.T);
  const std::size_t F = static_cast<std::size_t>(item.F);
  check(F == static_cast<std::size_t>(cfg.bins()), "build_model: item bins mismatch");
  const auto offsets = crf_offsets(cfg.crf_k, cfg.crf_n, cfg.causal_crf);

  Var feat = tape.constant(item.features);
  Var y_re = tape.constant(item.y_re), y_im = tape.constant(item.y_im);
  Var x_re = tape.constant(item.x_re), x_im = tape.constant(item.x_im);
  Var emb;
  if (cfg.speaker_aware) {
    check(item.has_embedding, "build_model: missing speaker embedding");
    emb = tape.constant(item.embedding);
  }

  ModelOutputs<Real> out;

  // ---- stage 1: per-bin projection, GRU trunk, cRF heads ----
  Var proj = tape.linear(feat, p("s1.proj.W"), p("s1.proj.b"));  // [T*F, 1]
  out.proj_feature = tape.reshape(proj, {T, F});
  Var s1_in = out.proj_feature;
  if (cfg.speaker_aware) s1_in = film(tape, s1_in, emb, bind_film(p, "s1.film"));
  out.fused_s1 = s1_in;
  Var s1_h = gru(tape, s1_in, bind_gru(p, "s1.gru"));
  Var s1_seq = tape.reshape(s1_h, {T, std::size_t(1), F});
  Var taps_aec = tape.conv1d(s1_seq, p("s1.crf_aec.W"), p("s1.crf_aec.b"));
  Var taps_echo = tape.conv1d(s1_seq, p("s1.crf_echo.W"), p("s1.crf_echo.b"));

  Var aec_pair = apply_crf_node(tape, y_re, y_im, taps_aec, offsets);
  out.y_aec_re = tape.slice_cols(aec_pair, 0, F);
  out.y_aec_im = tape.slice_cols(aec_pair, F, 2 * F);
  Var echo_pair = apply_crf_node(tape, x_re, x_im, taps_echo, offsets);
  out.x_echo_re = tape.slice_cols(echo_pair, 0, F);
  out.x_echo_im = tape.slice_cols(echo_pair, F, 2 * F);

  // ---- stage 2 trunk over [proj | LPS(Y_AEC) | LPS(X_echo)] ----
  // fixed affine scaling on the LPS inputs; a pure reparameterization that the
  // trunk projection absorbs, but it keeps the input to s2.in well conditioned
  const Real floor = static_cast<Real>(cfg.lps_floor);
  auto scaled_lps = [&](Var re, Var im) {
    Var raw = lps_node(tape, re, im, floor);
    Tensor<Real> shift(tape.val(raw).shape);
    shift.fill(Real(15));
    return tape.scale(tape.add(raw, tape.constant(std::move(shift))), Real(0.1));
  };
  Var lps_aec = scaled_lps(out.y_aec_re, out.y_aec_im);
  Var lps_echo = scaled_lps(out.x_echo_re, out.x_echo_im);
  Var s2_in = tape.concat_cols({out.proj_feature, lps_aec, lps_echo});
  Var s2_proj = tape.linear(s2_in, p("s2.in.W"), p("s2.in.b"));
  if (cfg.speaker_aware) s2_proj = film(tape, s2_proj, emb, bind_film(p, "s2.film"));
  Var s2_h = gru(tape, s2_proj, bind_gru(p, "s2.gru"));
  Var s2_seq = tape.reshape(s2_h, {T, std::size_t(1), F});
  Var taps_n = tape.conv1d(s2_seq, p("s2.crf_n.W"), p("s2.crf_n.b"));
  Var taps_s = tape.conv1d(s2_seq, p("s2.crf_s.W"), p("s2.crf_s.b"));

  // three-channel stack [Y, Y_AEC, X_echo]; shared taps per filter
  const std::array<Var, 3> z_re{y_re, out.y_aec_re, out.x_echo_re};
  const std::array<Var, 3> z_im{y_im, out.y_aec_im, out.x_echo_im};
  std::array<Var, 3> n_re, n_im, s_re, s_im;
  for (int c = 0; c < 3; ++c) {
    Var npair = apply_crf_node(tape, z_re[c], z_im[c], taps_n, offsets);
    n_re[c] = tape.slice_cols(npair, 0, F);
    n_im[c] = tape.slice_cols(npair, F, 2 * F);
    Var spair = apply_crf_node(tape, z_re[c], z_im[c], taps_s, offsets);
    s_re[c] = tape.slice_cols(spair, 0, F);
    s_im[c] = tape.slice_cols(spair, F, 2 * F);
  }
  Var phi_nn = model_detail::covariance_pack(tape, n_re, n_im, T, F);
  Var phi_ss = model_detail::covariance_pack(tape, s_re, s_im, T, F);
  Var phi = tape.concat_cols({phi_nn, phi_ss});  // [T, 24F]

  // ---- covariance-conditioned self-attentive stack ----
  Var norm = tape.layer_norm(phi, p("s2.ln.gain"), p("s2.ln.bias"));
  Var proj2 = tape.leaky_relu(tape.linear(norm, p("s2.proj.W"), p("s2.proj.b")),
                              static_cast<Real>(cfg.leaky_slope));
  Var attn1 = tape.add(proj2, tape.relu(mhsa(tape, proj2,
                                             bind_mhsa(p, "s2.attn1", cfg.attn_heads,
                                                       cfg.causal))));
  Var gru2 = gru(tape, attn1, bind_gru(p, "s2.gru2"));
  Var attn2 = tape.add(gru2, tape.relu(mhsa(tape, gru2,
                                            bind_mhsa(p, "s2.attn2", cfg.attn_heads,
                                                      cfg.causal))));
  Var w_all = tape.linear(attn2, p("s2.out.W"), p("s2.out.b"));  // [T, 6F]

  // single-tap filters per channel: layout [Re1 | Im1 | Re2 | Im2 | Re3 | Im3]
  Var acc_re, acc_im;
  for (int c = 0; c < 3; ++c) {
    Var w_re = tape.slice_cols(w_all, (2 * c) * F, (2 * c + 1) * F);
    Var w_im = tape.slice_cols(w_all, (2 * c + 1) * F, (2 * c + 2) * F);
    Var term_re = tape.sub(tape.mul(w_re, z_re[c]), tape.mul(w_im, z_im[c]));
    Var term_im = tape.add(tape.mul(w_re, z_im[c]), tape.mul(w_im, z_re[c]));
    acc_re = c == 0 ? term_re : tape.add(acc_re, term_re);
    acc_im = c == 0 ? term_im : tape.add(acc_im, term_im);
  }
  out.shat_re = acc_re;
  out.shat_im = acc_im;

  // ---- AGC branch: |S_hat| -> GRU -> linear -> softplus ----
  if (cfg.agc_branch) {
    Var mag = magnitude_node(tape, out.shat_re, out.shat_im);
    Var agc_h = gru(tape, mag, bind_gru(p, "agc.gru"));
    Var agc_lin = tape.linear(agc_h, p("agc.out.W"), p("agc.out.b"));
    out.agc_mag = tape.softplus(agc_lin);
  }
  return out;
}

struct LossConfig {
  double alpha = 0.1;            // spectral magnitude L1 weight
  bool agc_task = false;
  double multitask_weight = 0.5;
  double clamp_db = 60.0;

  void validate() const {
    check(alpha >= 0.0 && std::isfinite(alpha), "LossConfig: alpha must be >= 0");
    check(multitask_weight >= 0.0 && std::isfinite(multitask_weight),
          "LossConfig: multitask_weight must be >= 0");
  }
};

template <typename Real>
struct LossVars {
  Var total;
  Var si_sdr;    // the (clamped) SI-SDR term in dB
  Var l1;        // spectral magnitude L1
  Var agc;       // AGC magnitude L1; invalid when the task is off
};

// Training objective: negated SI-SDR of the time-domain reconstruction plus
// alpha-weighted spectral magnitude L1, optionally mixed with the AGC
// magnitude L1 under multitask_weight.
template <typename Real>
LossVars<Real> build_loss(Tape<Real>& tape, const ModelConfig& cfg, const LossConfig& loss_cfg,
                          const ModelOutputs<Real>& out, const ItemTensors<Real>& item) {
  loss_cfg.validate();
  check(!item.target_time.empty(), "build_loss: item has no target");
  LossVars<Real> lv;

  Var shat_time = istft_node(tape, out.shat_re, out.shat_im, cfg.stft_config(),
                             item.num_samples);
  lv.si_sdr = si_sdr_node(tape, shat_time, item.target_time,
                          static_cast<Real>(loss_cfg.clamp_db));

  Var mag = magnitude_node(tape, out.shat_re, out.shat_im);
  Var mag_target = tape.constant(item.target_mag);
  lv.l1 = tape.mean_all(tape.abs_op(tape.sub(mag, mag_target)));

  lv.total = tape.add(tape.neg(lv.si_sdr), tape.scale(lv.l1,
                                                      static_cast<Real>(loss_cfg.alpha)));
  if (loss_cfg.agc_task) {
    check(cfg.agc_branch, "build_loss: agc_task requires agc_branch");
    check(item.agc_target_mag.numel() > 0, "build_loss: item has no AGC target");
    Var agc_target = tape.constant(item.agc_target_mag);
    lv.agc = tape.mean_all(tape.abs_op(tape.sub(out.agc_mag, agc_target)));
    lv.total = tape.add(lv.total, tape.scale(lv.agc,
                                             static_cast<Real>(loss_cfg.multitask_weight)));
  }
  return lv;
}

// ---------------------------------------------------------------------------
// Inference.
// ---------------------------------------------------------------------------

struct EnhanceResult {
  AudioSignal shat;        // time-domain enhanced output
  Spectrogram shat_spec;   // enhanced spectrogram
  AudioSignal post_agc;    // AGC-branch synthesis (when requested)
  bool has_post_agc = false;
};

inline EnhanceResult enhance(ParamStore<float>& params, const ModelConfig& cfg,
                             const AudioSignal& mic, const AudioSignal& farend,
                             const std::optional<std::vector<double>>& embedding = {},
                             bool want_post_agc = false) {
  check(!want_post_agc || cfg.agc_branch, "enhance: model has no AGC branch");
  ItemTensors<float> item = prepare_item<float>(cfg, mic, farend, embedding);
  Tape<float> tape;
  BoundParams<float> bound(tape, params, /*trainable=*/false);
  ModelOutputs<float> out = build_model(tape, bound, cfg, item);

  EnhanceResult result;
  result.shat_spec.config = cfg.stft_config();
  result.shat_spec.F = item.F;
  result.shat_spec.T = item.T;
  result.shat_spec.num_samples = item.num_samples;
  result.shat_spec.data.resize(static_cast<std::size_t>(item.F) * item.T);
  const Tensor<float>& re = tape.val(out.shat_re);
  const Tensor<float>& im = tape.val(out.shat_im);
  for (std::size_t i = 0; i < result.shat_spec.data.size(); ++i)
    result.shat_spec.data[i] = {static_cast<double>(re[i]), static_cast<double>(im[i])};
  result.shat = istft(result.shat_spec);

  if (want_post_agc) {
    // predicted magnitude combined with the phase of the enhanced output
    Spectrogram post = result.shat_spec;
    const Tensor<float>& mag = tape.val(out.agc_mag);
    for (std::size_t i = 0; i < post.data.size(); ++i) {
      const double m = std::abs(result.shat_spec.data[i]);
      post.data[i] = m > 0.0 ? result.shat_spec.data[i] * (static_cast<double>(mag[i]) / m)
                             : std::complex<double>(static_cast<double>(mag[i]), 0.0);
    }
    result.post_agc = istft(post);
    result.has_post_agc = true;
  }
  return result;
}

}  // namespace neuralecho

#endif  // NEURALECHO_MODEL_HPP
