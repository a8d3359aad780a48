// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_GRADCHECK_SUITES_HPP
#define NEURALECHO_GRADCHECK_SUITES_HPP

#include <string>
#include <vector>

#include "neuralecho/gradcheck.hpp"
#include "neuralecho/model.hpp"
#include "neuralecho/simulate.hpp"

namespace neuralecho {

struct GradCheckSuite {
  std::string name;
  GradCheckReport report;
};

namespace gradcheck_detail {

inline Tensor<double> random_tensor(std::vector<std::size_t> shape, RandomStream& rng,
                                    double scale = 1.0) {
  Tensor<double> t(std::move(shape));
  for (auto& v : t.data) v = scale * rng.normal();
  return t;
}

// Reduces an output tensor to a scalar with fixed random weights so every
// output element influences the loss.
inline Var weighted_sum(Tape<double>& tape, Var y, RandomStream& rng) {
  Tensor<double> w = random_tensor(tape.val(y).shape, rng);
  return tape.sum_all(tape.mul(y, tape.constant(std::move(w))));
}

}  // namespace gradcheck_detail

// Per-layer and per-node finite-difference suites plus the end-to-end toy
// model. Layer tolerances are 1e-4; the end-to-end model uses 1e-3 (both in
// double precision, central differences with step 1e-4).
inline std::vector<GradCheckSuite> run_gradcheck_suites(const std::string& filter = "") {
  using gradcheck_detail::random_tensor;
  using gradcheck_detail::weighted_sum;
  std::vector<GradCheckSuite> suites;
  auto wants = [&filter](const std::string& name) {
    return filter.empty() || name.find(filter) != std::string::npos;
  };

  if (wants("linear")) {
    ParamStore<double> ps;
    RandomStream rng(101);
    ps.add("x", {3, 5}) = random_tensor({3, 5}, rng);
    ps.add("W", {5, 4}) = random_tensor({5, 4}, rng);
    ps.add("b", {4}) = random_tensor({4}, rng);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(7);
      Var y = tape.linear(bound("x"), bound("W"), bound("b"));
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"linear", finite_diff_check(ps, loss_fn)});
  }

  if (wants("conv1d")) {
    ParamStore<double> ps;
    RandomStream rng(102);
    ps.add("x", {2, 2, 7}) = random_tensor({2, 2, 7}, rng);
    ps.add("w", {3, 2, 3}) = random_tensor({3, 2, 3}, rng);
    ps.add("b", {3}) = random_tensor({3}, rng);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(8);
      Var y = tape.conv1d(bound("x"), bound("w"), bound("b"));
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"conv1d", finite_diff_check(ps, loss_fn)});
  }

  if (wants("gru")) {
    ParamStore<double> ps;
    RandomStream rng(103);
    ps.add("x", {10, 4}) = random_tensor({10, 4}, rng);  // 10 steps
    create_gru(ps, "g", 4, 5, rng);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(9);
      Var y = gru(tape, bound("x"), bind_gru(bound, "g"));
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"gru", finite_diff_check(ps, loss_fn)});
  }

  if (wants("layer_norm")) {
    ParamStore<double> ps;
    RandomStream rng(104);
    ps.add("x", {4, 6}) = random_tensor({4, 6}, rng);
    ps.add("gain", {6}) = random_tensor({6}, rng);
    ps.add("bias", {6}) = random_tensor({6}, rng);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(10);
      Var y = tape.layer_norm(bound("x"), bound("gain"), bound("bias"));
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"layer_norm", finite_diff_check(ps, loss_fn)});
  }

  if (wants("mhsa")) {
    for (const bool causal : {true, false}) {
      ParamStore<double> ps;
      RandomStream rng(105);
      ps.add("x", {5, 8}) = random_tensor({5, 8}, rng);
      create_mhsa(ps, "a", 8, rng);
      auto loss_fn = [causal](ParamStore<double>& p, bool with_grad) {
        Tape<double> tape;
        BoundParams<double> bound(tape, p);
        RandomStream wrng(11);
        Var y = mhsa(tape, bound("x"), bind_mhsa(bound, "a", 4, causal));
        Var loss = weighted_sum(tape, y, wrng);
        if (with_grad) {
          tape.backward(loss);
          bound.write_grads_back();
        }
        return static_cast<double>(tape.val(loss)[0]);
      };
      suites.push_back({causal ? "mhsa_causal" : "mhsa_full", finite_diff_check(ps, loss_fn)});
    }
  }

  if (wants("film")) {
    ParamStore<double> ps;
    RandomStream rng(106);
    ps.add("theta", {4, 6}) = random_tensor({4, 6}, rng);
    ps.add("d_s", {1, 3}) = random_tensor({1, 3}, rng);
    create_film(ps, "f", 3, 6);
    // randomize the zero-initialized projections to exercise the full path
    ps.at("f.r.W").value = random_tensor({3, 6}, rng, 0.5);
    ps.at("f.h.W").value = random_tensor({3, 6}, rng, 0.5);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(12);
      Var y = film(tape, bound("theta"), bound("d_s"), bind_film(bound, "f"));
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"film", finite_diff_check(ps, loss_fn)});
  }

  if (wants("softplus")) {
    ParamStore<double> ps;
    RandomStream rng(107);
    ps.add("x", {3, 4}) = random_tensor({3, 4}, rng);
    ps.add("W", {4, 4}) = random_tensor({4, 4}, rng);
    ps.add("b", {4}) = random_tensor({4}, rng);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(13);
      Var y = tape.softplus(tape.linear(bound("x"), bound("W"), bound("b")));
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"softplus_head", finite_diff_check(ps, loss_fn)});
  }

  if (wants("crf")) {
    const std::size_t T = 5, F = 6, J = 9;
    ParamStore<double> ps;
    RandomStream rng(108);
    ps.add("s_re", {T, F}) = random_tensor({T, F}, rng);
    ps.add("s_im", {T, F}) = random_tensor({T, F}, rng);
    ps.add("taps", {T, 2 * J, F}) = random_tensor({T, 2 * J, F}, rng);
    auto loss_fn = [T, F](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(14);
      const auto offsets = crf_offsets(1, 1, false);
      Var y = apply_crf_node(tape, bound("s_re"), bound("s_im"), bound("taps"), offsets);
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"crf", finite_diff_check(ps, loss_fn)});
  }

  if (wants("lps") || wants("magnitude")) {
    ParamStore<double> ps;
    RandomStream rng(109);
    ps.add("re", {4, 5}) = random_tensor({4, 5}, rng);
    ps.add("im", {4, 5}) = random_tensor({4, 5}, rng);
    auto loss_fn = [](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(15);
      Var a = lps_node(tape, bound("re"), bound("im"), 1e-12);
      Var b = magnitude_node(tape, bound("re"), bound("im"));
      Var loss = tape.add(weighted_sum(tape, a, wrng), weighted_sum(tape, b, wrng));
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"lps_magnitude", finite_diff_check(ps, loss_fn)});
  }

  if (wants("istft")) {
    StftConfig sc{16, 8, 16000};
    const std::size_t T = 6, F = 9;
    ParamStore<double> ps;
    RandomStream rng(110);
    ps.add("re", {T, F}) = random_tensor({T, F}, rng);
    ps.add("im", {T, F}) = random_tensor({T, F}, rng);
    auto loss_fn = [sc](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      RandomStream wrng(16);
      Var y = istft_node(tape, bound("re"), bound("im"), sc, 44);
      Var loss = weighted_sum(tape, y, wrng);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"istft", finite_diff_check(ps, loss_fn)});
  }

  if (wants("si_sdr")) {
    ParamStore<double> ps;
    RandomStream rng(111);
    std::vector<double> ref(40);
    for (auto& v : ref) v = rng.normal();
    Tensor<double> est({40});
    for (auto& v : est.data) v = 0.8 * rng.normal();
    ps.add("est", {40}) = est;
    auto loss_fn = [ref](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      Var loss = si_sdr_node(tape, bound("est"), ref);
      if (with_grad) {
        tape.backward(loss);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(loss)[0]);
    };
    suites.push_back({"si_sdr", finite_diff_check(ps, loss_fn)});
  }

  if (wants("e2e") || wants("end_to_end")) {
    ModelConfig cfg;
    cfg.fft_size = 16;
    cfg.hop = 8;
    cfg.cov_proj_width = 8;
    cfg.attn_heads = 4;
    cfg.embedding_dim = 8;
    cfg.speaker_aware = true;
    cfg.agc_branch = true;
    cfg.causal = true;

    LossConfig loss_cfg;
    loss_cfg.agc_task = true;

    // Fixed generic operating point. The loss has |.| kinks (spectral L1) and
    // near-zero-magnitude points where central differences are ill-posed; this
    // seed keeps every checked coordinate away from them.
    RandomStream rng(967);
    auto make_sig = [&rng](std::size_t n) {
      AudioSignal s;
      s.sample_rate = 16000;
      s.samples.resize(n);
      for (auto& v : s.samples) v = 0.5 * rng.normal();
      return s;
    };
    const AudioSignal mic = make_sig(44);  // 6 frames at hop 8
    const AudioSignal far = make_sig(44);
    const AudioSignal target = make_sig(44);
    const AudioSignal agc_target = make_sig(44);
    std::vector<double> emb(cfg.embedding_dim);
    for (auto& v : emb) v = rng.normal();

    ParamStore<double> ps = create_model_params<double>(cfg, 2024);
    // give the zero-initialized FiLM projections gradients through a
    // non-degenerate operating point
    for (const char* name : {"s1.film.r.W", "s1.film.h.W", "s2.film.r.W", "s2.film.h.W"}) {
      RandomStream frng(hash_string(name));
      for (auto& v : ps.at(name).value.data) v = 0.3 * frng.normal();
    }
    const ItemTensors<double> item =
        prepare_item<double>(cfg, mic, far, emb, &target, &agc_target);
    auto loss_fn = [&cfg, &loss_cfg, &item](ParamStore<double>& p, bool with_grad) {
      Tape<double> tape;
      BoundParams<double> bound(tape, p);
      ModelOutputs<double> out = build_model(tape, bound, cfg, item);
      LossVars<double> lv = build_loss(tape, cfg, loss_cfg, out, item);
      if (with_grad) {
        tape.backward(lv.total);
        bound.write_grads_back();
      }
      return static_cast<double>(tape.val(lv.total)[0]);
    };
    suites.push_back({"e2e_two_stage", finite_diff_check(ps, loss_fn, 1e-4, 1e-3)});
  }

  return suites;
}

inline bool gradcheck_all_passed(const std::vector<GradCheckSuite>& suites) {
  for (const auto& s : suites)
    if (!s.report.passed()) return false;
  return !suites.empty();
}

}  // namespace neuralecho

#endif  // NEURALECHO_GRADCHECK_SUITES_HPP
