// SPDX-License-Identifier: Apache-2.0
#ifndef NEURALECHO_GRADCHECK_HPP
#define NEURALECHO_GRADCHECK_HPP

#include <iostream>
#include <string>
#include <vector>

#include "neuralecho/params.hpp"

namespace neuralecho {

struct GradCheckBlock {
  std::string name;
  double max_rel_err = 0.0;
  std::size_t checked = 0;
};

struct GradCheckReport {
  double tolerance = 1e-4;
  std::vector<GradCheckBlock> blocks;

  double worst() const {
    double w = 0.0;
    for (const auto& b : blocks) w = std::max(w, b.max_rel_err);
    return w;
  }
  bool passed() const { return worst() <= tolerance; }

  void print(std::ostream& os) const {
    for (const auto& b : blocks)
      os << (b.max_rel_err <= tolerance ? "  ok   " : "  FAIL ") << b.name
         << "  max_rel_err=" << b.max_rel_err << "  (" << b.checked << " elems)\n";
  }
};

// Central finite differences against the analytic gradients, double precision.
// loss_fn(params, with_grad) must rebuild the graph from the current parameter
// values, return the scalar loss, and populate params' grads when with_grad.
// max_per_block > 0 limits checked elements per parameter (strided,
// deterministic).
template <typename LossFn>
GradCheckReport finite_diff_check(ParamStore<double>& params, LossFn&& loss_fn,
                                  double step = 1e-4, double tolerance = 1e-4,
                                  std::size_t max_per_block = 0) {
  GradCheckReport report;
  report.tolerance = tolerance;

  params.zero_grads();
  loss_fn(params, true);
  std::vector<Tensor<double>> analytic;
  analytic.reserve(params.entries().size());
  for (const auto& e : params.entries()) analytic.push_back(e.grad);

  for (std::size_t bi = 0; bi < params.entries().size(); ++bi) {
    auto& entry = params.entries()[bi];
    GradCheckBlock block;
    block.name = entry.name;
    const std::size_t n = entry.value.numel();
    const std::size_t stride =
        (max_per_block > 0 && n > max_per_block) ? (n + max_per_block - 1) / max_per_block : 1;
    for (std::size_t i = 0; i < n; i += stride) {
      const double orig = entry.value[i];
      entry.value[i] = orig + step;
      const double fp = loss_fn(params, false);
      entry.value[i] = orig - step;
      const double fm = loss_fn(params, false);
      entry.value[i] = orig;
      const double numeric = (fp - fm) / (2.0 * step);
      const double a = analytic[bi][i];
      const double denom = std::max({std::abs(a), std::abs(numeric), 1e-5});
      block.max_rel_err = std::max(block.max_rel_err, std::abs(a - numeric) / denom);
      ++block.checked;
    }
    report.blocks.push_back(std::move(block));
  }
  return report;
}

}  // namespace neuralecho

#endif  // NEURALECHO_GRADCHECK_HPP
