#pragma once

// Central finite-difference check of grad_poly_loss on random instances.

#include <algorithm>
#include <cmath>
#include <cstdint>

#include "weakrank/objective.hpp"
#include "weakrank/rng.hpp"

namespace weakrank {

struct GradCheckOptions {
  std::size_t instances = 100;
  std::size_t max_batch = 4;
  std::size_t max_classes = 16;
  double step = 1e-4;
  double epsilon = 0.5;
  std::uint64_t seed = 1;
};

struct GradCheckResult {
  std::size_t instances = 0;
  double max_relative_error = 0.0;
};

/// Random B x T logits (N(0, 2^2)) with random nonempty attribute sets.
inline std::pair<MatrixD, SoftTargets> random_loss_instance(Rng& rng, std::size_t max_batch, std::size_t max_classes) {
  const std::size_t b = 1 + rng.below(max_batch);
  const std::size_t t = 2 + rng.below(max_classes - 1);
  MatrixD logits(b, t);
  for (double& v : logits.data()) v = 2.0 * rng.normal();
  std::vector<ItemAttributes> rows;
  for (std::size_t i = 0; i < b; ++i) {
    ItemAttributes item{"s" + std::to_string(i), {}};
    for (std::size_t c = 0; c < t; ++c) {
      if (rng.bernoulli(0.3)) item.attr_ids.push_back(static_cast<AttrId>(c));
    }
    if (item.attr_ids.empty()) item.attr_ids.push_back(static_cast<AttrId>(rng.below(t)));
    rows.push_back(std::move(item));
  }
  return {std::move(logits), SoftTargets(std::move(rows), t)};
}

/// Relative error per entry is |a - n| / max(|a|, |n|, 1e-6); the floor keeps
/// entries that are zero up to rounding from dominating.
inline GradCheckResult check_poly_gradient(const GradCheckOptions& opt = {}) {
  Rng rng(opt.seed);
  GradCheckResult out;
  const ObjectiveConfig cfg{opt.epsilon};
  for (std::size_t n = 0; n < opt.instances; ++n) {
    auto [logits, targets] = random_loss_instance(rng, opt.max_batch, opt.max_classes);
    const MatrixD analytic = grad_poly_loss(logits, targets, cfg);
    for (std::size_t k = 0; k < logits.size(); ++k) {
      const double saved = logits.data()[k];
      logits.data()[k] = saved + opt.step;
      const double up = poly_loss(logits, targets, cfg);
      logits.data()[k] = saved - opt.step;
      const double down = poly_loss(logits, targets, cfg);
      logits.data()[k] = saved;
      const double numeric = (up - down) / (2.0 * opt.step);
      const double a = analytic.data()[k];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), 1e-6});
      out.max_relative_error = std::max(out.max_relative_error, rel);
    }
    ++out.instances;
  }
  return out;
}

}  // namespace weakrank
