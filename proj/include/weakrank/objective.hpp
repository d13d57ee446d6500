#pragma once

// Soft multi-label cross-entropy and PolyLoss over softmax probabilities.
//
//   CE   = -(1/B) sum_i sum_t Y_it log P_it
//   Poly = CE + (eps/B) sum_i sum_t (1 - Y_it P_it)
//
// The polynomial term is summed over every class as written, so its value
// carries an additive eps*(T-1) relative to the single-target Poly-1 form;
// gradients are unaffected.

#include <cmath>
#include <limits>
#include <vector>

#include "weakrank/attribute_miner.hpp"
#include "weakrank/error.hpp"
#include "weakrank/matrix.hpp"

namespace weakrank {

struct ObjectiveConfig {
  double epsilon = 0.5;
};

namespace detail {

inline void check_finite(const MatrixD& logits) {
  for (const double v : logits.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, "logits contain a non-finite value");
  }
}

inline void check_shapes(const MatrixD& logits, const SoftTargets& targets) {
  if (logits.rows() != targets.num_samples() || logits.cols() != targets.num_classes()) {
    fail(ErrorKind::ShapeMismatch, "logits are " + std::to_string(logits.rows()) + "x" + std::to_string(logits.cols()) +
                                       " but targets are " + std::to_string(targets.num_samples()) + "x" +
                                       std::to_string(targets.num_classes()));
  }
  if (logits.rows() == 0) fail(ErrorKind::ShapeMismatch, "empty batch");
}

/// Row max and log of the shifted partition function.
inline std::pair<double, double> log_partition(std::span<const double> row) {
  double m = -std::numeric_limits<double>::infinity();
  for (const double v : row) m = std::max(m, v);
  double sum = 0.0;
  for (const double v : row) sum += std::exp(v - m);
  return {m, std::log(sum)};
}

}  // namespace detail

inline MatrixD softmax(const MatrixD& logits) {
  detail::check_finite(logits);
  MatrixD out(logits.rows(), logits.cols());
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto [m, log_z] = detail::log_partition(row);
    auto dst = out.row(i);
    for (std::size_t t = 0; t < row.size(); ++t) dst[t] = std::exp(row[t] - m - log_z);
  }
  return out;
}

inline double soft_cross_entropy(const MatrixD& logits, const SoftTargets& targets) {
  detail::check_shapes(logits, targets);
  detail::check_finite(logits);
  double total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto [m, log_z] = detail::log_partition(row);
    const auto& ids = targets.row(i).attr_ids;
    const double mass = 1.0 / static_cast<double>(ids.size());
    double row_loss = 0.0;
    for (const AttrId t : ids) row_loss -= mass * (row[t] - m - log_z);
    total += row_loss;
  }
  return total / static_cast<double>(logits.rows());
}

/// sum_i sum_t (1 - Y_it P_it), evaluated term by term over all classes.
inline double poly_term(const MatrixD& probs, const SoftTargets& targets) {
  double total = 0.0;
  for (std::size_t i = 0; i < probs.rows(); ++i) {
    const auto y = targets.dense_row(i);
    const auto p = probs.row(i);
    for (std::size_t t = 0; t < p.size(); ++t) total += 1.0 - y[t] * p[t];
  }
  return total;
}

inline double poly_loss(const MatrixD& logits, const SoftTargets& targets, const ObjectiveConfig& cfg) {
  if (!(cfg.epsilon >= 0.0)) fail(ErrorKind::InvalidArgument, "epsilon must be >= 0");
  const double ce = soft_cross_entropy(logits, targets);
  if (cfg.epsilon == 0.0) return ce;
  const MatrixD probs = softmax(logits);
  return ce + cfg.epsilon / static_cast<double>(logits.rows()) * poly_term(probs, targets);
}

/// d Poly / d logits. Per row with S = sum_t Y_t and q = sum_t Y_t P_t:
///   g_j = (P_j S - Y_j + eps P_j (q - Y_j)) / B
inline MatrixD grad_poly_loss(const MatrixD& logits, const SoftTargets& targets, const ObjectiveConfig& cfg) {
  detail::check_shapes(logits, targets);
  if (!(cfg.epsilon >= 0.0)) fail(ErrorKind::InvalidArgument, "epsilon must be >= 0");
  MatrixD grad = softmax(logits);
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  for (std::size_t i = 0; i < grad.rows(); ++i) {
    auto g = grad.row(i);
    const std::vector<double> y = targets.dense_row(i);
    double s = 0.0;
    double q = 0.0;
    for (std::size_t t = 0; t < g.size(); ++t) {
      s += y[t];
      q += y[t] * g[t];
    }
    for (std::size_t j = 0; j < g.size(); ++j) {
      const double p = g[j];
      g[j] = (p * s - y[j] + cfg.epsilon * p * (q - y[j])) * inv_b;
    }
  }
  return grad;
}

struct LossAndGrad {
  double loss = 0.0;
  MatrixD grad;
};

/// One softmax pass for both the PolyLoss value and its gradient; used by
/// the trainer.
inline LossAndGrad poly_loss_and_grad(const MatrixD& logits, const SoftTargets& targets, const ObjectiveConfig& cfg) {
  detail::check_shapes(logits, targets);
  detail::check_finite(logits);
  const std::size_t num_classes = logits.cols();
  const double inv_b = 1.0 / static_cast<double>(logits.rows());
  LossAndGrad out{0.0, MatrixD(logits.rows(), num_classes)};
  double ce_total = 0.0;
  double poly_total = 0.0;
  for (std::size_t i = 0; i < logits.rows(); ++i) {
    const auto row = logits.row(i);
    const auto [m, log_z] = detail::log_partition(row);
    auto g = out.grad.row(i);
    for (std::size_t t = 0; t < num_classes; ++t) g[t] = std::exp(row[t] - m - log_z);
    const auto& ids = targets.row(i).attr_ids;
    const double mass = 1.0 / static_cast<double>(ids.size());
    double q = 0.0;
    double row_ce = 0.0;
    for (const AttrId t : ids) {
      q += mass * g[t];
      row_ce -= mass * (row[t] - m - log_z);
    }
    ce_total += row_ce;
    poly_total += static_cast<double>(num_classes) - q;
    std::vector<double> p_at_ids;
    p_at_ids.reserve(ids.size());
    for (const AttrId t : ids) p_at_ids.push_back(g[t]);
    const double scale = 1.0 + cfg.epsilon * q;
    for (std::size_t j = 0; j < num_classes; ++j) g[j] *= scale * inv_b;
    for (std::size_t k = 0; k < ids.size(); ++k) g[ids[k]] -= (mass + cfg.epsilon * p_at_ids[k] * mass) * inv_b;
  }
  out.loss = (ce_total + cfg.epsilon * poly_total) * inv_b;
  if (!std::isfinite(out.loss)) fail(ErrorKind::DivergenceDetected, "loss is not finite");
  return out;
}

}  // namespace weakrank
