#pragma once

// Residual-MLP encoder trained with PolyLoss on soft multi-label targets.
//
//   h   = x Ws + bs
//   h  += keep_i / (1 - p) * (relu(h W1 + b1) W2 + b2)     per block, train mode
//   e   = h We + be                                        retrieval embedding
//   z   = e Wh + bh                                        classification logits
//
// Optimization follows the usual large-backbone recipe scaled down: AdamW
// with decoupled weight decay, linear warmup then cosine decay, stochastic
// depth on residual branches, a down-scaled head init and an EMA of weights.

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <string>
#include <vector>

#include "weakrank/attribute_miner.hpp"
#include "weakrank/config.hpp"
#include "weakrank/embedding.hpp"
#include "weakrank/error.hpp"
#include "weakrank/io.hpp"
#include "weakrank/matrix.hpp"
#include "weakrank/objective.hpp"
#include "weakrank/rng.hpp"

namespace weakrank {

struct EncoderConfig {
  std::size_t input_dim = 0;
  std::size_t hidden_dim = 128;
  std::size_t num_blocks = 2;
  std::size_t embed_dim = 64;
  std::size_t num_classes = 0;
  double drop_path_prob = 0.4;
  double head_init_scale = 0.01;

  void validate() const {
    if (input_dim == 0 || hidden_dim == 0 || embed_dim == 0 || num_classes == 0) {
      fail(ErrorKind::InvalidConfig, "encoder dims must be >= 1");
    }
    if (!(drop_path_prob >= 0.0 && drop_path_prob < 1.0)) fail(ErrorKind::InvalidConfig, "drop_path_prob must be in [0, 1)");
    if (!(head_init_scale >= 0.0)) fail(ErrorKind::InvalidConfig, "head_init_scale must be >= 0");
  }

  friend bool operator==(const EncoderConfig&, const EncoderConfig&) = default;
};

/// Defaults are the large-scale recipe; desk-scale runs override lr, batch
/// size and EMA decay through config files.
struct TrainConfig {
  double base_lr = 1e-4;
  double weight_decay = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;
  std::size_t batch_size = 224;
  std::size_t epochs = 20;
  std::size_t warmup_epochs = 5;
  double ema_decay = 0.9999;
  double poly_epsilon = 0.5;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(base_lr >= 0.0)) fail(ErrorKind::InvalidConfig, "base_lr must be >= 0");
    if (!(weight_decay >= 0.0)) fail(ErrorKind::InvalidConfig, "weight_decay must be >= 0");
    if (!(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0)) fail(ErrorKind::InvalidConfig, "betas must be in (0, 1)");
    if (batch_size == 0 || epochs == 0) fail(ErrorKind::InvalidConfig, "batch_size and epochs must be >= 1");
    if (warmup_epochs > epochs) fail(ErrorKind::InvalidConfig, "warmup_epochs must be <= epochs");
    if (!(ema_decay >= 0.0 && ema_decay < 1.0)) fail(ErrorKind::InvalidConfig, "ema_decay must be in [0, 1)");
    if (!(poly_epsilon >= 0.0)) fail(ErrorKind::InvalidConfig, "poly_epsilon must be >= 0");
  }
};

inline EncoderConfig encoder_config_from(const Config& cfg, const std::string& prefix = "", EncoderConfig base = {}) {
  const auto key = [&](const char* k) { return prefix + k; };
  base.input_dim = static_cast<std::size_t>(cfg.get_int(key("input_dim"), static_cast<std::int64_t>(base.input_dim)));
  base.hidden_dim = static_cast<std::size_t>(cfg.get_int(key("hidden_dim"), static_cast<std::int64_t>(base.hidden_dim)));
  base.num_blocks = static_cast<std::size_t>(cfg.get_int(key("num_blocks"), static_cast<std::int64_t>(base.num_blocks)));
  base.embed_dim = static_cast<std::size_t>(cfg.get_int(key("embed_dim"), static_cast<std::int64_t>(base.embed_dim)));
  base.num_classes = static_cast<std::size_t>(cfg.get_int(key("num_classes"), static_cast<std::int64_t>(base.num_classes)));
  base.drop_path_prob = cfg.get_double(key("drop_path_prob"), base.drop_path_prob);
  base.head_init_scale = cfg.get_double(key("head_init_scale"), base.head_init_scale);
  return base;
}

inline TrainConfig train_config_from(const Config& cfg, const std::string& prefix = "", TrainConfig base = {}) {
  const auto key = [&](const char* k) { return prefix + k; };
  base.base_lr = cfg.get_double(key("base_lr"), base.base_lr);
  base.weight_decay = cfg.get_double(key("weight_decay"), base.weight_decay);
  base.beta1 = cfg.get_double(key("beta1"), base.beta1);
  base.beta2 = cfg.get_double(key("beta2"), base.beta2);
  base.adam_eps = cfg.get_double(key("adam_eps"), base.adam_eps);
  base.batch_size = static_cast<std::size_t>(cfg.get_int(key("batch_size"), static_cast<std::int64_t>(base.batch_size)));
  base.epochs = static_cast<std::size_t>(cfg.get_int(key("epochs"), static_cast<std::int64_t>(base.epochs)));
  base.warmup_epochs = static_cast<std::size_t>(cfg.get_int(key("warmup_epochs"), static_cast<std::int64_t>(base.warmup_epochs)));
  base.ema_decay = cfg.get_double(key("ema_decay"), base.ema_decay);
  base.poly_epsilon = cfg.get_double(key("poly_epsilon"), base.poly_epsilon);
  base.seed = static_cast<std::uint64_t>(cfg.get_int(key("seed"), static_cast<std::int64_t>(base.seed)));
  return base;
}

inline const std::set<std::string>& model_config_keys() {
  static const std::set<std::string> keys = {
      "input_dim", "hidden_dim", "num_blocks", "embed_dim", "num_classes", "drop_path_prob", "head_init_scale",
      "base_lr", "weight_decay", "beta1", "beta2", "adam_eps", "batch_size", "epochs", "warmup_epochs",
      "ema_decay", "poly_epsilon", "seed"};
  return keys;
}

struct Tensor {
  std::string name;
  MatrixD value;  // biases are 1 x n
};

/// Live parameters and their EMA shadow, in a fixed layer order:
/// stem.{weight,bias}, blocks.<i>.{fc1,fc2}.{weight,bias}, embed.*, head.*
struct ModelWeights {
  EncoderConfig config;
  std::vector<Tensor> live;
  std::vector<Tensor> ema;

  static constexpr std::size_t kStem = 0;
  std::size_t block(std::size_t b) const noexcept { return 2 + 4 * b; }
  std::size_t embed_index() const noexcept { return 2 + 4 * config.num_blocks; }
  std::size_t head_index() const noexcept { return embed_index() + 2; }
};

namespace detail {

// C = A B
inline void matmul(const MatrixD& a, const MatrixD& b, MatrixD& c) {
  c = MatrixD(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    auto ci = c.row(i);
    const auto ai = a.row(i);
    for (std::size_t k = 0; k < a.cols(); ++k) {
      const double v = ai[k];
      if (v == 0.0) continue;
      const auto bk = b.row(k);
      for (std::size_t j = 0; j < bk.size(); ++j) ci[j] += v * bk[j];
    }
  }
}

// C = A^T B
inline void matmul_tn(const MatrixD& a, const MatrixD& b, MatrixD& c) {
  c = MatrixD(a.cols(), b.cols());
  for (std::size_t r = 0; r < a.rows(); ++r) {
    const auto ar = a.row(r);
    const auto br = b.row(r);
    for (std::size_t i = 0; i < ar.size(); ++i) {
      const double v = ar[i];
      if (v == 0.0) continue;
      auto ci = c.row(i);
      for (std::size_t j = 0; j < br.size(); ++j) ci[j] += v * br[j];
    }
  }
}

// C = A B^T
inline void matmul_nt(const MatrixD& a, const MatrixD& b, MatrixD& c) {
  c = MatrixD(a.rows(), b.rows());
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const auto ai = a.row(i);
    auto ci = c.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const auto bj = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < ai.size(); ++k) s += ai[k] * bj[k];
      ci[j] = s;
    }
  }
}

inline void add_bias(MatrixD& m, const MatrixD& bias) {
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) r[j] += bias(0, j);
  }
}

inline MatrixD column_sums(const MatrixD& m) {
  MatrixD out(1, m.cols());
  for (std::size_t i = 0; i < m.rows(); ++i) {
    const auto r = m.row(i);
    for (std::size_t j = 0; j < r.size(); ++j) out(0, j) += r[j];
  }
  return out;
}

inline MatrixD random_matrix(Rng& rng, std::size_t rows, std::size_t cols, double stddev) {
  MatrixD m(rows, cols);
  for (double& v : m.data()) v = rng.normal() * stddev;
  return m;
}

inline void check_activations(const MatrixD& m, const char* where) {
  for (const double v : m.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteActivation, std::string("non-finite activation in ") + where);
  }
}

}  // namespace detail

/// Fan-in scaled normal init (std = 1/sqrt(fan_in)), zero biases; the head
/// weights are additionally multiplied by head_init_scale.
inline ModelWeights init_encoder(const EncoderConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Rng rng(seed);
  ModelWeights w;
  w.config = cfg;
  const auto add_linear = [&](const std::string& name, std::size_t in, std::size_t out, double scale) {
    w.live.push_back({name + ".weight", detail::random_matrix(rng, in, out, scale / std::sqrt(static_cast<double>(in)))});
    w.live.push_back({name + ".bias", MatrixD(1, out)});
  };
  add_linear("stem", cfg.input_dim, cfg.hidden_dim, 1.0);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    add_linear("blocks." + std::to_string(b) + ".fc1", cfg.hidden_dim, cfg.hidden_dim, 1.0);
    add_linear("blocks." + std::to_string(b) + ".fc2", cfg.hidden_dim, cfg.hidden_dim, 1.0);
  }
  add_linear("embed", cfg.hidden_dim, cfg.embed_dim, 1.0);
  add_linear("head", cfg.embed_dim, cfg.num_classes, cfg.head_init_scale);
  w.ema = w.live;
  return w;
}

enum class Mode { Train, Eval };

/// Activations kept for the backward pass.
struct ForwardCache {
  MatrixD input;
  std::vector<MatrixD> block_inputs;
  std::vector<MatrixD> block_pre;   // fc1 output before relu
  std::vector<MatrixD> block_post;  // relu output
  std::vector<std::vector<double>> block_scale;  // per-sample branch multiplier
  MatrixD trunk;                    // final hidden state
  MatrixD embeddings;
  MatrixD logits;
};

/// Runs the encoder on a batch. In train mode each residual branch is kept
/// per sample with probability 1 - drop_path_prob and rescaled by 1/(1-p);
/// eval mode is deterministic and uses every branch unscaled.
inline ForwardCache forward(const std::vector<Tensor>& params, const EncoderConfig& cfg, const MatrixD& inputs,
                            Mode mode, Rng* rng = nullptr) {
  if (inputs.cols() != cfg.input_dim) {
    fail(ErrorKind::DimensionMismatch, "encoder expects input dim " + std::to_string(cfg.input_dim) + ", got " +
                                           std::to_string(inputs.cols()));
  }
  for (const double v : inputs.data()) {
    if (!std::isfinite(v)) fail(ErrorKind::NonFiniteInput, "encoder input contains a non-finite value");
  }
  const double p = cfg.drop_path_prob;
  const bool stochastic = mode == Mode::Train && p > 0.0;
  if (stochastic && rng == nullptr) fail(ErrorKind::InvalidArgument, "train-mode forward with drop-path needs an rng");

  ForwardCache c;
  c.input = inputs;
  MatrixD h;
  detail::matmul(inputs, params[0].value, h);
  detail::add_bias(h, params[1].value);
  for (std::size_t b = 0; b < cfg.num_blocks; ++b) {
    const std::size_t base = 2 + 4 * b;
    c.block_inputs.push_back(h);
    MatrixD pre;
    detail::matmul(h, params[base].value, pre);
    detail::add_bias(pre, params[base + 1].value);
    MatrixD post = pre;
    for (double& v : post.data()) v = v > 0.0 ? v : 0.0;
    MatrixD branch;
    detail::matmul(post, params[base + 2].value, branch);
    detail::add_bias(branch, params[base + 3].value);
    std::vector<double> scale(h.rows(), 1.0);
    if (stochastic) {
      for (double& s : scale) s = rng->bernoulli(1.0 - p) ? 1.0 / (1.0 - p) : 0.0;
    }
    for (std::size_t i = 0; i < h.rows(); ++i) {
      auto hr = h.row(i);
      const auto br = branch.row(i);
      if (scale[i] == 0.0) continue;
      for (std::size_t j = 0; j < hr.size(); ++j) hr[j] += scale[i] * br[j];
    }
    c.block_pre.push_back(std::move(pre));
    c.block_post.push_back(std::move(post));
    c.block_scale.push_back(std::move(scale));
  }
  c.trunk = h;
  const std::size_t e = 2 + 4 * cfg.num_blocks;
  detail::matmul(h, params[e].value, c.embeddings);
  detail::add_bias(c.embeddings, params[e + 1].value);
  detail::matmul(c.embeddings, params[e + 2].value, c.logits);
  detail::add_bias(c.logits, params[e + 3].value);
  detail::check_activations(c.logits, "encoder forward");
  return c;
}

/// Parameter gradients given d loss / d logits, in parameter order.
inline std::vector<MatrixD> backward(const std::vector<Tensor>& params, const EncoderConfig& cfg, const ForwardCache& c,
                                     const MatrixD& grad_logits) {
  std::vector<MatrixD> grads(params.size());
  const std::size_t e = 2 + 4 * cfg.num_blocks;
  detail::matmul_tn(c.embeddings, grad_logits, grads[e + 2]);
  grads[e + 3] = detail::column_sums(grad_logits);
  MatrixD grad_embed;
  detail::matmul_nt(grad_logits, params[e + 2].value, grad_embed);
  detail::matmul_tn(c.trunk, grad_embed, grads[e]);
  grads[e + 1] = detail::column_sums(grad_embed);
  MatrixD grad_h;
  detail::matmul_nt(grad_embed, params[e].value, grad_h);
  for (std::size_t bb = cfg.num_blocks; bb-- > 0;) {
    const std::size_t base = 2 + 4 * bb;
    MatrixD grad_branch = grad_h;
    for (std::size_t i = 0; i < grad_branch.rows(); ++i) {
      for (double& v : grad_branch.row(i)) v *= c.block_scale[bb][i];
    }
    detail::matmul_tn(c.block_post[bb], grad_branch, grads[base + 2]);
    grads[base + 3] = detail::column_sums(grad_branch);
    MatrixD grad_pre;
    detail::matmul_nt(grad_branch, params[base + 2].value, grad_pre);
    const auto& pre = c.block_pre[bb].data();
    for (std::size_t k = 0; k < pre.size(); ++k) {
      if (!(pre[k] > 0.0)) grad_pre.data()[k] = 0.0;
    }
    detail::matmul_tn(c.block_inputs[bb], grad_pre, grads[base]);
    grads[base + 1] = detail::column_sums(grad_pre);
    MatrixD through;
    detail::matmul_nt(grad_pre, params[base].value, through);
    for (std::size_t k = 0; k < through.size(); ++k) grad_h.data()[k] += through.data()[k];
  }
  detail::matmul_tn(c.input, grad_h, grads[0]);
  grads[1] = detail::column_sums(grad_h);
  return grads;
}

/// Linear warmup to base_lr over warmup_steps, then half-cosine decay to 0.
inline double lr_at(std::size_t step, std::size_t total_steps, std::size_t warmup_steps, double base_lr) {
  if (step < warmup_steps) {
    return base_lr * static_cast<double>(step + 1) / static_cast<double>(warmup_steps);
  }
  const double progress =
      static_cast<double>(step - warmup_steps) / static_cast<double>(total_steps - warmup_steps);
  return base_lr * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

struct AdamState {
  std::vector<MatrixD> first;
  std::vector<MatrixD> second;
  std::uint64_t steps = 0;
};

/// AdamW. Decoupled decay is applied first, to the pre-step weights:
///   w <- w - lr*wd*w;  w <- w - lr * m_hat / (sqrt(v_hat) + eps)
inline void optimizer_step(std::vector<Tensor>& params, const std::vector<MatrixD>& grads, double lr,
                           const TrainConfig& cfg, AdamState& state) {
  if (grads.size() != params.size()) fail(ErrorKind::ShapeMismatch, "gradient count does not match parameters");
  if (state.first.empty()) {
    for (const auto& p : params) {
      state.first.emplace_back(p.value.rows(), p.value.cols());
      state.second.emplace_back(p.value.rows(), p.value.cols());
    }
  }
  for (std::size_t k = 0; k < params.size(); ++k) {
    if (!grads[k].same_shape(params[k].value) || !state.first[k].same_shape(params[k].value)) {
      fail(ErrorKind::ShapeMismatch, "gradient shape mismatch for " + params[k].name);
    }
  }
  ++state.steps;
  const double t = static_cast<double>(state.steps);
  const double correct1 = 1.0 - std::pow(cfg.beta1, t);
  const double correct2 = 1.0 - std::pow(cfg.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto& w = params[k].value.data();
    const auto& g = grads[k].data();
    auto& m = state.first[k].data();
    auto& v = state.second[k].data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      w[i] -= lr * cfg.weight_decay * w[i];
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      w[i] -= lr * m_hat / (std::sqrt(v_hat) + cfg.adam_eps);
    }
  }
}

/// shadow <- decay * shadow + (1 - decay) * live
inline void ema_update(std::vector<Tensor>& shadow, const std::vector<Tensor>& live, double decay) {
  if (!(decay >= 0.0 && decay < 1.0)) fail(ErrorKind::InvalidArgument, "ema decay must be in [0, 1)");
  if (shadow.size() != live.size()) fail(ErrorKind::ShapeMismatch, "EMA shadow and live tensor counts differ");
  for (std::size_t k = 0; k < shadow.size(); ++k) {
    if (!shadow[k].value.same_shape(live[k].value)) fail(ErrorKind::ShapeMismatch, "EMA shape mismatch for " + live[k].name);
    auto& s = shadow[k].value.data();
    const auto& l = live[k].value.data();
    for (std::size_t i = 0; i < s.size(); ++i) s[i] = decay * s[i] + (1.0 - decay) * l[i];
  }
}

struct TrainResult {
  ModelWeights weights;
  std::vector<double> epoch_losses;  // mean per-sample poly loss per epoch
  std::size_t steps = 0;
};

using EpochCallback = std::function<void(std::size_t epoch, double mean_loss)>;

inline MatrixD to_matrix(const EmbeddingMatrix& m) {
  MatrixD out(m.rows(), m.dim());
  for (std::size_t i = 0; i < m.data().size(); ++i) out.data()[i] = m.data()[i];
  return out;
}

/// Minimizes PolyLoss over epochs x ceil(N/B) seeded, shuffled minibatches.
/// The last partial batch is kept and averaged over its true size. EMA is
/// updated after every optimizer step.
inline TrainResult train(const MatrixD& features, const SoftTargets& targets, EncoderConfig enc, const TrainConfig& cfg,
                         const EpochCallback& on_epoch = {}) {
  if (features.rows() == 0) fail(ErrorKind::InvalidArgument, "training set is empty");
  if (features.rows() != targets.num_samples()) fail(ErrorKind::ShapeMismatch, "features and targets have different row counts");
  if (enc.input_dim == 0) enc.input_dim = features.cols();
  if (enc.num_classes == 0) enc.num_classes = targets.num_classes();
  if (enc.num_classes != targets.num_classes()) fail(ErrorKind::ShapeMismatch, "encoder num_classes does not match targets");
  enc.validate();
  cfg.validate();

  TrainResult result{init_encoder(enc, cfg.seed), {}, 0};
  auto& w = result.weights;
  Rng rng(cfg.seed ^ 0x9E3779B97F4A7C15ull);
  const std::size_t n = features.rows();
  const std::size_t steps_per_epoch = (n + cfg.batch_size - 1) / cfg.batch_size;
  const std::size_t total_steps = cfg.epochs * steps_per_epoch;
  const std::size_t warmup_steps = cfg.warmup_epochs * steps_per_epoch;
  const ObjectiveConfig objective{cfg.poly_epsilon};
  AdamState adam;
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;

  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < n; start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, n - start);
      const std::span<const std::size_t> idx(order.data() + start, count);
      MatrixD batch(count, features.cols());
      for (std::size_t r = 0; r < count; ++r) {
        const auto src = features.row(idx[r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
      }
      const SoftTargets batch_targets = targets.select(idx);
      ForwardCache cache;
      try {
        cache = forward(w.live, enc, batch, Mode::Train, &rng);
      } catch (const Error& e) {
        if (e.kind() == ErrorKind::NonFiniteActivation) fail(ErrorKind::DivergenceDetected, "at step " + std::to_string(step) + ": " + e.what());
        throw;
      }
      const LossAndGrad lg = poly_loss_and_grad(cache.logits, batch_targets, objective);
      loss_sum += lg.loss * static_cast<double>(count);
      const auto grads = backward(w.live, enc, cache, lg.grad);
      optimizer_step(w.live, grads, lr_at(step, total_steps, warmup_steps, cfg.base_lr), cfg, adam);
      ema_update(w.ema, w.live, cfg.ema_decay);
      ++step;
    }
    const double mean = loss_sum / static_cast<double>(n);
    if (!std::isfinite(mean)) fail(ErrorKind::DivergenceDetected, "epoch " + std::to_string(epoch) + " loss is not finite");
    result.epoch_losses.push_back(mean);
    if (on_epoch) on_epoch(epoch, mean);
  }
  result.steps = step;
  return result;
}

/// Eval-mode pre-head embeddings, optionally from the EMA weights.
inline EmbeddingMatrix embed(const ModelWeights& weights, const EmbeddingMatrix& features, bool use_ema) {
  const auto& params = use_ema ? weights.ema : weights.live;
  const auto cache = forward(params, weights.config, to_matrix(features), Mode::Eval);
  std::vector<float> out(cache.embeddings.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<float>(cache.embeddings.data()[i]);
  return EmbeddingMatrix(features.ids(), weights.config.embed_dim, std::move(out));
}

// ---------------------------------------------------------------------------
// Checkpoint format (little-endian):
//   "WRKM" | u32 version=1 | u32 input_dim, hidden_dim, num_blocks, embed_dim,
//   num_classes | f64 drop_path_prob, head_init_scale | u32 tensor_count |
//   per tensor: u16 name_len, name, u32 rows, u32 cols, rows*cols f32 live,
//   rows*cols f32 ema

inline constexpr char kCheckpointMagic[4] = {'W', 'R', 'K', 'M'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

inline std::string encode_checkpoint(const ModelWeights& w) {
  io::ByteWriter out;
  out.bytes(std::string_view(kCheckpointMagic, 4));
  out.u32(kCheckpointVersion);
  const auto& c = w.config;
  for (const std::size_t v : {c.input_dim, c.hidden_dim, c.num_blocks, c.embed_dim, c.num_classes}) {
    out.u32(static_cast<std::uint32_t>(v));
  }
  out.f64(c.drop_path_prob);
  out.f64(c.head_init_scale);
  out.u32(static_cast<std::uint32_t>(w.live.size()));
  for (std::size_t k = 0; k < w.live.size(); ++k) {
    const auto& t = w.live[k];
    out.u16(static_cast<std::uint16_t>(t.name.size()));
    out.bytes(t.name);
    out.u32(static_cast<std::uint32_t>(t.value.rows()));
    out.u32(static_cast<std::uint32_t>(t.value.cols()));
    for (const double v : t.value.data()) out.f32(static_cast<float>(v));
    for (const double v : w.ema[k].value.data()) out.f32(static_cast<float>(v));
  }
  return out.buffer();
}

inline ModelWeights decode_checkpoint(std::string_view bytes, const std::string& what = "checkpoint") {
  io::ByteReader in(bytes, what);
  if (in.remaining() < 4 || in.bytes(4) != std::string_view(kCheckpointMagic, 4)) fail(ErrorKind::CorruptFile, what + ": bad magic");
  const std::uint32_t version = in.u32();
  if (version != kCheckpointVersion) fail(ErrorKind::VersionMismatch, what + ": unsupported version " + std::to_string(version));
  EncoderConfig c;
  c.input_dim = in.u32();
  c.hidden_dim = in.u32();
  c.num_blocks = in.u32();
  c.embed_dim = in.u32();
  c.num_classes = in.u32();
  c.drop_path_prob = in.f64();
  c.head_init_scale = in.f64();
  try {
    c.validate();
  } catch (const Error& e) {
    fail(ErrorKind::CorruptFile, what + ": " + e.what());
  }
  const ModelWeights layout = init_encoder(c, 0);
  const std::uint32_t count = in.u32();
  if (count != layout.live.size()) fail(ErrorKind::CorruptFile, what + ": unexpected tensor count");
  ModelWeights w{c, {}, {}};
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::uint16_t len = in.u16();
    std::string name(in.bytes(len));
    const std::size_t rows = in.u32();
    const std::size_t cols = in.u32();
    const auto& expect = layout.live[k];
    if (name != expect.name || rows != expect.value.rows() || cols != expect.value.cols()) {
      fail(ErrorKind::CorruptFile, what + ": tensor " + std::to_string(k) + " is `" + name + "`, expected `" + expect.name + "`");
    }
    in.need(rows * cols * 8);
    MatrixD live(rows, cols);
    MatrixD ema(rows, cols);
    for (double& v : live.data()) v = in.f32();
    for (double& v : ema.data()) v = in.f32();
    w.live.push_back({name, std::move(live)});
    w.ema.push_back({std::move(name), std::move(ema)});
  }
  if (in.remaining() != 0) fail(ErrorKind::CorruptFile, what + ": trailing bytes");
  return w;
}

inline void save_checkpoint(const ModelWeights& w, const std::string& path) { io::write_file(path, encode_checkpoint(w)); }
inline ModelWeights load_checkpoint(const std::string& path) { return decode_checkpoint(io::read_file(path), path); }

}  // namespace weakrank
