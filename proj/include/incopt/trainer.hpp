#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "incopt/config.hpp"
#include "incopt/errors.hpp"
#include "incopt/model.hpp"
#include "incopt/simulator.hpp"
#include "incopt/threading.hpp"
#include "incopt/version.hpp"

namespace incopt {

enum class LabelTransform { None, Log1pZscore };

inline const char* to_string(LabelTransform t) {
  return t == LabelTransform::None ? "none" : "log1p-zscore";
}

// Label normalization fitted on the training split only and carried in the
// checkpoint so predictions can be mapped back to the original scale.
struct TransformStats {
  LabelTransform kind = LabelTransform::None;
  double mu = 0.0;
  double sigma = 1.0;

  static TransformStats fit(LabelTransform kind, std::span<const double> labels) {
    TransformStats s;
    s.kind = kind;
    if (kind == LabelTransform::None || labels.empty()) return s;
    double mean = 0.0;
    for (double y : labels) mean += std::log1p(y);
    mean /= static_cast<double>(labels.size());
    double var = 0.0;
    for (double y : labels) {
      const double d = std::log1p(y) - mean;
      var += d * d;
    }
    var /= static_cast<double>(labels.size());
    s.mu = mean;
    s.sigma = var > 1e-24 ? std::sqrt(var) : 1.0;
    return s;
  }

  double apply(double y) const {
    if (kind == LabelTransform::None) return y;
    return (std::log1p(y) - mu) / sigma;
  }

  double invert(double t) const {
    if (kind == LabelTransform::None) return t;
    return std::expm1(t * sigma + mu);
  }
};

struct TrainConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  int batch_size = 512;
  int epochs = 200;
  // Per-epoch multiplicative learning-rate decay. The absolute-error
  // objective keeps gradient magnitudes constant near the optimum, so a
  // constant step size orbits it; decay lets the iterates settle.
  double lr_decay = 1.0;
  LabelTransform label_transform = LabelTransform::Log1pZscore;
  double train_fraction = 0.8;
  int patience = 20;
  std::uint64_t seed = 0;

  void validate() const {
    auto bad = [](const std::string& msg) { raise(ErrorKind::InvalidConfig, msg); };
    if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) bad("learning_rate must be > 0");
    if (!(beta1 > 0.0 && beta1 < 1.0)) bad("beta1 must be in (0,1)");
    if (!(beta2 > 0.0 && beta2 < 1.0)) bad("beta2 must be in (0,1)");
    if (!(eps > 0.0)) bad("eps must be > 0");
    if (batch_size < 1) bad("batch_size must be >= 1");
    if (epochs < 0) bad("epochs must be >= 0");
    if (!(lr_decay > 0.0 && lr_decay <= 1.0)) bad("lr_decay must be in (0,1]");
    if (!(train_fraction > 0.0 && train_fraction < 1.0)) bad("train_fraction must be in (0,1)");
    if (patience < 1) bad("patience must be >= 1");
  }
};

struct AdamState {
  ModelParams m;
  ModelParams v;
  std::int64_t step = 0;

  static AdamState zeros_like(const ModelConfig& cfg) {
    return AdamState{make_zero_params(cfg), make_zero_params(cfg), 0};
  }
};

// Standard bias-corrected ADAM; epsilon sits outside the square root.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                      const TrainConfig& cfg) {
  if (!params.same_shape(grads) || !params.same_shape(state.m) || !params.same_shape(state.v)) {
    raise(ErrorKind::ShapeMismatch, "adam_step: parameter/gradient shapes disagree");
  }
  state.step += 1;
  const double b1t = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double b2t = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  auto pb = params.blocks();
  auto mb = state.m.blocks();
  auto vb = state.v.blocks();
  auto gb = grads.blocks();
  for (std::size_t b = 0; b < pb.size(); ++b) {
    auto& p = *pb[b].data;
    auto& m = *mb[b].data;
    auto& v = *vb[b].data;
    const auto& g = *gb[b].data;
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
      v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
      const double mhat = m[i] / b1t;
      const double vhat = v[i] / b2t;
      p[i] -= cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.eps);
    }
  }
}

namespace detail {

// Head forward/backward shared by every model kind. The MAE subgradient at a
// zero residual is 0, as is relu's at its kink.
inline double sign_or_zero(double r) { return r > 0.0 ? 1.0 : (r < 0.0 ? -1.0 : 0.0); }

struct HeadPull {
  double d_embedding_scale_g;  // multiply w_g to get dL/dh contribution
  double d_embedding_scale_p;  // multiply w_p to get dL/dh contribution
};

inline double head_forward(const ModelParams& params, std::span<const double> h, double c,
                           double* pre_g_out, double* pre_p_out) {
  const double pre_g = dot(params.w_g, h);
  const double pre_p = dot(params.w_p, h);
  if (pre_g_out) *pre_g_out = pre_g;
  if (pre_p_out) *pre_p_out = pre_p;
  return c * softplus(pre_g) + relu(pre_p);
}

}  // namespace detail

struct BatchEval {
  double loss = 0.0;
  ModelParams grads;
};

// Mean absolute error over the batch. Labels are used as given; any transform
// is the caller's concern.
inline double batch_loss(const TransactionGraph& graph, const ModelConfig& cfg,
                         const ModelParams& params, std::span<const LabeledSample> batch,
                         std::uint64_t seed) {
  if (batch.empty()) raise(ErrorKind::EmptyBatch, "batch_loss needs at least one sample");
  double loss = 0.0;
  if (cfg.kind == ModelKind::Ge) {
    std::vector<NodeId> targets;
    targets.reserve(batch.size());
    for (const auto& s : batch) targets.push_back(s.merchant);
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    const auto fwd = detail::graph_forward(graph, cfg, params, targets, seed);
    for (const auto& s : batch) {
      const auto row = detail::position_of(fwd.level_nodes[cfg.depth], s.merchant);
      const double f =
          detail::head_forward(params, fwd.h[cfg.depth].row(static_cast<int>(row)), s.treatment,
                               nullptr, nullptr);
      loss += std::abs(f - s.objective);
    }
  } else {
    for (const auto& s : batch) {
      const auto fwd = detail::dense_forward(cfg, params, graph.node_feature_row(s.merchant));
      const double f = detail::head_forward(params, fwd.h.back(), s.treatment, nullptr, nullptr);
      loss += std::abs(f - s.objective);
    }
  }
  loss /= static_cast<double>(batch.size());
  if (!std::isfinite(loss)) raise(ErrorKind::NonFinite, "loss is not finite");
  return loss;
}

// Exact reverse-mode gradient of the batch MAE with respect to every
// parameter block.
inline BatchEval loss_and_grads(const TransactionGraph& graph, const ModelConfig& cfg,
                                const ModelParams& params, std::span<const LabeledSample> batch,
                                std::uint64_t seed) {
  if (batch.empty()) raise(ErrorKind::EmptyBatch, "loss_and_grads needs at least one sample");
  BatchEval out;
  out.grads = make_zero_params(cfg);
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  const int k_dim = cfg.width;

  if (cfg.kind == ModelKind::Ge) {
    std::vector<NodeId> targets;
    targets.reserve(batch.size());
    for (const auto& s : batch) targets.push_back(s.merchant);
    std::sort(targets.begin(), targets.end());
    targets.erase(std::unique(targets.begin(), targets.end()), targets.end());
    const auto fwd = detail::graph_forward(graph, cfg, params, targets, seed);
    Matrix d_top(static_cast<int>(fwd.level_nodes[cfg.depth].size()), k_dim);
    for (const auto& s : batch) {
      const auto row = detail::position_of(fwd.level_nodes[cfg.depth], s.merchant);
      auto h = fwd.h[cfg.depth].row(static_cast<int>(row));
      double pre_g, pre_p;
      const double f = detail::head_forward(params, h, s.treatment, &pre_g, &pre_p);
      const double r = f - s.objective;
      out.loss += std::abs(r) * inv_b;
      const double df = detail::sign_or_zero(r) * inv_b;
      const double d_pre_g = df * s.treatment * sigmoid(pre_g);
      const double d_pre_p = pre_p > 0.0 ? df : 0.0;
      auto dh = d_top.row(static_cast<int>(row));
      for (int k = 0; k < k_dim; ++k) {
        out.grads.w_g[k] += d_pre_g * h[k];
        out.grads.w_p[k] += d_pre_p * h[k];
        dh[k] += d_pre_g * params.w_g[k] + d_pre_p * params.w_p[k];
      }
    }
    detail::graph_backward(graph, cfg, params, fwd, std::move(d_top), out.grads);
  } else {
    std::vector<double> dh(k_dim);
    for (const auto& s : batch) {
      auto x = graph.node_feature_row(s.merchant);
      const auto fwd = detail::dense_forward(cfg, params, x);
      const auto& h = fwd.h.back();
      double pre_g, pre_p;
      const double f = detail::head_forward(params, h, s.treatment, &pre_g, &pre_p);
      const double r = f - s.objective;
      out.loss += std::abs(r) * inv_b;
      const double df = detail::sign_or_zero(r) * inv_b;
      const double d_pre_g = df * s.treatment * sigmoid(pre_g);
      const double d_pre_p = pre_p > 0.0 ? df : 0.0;
      for (int k = 0; k < k_dim; ++k) {
        out.grads.w_g[k] += d_pre_g * h[k];
        out.grads.w_p[k] += d_pre_p * h[k];
        dh[k] = d_pre_g * params.w_g[k] + d_pre_p * params.w_p[k];
      }
      detail::dense_backward(cfg, params, fwd, x, dh, out.grads);
    }
  }

  if (!std::isfinite(out.loss)) raise(ErrorKind::NonFinite, "loss is not finite");
  for (auto& blk : out.grads.blocks()) {
    if (!all_finite(*blk.data)) {
      raise(ErrorKind::NonFinite, "gradient block " + blk.name + " is not finite");
    }
  }
  return out;
}

// Central finite-difference audit of loss_and_grads. Coordinates whose +/-h
// interval straddles a kink of the piecewise-smooth loss (detected by the
// second difference) are excluded from the comparison and counted instead.
struct GradReport {
  struct Block {
    std::string name;
    double max_rel_err = 0.0;
    int checked = 0;
    int skipped_kinks = 0;
  };
  std::vector<Block> blocks;

  double max_rel_err() const {
    double m = 0.0;
    for (const auto& b : blocks) m = std::max(m, b.max_rel_err);
    return m;
  }
};

inline GradReport grad_check(const TransactionGraph& graph, const ModelConfig& cfg,
                             const ModelParams& params, std::span<const LabeledSample> batch,
                             double h, std::uint64_t seed, int max_coords_per_block = 200) {
  if (!(h > 0.0)) raise(ErrorKind::InvalidConfig, "grad_check step must be > 0");
  BatchEval analytic = loss_and_grads(graph, cfg, params, batch, seed);
  const double loss0 = analytic.loss;
  ModelParams work = params;
  auto work_blocks = work.blocks();
  auto grad_blocks = analytic.grads.blocks();

  // A kink inside [x-h, x+h] makes the second central difference O(h) instead
  // of O(h^2); h^1.5 separates the two regimes.
  const double kink_threshold = std::pow(h, 1.5) * std::max(1.0, std::abs(loss0));
  constexpr double kRelFloor = 1e-4;

  GradReport report;
  for (std::size_t b = 0; b < work_blocks.size(); ++b) {
    auto& blk = work_blocks[b];
    const auto& g = *grad_blocks[b].data;
    GradReport::Block rb;
    rb.name = blk.name;
    const std::size_t n = blk.data->size();
    std::vector<std::size_t> coords(n);
    for (std::size_t i = 0; i < n; ++i) coords[i] = i;
    if (n > static_cast<std::size_t>(max_coords_per_block)) {
      Rng rng(mix_seed(seed, 0xC0DE, b));
      for (int k = 0; k < max_coords_per_block; ++k) {
        const std::size_t j = k + rng.below(n - k);
        std::swap(coords[k], coords[j]);
      }
      coords.resize(max_coords_per_block);
    }
    for (std::size_t i : coords) {
      double& w = (*blk.data)[i];
      const double saved = w;
      w = saved + h;
      const double lp = batch_loss(graph, cfg, work, batch, seed);
      w = saved - h;
      const double lm = batch_loss(graph, cfg, work, batch, seed);
      w = saved;
      if (std::abs(lp + lm - 2.0 * loss0) > kink_threshold) {
        ++rb.skipped_kinks;
        continue;
      }
      const double numeric = (lp - lm) / (2.0 * h);
      const double rel =
          std::abs(g[i] - numeric) / std::max({std::abs(g[i]), std::abs(numeric), kRelFloor});
      rb.max_rel_err = std::max(rb.max_rel_err, rel);
      ++rb.checked;
    }
    report.blocks.push_back(std::move(rb));
  }
  return report;
}

struct EpochStats {
  int epoch;
  double train_mae;
  double val_mae;
};

// Embedding seed used for validation predictions; fixed per training seed so
// epoch-to-epoch validation losses are comparable and reproducible offline.
inline std::uint64_t validation_seed(std::uint64_t train_seed) {
  return mix_seed(train_seed, 0x7A1ULL);
}

// Everything needed to reproduce and resume a training run.
struct Checkpoint {
  int format_version = kCheckpointFormatVersion;
  ModelConfig model;
  TrainConfig train;
  TransformStats transform;
  ModelParams params;
  AdamState adam;
  std::string config_hash;
  int best_epoch = 0;
  double best_val_mae = 0.0;
};

struct FitResult {
  Checkpoint checkpoint;
  std::vector<EpochStats> history;
};

namespace detail {

inline std::string hash_configs(const ModelConfig& m, const TrainConfig& t);

// Model-scale predictions for a set of samples with a fixed embedding seed.
inline std::vector<double> predict_samples(const TransactionGraph& graph, const ModelConfig& cfg,
                                           const ModelParams& params,
                                           std::span<const LabeledSample> samples,
                                           std::uint64_t seed) {
  std::vector<double> preds(samples.size());
  if (cfg.kind == ModelKind::Ge) {
    std::vector<NodeId> targets(samples.size());
    for (std::size_t i = 0; i < samples.size(); ++i) targets[i] = samples[i].merchant;
    const Matrix h = embed(graph, cfg, params, targets, seed);
    for (std::size_t i = 0; i < samples.size(); ++i) {
      preds[i] = head_forward(params, h.row(static_cast<int>(i)), samples[i].treatment, nullptr,
                              nullptr);
    }
  } else {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto fwd = dense_forward(cfg, params, graph.node_feature_row(samples[i].merchant));
      preds[i] = head_forward(params, fwd.h.back(), samples[i].treatment, nullptr, nullptr);
    }
  }
  return preds;
}

}  // namespace detail

// Splits merchants (not samples) into train/validation so no merchant leaks
// across the split. Returns the two sorted merchant id sets.
inline std::pair<std::vector<NodeId>, std::vector<NodeId>> split_merchants(
    std::span<const LabeledSample> samples, double train_fraction, std::uint64_t seed) {
  std::vector<NodeId> ids;
  ids.reserve(samples.size());
  for (const auto& s : samples) ids.push_back(s.merchant);
  std::sort(ids.begin(), ids.end());
  ids.erase(std::unique(ids.begin(), ids.end()), ids.end());
  if (ids.size() < 2) {
    raise(ErrorKind::InsufficientData, "need at least 2 distinct merchants to split");
  }
  Rng rng(mix_seed(seed, 0x59117ULL));
  for (std::size_t i = ids.size() - 1; i > 0; --i) {
    const std::size_t j = rng.below(i + 1);
    std::swap(ids[i], ids[j]);
  }
  const auto n = ids.size();
  std::size_t n_train = static_cast<std::size_t>(std::llround(train_fraction * n));
  n_train = std::clamp<std::size_t>(n_train, 1, n - 1);
  std::vector<NodeId> train(ids.begin(), ids.begin() + n_train);
  std::vector<NodeId> val(ids.begin() + n_train, ids.end());
  std::sort(train.begin(), train.end());
  std::sort(val.begin(), val.end());
  return {std::move(train), std::move(val)};
}

// End-to-end fitting: transformed labels, shuffled mini-batches, ADAM, early
// stopping on validation MAE, best-validation checkpoint returned.
inline FitResult fit(const TransactionGraph& graph, std::span<const LabeledSample> samples,
                     const ModelConfig& model_cfg, const TrainConfig& train_cfg) {
  model_cfg.validate();
  train_cfg.validate();
  if (samples.size() < 2) {
    raise(ErrorKind::InsufficientData, "need at least 2 labeled samples");
  }

  const auto [train_ids, val_ids] =
      split_merchants(samples, train_cfg.train_fraction, train_cfg.seed);
  auto in_set = [](const std::vector<NodeId>& sorted, NodeId v) {
    return std::binary_search(sorted.begin(), sorted.end(), v);
  };

  std::vector<LabeledSample> train_samples, val_samples;
  for (const auto& s : samples) {
    (in_set(train_ids, s.merchant) ? train_samples : val_samples).push_back(s);
  }

  std::vector<double> train_labels;
  train_labels.reserve(train_samples.size());
  for (const auto& s : train_samples) train_labels.push_back(s.objective);
  const TransformStats transform = TransformStats::fit(train_cfg.label_transform, train_labels);
  for (auto& s : train_samples) s.objective = transform.apply(s.objective);
  for (auto& s : val_samples) s.objective = transform.apply(s.objective);

  ModelParams params = init_params(model_cfg, train_cfg.seed);
  AdamState adam = AdamState::zeros_like(model_cfg);
  const std::uint64_t val_seed = validation_seed(train_cfg.seed);

  auto val_mae = [&](const ModelParams& p) {
    if (val_samples.empty()) return 0.0;
    const auto preds = detail::predict_samples(graph, model_cfg, p, val_samples, val_seed);
    double s = 0.0;
    for (std::size_t i = 0; i < preds.size(); ++i) s += std::abs(preds[i] - val_samples[i].objective);
    return s / static_cast<double>(preds.size());
  };

  FitResult result;
  ModelParams best_params = params;
  AdamState best_adam = adam;
  int best_epoch = 0;
  double best_val = train_cfg.epochs > 0 ? val_mae(params) : 0.0;

  std::vector<std::size_t> order(train_samples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  TrainConfig step_cfg = train_cfg;
  for (int epoch = 1; epoch <= train_cfg.epochs; ++epoch) {
    Rng shuffle_rng(mix_seed(train_cfg.seed, 0xE60C4ULL, static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size() - 1; i > 0; --i) {
      const std::size_t j = shuffle_rng.below(i + 1);
      std::swap(order[i], order[j]);
    }
    double epoch_loss = 0.0;
    std::size_t seen = 0;
    std::vector<LabeledSample> batch;
    std::size_t batch_index = 0;
    for (std::size_t at = 0; at < order.size(); at += train_cfg.batch_size, ++batch_index) {
      const std::size_t end = std::min(order.size(), at + train_cfg.batch_size);
      batch.clear();
      for (std::size_t i = at; i < end; ++i) batch.push_back(train_samples[order[i]]);
      const std::uint64_t batch_seed =
          mix_seed(train_cfg.seed, static_cast<std::uint64_t>(epoch), batch_index);
      BatchEval eval = loss_and_grads(graph, model_cfg, params, batch, batch_seed);
      adam_step(params, eval.grads, adam, step_cfg);
      epoch_loss += eval.loss * static_cast<double>(batch.size());
      seen += batch.size();
    }
    step_cfg.learning_rate *= train_cfg.lr_decay;
    const double train_mae = seen > 0 ? epoch_loss / static_cast<double>(seen) : 0.0;
    const double vmae = val_mae(params);
    result.history.push_back(EpochStats{epoch, train_mae, vmae});
    if (vmae < best_val) {
      best_val = vmae;
      best_params = params;
      best_adam = adam;
      best_epoch = epoch;
    }
    if (epoch - best_epoch >= train_cfg.patience) break;
  }

  Checkpoint ckpt;
  ckpt.model = model_cfg;
  ckpt.train = train_cfg;
  ckpt.transform = transform;
  ckpt.params = std::move(best_params);
  ckpt.adam = std::move(best_adam);
  ckpt.config_hash = detail::hash_configs(model_cfg, train_cfg);
  ckpt.best_epoch = best_epoch;
  ckpt.best_val_mae = best_val;
  result.checkpoint = std::move(ckpt);
  return result;
}

// Per-merchant curves for inference/allocation. Fixed-size chunks keep the
// output identical for any thread count.
inline std::vector<MerchantCurve> infer_curves(const TransactionGraph& graph,
                                               const ModelConfig& cfg, const ModelParams& params,
                                               std::span<const NodeId> merchants,
                                               std::uint64_t seed, int threads = 1) {
  std::vector<MerchantCurve> out(merchants.size());
  parallel_chunks(merchants.size(), 512, threads, [&](std::size_t lo, std::size_t hi) {
    const Matrix h = embed(graph, cfg, params, merchants.subspan(lo, hi - lo), seed);
    for (std::size_t i = lo; i < hi; ++i) {
      out[i] = curve(h.row(static_cast<int>(i - lo)), params);
    }
  });
  return out;
}

namespace detail {

inline std::string hash_configs(const ModelConfig& m, const TrainConfig& t) {
  std::string canon;
  canon += "kind=";
  canon += to_string(m.kind);
  canon += ";depth=" + std::to_string(m.depth);
  canon += ";width=" + std::to_string(m.width);
  canon += ";input_dim=" + std::to_string(m.input_dim);
  canon += ";edge_dim=" + std::to_string(m.edge_dim);
  canon += ";fanouts=";
  for (int f : m.fanouts) canon += std::to_string(f) + ",";
  canon += ";aggregator=";
  canon += to_string(m.aggregator);
  canon += ";activation=";
  canon += to_string(m.activation);
  canon += ";lr=" + std::to_string(t.learning_rate);
  canon += ";beta1=" + std::to_string(t.beta1);
  canon += ";beta2=" + std::to_string(t.beta2);
  canon += ";eps=" + std::to_string(t.eps);
  canon += ";batch=" + std::to_string(t.batch_size);
  canon += ";epochs=" + std::to_string(t.epochs);
  canon += ";lr_decay=" + std::to_string(t.lr_decay);
  canon += ";transform=";
  canon += to_string(t.label_transform);
  canon += ";fraction=" + std::to_string(t.train_fraction);
  canon += ";patience=" + std::to_string(t.patience);
  canon += ";seed=" + std::to_string(t.seed);
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx",
                static_cast<unsigned long long>(fnv1a64(canon)));
  return std::string(buf);
}

}  // namespace detail

}  // namespace incopt
