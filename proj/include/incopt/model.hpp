#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "incopt/errors.hpp"
#include "incopt/graph.hpp"
#include "incopt/matrix.hpp"
#include "incopt/rng.hpp"

namespace incopt {

enum class ModelKind { Ge, Mlp, Linear };
enum class Aggregator { Mean, Attention };
enum class Activation { Relu, Tanh, Identity };

inline const char* to_string(ModelKind k) {
  switch (k) {
    case ModelKind::Ge: return "ge";
    case ModelKind::Mlp: return "mlp";
    case ModelKind::Linear: return "linear";
  }
  return "?";
}
inline const char* to_string(Aggregator a) {
  return a == Aggregator::Mean ? "mean" : "attention";
}
inline const char* to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Tanh: return "tanh";
    case Activation::Identity: return "identity";
  }
  return "?";
}

struct ModelConfig {
  ModelKind kind = ModelKind::Ge;
  int depth = 2;               // T: graph layers (ge) or hidden layers (mlp)
  int width = 16;              // K: embedding dimension
  int input_dim = 0;           // P, from the graph
  int edge_dim = 0;            // D, from the graph (ge only)
  std::vector<int> fanouts{10, 10};  // per-hop neighbor caps, |fanouts| == depth
  Aggregator aggregator = Aggregator::Mean;
  Activation activation = Activation::Relu;

  int layer_count() const { return kind == ModelKind::Linear ? 0 : depth; }

  void validate() const {
    auto bad = [](const std::string& msg) { raise(ErrorKind::InvalidConfig, msg); };
    if (width < 1) bad("width must be >= 1");
    if (input_dim < 1) bad("input_dim must be >= 1");
    if (kind != ModelKind::Linear && depth < 1) bad("depth must be >= 1");
    if (kind == ModelKind::Ge) {
      if (edge_dim < 0) bad("edge_dim must be >= 0");
      if (static_cast<int>(fanouts.size()) != depth) bad("|fanouts| must equal depth");
      for (int f : fanouts) {
        if (f < 1) bad("fanouts must be >= 1");
      }
    }
  }
};

// Every learnable block. Which blocks are populated depends on ModelKind:
//   ge:     w_x, w_e, w_layer[0..T), theta[0..T) when attention, w_g, w_p
//   mlp:    w_x, w_layer[0..T), w_g, w_p
//   linear: w_x, w_g, w_p
struct ModelParams {
  Matrix w_x;                         // P x K input projection
  Matrix w_e;                         // D x K edge-feature projection
  std::vector<Matrix> w_layer;        // K x K per layer
  std::vector<std::vector<double>> theta;  // K attention score vector per layer
  std::vector<double> w_g;            // K -> curve gradient
  std::vector<double> w_p;            // K -> curve intercept

  struct BlockRef {
    std::string name;
    std::vector<double>* data;
    int rows;
    int cols;
  };
  struct ConstBlockRef {
    std::string name;
    const std::vector<double>* data;
    int rows;
    int cols;
  };

  std::vector<BlockRef> blocks() {
    std::vector<BlockRef> out;
    if (!w_x.empty()) out.push_back({"w_x", &w_x.a, w_x.rows, w_x.cols});
    if (!w_e.empty()) out.push_back({"w_e", &w_e.a, w_e.rows, w_e.cols});
    for (std::size_t t = 0; t < w_layer.size(); ++t) {
      out.push_back({"w_layer." + std::to_string(t), &w_layer[t].a, w_layer[t].rows,
                     w_layer[t].cols});
    }
    for (std::size_t t = 0; t < theta.size(); ++t) {
      out.push_back({"theta." + std::to_string(t), &theta[t], static_cast<int>(theta[t].size()), 1});
    }
    out.push_back({"w_g", &w_g, static_cast<int>(w_g.size()), 1});
    out.push_back({"w_p", &w_p, static_cast<int>(w_p.size()), 1});
    return out;
  }

  std::vector<ConstBlockRef> blocks() const {
    std::vector<ConstBlockRef> out;
    for (const auto& b : const_cast<ModelParams*>(this)->blocks()) {
      out.push_back({b.name, b.data, b.rows, b.cols});
    }
    return out;
  }

  bool same_shape(const ModelParams& o) const {
    if (!w_x.same_shape(o.w_x) || !w_e.same_shape(o.w_e)) return false;
    if (w_layer.size() != o.w_layer.size() || theta.size() != o.theta.size()) return false;
    for (std::size_t t = 0; t < w_layer.size(); ++t) {
      if (!w_layer[t].same_shape(o.w_layer[t])) return false;
    }
    for (std::size_t t = 0; t < theta.size(); ++t) {
      if (theta[t].size() != o.theta[t].size()) return false;
    }
    return w_g.size() == o.w_g.size() && w_p.size() == o.w_p.size();
  }
};

inline ModelParams make_zero_params(const ModelConfig& cfg) {
  cfg.validate();
  ModelParams p;
  p.w_x = Matrix(cfg.input_dim, cfg.width);
  if (cfg.kind == ModelKind::Ge && cfg.edge_dim > 0) p.w_e = Matrix(cfg.edge_dim, cfg.width);
  for (int t = 0; t < cfg.layer_count(); ++t) p.w_layer.emplace_back(cfg.width, cfg.width);
  if (cfg.kind == ModelKind::Ge && cfg.aggregator == Aggregator::Attention) {
    p.theta.assign(cfg.depth, std::vector<double>(cfg.width, 0.0));
  }
  p.w_g.assign(cfg.width, 0.0);
  p.w_p.assign(cfg.width, 0.0);
  return p;
}

// Glorot-uniform init: entries ~ U(-a, a) with a = sqrt(6/(fan_in+fan_out)).
inline ModelParams init_params(const ModelConfig& cfg, std::uint64_t seed) {
  ModelParams p = make_zero_params(cfg);
  Rng rng(mix_seed(seed, 0x1417ULL));
  for (auto& blk : p.blocks()) {
    const double a = std::sqrt(6.0 / (blk.rows + blk.cols));
    for (double& w : *blk.data) w = rng.uniform(-a, a);
  }
  return p;
}

inline double relu(double x) { return x > 0.0 ? x : 0.0; }
inline double sigmoid(double x) {
  return x >= 0.0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x));
}
// Overflow-safe softplus: max(x,0) + log1p(exp(-|x|)).
inline double softplus(double x) { return std::max(x, 0.0) + std::log1p(std::exp(-std::abs(x))); }

inline double activate(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return relu(x);
    case Activation::Tanh: return std::tanh(x);
    case Activation::Identity: return x;
  }
  return x;
}

// Derivative expressed through the activated value h = act(x). For relu the
// subgradient at the kink is 0 (h == 0 there).
inline double activate_grad_from_value(Activation a, double h) {
  switch (a) {
    case Activation::Relu: return h > 0.0 ? 1.0 : 0.0;
    case Activation::Tanh: return 1.0 - h * h;
    case Activation::Identity: return 1.0;
  }
  return 1.0;
}

// Per-merchant objective-incentive curve f(c) = gradient * c + intercept.
// softplus keeps the gradient strictly positive, relu the intercept >= 0, so
// the map from treatment to objective is monotone increasing by construction.
struct MerchantCurve {
  double gradient;
  double intercept;
};

inline MerchantCurve curve(std::span<const double> h, const ModelParams& params) {
  if (h.size() != params.w_g.size()) {
    raise(ErrorKind::ShapeMismatch, "embedding size does not match head weights");
  }
  if (!all_finite(h)) raise(ErrorKind::NonFinite, "embedding contains NaN or Inf");
  return MerchantCurve{softplus(dot(params.w_g, h)), relu(dot(params.w_p, h))};
}

inline double predict(const MerchantCurve& c, double treatment) {
  if (treatment < 0.0) raise(ErrorKind::NegativeTreatment, "treatment must be >= 0");
  return c.gradient * treatment + c.intercept;
}

namespace detail {

// Sampled multi-hop computation graph plus all forward values needed for the
// backward pass. level_nodes[t] are the nodes whose h^(t) is computed, sorted
// ascending; level T holds the (deduplicated) targets.
struct GraphForward {
  std::vector<std::vector<NodeId>> level_nodes;  // [0..T]
  std::vector<Matrix> h;                         // [0..T], rows match level_nodes
  std::vector<Matrix> agg;                       // [1..T] aggregated phi outputs
  struct LevelChildren {
    std::vector<std::uint32_t> offsets;    // per parent, into child_pos
    std::vector<std::uint32_t> child_pos;  // positions into level t-1
    std::vector<double> attn;              // softmax weights, parallel to child_pos
  };
  std::vector<LevelChildren> children;  // [1..T]
  std::vector<std::uint32_t> target_rows;  // row in level T per requested target
};

inline std::uint32_t position_of(const std::vector<NodeId>& sorted, NodeId v) {
  return static_cast<std::uint32_t>(
      std::lower_bound(sorted.begin(), sorted.end(), v) - sorted.begin());
}

// h^(0)_v = W_x^T X_v + W_e^T sum_j Z_(v,j); no activation on the input
// projection.
inline void input_projection(const TransactionGraph& graph, const ModelParams& params,
                             NodeId v, std::span<double> out) {
  const int k_dim = static_cast<int>(out.size());
  auto x = graph.node_feature_row(v);
  for (int k = 0; k < k_dim; ++k) {
    double s = 0.0;
    for (int p = 0; p < params.w_x.rows; ++p) s += params.w_x(p, k) * x[p];
    out[k] = s;
  }
  if (!params.w_e.empty()) {
    auto z_sum = graph.edge_feature_sum(v);
    for (int k = 0; k < k_dim; ++k) {
      double s = 0.0;
      for (int d = 0; d < params.w_e.rows; ++d) s += params.w_e(d, k) * z_sum[d];
      out[k] += s;
    }
  }
}

inline GraphForward graph_forward(const TransactionGraph& graph, const ModelConfig& cfg,
                                  const ModelParams& params, std::span<const NodeId> targets,
                                  std::uint64_t seed) {
  const int t_depth = cfg.depth;
  const int k_dim = cfg.width;
  GraphForward f;
  f.level_nodes.resize(t_depth + 1);
  f.children.resize(t_depth + 1);

  for (NodeId v : targets) {
    if (v >= graph.node_count()) {
      raise(ErrorKind::OutOfRange, "embed target " + std::to_string(v) + " out of range");
    }
  }
  std::vector<NodeId> tops(targets.begin(), targets.end());
  std::sort(tops.begin(), tops.end());
  tops.erase(std::unique(tops.begin(), tops.end()), tops.end());
  f.level_nodes[t_depth] = std::move(tops);

  // Walk down the hops: the children of a node at level t live at level t-1.
  // Per-level sampling seeds are derived from (seed, hop) so a node drawn at
  // two different hops sees independent subsets.
  std::vector<std::vector<NodeId>> child_ids_per_level(t_depth + 1);
  for (int t = t_depth; t >= 1; --t) {
    const std::uint64_t hop_seed = mix_seed(seed, 0xF0A0ULL + static_cast<std::uint64_t>(t));
    auto& lc = f.children[t];
    auto& flat_children = child_ids_per_level[t];
    lc.offsets.reserve(f.level_nodes[t].size() + 1);
    lc.offsets.push_back(0);
    std::vector<NodeId> next;
    for (NodeId v : f.level_nodes[t]) {
      const auto sampled = graph.sample_neighbors(v, cfg.fanouts[t - 1], hop_seed);
      // child set = {v} U sampled, ascending (no self-loops, so v is absent
      // from the neighbor list).
      bool self_added = false;
      for (const Neighbor& nb : sampled) {
        if (!self_added && v < nb.node) {
          flat_children.push_back(v);
          self_added = true;
        }
        flat_children.push_back(nb.node);
      }
      if (!self_added) flat_children.push_back(v);
      lc.offsets.push_back(static_cast<std::uint32_t>(flat_children.size()));
      next.insert(next.end(), flat_children.begin() + lc.offsets[lc.offsets.size() - 2],
                  flat_children.end());
    }
    std::sort(next.begin(), next.end());
    next.erase(std::unique(next.begin(), next.end()), next.end());
    f.level_nodes[t - 1] = std::move(next);
  }

  // Resolve child node ids to row positions now that levels are final.
  for (int t = 1; t <= t_depth; ++t) {
    auto& lc = f.children[t];
    const auto& ids = child_ids_per_level[t];
    lc.child_pos.resize(ids.size());
    for (std::size_t i = 0; i < ids.size(); ++i) {
      lc.child_pos[i] = position_of(f.level_nodes[t - 1], ids[i]);
    }
  }

  f.h.resize(t_depth + 1);
  f.agg.resize(t_depth + 1);
  f.h[0] = Matrix(static_cast<int>(f.level_nodes[0].size()), k_dim);
  for (std::size_t i = 0; i < f.level_nodes[0].size(); ++i) {
    input_projection(graph, params, f.level_nodes[0][i], f.h[0].row(static_cast<int>(i)));
  }

  std::vector<double> scores;
  for (int t = 1; t <= t_depth; ++t) {
    const auto& lc = f.children[t];
    const int rows = static_cast<int>(f.level_nodes[t].size());
    f.h[t] = Matrix(rows, k_dim);
    f.agg[t] = Matrix(rows, k_dim);
    if (cfg.aggregator == Aggregator::Attention) {
      f.children[t].attn.resize(lc.child_pos.size());
    }
    const Matrix& prev = f.h[t - 1];
    const Matrix& w = params.w_layer[t - 1];
    for (int r = 0; r < rows; ++r) {
      const std::uint32_t lo = lc.offsets[r], hi = lc.offsets[r + 1];
      auto m = f.agg[t].row(r);
      if (cfg.aggregator == Aggregator::Mean) {
        for (std::uint32_t c = lo; c < hi; ++c) {
          auto hc = prev.row(static_cast<int>(lc.child_pos[c]));
          for (int k = 0; k < k_dim; ++k) m[k] += hc[k];
        }
        const double inv = 1.0 / static_cast<double>(hi - lo);
        for (int k = 0; k < k_dim; ++k) m[k] *= inv;
      } else {
        // Single-head softmax attention scored by theta . h_child.
        scores.assign(hi - lo, 0.0);
        const auto& th = params.theta[t - 1];
        double smax = -1e300;
        for (std::uint32_t c = lo; c < hi; ++c) {
          const double s = dot(th, prev.row(static_cast<int>(lc.child_pos[c])));
          scores[c - lo] = s;
          smax = std::max(smax, s);
        }
        double z = 0.0;
        for (double& s : scores) {
          s = std::exp(s - smax);
          z += s;
        }
        for (std::uint32_t c = lo; c < hi; ++c) {
          const double wgt = scores[c - lo] / z;
          f.children[t].attn[c] = wgt;
          auto hc = prev.row(static_cast<int>(lc.child_pos[c]));
          for (int k = 0; k < k_dim; ++k) m[k] += wgt * hc[k];
        }
      }
      auto hr = f.h[t].row(r);
      for (int k = 0; k < k_dim; ++k) {
        double s = 0.0;
        for (int j = 0; j < k_dim; ++j) s += w(j, k) * m[j];
        hr[k] = activate(cfg.activation, s);
      }
    }
  }

  f.target_rows.reserve(targets.size());
  for (NodeId v : targets) {
    f.target_rows.push_back(position_of(f.level_nodes[t_depth], v));
  }
  return f;
}

// Reverse-mode pass matching graph_forward. d_top rows align with
// fwd.level_nodes[T]; gradients accumulate into grads (same shapes as
// params).
inline void graph_backward(const TransactionGraph& graph, const ModelConfig& cfg,
                           const ModelParams& params, const GraphForward& fwd, Matrix d_top,
                           ModelParams& grads) {
  const int t_depth = cfg.depth;
  const int k_dim = cfg.width;
  Matrix d_cur = std::move(d_top);
  std::vector<double> da(k_dim), dm(k_dim), dwc;
  for (int t = t_depth; t >= 1; --t) {
    const auto& lc = fwd.children[t];
    Matrix d_prev(static_cast<int>(fwd.level_nodes[t - 1].size()), k_dim);
    const Matrix& w = params.w_layer[t - 1];
    Matrix& dw = grads.w_layer[t - 1];
    for (int r = 0; r < d_cur.rows; ++r) {
      auto dh = d_cur.row(r);
      auto hv = fwd.h[t].row(r);
      for (int k = 0; k < k_dim; ++k) {
        da[k] = dh[k] * activate_grad_from_value(cfg.activation, hv[k]);
      }
      auto m = fwd.agg[t].row(r);
      // a = W^T m: dW[j][k] += m[j] da[k]; dm[j] = sum_k W[j][k] da[k]
      for (int j = 0; j < k_dim; ++j) {
        const double mj = m[j];
        double s = 0.0;
        for (int k = 0; k < k_dim; ++k) {
          dw(j, k) += mj * da[k];
          s += w(j, k) * da[k];
        }
        dm[j] = s;
      }
      const std::uint32_t lo = lc.offsets[r], hi = lc.offsets[r + 1];
      if (cfg.aggregator == Aggregator::Mean) {
        const double inv = 1.0 / static_cast<double>(hi - lo);
        for (std::uint32_t c = lo; c < hi; ++c) {
          auto dp = d_prev.row(static_cast<int>(lc.child_pos[c]));
          for (int k = 0; k < k_dim; ++k) dp[k] += inv * dm[k];
        }
      } else {
        const auto& th = params.theta[t - 1];
        auto& dth = grads.theta[t - 1];
        dwc.assign(hi - lo, 0.0);
        double mix = 0.0;
        for (std::uint32_t c = lo; c < hi; ++c) {
          const double g = dot(dm, fwd.h[t - 1].row(static_cast<int>(lc.child_pos[c])));
          dwc[c - lo] = g;
          mix += lc.attn[c] * g;
        }
        for (std::uint32_t c = lo; c < hi; ++c) {
          const double wgt = lc.attn[c];
          const double ds = wgt * (dwc[c - lo] - mix);  // softmax jacobian
          auto hc = fwd.h[t - 1].row(static_cast<int>(lc.child_pos[c]));
          auto dp = d_prev.row(static_cast<int>(lc.child_pos[c]));
          for (int k = 0; k < k_dim; ++k) {
            dth[k] += ds * hc[k];
            dp[k] += wgt * dm[k] + ds * th[k];
          }
        }
      }
    }
    d_cur = std::move(d_prev);
  }

  // Input projection: dW_x += X_v outer dh0, dW_e += (sum Z) outer dh0.
  for (int r = 0; r < d_cur.rows; ++r) {
    const NodeId v = fwd.level_nodes[0][r];
    auto dh = d_cur.row(r);
    auto x = graph.node_feature_row(v);
    for (int p = 0; p < grads.w_x.rows; ++p) {
      const double xp = x[p];
      if (xp == 0.0) continue;
      for (int k = 0; k < k_dim; ++k) grads.w_x(p, k) += xp * dh[k];
    }
    if (!grads.w_e.empty()) {
      auto z = graph.edge_feature_sum(v);
      for (int d = 0; d < grads.w_e.rows; ++d) {
        const double zd = z[d];
        if (zd == 0.0) continue;
        for (int k = 0; k < k_dim; ++k) grads.w_e(d, k) += zd * dh[k];
      }
    }
  }
}

// Dense path shared by the mlp and linear baselines: the same input
// projection and layer stack, just with a singleton "neighborhood".
struct DenseForward {
  std::vector<std::vector<double>> h;  // [0..layer_count]
};

inline DenseForward dense_forward(const ModelConfig& cfg, const ModelParams& params,
                                  std::span<const double> x) {
  if (static_cast<int>(x.size()) != cfg.input_dim) {
    raise(ErrorKind::ShapeMismatch, "feature vector size does not match input_dim");
  }
  DenseForward f;
  const int k_dim = cfg.width;
  std::vector<double> h0(k_dim, 0.0);
  for (int k = 0; k < k_dim; ++k) {
    double s = 0.0;
    for (int p = 0; p < cfg.input_dim; ++p) s += params.w_x(p, k) * x[p];
    h0[k] = s;
  }
  f.h.push_back(std::move(h0));
  for (int t = 0; t < cfg.layer_count(); ++t) {
    const Matrix& w = params.w_layer[t];
    std::vector<double> h(k_dim, 0.0);
    for (int k = 0; k < k_dim; ++k) {
      double s = 0.0;
      for (int j = 0; j < k_dim; ++j) s += w(j, k) * f.h.back()[j];
      h[k] = activate(cfg.activation, s);
    }
    f.h.push_back(std::move(h));
  }
  return f;
}

inline void dense_backward(const ModelConfig& cfg, const ModelParams& params,
                           const DenseForward& fwd, std::span<const double> x,
                           std::vector<double> d_top, ModelParams& grads) {
  const int k_dim = cfg.width;
  std::vector<double> d_cur = std::move(d_top);
  for (int t = cfg.layer_count() - 1; t >= 0; --t) {
    const auto& hv = fwd.h[t + 1];
    const auto& m = fwd.h[t];
    const Matrix& w = params.w_layer[t];
    Matrix& dw = grads.w_layer[t];
    std::vector<double> da(k_dim), dm(k_dim, 0.0);
    for (int k = 0; k < k_dim; ++k) {
      da[k] = d_cur[k] * activate_grad_from_value(cfg.activation, hv[k]);
    }
    for (int j = 0; j < k_dim; ++j) {
      double s = 0.0;
      for (int k = 0; k < k_dim; ++k) {
        dw(j, k) += m[j] * da[k];
        s += w(j, k) * da[k];
      }
      dm[j] = s;
    }
    d_cur = std::move(dm);
  }
  for (int p = 0; p < grads.w_x.rows; ++p) {
    const double xp = x[p];
    if (xp == 0.0) continue;
    for (int k = 0; k < k_dim; ++k) grads.w_x(p, k) += xp * d_cur[k];
  }
}

}  // namespace detail

// Final-layer embeddings for the given targets, rows aligned with the input
// order. For the ge kind this runs the sampled multi-hop aggregation; the
// baselines embed each node from its feature row alone.
inline Matrix embed(const TransactionGraph& graph, const ModelConfig& cfg,
                    const ModelParams& params, std::span<const NodeId> targets,
                    std::uint64_t seed) {
  cfg.validate();
  if (cfg.input_dim != graph.feature_dim()) {
    raise(ErrorKind::ShapeMismatch, "model input_dim does not match graph feature dim");
  }
  Matrix out(static_cast<int>(targets.size()), cfg.width);
  if (cfg.kind == ModelKind::Ge) {
    if (cfg.edge_dim != graph.edge_feature_dim()) {
      raise(ErrorKind::ShapeMismatch, "model edge_dim does not match graph edge feature dim");
    }
    const auto fwd = detail::graph_forward(graph, cfg, params, targets, seed);
    for (std::size_t i = 0; i < targets.size(); ++i) {
      auto src = fwd.h[cfg.depth].row(static_cast<int>(fwd.target_rows[i]));
      std::copy(src.begin(), src.end(), out.row(static_cast<int>(i)).begin());
    }
  } else {
    for (std::size_t i = 0; i < targets.size(); ++i) {
      const auto fwd = detail::dense_forward(cfg, params, graph.node_feature_row(targets[i]));
      std::copy(fwd.h.back().begin(), fwd.h.back().end(), out.row(static_cast<int>(i)).begin());
    }
  }
  return out;
}

// Curve for a bare feature vector, no graph access (the LR / DNN baselines).
inline double baseline_predict(std::span<const double> features, const ModelConfig& cfg,
                               const ModelParams& params, double treatment) {
  const auto fwd = detail::dense_forward(cfg, params, features);
  return predict(curve(fwd.h.back(), params), treatment);
}

}  // namespace incopt
