#pragma once

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <utility>
#include <vector>

#include "incopt/errors.hpp"
#include "incopt/matrix.hpp"
#include "incopt/rng.hpp"
#include "incopt/tsv.hpp"

namespace incopt {

using NodeId = std::uint32_t;

enum class NodeRole : char { Merchant = 'M', Customer = 'C', Both = 'B' };

struct Neighbor {
  NodeId node;
  std::uint32_t edge;  // row into the edge-feature matrix, shared by both endpoints
};

// Raw pre-validation input for TransactionGraph::build.
struct GraphBuilder {
  std::vector<std::string> external_ids;
  std::vector<NodeRole> roles;
  std::vector<std::string> regions;  // "-" means no region label
  Matrix node_features;              // N x P
  std::vector<std::pair<NodeId, NodeId>> edges;  // one row per undirected edge
  Matrix edge_features;              // |E| x D
};

// Immutable attributed undirected payment graph. Nodes are dense 0..N-1;
// the adjacency is CSR-style, per-node neighbor lists sorted by node id.
// Read-only after construction, safe for concurrent readers.
class TransactionGraph {
 public:
  static TransactionGraph build(GraphBuilder b) {
    TransactionGraph g;
    const std::size_t n = b.external_ids.size();
    if (b.roles.size() != n || b.regions.size() != n ||
        static_cast<std::size_t>(b.node_features.rows) != n) {
      raise(ErrorKind::DimMismatch, "node table columns disagree on row count");
    }
    if (b.edge_features.rows != static_cast<int>(b.edges.size())) {
      raise(ErrorKind::DimMismatch, "edge list and edge feature rows disagree");
    }
    if (!all_finite(b.node_features)) {
      raise(ErrorKind::NonFinite, "node features contain NaN or Inf");
    }
    if (!all_finite(b.edge_features)) {
      raise(ErrorKind::NonFinite, "edge features contain NaN or Inf");
    }

    std::unordered_set<std::uint64_t> seen;
    seen.reserve(b.edges.size() * 2);
    for (const auto& [s, d] : b.edges) {
      if (s >= n || d >= n) {
        raise(ErrorKind::DanglingEndpoint,
              "edge (" + std::to_string(s) + "," + std::to_string(d) + ") references unknown node");
      }
      if (s == d) raise(ErrorKind::SelfLoop, "self-loop at node " + std::to_string(s));
      const std::uint64_t key =
          (static_cast<std::uint64_t>(std::min(s, d)) << 32) | std::max(s, d);
      if (!seen.insert(key).second) {
        raise(ErrorKind::DuplicateEdge,
              "duplicate undirected edge (" + std::to_string(s) + "," + std::to_string(d) + ")");
      }
    }

    g.external_ids_ = std::move(b.external_ids);
    g.roles_ = std::move(b.roles);
    g.node_features_ = std::move(b.node_features);
    g.edges_ = std::move(b.edges);
    g.edge_features_ = std::move(b.edge_features);

    // Intern region labels in first-appearance order; "-" stays unlabeled.
    g.region_of_.assign(n, -1);
    for (std::size_t i = 0; i < n; ++i) {
      const std::string& name = b.regions[i];
      if (name == "-") continue;
      auto it = std::find(g.region_names_.begin(), g.region_names_.end(), name);
      if (it == g.region_names_.end()) {
        g.region_names_.push_back(name);
        g.region_of_[i] = static_cast<int>(g.region_names_.size()) - 1;
      } else {
        g.region_of_[i] = static_cast<int>(it - g.region_names_.begin());
      }
    }

    // CSR adjacency, both directions of every undirected edge.
    std::vector<std::uint32_t> degree(n, 0);
    for (const auto& [s, d] : g.edges_) {
      ++degree[s];
      ++degree[d];
    }
    g.offsets_.assign(n + 1, 0);
    for (std::size_t i = 0; i < n; ++i) g.offsets_[i + 1] = g.offsets_[i] + degree[i];
    g.adjacency_.resize(g.offsets_[n]);
    std::vector<std::uint32_t> cursor(g.offsets_.begin(), g.offsets_.end() - 1);
    for (std::uint32_t e = 0; e < g.edges_.size(); ++e) {
      const auto [s, d] = g.edges_[e];
      g.adjacency_[cursor[s]++] = Neighbor{d, e};
      g.adjacency_[cursor[d]++] = Neighbor{s, e};
    }
    for (std::size_t i = 0; i < n; ++i) {
      std::sort(g.adjacency_.begin() + g.offsets_[i], g.adjacency_.begin() + g.offsets_[i + 1],
                [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; });
    }

    // Per-node sum of incident edge features, accumulated in ascending
    // neighbor order. Lets the input projection skip per-edge work.
    const int d = g.edge_features_.cols;
    g.edge_feature_sums_ = Matrix(static_cast<int>(n), d);
    for (std::size_t i = 0; i < n; ++i) {
      auto out = g.edge_feature_sums_.row(static_cast<int>(i));
      for (const Neighbor& nb : g.neighbors(static_cast<NodeId>(i))) {
        auto z = g.edge_features_.row(static_cast<int>(nb.edge));
        for (int k = 0; k < d; ++k) out[k] += z[k];
      }
    }

    g.external_to_dense_.reserve(n);
    for (std::size_t i = 0; i < n; ++i) {
      if (!g.external_to_dense_.emplace(g.external_ids_[i], static_cast<NodeId>(i)).second) {
        raise(ErrorKind::ParseError, "duplicate external node id '" + g.external_ids_[i] + "'");
      }
    }
    return g;
  }

  NodeId node_count() const { return static_cast<NodeId>(external_ids_.size()); }
  std::uint32_t edge_count() const { return static_cast<std::uint32_t>(edges_.size()); }
  int feature_dim() const { return node_features_.cols; }
  int edge_feature_dim() const { return edge_features_.cols; }

  std::span<const Neighbor> neighbors(NodeId i) const {
    check_node(i);
    return {adjacency_.data() + offsets_[i], offsets_[i + 1] - offsets_[i]};
  }

  std::uint32_t degree(NodeId i) const {
    check_node(i);
    return offsets_[i + 1] - offsets_[i];
  }

  // Uniform without-replacement subset of size fanout (all neighbors when the
  // degree is small enough). Pure function of (graph, i, fanout, seed);
  // results are returned in ascending node id.
  std::vector<Neighbor> sample_neighbors(NodeId i, int fanout, std::uint64_t seed) const {
    if (fanout < 1) raise(ErrorKind::InvalidConfig, "fanout must be >= 1");
    auto all = neighbors(i);
    if (all.size() <= static_cast<std::size_t>(fanout)) {
      return {all.begin(), all.end()};
    }
    const std::uint32_t deg = static_cast<std::uint32_t>(all.size());
    Rng rng(mix_seed(seed, i, static_cast<std::uint64_t>(fanout)));
    std::vector<std::uint32_t> idx(deg);
    for (std::uint32_t k = 0; k < deg; ++k) idx[k] = k;
    for (int k = 0; k < fanout; ++k) {
      const std::uint32_t j = k + static_cast<std::uint32_t>(rng.below(deg - k));
      std::swap(idx[k], idx[j]);
    }
    std::vector<Neighbor> out;
    out.reserve(fanout);
    for (int k = 0; k < fanout; ++k) out.push_back(all[idx[k]]);
    std::sort(out.begin(), out.end(),
              [](const Neighbor& a, const Neighbor& b) { return a.node < b.node; });
    return out;
  }

  const Matrix& node_features() const { return node_features_; }
  const Matrix& edge_features() const { return edge_features_; }
  std::span<const double> node_feature_row(NodeId i) const {
    check_node(i);
    return node_features_.row(static_cast<int>(i));
  }
  std::span<const double> edge_feature_sum(NodeId i) const {
    check_node(i);
    return edge_feature_sums_.row(static_cast<int>(i));
  }

  NodeRole role(NodeId i) const {
    check_node(i);
    return roles_[i];
  }
  int region_id(NodeId i) const {
    check_node(i);
    return region_of_[i];
  }
  const std::string& region_name(int id) const { return region_names_[id]; }
  int region_count() const { return static_cast<int>(region_names_.size()); }

  const std::string& external_id(NodeId i) const {
    check_node(i);
    return external_ids_[i];
  }
  std::optional<NodeId> find_external(const std::string& ext) const {
    auto it = external_to_dense_.find(ext);
    if (it == external_to_dense_.end()) return std::nullopt;
    return it->second;
  }

  // Dense ids of all nodes that can act as merchants, ascending.
  std::vector<NodeId> merchants() const {
    std::vector<NodeId> out;
    for (NodeId i = 0; i < node_count(); ++i) {
      if (roles_[i] == NodeRole::Merchant || roles_[i] == NodeRole::Both) out.push_back(i);
    }
    return out;
  }

  const std::vector<std::pair<NodeId, NodeId>>& edge_list() const { return edges_; }

 private:
  void check_node(NodeId i) const {
    if (i >= node_count()) {
      raise(ErrorKind::OutOfRange, "node " + std::to_string(i) + " out of range (N=" +
                                       std::to_string(node_count()) + ")");
    }
  }

  std::vector<std::string> external_ids_;
  std::vector<NodeRole> roles_;
  std::vector<int> region_of_;
  std::vector<std::string> region_names_;
  Matrix node_features_;
  std::vector<std::pair<NodeId, NodeId>> edges_;
  Matrix edge_features_;
  std::vector<std::uint32_t> offsets_;
  std::vector<Neighbor> adjacency_;
  Matrix edge_feature_sums_;
  std::unordered_map<std::string, NodeId> external_to_dense_;
};

namespace detail {

inline NodeRole parse_role(std::string_view s, const std::string& context) {
  if (s == "M") return NodeRole::Merchant;
  if (s == "C") return NodeRole::Customer;
  if (s == "B") return NodeRole::Both;
  raise(ErrorKind::ParseError, context + ": role must be M, C or B, got '" + std::string(s) + "'");
}

inline char role_char(NodeRole r) { return static_cast<char>(r); }

}  // namespace detail

// nodes.tsv: id \t role \t region \t f_1 ... f_P   (region may be "-")
// edges.tsv: src \t dst \t z_1 ... z_D              (one row per undirected edge)
inline TransactionGraph load_graph(const std::filesystem::path& node_path,
                                   const std::filesystem::path& edge_path) {
  GraphBuilder b;
  int p = -1;
  std::vector<double> xbuf;
  for_each_line(node_path, [&](std::size_t line_no, std::string_view line) {
    const std::string ctx = node_path.string() + ":" + std::to_string(line_no);
    auto f = split(line, '\t');
    if (f.size() < 3) raise(ErrorKind::ParseError, ctx + ": expected id, role, region, features");
    const int row_p = static_cast<int>(f.size()) - 3;
    if (p < 0) {
      p = row_p;
    } else if (row_p != p) {
      raise(ErrorKind::DimMismatch, ctx + ": node feature row has " + std::to_string(row_p) +
                                        " values, expected " + std::to_string(p));
    }
    b.external_ids.emplace_back(f[0]);
    b.roles.push_back(detail::parse_role(f[1], ctx));
    b.regions.emplace_back(f[2]);
    for (int k = 0; k < p; ++k) xbuf.push_back(parse_double(f[3 + k], ctx));
  });
  const int n = static_cast<int>(b.external_ids.size());
  b.node_features = Matrix(n, std::max(p, 0));
  b.node_features.a = std::move(xbuf);

  // External ids are resolved against the node table; unknown endpoints are a
  // DanglingEndpoint error even before dense validation.
  std::unordered_map<std::string_view, NodeId> lookup;
  lookup.reserve(b.external_ids.size());
  for (std::size_t i = 0; i < b.external_ids.size(); ++i) {
    lookup.emplace(b.external_ids[i], static_cast<NodeId>(i));
  }

  int d = -1;
  std::vector<double> zbuf;
  for_each_line(edge_path, [&](std::size_t line_no, std::string_view line) {
    const std::string ctx = edge_path.string() + ":" + std::to_string(line_no);
    auto f = split(line, '\t');
    if (f.size() < 2) raise(ErrorKind::ParseError, ctx + ": expected src, dst, features");
    auto resolve = [&](std::string_view ext) -> NodeId {
      auto it = lookup.find(ext);
      if (it == lookup.end()) {
        raise(ErrorKind::DanglingEndpoint, ctx + ": unknown node '" + std::string(ext) + "'");
      }
      return it->second;
    };
    const NodeId s = resolve(f[0]);
    const NodeId t = resolve(f[1]);
    const int row_d = static_cast<int>(f.size()) - 2;
    if (d < 0) {
      d = row_d;
    } else if (row_d != d) {
      raise(ErrorKind::DimMismatch, ctx + ": edge feature row has " + std::to_string(row_d) +
                                        " values, expected " + std::to_string(d));
    }
    b.edges.emplace_back(s, t);
    for (int k = 0; k < d; ++k) zbuf.push_back(parse_double(f[2 + k], ctx));
  });
  b.edge_features = Matrix(static_cast<int>(b.edges.size()), std::max(d, 0));
  b.edge_features.a = std::move(zbuf);

  return TransactionGraph::build(std::move(b));
}

// Writes nodes.tsv, edges.tsv and the idmap.tsv sidecar into dir.
inline void save_graph(const TransactionGraph& g, const std::filesystem::path& dir) {
  {
    FileWriter w(dir / "nodes.tsv");
    for (NodeId i = 0; i < g.node_count(); ++i) {
      std::string line = g.external_id(i);
      line += '\t';
      line += detail::role_char(g.role(i));
      line += '\t';
      line += g.region_id(i) < 0 ? std::string("-") : g.region_name(g.region_id(i));
      for (double v : g.node_feature_row(i)) {
        line += '\t';
        line += format_double(v);
      }
      w.line(line);
    }
    w.close();
  }
  {
    FileWriter w(dir / "edges.tsv");
    for (std::uint32_t e = 0; e < g.edge_count(); ++e) {
      const auto& [s, d] = g.edge_list()[e];
      std::string line = g.external_id(s);
      line += '\t';
      line += g.external_id(d);
      for (double v : g.edge_features().row(static_cast<int>(e))) {
        line += '\t';
        line += format_double(v);
      }
      w.line(line);
    }
    w.close();
  }
  {
    FileWriter w(dir / "idmap.tsv");
    for (NodeId i = 0; i < g.node_count(); ++i) {
      w.line(g.external_id(i) + "\t" + std::to_string(i));
    }
    w.close();
  }
}

}  // namespace incopt
