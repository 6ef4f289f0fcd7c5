#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "incopt/errors.hpp"
#include "incopt/graph.hpp"
#include "incopt/rng.hpp"

namespace incopt {

// Synthetic campaign generator. Plants per-merchant linear response curves
// whose slope and intercept depend on both the merchant's region and its
// degree in a region-blocked random bipartite payment graph, while node
// features expose only a noisy partial view of either. The gap between what
// the features reveal and what the graph carries is the quantity the
// graph-based model is supposed to exploit.
struct SimConfig {
  int merchants = 1000;
  int customers = 4000;
  int regions = 2;
  double intra_region_edge_prob = 0.005;
  double inter_region_edge_prob = 0.0005;
  int node_feature_dim = 8;
  int edge_feature_dim = 4;
  std::vector<double> treatment_set{1.0, 2.0, 5.0, 10.0, 20.0};
  int bucket_count = 0;  // 0 = follow |treatment_set|
  double noise_sd = 0.5; // observation noise in run_experiment
  int days = 3;          // observation horizon, recorded in manifests

  // Planted-truth shape: g*_i = g_base(region) + g_deg * log(1+deg) + eps_g,
  // p*_i analogous. Empty bases are auto-filled with a geometric ramp so the
  // extreme regions differ 10x.
  std::vector<double> gradient_region_bases;
  std::vector<double> intercept_region_bases;
  double gradient_degree_coeff = 0.25;
  double intercept_degree_coeff = 0.1;
  double gradient_noise_sd = 0.05;
  double intercept_noise_sd = 0.05;

  // Fraction of nodes whose region one-hot feature reports the true region.
  double feature_region_fidelity = 0.7;

  // Fills derived defaults and validates. Returns the resolved copy.
  SimConfig resolved() const {
    SimConfig c = *this;
    if (c.bucket_count == 0) c.bucket_count = static_cast<int>(c.treatment_set.size());
    if (c.gradient_region_bases.empty()) {
      for (int r = 0; r < c.regions; ++r) {
        const double t = c.regions > 1 ? static_cast<double>(r) / (c.regions - 1) : 0.0;
        c.gradient_region_bases.push_back(0.3 * std::pow(10.0, t));
      }
    }
    if (c.intercept_region_bases.empty()) {
      for (int r = 0; r < c.regions; ++r) {
        c.intercept_region_bases.push_back(0.5 + 1.0 * r);
      }
    }
    c.validate();
    return c;
  }

  void validate() const {
    auto bad = [](const std::string& msg) { raise(ErrorKind::InvalidConfig, msg); };
    if (merchants < 1) bad("merchants must be >= 1");
    if (customers < 0) bad("customers must be >= 0");
    if (regions < 1) bad("regions must be >= 1");
    if (!(intra_region_edge_prob >= 0.0 && intra_region_edge_prob <= 1.0)) {
      bad("intra_region_edge_prob must be in [0,1]");
    }
    if (!(inter_region_edge_prob >= 0.0 && inter_region_edge_prob <= 1.0)) {
      bad("inter_region_edge_prob must be in [0,1]");
    }
    if (intra_region_edge_prob < inter_region_edge_prob) {
      bad("intra_region_edge_prob must be >= inter_region_edge_prob");
    }
    if (node_feature_dim < regions + 1) bad("node_feature_dim must be >= regions + 1");
    if (edge_feature_dim < 1) bad("edge_feature_dim must be >= 1");
    if (treatment_set.empty()) bad("treatment_set must be non-empty");
    for (std::size_t i = 0; i < treatment_set.size(); ++i) {
      if (treatment_set[i] < 0.0 || !std::isfinite(treatment_set[i])) {
        bad("treatments must be non-negative and finite");
      }
      if (i > 0 && treatment_set[i] <= treatment_set[i - 1]) {
        bad("treatment_set must be strictly ascending");
      }
    }
    if (bucket_count != static_cast<int>(treatment_set.size())) {
      bad("bucket_count must equal |treatment_set|");
    }
    if (noise_sd < 0.0) bad("noise_sd must be >= 0");
    if (days < 1) bad("days must be >= 1");
    if (static_cast<int>(gradient_region_bases.size()) != regions ||
        static_cast<int>(intercept_region_bases.size()) != regions) {
      bad("region base lists must have one entry per region");
    }
    for (double v : gradient_region_bases) {
      if (!(v > 0.0) || !std::isfinite(v)) bad("gradient bases must be positive");
    }
    for (double v : intercept_region_bases) {
      if (!(v >= 0.0) || !std::isfinite(v)) bad("intercept bases must be non-negative");
    }
    if (gradient_noise_sd < 0.0 || intercept_noise_sd < 0.0) bad("truth noise sds must be >= 0");
    if (!(feature_region_fidelity >= 0.0 && feature_region_fidelity <= 1.0)) {
      bad("feature_region_fidelity must be in [0,1]");
    }
  }
};

struct CampaignTruth {
  std::vector<double> gradient;   // g*_i > 0, indexed by merchant dense id
  std::vector<double> intercept;  // p*_i >= 0
};

struct LabeledSample {
  NodeId merchant;
  double treatment;
  double objective;
};

struct Campaign {
  TransactionGraph graph;
  CampaignTruth truth;
};

inline Campaign generate_campaign(const SimConfig& raw_cfg, std::uint64_t seed) {
  const SimConfig cfg = raw_cfg.resolved();
  const int m_count = cfg.merchants;
  const int u_count = cfg.customers;
  const int n = m_count + u_count;
  const int r_count = cfg.regions;

  Rng rng_region(mix_seed(seed, 1));
  Rng rng_edges(mix_seed(seed, 2));
  Rng rng_edge_feat(mix_seed(seed, 3));
  Rng rng_node_feat(mix_seed(seed, 4));
  Rng rng_truth(mix_seed(seed, 5));

  // Merchants take dense ids [0, M), customers [M, M+U).
  std::vector<int> region(n);
  for (int i = 0; i < n; ++i) region[i] = static_cast<int>(rng_region.below(r_count));

  std::vector<std::vector<NodeId>> customers_by_region(r_count);
  for (int u = 0; u < u_count; ++u) {
    customers_by_region[region[m_count + u]].push_back(static_cast<NodeId>(m_count + u));
  }

  GraphBuilder b;
  // Bernoulli per merchant-customer pair via geometric skips over the
  // customer list of each region block.
  for (int m = 0; m < m_count; ++m) {
    for (int r = 0; r < r_count; ++r) {
      const double p =
          r == region[m] ? cfg.intra_region_edge_prob : cfg.inter_region_edge_prob;
      if (p <= 0.0) continue;
      const auto& pool = customers_by_region[r];
      std::uint64_t pos = geometric_skip(rng_edges, p);
      while (pos < pool.size()) {
        b.edges.emplace_back(static_cast<NodeId>(m), pool[pos]);
        const std::uint64_t skip = geometric_skip(rng_edges, p);
        if (skip > pool.size()) break;
        pos += 1 + skip;
      }
    }
  }

  // Edge features are emitted pre-normalized so per-node feature sums stay
  // O(1) at typical degrees; the presence dim still carries exact degree.
  const int e_count = static_cast<int>(b.edges.size());
  b.edge_features = Matrix(e_count, cfg.edge_feature_dim);
  for (int e = 0; e < e_count; ++e) {
    auto z = b.edge_features.row(e);
    z[0] = 0.1;  // payment presence: sum_j z0 = degree / 10
    if (cfg.edge_feature_dim > 1) z[1] = 0.1 * rng_edge_feat.lognormal(0.0, 0.5);
    for (int k = 2; k < cfg.edge_feature_dim; ++k) z[k] = 0.1 * rng_edge_feat.normal();
  }

  std::vector<std::uint32_t> degree(n, 0);
  for (const auto& [s, d] : b.edges) {
    ++degree[s];
    ++degree[d];
  }

  b.node_features = Matrix(n, cfg.node_feature_dim);
  for (int i = 0; i < n; ++i) {
    auto x = b.node_features.row(i);
    auto noisy_region = [&]() {
      int r = region[i];
      if (r_count > 1 && !rng_node_feat.bernoulli(cfg.feature_region_fidelity)) {
        r = static_cast<int>((r + 1 + rng_node_feat.below(r_count - 1)) % r_count);
      }
      return r;
    };
    x[noisy_region()] = 1.0;
    // Degree is exposed only as a coarse bucket (nearest 5), signed by an
    // independent noisy region view. The magnitude carries degree, but
    // decoding it requires folding out the sign, which no linear readout can
    // do; graph aggregation sees exact degree through the edge-feature sums.
    const double bucket = std::round(degree[i] / 5.0) * 5.0 / 10.0;
    const double sign = r_count > 1 ? (noisy_region() % 2 == 0 ? -1.0 : 1.0) : 1.0;
    x[r_count] = sign * bucket;
    for (int k = r_count + 1; k < cfg.node_feature_dim; ++k) x[k] = rng_node_feat.normal();
  }

  b.external_ids.reserve(n);
  b.roles.reserve(n);
  b.regions.reserve(n);
  for (int i = 0; i < n; ++i) {
    b.external_ids.push_back(std::to_string(i));
    b.roles.push_back(i < m_count ? NodeRole::Merchant : NodeRole::Customer);
    b.regions.push_back("r" + std::to_string(region[i]));
  }

  CampaignTruth truth;
  truth.gradient.resize(m_count);
  truth.intercept.resize(m_count);
  for (int m = 0; m < m_count; ++m) {
    const double logdeg = std::log1p(static_cast<double>(degree[m]));
    const double g = cfg.gradient_region_bases[region[m]] +
                     cfg.gradient_degree_coeff * logdeg +
                     rng_truth.normal(0.0, cfg.gradient_noise_sd);
    const double p = cfg.intercept_region_bases[region[m]] +
                     cfg.intercept_degree_coeff * logdeg +
                     rng_truth.normal(0.0, cfg.intercept_noise_sd);
    truth.gradient[m] = std::max(g, 1e-3);
    truth.intercept[m] = std::max(p, 0.0);
  }

  return Campaign{TransactionGraph::build(std::move(b)), std::move(truth)};
}

// Bucketed randomized experiment: every merchant lands in exactly one
// uniformly chosen treatment bucket; the observed objective is the planted
// linear curve plus Gaussian noise, clipped at zero.
inline std::vector<LabeledSample> run_experiment(const TransactionGraph& graph,
                                                 const CampaignTruth& truth,
                                                 const SimConfig& raw_cfg, std::uint64_t seed) {
  const SimConfig cfg = raw_cfg.resolved();
  const std::vector<NodeId> merchants = graph.merchants();
  if (truth.gradient.size() != merchants.size() || truth.intercept.size() != merchants.size()) {
    raise(ErrorKind::InvalidConfig, "truth does not cover all merchants");
  }
  std::vector<LabeledSample> out;
  out.reserve(merchants.size());
  for (std::size_t idx = 0; idx < merchants.size(); ++idx) {
    const NodeId m = merchants[idx];
    Rng rng(mix_seed(seed, 0xB0C4E7ULL, m));
    const int bucket = static_cast<int>(rng.below(cfg.bucket_count));
    const double c = cfg.treatment_set[bucket];
    const double y =
        truth.gradient[idx] * c + truth.intercept[idx] + rng.normal(0.0, cfg.noise_sd);
    out.push_back(LabeledSample{m, c, std::max(0.0, y)});
  }
  return out;
}

// samples.tsv: merchant_id \t treatment \t objective (external ids)
inline void write_samples(const std::filesystem::path& path,
                          const std::vector<LabeledSample>& samples,
                          const TransactionGraph& graph) {
  FileWriter w(path);
  for (const auto& s : samples) {
    w.line(graph.external_id(s.merchant) + "\t" + format_double(s.treatment) + "\t" +
           format_double(s.objective));
  }
  w.close();
}

inline std::vector<LabeledSample> read_samples(const std::filesystem::path& path,
                                               const TransactionGraph& graph) {
  std::vector<LabeledSample> out;
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    auto f = split(line, '\t');
    if (f.size() != 3) raise(ErrorKind::ParseError, ctx + ": expected merchant, treatment, objective");
    auto id = graph.find_external(std::string(f[0]));
    if (!id) raise(ErrorKind::DanglingEndpoint, ctx + ": unknown merchant '" + std::string(f[0]) + "'");
    const double c = parse_double(f[1], ctx);
    const double y = parse_double(f[2], ctx);
    if (c < 0.0) raise(ErrorKind::NegativeTreatment, ctx + ": treatment must be >= 0");
    if (!(y >= 0.0) || !std::isfinite(y)) {
      raise(ErrorKind::ParseError, ctx + ": objective must be finite and >= 0");
    }
    out.push_back(LabeledSample{*id, c, y});
  });
  return out;
}

// truth.tsv: merchant_id \t g_star \t p_star — evaluation sidecar only, the
// trainer never reads it.
inline void write_truth(const std::filesystem::path& path, const CampaignTruth& truth,
                        const TransactionGraph& graph) {
  FileWriter w(path);
  const auto merchants = graph.merchants();
  for (std::size_t i = 0; i < merchants.size(); ++i) {
    w.line(graph.external_id(merchants[i]) + "\t" + format_double(truth.gradient[i]) + "\t" +
           format_double(truth.intercept[i]));
  }
  w.close();
}

inline CampaignTruth read_truth(const std::filesystem::path& path, const TransactionGraph& graph) {
  const auto merchants = graph.merchants();
  CampaignTruth truth;
  truth.gradient.assign(merchants.size(), 0.0);
  truth.intercept.assign(merchants.size(), 0.0);
  std::vector<bool> seen(merchants.size(), false);
  for_each_line(path, [&](std::size_t line_no, std::string_view line) {
    const std::string ctx = path.string() + ":" + std::to_string(line_no);
    auto f = split(line, '\t');
    if (f.size() != 3) raise(ErrorKind::ParseError, ctx + ": expected merchant, g_star, p_star");
    auto id = graph.find_external(std::string(f[0]));
    if (!id) raise(ErrorKind::DanglingEndpoint, ctx + ": unknown merchant '" + std::string(f[0]) + "'");
    const auto it = std::lower_bound(merchants.begin(), merchants.end(), *id);
    if (it == merchants.end() || *it != *id) {
      raise(ErrorKind::ParseError, ctx + ": node '" + std::string(f[0]) + "' is not a merchant");
    }
    const std::size_t idx = static_cast<std::size_t>(it - merchants.begin());
    truth.gradient[idx] = parse_double(f[1], ctx);
    truth.intercept[idx] = parse_double(f[2], ctx);
    seen[idx] = true;
  });
  for (std::size_t i = 0; i < merchants.size(); ++i) {
    if (!seen[i]) {
      raise(ErrorKind::SetMismatch, path.string() + ": missing truth row for merchant " +
                                        graph.external_id(merchants[i]));
    }
  }
  return truth;
}

}  // namespace incopt
