#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <string>
#include <vector>

#include "incopt/errors.hpp"
#include "incopt/simulator.hpp"

namespace incopt {

struct RegressionReport {
  double mae = 0.0;
  double mse = 0.0;
  std::size_t n = 0;
};

inline RegressionReport regression_metrics(std::span<const double> predictions,
                                           std::span<const double> labels) {
  if (predictions.size() != labels.size()) {
    raise(ErrorKind::LengthMismatch, "predictions and labels differ in length");
  }
  if (predictions.empty()) raise(ErrorKind::Empty, "regression_metrics needs at least one pair");
  RegressionReport r;
  r.n = predictions.size();
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double d = predictions[i] - labels[i];
    r.mae += std::abs(d);
    r.mse += d * d;
  }
  r.mae /= static_cast<double>(r.n);
  r.mse /= static_cast<double>(r.n);
  return r;
}

// Uplift gain u = mean(y | c = c_high) - mean(y | c = c_low) per merchant
// group. Groups missing either cell are flagged rather than zeroed.
struct UpliftGroup {
  std::string label;
  bool defined = false;
  double u = 0.0;
  double se = std::numeric_limits<double>::quiet_NaN();  // normal-approx std error
  std::size_t n_high = 0;
  std::size_t n_low = 0;
};

struct UpliftReport {
  double c_high = 0.0;
  double c_low = 0.0;
  std::vector<UpliftGroup> groups;
};

// grouping maps a merchant to a group index in [0, n_groups) or -1 to skip.
inline UpliftReport uplift_gain(std::span<const LabeledSample> samples,
                                const std::function<int(NodeId)>& grouping, int n_groups,
                                std::span<const std::string> labels, double c_high,
                                double c_low) {
  if (!(c_high > c_low)) {
    raise(ErrorKind::BadTreatmentPair, "c_high must be strictly greater than c_low");
  }
  if (n_groups < 1 || static_cast<int>(labels.size()) != n_groups) {
    raise(ErrorKind::InvalidConfig, "need one label per group");
  }
  struct Cell {
    std::size_t n = 0;
    double sum = 0.0;
    double sumsq = 0.0;
  };
  std::vector<Cell> high(n_groups), low(n_groups);
  for (const auto& s : samples) {
    const int g = grouping(s.merchant);
    if (g < 0) continue;
    if (g >= n_groups) raise(ErrorKind::OutOfRange, "group index out of range");
    Cell* cell = nullptr;
    if (s.treatment == c_high) cell = &high[g];
    else if (s.treatment == c_low) cell = &low[g];
    if (!cell) continue;
    cell->n += 1;
    cell->sum += s.objective;
    cell->sumsq += s.objective * s.objective;
  }
  UpliftReport rep;
  rep.c_high = c_high;
  rep.c_low = c_low;
  for (int g = 0; g < n_groups; ++g) {
    UpliftGroup out;
    out.label = labels[g];
    out.n_high = high[g].n;
    out.n_low = low[g].n;
    if (high[g].n > 0 && low[g].n > 0) {
      out.defined = true;
      const double mh = high[g].sum / static_cast<double>(high[g].n);
      const double ml = low[g].sum / static_cast<double>(low[g].n);
      out.u = mh - ml;
      if (high[g].n > 1 && low[g].n > 1) {
        const double vh =
            (high[g].sumsq - high[g].sum * mh) / static_cast<double>(high[g].n - 1);
        const double vl = (low[g].sumsq - low[g].sum * ml) / static_cast<double>(low[g].n - 1);
        out.se = std::sqrt(std::max(0.0, vh) / static_cast<double>(high[g].n) +
                           std::max(0.0, vl) / static_cast<double>(low[g].n));
      }
    }
    rep.groups.push_back(std::move(out));
  }
  return rep;
}

namespace detail {

// Sort by inferred gradient descending, ties by merchant id ascending, and
// cut into n_groups near-equal parts; remainders go to the most-sensitive
// groups. Returns merchant -> group index.
inline std::vector<std::pair<NodeId, int>> rank_groups(
    std::span<const std::pair<NodeId, double>> gradients, int n_groups) {
  std::vector<std::pair<NodeId, double>> order(gradients.begin(), gradients.end());
  std::sort(order.begin(), order.end(), [](const auto& a, const auto& b) {
    if (a.second != b.second) return a.second > b.second;
    return a.first < b.first;
  });
  const std::size_t n = order.size();
  const std::size_t base = n / n_groups;
  const std::size_t rem = n % n_groups;
  std::vector<std::pair<NodeId, int>> out;
  out.reserve(n);
  std::size_t at = 0;
  for (int g = 0; g < n_groups; ++g) {
    const std::size_t size = base + (static_cast<std::size_t>(g) < rem ? 1 : 0);
    for (std::size_t i = 0; i < size; ++i, ++at) out.emplace_back(order[at].first, g);
  }
  return out;
}

}  // namespace detail

// Quintile analysis: merchants ranked by inferred gradient, most sensitive
// first, then per-quintile uplift.
inline UpliftReport quintile_report(std::span<const std::pair<NodeId, double>> gradients,
                                    std::span<const LabeledSample> samples, double c_high,
                                    double c_low, int n_groups = 5) {
  // Only merchants that actually have samples are ranked.
  std::vector<NodeId> sampled;
  sampled.reserve(samples.size());
  for (const auto& s : samples) sampled.push_back(s.merchant);
  std::sort(sampled.begin(), sampled.end());
  sampled.erase(std::unique(sampled.begin(), sampled.end()), sampled.end());
  std::vector<std::pair<NodeId, double>> present;
  for (const auto& [id, g] : gradients) {
    if (std::binary_search(sampled.begin(), sampled.end(), id)) present.emplace_back(id, g);
  }
  if (present.size() < static_cast<std::size_t>(n_groups)) {
    raise(ErrorKind::InsufficientData,
          "need at least " + std::to_string(n_groups) + " merchants with samples");
  }
  auto assignment = detail::rank_groups(present, n_groups);
  std::sort(assignment.begin(), assignment.end());
  auto grouping = [&assignment](NodeId m) {
    auto it = std::lower_bound(assignment.begin(), assignment.end(),
                               std::make_pair(m, std::numeric_limits<int>::min()));
    if (it == assignment.end() || it->first != m) return -1;
    return it->second;
  };
  std::vector<std::string> labels;
  for (int g = 0; g < n_groups; ++g) labels.push_back("q" + std::to_string(g + 1));
  return uplift_gain(samples, grouping, n_groups, labels, c_high, c_low);
}

// Region sensitivity: AP(t_hi, r) / AP(t_lo, r) with AP the mean objective of
// region r's merchants under that treatment. Cells without data (or a
// non-positive denominator) are flagged, never reported as 0.
struct RegionSensitivityRow {
  std::string region;
  bool defined = false;
  double ratio = 0.0;
  std::size_t n_hi = 0;
  std::size_t n_lo = 0;
};

inline std::vector<RegionSensitivityRow> region_sensitivity(
    std::span<const LabeledSample> samples,
    const std::function<std::string(NodeId)>& region_of, double t_hi, double t_lo) {
  if (t_hi == t_lo) raise(ErrorKind::BadTreatmentPair, "t_hi and t_lo must differ");
  struct Cell {
    std::size_t n_hi = 0, n_lo = 0;
    double sum_hi = 0.0, sum_lo = 0.0;
  };
  std::vector<std::string> region_order;
  std::vector<Cell> cells;
  auto cell_of = [&](const std::string& r) -> Cell& {
    for (std::size_t i = 0; i < region_order.size(); ++i) {
      if (region_order[i] == r) return cells[i];
    }
    region_order.push_back(r);
    cells.emplace_back();
    return cells.back();
  };
  for (const auto& s : samples) {
    const std::string r = region_of(s.merchant);
    if (r.empty() || r == "-") continue;
    if (s.treatment == t_hi) {
      auto& c = cell_of(r);
      c.n_hi += 1;
      c.sum_hi += s.objective;
    } else if (s.treatment == t_lo) {
      auto& c = cell_of(r);
      c.n_lo += 1;
      c.sum_lo += s.objective;
    }
  }
  std::vector<RegionSensitivityRow> rows;
  for (std::size_t i = 0; i < region_order.size(); ++i) {
    RegionSensitivityRow row;
    row.region = region_order[i];
    row.n_hi = cells[i].n_hi;
    row.n_lo = cells[i].n_lo;
    if (cells[i].n_hi > 0 && cells[i].n_lo > 0) {
      const double denom = cells[i].sum_lo / static_cast<double>(cells[i].n_lo);
      if (denom > 0.0) {
        row.defined = true;
        row.ratio = (cells[i].sum_hi / static_cast<double>(cells[i].n_hi)) / denom;
      }
    }
    rows.push_back(std::move(row));
  }
  std::sort(rows.begin(), rows.end(),
            [](const auto& a, const auto& b) { return a.region < b.region; });
  return rows;
}

// Spearman rank correlation with average ranks on ties.
inline std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  std::sort(idx.begin(), idx.end(),
            [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double avg = (static_cast<double>(i) + static_cast<double>(j)) / 2.0 + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = avg;
    i = j + 1;
  }
  return ranks;
}

inline double spearman(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size()) raise(ErrorKind::LengthMismatch, "spearman: length mismatch");
  if (x.size() < 2) raise(ErrorKind::InsufficientData, "spearman needs at least 2 pairs");
  const auto rx = fractional_ranks(x);
  const auto ry = fractional_ranks(y);
  const double n = static_cast<double>(x.size());
  double mx = 0.0, my = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += rx[i];
    my += ry[i];
  }
  mx /= n;
  my /= n;
  double sxy = 0.0, sxx = 0.0, syy = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = rx[i] - mx;
    const double dy = ry[i] - my;
    sxy += dx * dy;
    sxx += dx * dx;
    syy += dy * dy;
  }
  if (sxx <= 0.0 || syy <= 0.0) return 0.0;
  return sxy / std::sqrt(sxx * syy);
}

// How well the inferred gradients recover the planted ones: rank correlation
// plus mean inferred/true gradient per inferred-rank decile (most sensitive
// decile first).
struct RecoveryReport {
  double spearman = 0.0;
  struct Decile {
    double mean_inferred = 0.0;
    double mean_truth = 0.0;
    std::size_t n = 0;
  };
  std::vector<Decile> deciles;
};

inline RecoveryReport recovery_metrics(std::span<const std::pair<NodeId, double>> inferred,
                                       std::span<const std::pair<NodeId, double>> truth) {
  if (inferred.size() != truth.size()) {
    raise(ErrorKind::SetMismatch, "inferred and truth merchant sets differ in size");
  }
  std::vector<std::pair<NodeId, double>> a(inferred.begin(), inferred.end());
  std::vector<std::pair<NodeId, double>> b(truth.begin(), truth.end());
  auto by_id = [](const auto& x, const auto& y) { return x.first < y.first; };
  std::sort(a.begin(), a.end(), by_id);
  std::sort(b.begin(), b.end(), by_id);
  for (std::size_t i = 0; i < a.size(); ++i) {
    if (a[i].first != b[i].first) {
      raise(ErrorKind::SetMismatch, "inferred and truth merchant sets differ");
    }
  }
  std::vector<double> gi(a.size()), gt(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    gi[i] = a[i].second;
    gt[i] = b[i].second;
  }
  RecoveryReport rep;
  rep.spearman = spearman(gi, gt);

  const int n_groups = 10;
  auto assignment = detail::rank_groups(a, n_groups);
  std::vector<RecoveryReport::Decile> deciles(n_groups);
  std::vector<std::pair<NodeId, double>> truth_sorted = b;
  for (const auto& [id, g] : assignment) {
    const auto it = std::lower_bound(truth_sorted.begin(), truth_sorted.end(),
                                     std::make_pair(id, 0.0), by_id);
    const auto ia = std::lower_bound(a.begin(), a.end(), std::make_pair(id, 0.0), by_id);
    deciles[g].mean_truth += it->second;
    deciles[g].mean_inferred += ia->second;
    deciles[g].n += 1;
  }
  for (auto& d : deciles) {
    if (d.n > 0) {
      d.mean_truth /= static_cast<double>(d.n);
      d.mean_inferred /= static_cast<double>(d.n);
    }
  }
  rep.deciles = std::move(deciles);
  return rep;
}

}  // namespace incopt
