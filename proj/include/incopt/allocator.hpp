#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <queue>
#include <string>
#include <vector>

#include "incopt/errors.hpp"
#include "incopt/matrix.hpp"
#include "incopt/model.hpp"

namespace incopt {

// Predicted objective per merchant and candidate treatment.
struct ScoreTable {
  std::vector<std::string> merchant_ids;  // optional labels, may be empty
  std::vector<double> treatments;         // strictly ascending, >= 0
  Matrix scores;                          // M x |treatments|

  int merchant_count() const { return scores.rows; }
  int treatment_count() const { return static_cast<int>(treatments.size()); }

  void validate() const {
    if (treatments.empty()) raise(ErrorKind::InvalidConfig, "treatment set must be non-empty");
    for (std::size_t i = 0; i < treatments.size(); ++i) {
      if (!(treatments[i] >= 0.0) || !std::isfinite(treatments[i])) {
        raise(ErrorKind::InvalidConfig, "treatments must be non-negative and finite");
      }
      if (i > 0 && treatments[i] <= treatments[i - 1]) {
        raise(ErrorKind::InvalidConfig, "treatments must be strictly ascending");
      }
    }
    if (scores.cols != treatment_count()) {
      raise(ErrorKind::ShapeMismatch, "score table width must equal |treatments|");
    }
    if (!merchant_ids.empty() && static_cast<int>(merchant_ids.size()) != scores.rows) {
      raise(ErrorKind::ShapeMismatch, "merchant id count must match score rows");
    }
    if (!all_finite(scores)) raise(ErrorKind::NonFinite, "score table contains NaN or Inf");
  }
};

inline ScoreTable score_table_from_curves(const std::vector<MerchantCurve>& curves,
                                          std::vector<std::string> merchant_ids,
                                          std::vector<double> treatments) {
  ScoreTable t;
  t.merchant_ids = std::move(merchant_ids);
  t.treatments = std::move(treatments);
  t.scores = Matrix(static_cast<int>(curves.size()), static_cast<int>(t.treatments.size()));
  for (std::size_t i = 0; i < curves.size(); ++i) {
    for (std::size_t c = 0; c < t.treatments.size(); ++c) {
      t.scores(static_cast<int>(i), static_cast<int>(c)) = predict(curves[i], t.treatments[c]);
    }
  }
  t.validate();
  return t;
}

// Per-merchant argmax_c f(i,c) - lambda*c; ties resolve to the cheapest
// treatment.
inline std::vector<int> best_response(const ScoreTable& table, double lambda) {
  if (!(lambda >= 0.0) || !std::isfinite(lambda)) {
    raise(ErrorKind::InvalidConfig, "lambda must be finite and >= 0");
  }
  const int m = table.merchant_count();
  const int c_count = table.treatment_count();
  std::vector<int> pick(m, 0);
  for (int i = 0; i < m; ++i) {
    double best = table.scores(i, 0) - lambda * table.treatments[0];
    int arg = 0;
    for (int c = 1; c < c_count; ++c) {
      const double v = table.scores(i, c) - lambda * table.treatments[c];
      if (v > best) {
        best = v;
        arg = c;
      }
    }
    pick[i] = arg;
  }
  return pick;
}

inline double spend(const ScoreTable& table, const std::vector<int>& assignment) {
  double s = 0.0;
  for (int c : assignment) s += table.treatments[c];
  return s;
}

inline double objective_value(const ScoreTable& table, const std::vector<int>& assignment) {
  double s = 0.0;
  for (int i = 0; i < table.merchant_count(); ++i) s += table.scores(i, assignment[i]);
  return s;
}

struct AllocationPlan {
  std::vector<int> assignment;  // treatment index per merchant
  double total_spend = 0.0;
  double total_objective = 0.0;
  double lambda = 0.0;
  double gap_bound = 0.0;  // certified upper bound on suboptimality
  double budget = 0.0;
};

// Budgeted allocation via the dual rule: bisect for the smallest lambda whose
// best response fits the budget (spend(lambda) is non-increasing), then spend
// residual slack with greedy single-merchant upgrades by objective density.
// gap_bound is the Lagrangian certificate
//   opt <= obj_pre + lambda*(B - spend_pre)
// net of whatever the greedy upgrades recovered.
inline AllocationPlan solve_budget(const ScoreTable& table, double budget) {
  table.validate();
  if (!(budget >= 0.0) || !std::isfinite(budget)) {
    raise(ErrorKind::InvalidConfig, "budget must be finite and >= 0");
  }
  const int m = table.merchant_count();
  const int c_count = table.treatment_count();
  const double min_spend = static_cast<double>(m) * table.treatments[0];
  const double feas_tol = 1e-9 * std::max(1.0, std::abs(budget));
  if (min_spend > budget + feas_tol) {
    raise(ErrorKind::InfeasibleBudget,
          "minimum spend " + format_double(min_spend) + " exceeds budget " +
              format_double(budget));
  }

  AllocationPlan plan;
  plan.budget = budget;
  double lambda = 0.0;
  std::vector<int> pre = best_response(table, 0.0);
  if (spend(table, pre) > budget) {
    double min_gap = std::numeric_limits<double>::infinity();
    for (int c = 1; c < c_count; ++c) {
      min_gap = std::min(min_gap, table.treatments[c] - table.treatments[c - 1]);
    }
    double lo_score = std::numeric_limits<double>::infinity();
    double hi_score = -std::numeric_limits<double>::infinity();
    for (double v : table.scores.a) {
      lo_score = std::min(lo_score, v);
      hi_score = std::max(hi_score, v);
    }
    // At lambda_hi every upgrade from the cheapest treatment is a strict
    // loss, so the response spends m*min(C) <= budget.
    double hi = (hi_score - lo_score) / min_gap + 1.0;
    double lo = 0.0;
    while (hi - lo > 1e-9) {
      const double mid = lo + (hi - lo) / 2.0;
      if (spend(table, best_response(table, mid)) <= budget) {
        hi = mid;
      } else {
        lo = mid;
      }
      if (mid == lo || mid == hi) break;  // fp plateau
    }
    lambda = hi;
    pre = best_response(table, lambda);
  }

  const double spend_pre = spend(table, pre);
  const double obj_pre = objective_value(table, pre);

  // Greedy residual upgrades: repeatedly apply the single-merchant treatment
  // upgrade with the best objective-per-cost density that still fits.
  std::vector<int> assignment = pre;
  double cur_spend = spend_pre;
  double cur_obj = obj_pre;
  struct Upgrade {
    double density;
    double d_cost;
    double d_obj;
    int merchant;
    int to;
  };
  auto worse = [](const Upgrade& a, const Upgrade& b) {
    if (a.density != b.density) return a.density < b.density;
    if (a.merchant != b.merchant) return a.merchant > b.merchant;
    return a.to > b.to;
  };
  auto best_upgrade = [&](int i, double slack) -> Upgrade {
    Upgrade best{-1.0, 0.0, 0.0, i, -1};
    const int cur = assignment[i];
    for (int c = cur + 1; c < c_count; ++c) {
      const double d_cost = table.treatments[c] - table.treatments[cur];
      const double d_obj = table.scores(i, c) - table.scores(i, cur);
      if (d_cost > slack || d_obj <= 0.0) continue;
      Upgrade u{d_obj / d_cost, d_cost, d_obj, i, c};
      if (best.to < 0 || worse(best, u)) best = u;
    }
    return best;
  };
  std::priority_queue<Upgrade, std::vector<Upgrade>, decltype(worse)> heap(worse);
  for (int i = 0; i < m; ++i) {
    const Upgrade u = best_upgrade(i, budget - cur_spend);
    if (u.to >= 0) heap.push(u);
  }
  while (!heap.empty()) {
    const Upgrade u = heap.top();
    heap.pop();
    const double slack = budget - cur_spend;
    // Stale entries: the merchant moved or slack shrank since it was pushed.
    const double d_cost = table.treatments[u.to] - table.treatments[assignment[u.merchant]];
    const double d_obj = table.scores(u.merchant, u.to) - table.scores(u.merchant, assignment[u.merchant]);
    if (u.to <= assignment[u.merchant] || d_cost > slack || d_obj <= 0.0) {
      const Upgrade redo = best_upgrade(u.merchant, slack);
      if (redo.to >= 0) heap.push(redo);
      continue;
    }
    assignment[u.merchant] = u.to;
    cur_spend += d_cost;
    cur_obj += d_obj;
    const Upgrade redo = best_upgrade(u.merchant, budget - cur_spend);
    if (redo.to >= 0) heap.push(redo);
  }

  plan.assignment = std::move(assignment);
  plan.total_spend = cur_spend;
  plan.total_objective = cur_obj;
  plan.lambda = lambda;
  plan.gap_bound = std::max(0.0, lambda * (budget - spend_pre) - (cur_obj - obj_pre));
  return plan;
}

struct OracleResult {
  std::vector<int> assignment;
  double objective = 0.0;
};

// Exact optimum of the one-treatment-per-merchant budget problem via dynamic
// programming over integer-scaled costs (multiple-choice knapsack). Intended
// as a small-instance test oracle.
inline OracleResult lp_oracle(const ScoreTable& table, double budget) {
  table.validate();
  if (!(budget >= 0.0) || !std::isfinite(budget)) {
    raise(ErrorKind::InvalidConfig, "budget must be finite and >= 0");
  }
  const int m = table.merchant_count();
  const int c_count = table.treatment_count();
  if (c_count > 254) raise(ErrorKind::TooLarge, "too many treatments for the DP oracle");

  // Find the smallest power-of-ten scale that makes every cost integral. The
  // 1e-9 tolerance is relative to the scaled magnitude so float dirt in
  // decimal treatments passes while genuinely non-decimal costs fail at every
  // scale.
  constexpr double kIntTol = 1e-9;
  double scale = 1.0;
  bool ok = false;
  for (int attempt = 0; attempt < 7; ++attempt) {
    ok = true;
    for (double c : table.treatments) {
      const double scaled = c * scale;
      if (std::abs(scaled - std::llround(scaled)) > kIntTol * scale * std::max(1.0, std::abs(c))) {
        ok = false;
        break;
      }
    }
    if (ok) break;
    scale *= 10.0;
  }
  if (!ok) {
    raise(ErrorKind::NonIntegerCosts, "treatments are not integral at any supported scale");
  }
  std::vector<long long> cost(c_count);
  for (int c = 0; c < c_count; ++c) cost[c] = std::llround(table.treatments[c] * scale);
  const long long b_scaled =
      static_cast<long long>(std::floor(budget * scale * (1.0 + 1e-12) + kIntTol));
  if (b_scaled < 0) raise(ErrorKind::InvalidConfig, "budget must be >= 0");
  const long long cells = static_cast<long long>(m) * (b_scaled + 1);
  if (cells > 10'000'000LL) {
    raise(ErrorKind::TooLarge, "DP table would need " + std::to_string(cells) + " cells");
  }

  const double neg_inf = -std::numeric_limits<double>::infinity();
  std::vector<double> prev(static_cast<std::size_t>(b_scaled) + 1, 0.0);
  std::vector<double> cur(prev.size());
  std::vector<std::uint8_t> choice(static_cast<std::size_t>(cells), 255);
  for (int i = 0; i < m; ++i) {
    for (long long b = 0; b <= b_scaled; ++b) {
      double best = neg_inf;
      int arg = -1;
      // Iterate treatments descending so equal-value ties resolve to the
      // cheapest option, matching the dual rule's tie-break.
      for (int c = c_count - 1; c >= 0; --c) {
        if (cost[c] > b) continue;
        const double base = prev[static_cast<std::size_t>(b - cost[c])];
        if (base == neg_inf) continue;
        const double v = base + table.scores(i, c);
        if (v >= best) {
          best = v;
          arg = c;
        }
      }
      cur[static_cast<std::size_t>(b)] = best;
      choice[static_cast<std::size_t>(i) * (b_scaled + 1) + b] =
          arg < 0 ? 255 : static_cast<std::uint8_t>(arg);
    }
    std::swap(prev, cur);
  }

  if (prev[static_cast<std::size_t>(b_scaled)] == neg_inf) {
    raise(ErrorKind::InfeasibleBudget, "no feasible assignment within budget");
  }

  OracleResult res;
  res.objective = prev[static_cast<std::size_t>(b_scaled)];
  res.assignment.assign(m, 0);
  long long b = b_scaled;
  for (int i = m - 1; i >= 0; --i) {
    const std::uint8_t c = choice[static_cast<std::size_t>(i) * (b_scaled + 1) + b];
    res.assignment[i] = c;
    b -= cost[c];
  }
  return res;
}

}  // namespace incopt
