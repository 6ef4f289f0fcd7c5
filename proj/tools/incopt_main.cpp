// incopt command line: synthesize campaigns, train curve models, extract
// per-merchant curves, allocate a budget, and evaluate against held-out data.
//
// Exit codes: 0 success, 1 usage error, 2 data/validation error.

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <string>
#include <vector>

#include "incopt/allocator.hpp"
#include "incopt/checkpoint.hpp"
#include "incopt/config.hpp"
#include "incopt/evaluator.hpp"
#include "incopt/simulator.hpp"
#include "incopt/trainer.hpp"
#include "incopt/version.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  int threads = 1;
  bool deterministic = false;

  int effective_threads() const { return deterministic ? 1 : threads; }
};

std::string dstr(double v) { return incopt::format_double(v); }

std::string join_doubles(const std::vector<double>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += dstr(v[i]);
  }
  return s;
}

std::string join_ints(const std::vector<int>& v) {
  std::string s;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) s += ',';
    s += std::to_string(v[i]);
  }
  return s;
}

void write_manifest(const fs::path& dir, const std::string& command,
                    const std::map<std::string, std::string>& resolved, std::uint64_t seed) {
  json m;
  m["tool"] = "incopt";
  m["version"] = incopt::kVersion;
  m["command"] = command;
  m["seed"] = seed;
  m["config"] = resolved;
  m["config_hash"] = incopt::config_hash(resolved);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) incopt::raise(incopt::ErrorKind::IoError, "cannot write manifest in " + dir.string());
  out << m.dump(2) << '\n';
}

incopt::ModelKind parse_model_kind(const std::string& s) {
  if (s == "ge") return incopt::ModelKind::Ge;
  if (s == "dnn") return incopt::ModelKind::Mlp;
  if (s == "lr") return incopt::ModelKind::Linear;
  incopt::raise(incopt::ErrorKind::InvalidConfig, "model must be ge, dnn or lr, got '" + s + "'");
}

incopt::Aggregator parse_aggregator(const std::string& s) {
  if (s == "mean") return incopt::Aggregator::Mean;
  if (s == "attention") return incopt::Aggregator::Attention;
  incopt::raise(incopt::ErrorKind::InvalidConfig, "aggregator must be mean or attention");
}

incopt::Activation parse_activation(const std::string& s) {
  if (s == "relu") return incopt::Activation::Relu;
  if (s == "tanh") return incopt::Activation::Tanh;
  if (s == "identity") return incopt::Activation::Identity;
  incopt::raise(incopt::ErrorKind::InvalidConfig, "activation must be relu, tanh or identity");
}

incopt::LabelTransform parse_transform(const std::string& s) {
  if (s == "none") return incopt::LabelTransform::None;
  if (s == "log1p-zscore") return incopt::LabelTransform::Log1pZscore;
  incopt::raise(incopt::ErrorKind::InvalidConfig,
                "label-transform must be none or log1p-zscore");
}

// Expands `<sub> ... --config FILE ...` into `<sub> --key value ... <rest>`.
// File-sourced values come first, so explicitly passed flags win (every
// option uses a take-last policy). Unknown keys surface as normal CLI11
// unknown-option usage errors.
std::vector<std::string> expand_config_args(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  if (args.empty() || args[0].empty() || args[0][0] == '-') return args;
  std::string config_path;
  std::vector<std::string> rest;
  for (std::size_t i = 1; i < args.size(); ++i) {
    if (args[i] == "--config") {
      if (i + 1 >= args.size()) {
        incopt::raise(incopt::ErrorKind::InvalidConfig, "--config requires a file path");
      }
      config_path = args[++i];
    } else if (args[i].rfind("--config=", 0) == 0) {
      config_path = args[i].substr(std::string("--config=").size());
    } else {
      rest.push_back(args[i]);
    }
  }
  std::vector<std::string> out{args[0]};
  if (!config_path.empty()) {
    for (const auto& [key, value] : incopt::parse_config_file(config_path)) {
      out.push_back("--" + key);
      out.push_back(value);
    }
  }
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

// ---------------------------------------------------------------- synth ----

struct SynthArgs {
  incopt::SimConfig sim;
  std::uint64_t seed = 1;
  std::string out;
};

int run_synth(const SynthArgs& a) {
  const incopt::SimConfig cfg = a.sim.resolved();
  fs::create_directories(a.out);
  const auto campaign = incopt::generate_campaign(cfg, a.seed);
  const auto samples = incopt::run_experiment(campaign.graph, campaign.truth, cfg, a.seed);
  incopt::save_graph(campaign.graph, a.out);
  incopt::write_samples(fs::path(a.out) / "samples.tsv", samples, campaign.graph);
  incopt::write_truth(fs::path(a.out) / "truth.tsv", campaign.truth, campaign.graph);

  std::map<std::string, std::string> resolved{
      {"merchants", std::to_string(cfg.merchants)},
      {"customers", std::to_string(cfg.customers)},
      {"regions", std::to_string(cfg.regions)},
      {"intra-prob", dstr(cfg.intra_region_edge_prob)},
      {"inter-prob", dstr(cfg.inter_region_edge_prob)},
      {"node-dim", std::to_string(cfg.node_feature_dim)},
      {"edge-dim", std::to_string(cfg.edge_feature_dim)},
      {"treatments", join_doubles(cfg.treatment_set)},
      {"noise-sd", dstr(cfg.noise_sd)},
      {"days", std::to_string(cfg.days)},
      {"gradient-bases", join_doubles(cfg.gradient_region_bases)},
      {"intercept-bases", join_doubles(cfg.intercept_region_bases)},
      {"gradient-degree-coeff", dstr(cfg.gradient_degree_coeff)},
      {"intercept-degree-coeff", dstr(cfg.intercept_degree_coeff)},
      {"gradient-noise-sd", dstr(cfg.gradient_noise_sd)},
      {"intercept-noise-sd", dstr(cfg.intercept_noise_sd)},
      {"region-fidelity", dstr(cfg.feature_region_fidelity)},
      {"seed", std::to_string(a.seed)},
  };
  write_manifest(a.out, "synth", resolved, a.seed);
  std::printf("wrote %u nodes, %u edges, %zu samples to %s\n", campaign.graph.node_count(),
              campaign.graph.edge_count(), samples.size(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------- train ----

struct TrainArgs {
  std::string data;
  std::string out;
  std::string model = "ge";
  int depth = 2;
  int width = 16;
  std::vector<int> fanouts{10, 10};
  std::string aggregator = "mean";
  std::string activation = "relu";
  incopt::TrainConfig train;
  std::string transform = "log1p-zscore";
};

int run_train(const TrainArgs& a) {
  const fs::path data(a.data);
  const auto graph = incopt::load_graph(data / "nodes.tsv", data / "edges.tsv");
  const auto samples = incopt::read_samples(data / "samples.tsv", graph);

  incopt::ModelConfig mc;
  mc.kind = parse_model_kind(a.model);
  mc.depth = a.depth;
  mc.width = a.width;
  mc.input_dim = graph.feature_dim();
  mc.edge_dim = graph.edge_feature_dim();
  mc.fanouts = a.fanouts;
  mc.aggregator = parse_aggregator(a.aggregator);
  mc.activation = parse_activation(a.activation);
  incopt::TrainConfig tc = a.train;
  tc.label_transform = parse_transform(a.transform);

  const auto t0 = std::chrono::steady_clock::now();
  const auto result = incopt::fit(graph, samples, mc, tc);
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

  fs::create_directories(a.out);
  incopt::save_checkpoint(fs::path(a.out) / "checkpoint.bin", result.checkpoint);
  {
    incopt::FileWriter w(fs::path(a.out) / "history.csv");
    w.line("epoch,train_mae,val_mae");
    for (const auto& e : result.history) {
      w.line(std::to_string(e.epoch) + "," + dstr(e.train_mae) + "," + dstr(e.val_mae));
    }
    w.close();
  }
  std::map<std::string, std::string> resolved{
      {"data", a.data},
      {"model", a.model},
      {"depth", std::to_string(mc.depth)},
      {"width", std::to_string(mc.width)},
      {"fanouts", join_ints(mc.fanouts)},
      {"aggregator", a.aggregator},
      {"activation", a.activation},
      {"lr", dstr(tc.learning_rate)},
      {"beta1", dstr(tc.beta1)},
      {"beta2", dstr(tc.beta2)},
      {"eps", dstr(tc.eps)},
      {"batch", std::to_string(tc.batch_size)},
      {"epochs", std::to_string(tc.epochs)},
      {"lr-decay", dstr(tc.lr_decay)},
      {"label-transform", a.transform},
      {"train-fraction", dstr(tc.train_fraction)},
      {"patience", std::to_string(tc.patience)},
      {"seed", std::to_string(tc.seed)},
  };
  write_manifest(a.out, "train", resolved, tc.seed);
  std::printf("trained %s: best epoch %d, val mae %s (%.1fs, %zu epochs run)\n", a.model.c_str(),
              result.checkpoint.best_epoch, dstr(result.checkpoint.best_val_mae).c_str(), secs,
              result.history.size());
  return 0;
}

// ---------------------------------------------------------------- infer ----

struct InferArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  CommonOpts common;
};

int run_infer(const InferArgs& a) {
  const fs::path data(a.data);
  const auto graph = incopt::load_graph(data / "nodes.tsv", data / "edges.tsv");
  const auto ckpt = incopt::load_checkpoint(a.checkpoint);
  const auto merchants = graph.merchants();
  const auto curves =
      incopt::infer_curves(graph, ckpt.model, ckpt.params, merchants,
                           incopt::validation_seed(ckpt.train.seed), a.common.effective_threads());
  fs::create_directories(a.out);
  {
    incopt::FileWriter w(fs::path(a.out) / "curves.csv");
    w.line("merchant_id,gradient,intercept");
    for (std::size_t i = 0; i < merchants.size(); ++i) {
      w.line(graph.external_id(merchants[i]) + "," + dstr(curves[i].gradient) + "," +
             dstr(curves[i].intercept));
    }
    w.close();
  }
  std::map<std::string, std::string> resolved{
      {"data", a.data},
      {"checkpoint", a.checkpoint},
      {"checkpoint_config_hash", ckpt.config_hash},
      {"threads", std::to_string(a.common.effective_threads())},
  };
  write_manifest(a.out, "infer", resolved, ckpt.train.seed);
  std::printf("wrote %zu curves to %s\n", merchants.size(), a.out.c_str());
  return 0;
}

// ------------------------------------------------------------- allocate ----

struct AllocateArgs {
  std::string curves;
  std::string out;
  double budget = 0.0;
  std::vector<double> treatments{1, 2, 5, 10, 20};
};

int run_allocate(const AllocateArgs& a) {
  std::vector<std::string> ids;
  std::vector<incopt::MerchantCurve> curves;
  bool header_seen = false;
  incopt::for_each_line(a.curves, [&](std::size_t line_no, std::string_view line) {
    if (!header_seen) {
      header_seen = true;
      if (line.rfind("merchant_id", 0) == 0) return;
    }
    const std::string ctx = a.curves + ":" + std::to_string(line_no);
    auto f = incopt::split(line, ',');
    if (f.size() != 3) incopt::raise(incopt::ErrorKind::ParseError, ctx + ": expected 3 columns");
    ids.emplace_back(f[0]);
    curves.push_back(incopt::MerchantCurve{incopt::parse_double(f[1], ctx),
                                           incopt::parse_double(f[2], ctx)});
  });
  const auto table = incopt::score_table_from_curves(curves, ids, a.treatments);
  const auto plan = incopt::solve_budget(table, a.budget);

  fs::create_directories(a.out);
  {
    incopt::FileWriter w(fs::path(a.out) / "plan.csv");
    w.line("merchant_id,treatment,predicted_objective");
    for (int i = 0; i < table.merchant_count(); ++i) {
      w.line(table.merchant_ids[i] + "," + dstr(table.treatments[plan.assignment[i]]) + "," +
             dstr(table.scores(i, plan.assignment[i])));
    }
    w.close();
  }
  {
    json s{{"lambda", plan.lambda},
           {"total_spend", plan.total_spend},
           {"total_objective", plan.total_objective},
           {"gap_bound", plan.gap_bound},
           {"budget", plan.budget}};
    std::ofstream out(fs::path(a.out) / "summary.json", std::ios::binary);
    out << s.dump(2) << '\n';
  }
  std::map<std::string, std::string> resolved{
      {"curves", a.curves},
      {"budget", dstr(a.budget)},
      {"treatments", join_doubles(a.treatments)},
  };
  write_manifest(a.out, "allocate", resolved, 0);
  std::printf("allocated %s across %d merchants (objective %s, lambda %s)\n",
              dstr(plan.total_spend).c_str(), table.merchant_count(),
              dstr(plan.total_objective).c_str(), dstr(plan.lambda).c_str());
  return 0;
}

// ----------------------------------------------------------------- eval ----

struct EvalArgs {
  std::string data;
  std::string checkpoint;
  std::string out;
  double c_high = -1.0;
  double c_low = -1.0;
  CommonOpts common;
};

int run_eval(const EvalArgs& a) {
  const fs::path data(a.data);
  const auto graph = incopt::load_graph(data / "nodes.tsv", data / "edges.tsv");
  const auto samples = incopt::read_samples(data / "samples.tsv", graph);
  const auto ckpt = incopt::load_checkpoint(a.checkpoint);

  // The held-out side of the training split, recomputed from the checkpoint.
  const auto [train_ids, test_ids] =
      incopt::split_merchants(samples, ckpt.train.train_fraction, ckpt.train.seed);
  std::vector<incopt::LabeledSample> test_samples;
  for (const auto& s : samples) {
    if (std::binary_search(test_ids.begin(), test_ids.end(), s.merchant)) {
      test_samples.push_back(s);
    }
  }

  double c_low = a.c_low, c_high = a.c_high;
  if (c_low < 0.0 || c_high < 0.0) {
    double lo = samples.front().treatment, hi = samples.front().treatment;
    for (const auto& s : samples) {
      lo = std::min(lo, s.treatment);
      hi = std::max(hi, s.treatment);
    }
    if (c_low < 0.0) c_low = lo;
    if (c_high < 0.0) c_high = hi;
  }

  const std::uint64_t embed_seed = incopt::validation_seed(ckpt.train.seed);

  // Original-scale regression metrics on the held-out samples.
  const auto preds_model_scale =
      incopt::detail::predict_samples(graph, ckpt.model, ckpt.params, test_samples, embed_seed);
  std::vector<double> preds, labels;
  preds.reserve(test_samples.size());
  for (std::size_t i = 0; i < test_samples.size(); ++i) {
    preds.push_back(ckpt.transform.invert(preds_model_scale[i]));
    labels.push_back(test_samples[i].objective);
  }
  const auto reg = incopt::regression_metrics(preds, labels);

  // Inferred curves for the held-out merchants.
  const auto curves = incopt::infer_curves(graph, ckpt.model, ckpt.params, test_ids, embed_seed,
                                           a.common.effective_threads());
  std::vector<std::pair<incopt::NodeId, double>> gradients;
  gradients.reserve(test_ids.size());
  for (std::size_t i = 0; i < test_ids.size(); ++i) {
    gradients.emplace_back(test_ids[i], curves[i].gradient);
  }

  const auto quintiles = incopt::quintile_report(gradients, test_samples, c_high, c_low);

  // Median split into sensitive / insensitive halves.
  const auto halves = incopt::detail::rank_groups(gradients, 2);
  std::vector<std::pair<incopt::NodeId, int>> half_sorted(halves.begin(), halves.end());
  std::sort(half_sorted.begin(), half_sorted.end());
  auto half_of = [&half_sorted](incopt::NodeId m) {
    auto it = std::lower_bound(half_sorted.begin(), half_sorted.end(),
                               std::make_pair(m, std::numeric_limits<int>::min()));
    if (it == half_sorted.end() || it->first != m) return -1;
    return it->second;
  };
  const std::vector<std::string> half_labels{"sensitive", "insensitive"};
  const auto median_split =
      incopt::uplift_gain(test_samples, half_of, 2, half_labels, c_high, c_low);

  // Region sensitivity is a data-level analysis over all samples.
  auto region_of = [&graph](incopt::NodeId m) {
    const int r = graph.region_id(m);
    return r < 0 ? std::string("-") : graph.region_name(r);
  };
  const auto regions = incopt::region_sensitivity(samples, region_of, c_high, c_low);

  json report;
  report["n_test_samples"] = test_samples.size();
  report["c_high"] = c_high;
  report["c_low"] = c_low;
  report["regression"] = {{"mae", reg.mae}, {"mse", reg.mse}, {"n", reg.n}};
  {
    const auto& up = median_split.groups[0];
    const auto& dn = median_split.groups[1];
    json j{{"u_plus", up.defined ? json(up.u) : json()},
           {"u_minus", dn.defined ? json(dn.u) : json()}};
    if (up.defined && dn.defined && std::isfinite(up.se) && std::isfinite(dn.se)) {
      const double diff = up.u - dn.u;
      const double se = std::sqrt(up.se * up.se + dn.se * dn.se);
      j["diff"] = diff;
      j["ci95_low"] = diff - 1.96 * se;
      j["ci95_high"] = diff + 1.96 * se;
    }
    report["uplift_median_split"] = j;
  }
  {
    json arr = json::array();
    for (const auto& g : quintiles.groups) {
      arr.push_back({{"group", g.label},
                     {"u", g.defined ? json(g.u) : json()},
                     {"n_high", g.n_high},
                     {"n_low", g.n_low}});
    }
    report["quintiles"] = arr;
  }
  {
    json arr = json::array();
    for (const auto& r : regions) {
      if (!r.defined) continue;
      arr.push_back({{"region", r.region}, {"ratio", r.ratio}, {"n_hi", r.n_hi}, {"n_lo", r.n_lo}});
    }
    report["regions"] = arr;
  }

  // Truth recovery, if the simulator sidecar is present.
  const fs::path truth_path = data / "truth.tsv";
  if (fs::exists(truth_path)) {
    const auto truth = incopt::read_truth(truth_path, graph);
    const auto merchants = graph.merchants();
    std::vector<std::pair<incopt::NodeId, double>> truth_pairs;
    for (const auto& [id, g] : gradients) {
      const auto it = std::lower_bound(merchants.begin(), merchants.end(), id);
      truth_pairs.emplace_back(id, truth.gradient[static_cast<std::size_t>(it - merchants.begin())]);
    }
    const auto rec = incopt::recovery_metrics(gradients, truth_pairs);
    json deciles = json::array();
    for (const auto& d : rec.deciles) {
      deciles.push_back(
          {{"mean_inferred", d.mean_inferred}, {"mean_truth", d.mean_truth}, {"n", d.n}});
    }
    report["recovery"] = {{"spearman", rec.spearman}, {"deciles", deciles}};
  }

  fs::create_directories(a.out);
  {
    std::ofstream out(fs::path(a.out) / "report.json", std::ios::binary);
    out << report.dump(2) << '\n';
  }
  {
    incopt::FileWriter w(fs::path(a.out) / "quintiles.csv");
    w.line("group,u,n_high,n_low");
    for (const auto& g : quintiles.groups) {
      w.line(g.label + "," + (g.defined ? dstr(g.u) : std::string()) + "," +
             std::to_string(g.n_high) + "," + std::to_string(g.n_low));
    }
    w.close();
  }
  {
    incopt::FileWriter w(fs::path(a.out) / "regions.csv");
    w.line("region,ratio,n_hi,n_lo");
    for (const auto& r : regions) {
      if (!r.defined) continue;
      w.line(r.region + "," + dstr(r.ratio) + "," + std::to_string(r.n_hi) + "," +
             std::to_string(r.n_lo));
    }
    w.close();
  }
  std::map<std::string, std::string> resolved{
      {"data", a.data},
      {"checkpoint", a.checkpoint},
      {"checkpoint_config_hash", ckpt.config_hash},
      {"c-high", dstr(c_high)},
      {"c-low", dstr(c_low)},
  };
  write_manifest(a.out, "eval", resolved, ckpt.train.seed);
  std::printf("eval: test mae %s, mse %s over %zu samples -> %s\n", dstr(reg.mae).c_str(),
              dstr(reg.mse).c_str(), reg.n, a.out.c_str());
  return 0;
}

// ------------------------------------------------------------- gradcheck ---

struct GradcheckArgs {
  std::uint64_t seed = 1;
  std::string model = "ge";
  std::string aggregator = "mean";
  std::string activation = "relu";
  double h = 1e-5;
  int depth = 2;
  int width = 6;
};

int run_gradcheck(const GradcheckArgs& a) {
  incopt::SimConfig sim;
  sim.merchants = 5;
  sim.customers = 12;
  sim.regions = 2;
  sim.intra_region_edge_prob = 0.5;
  sim.inter_region_edge_prob = 0.1;
  sim.node_feature_dim = 4;
  sim.edge_feature_dim = 3;
  sim.noise_sd = 0.3;
  const auto campaign = incopt::generate_campaign(sim, a.seed);
  const auto samples = incopt::run_experiment(campaign.graph, campaign.truth, sim, a.seed);

  incopt::ModelConfig mc;
  mc.kind = parse_model_kind(a.model);
  mc.depth = a.depth;
  mc.width = a.width;
  mc.input_dim = campaign.graph.feature_dim();
  mc.edge_dim = campaign.graph.edge_feature_dim();
  mc.fanouts.assign(a.depth, 3);
  mc.aggregator = parse_aggregator(a.aggregator);
  mc.activation = parse_activation(a.activation);
  const auto params = incopt::init_params(mc, incopt::mix_seed(a.seed, 0x9));

  const auto report =
      incopt::grad_check(campaign.graph, mc, params, samples, a.h, incopt::mix_seed(a.seed, 0xF));
  std::printf("%-12s %12s %8s %6s\n", "block", "max_rel_err", "checked", "kinks");
  for (const auto& b : report.blocks) {
    std::printf("%-12s %12.3e %8d %6d\n", b.name.c_str(), b.max_rel_err, b.checked,
                b.skipped_kinks);
  }
  std::printf("overall max relative error: %.3e\n", report.max_rel_err());
  if (report.max_rel_err() >= 1e-4) {
    std::fprintf(stderr, "error: gradient check failed (max relative error %.3e >= 1e-4)\n",
                 report.max_rel_err());
    return 2;
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"merchant incentive optimization over transaction graphs"};
  app.set_version_flag("--version", std::string("incopt ") + incopt::kVersion +
                                        " (checkpoint format " + incopt::kCheckpointMagic + ")");
  app.require_subcommand(1);

  SynthArgs synth;
  TrainArgs train;
  InferArgs infer;
  AllocateArgs allocate;
  EvalArgs eval;
  GradcheckArgs gradcheck;

  auto* s = app.add_subcommand("synth", "generate a synthetic campaign dataset");
  s->set_config("--config");
  s->add_option("--out", synth.out, "output directory")->required();
  s->add_option("--seed", synth.seed, "campaign seed");
  s->add_option("--merchants", synth.sim.merchants, "number of merchants");
  s->add_option("--customers", synth.sim.customers, "number of customers");
  s->add_option("--regions", synth.sim.regions, "number of regions");
  s->add_option("--intra-prob", synth.sim.intra_region_edge_prob, "intra-region edge probability");
  s->add_option("--inter-prob", synth.sim.inter_region_edge_prob, "inter-region edge probability");
  s->add_option("--node-dim", synth.sim.node_feature_dim, "node feature dimension");
  s->add_option("--edge-dim", synth.sim.edge_feature_dim, "edge feature dimension");
  s->add_option("--treatments", synth.sim.treatment_set, "candidate treatment values")
      ->delimiter(',');
  s->add_option("--noise-sd", synth.sim.noise_sd, "observation noise std dev");
  s->add_option("--days", synth.sim.days, "observation horizon in days");
  s->add_option("--gradient-bases", synth.sim.gradient_region_bases,
                "per-region gradient base values")
      ->delimiter(',');
  s->add_option("--intercept-bases", synth.sim.intercept_region_bases,
                "per-region intercept base values")
      ->delimiter(',');
  s->add_option("--gradient-degree-coeff", synth.sim.gradient_degree_coeff,
                "gradient log-degree coefficient");
  s->add_option("--intercept-degree-coeff", synth.sim.intercept_degree_coeff,
                "intercept log-degree coefficient");
  s->add_option("--gradient-noise-sd", synth.sim.gradient_noise_sd, "planted gradient noise");
  s->add_option("--intercept-noise-sd", synth.sim.intercept_noise_sd, "planted intercept noise");
  s->add_option("--region-fidelity", synth.sim.feature_region_fidelity,
                "probability the region feature reports the true region");

  auto* t = app.add_subcommand("train", "fit a curve model on a campaign dataset");
  t->set_config("--config");
  t->add_option("--data", train.data, "dataset directory (nodes.tsv, edges.tsv, samples.tsv)")
      ->required();
  t->add_option("--out", train.out, "output directory")->required();
  t->add_option("--model", train.model, "ge | dnn | lr");
  t->add_option("--depth", train.depth, "layer count");
  t->add_option("--width", train.width, "embedding dimension");
  t->add_option("--fanouts", train.fanouts, "per-hop neighbor caps")->delimiter(',');
  t->add_option("--aggregator", train.aggregator, "mean | attention");
  t->add_option("--activation", train.activation, "relu | tanh");
  t->add_option("--lr", train.train.learning_rate, "ADAM learning rate");
  t->add_option("--lr-decay", train.train.lr_decay, "per-epoch learning-rate decay factor");
  t->add_option("--beta1", train.train.beta1, "ADAM beta1");
  t->add_option("--beta2", train.train.beta2, "ADAM beta2");
  t->add_option("--eps", train.train.eps, "ADAM epsilon");
  t->add_option("--batch", train.train.batch_size, "mini-batch size");
  t->add_option("--epochs", train.train.epochs, "maximum epochs");
  t->add_option("--label-transform", train.transform, "none | log1p-zscore");
  t->add_option("--train-fraction", train.train.train_fraction, "merchant train fraction");
  t->add_option("--patience", train.train.patience, "early-stopping patience in epochs");
  t->add_option("--seed", train.train.seed, "training seed");

  auto* i = app.add_subcommand("infer", "extract per-merchant curves from a checkpoint");
  i->add_option("--data", infer.data, "dataset directory")->required();
  i->add_option("--checkpoint", infer.checkpoint, "checkpoint file")->required();
  i->add_option("--out", infer.out, "output directory")->required();
  i->add_option("--threads", infer.common.threads, "worker threads");
  i->add_flag("--deterministic", infer.common.deterministic, "force single-threaded execution");

  auto* al = app.add_subcommand("allocate", "choose one treatment per merchant under a budget");
  al->add_option("--curves", allocate.curves, "curves.csv from infer")->required();
  al->add_option("--budget", allocate.budget, "total budget")->required();
  al->add_option("--treatments", allocate.treatments, "candidate treatment values")
      ->delimiter(',');
  al->add_option("--out", allocate.out, "output directory")->required();

  auto* e = app.add_subcommand("eval", "evaluate a checkpoint on held-out data");
  e->add_option("--data", eval.data, "dataset directory")->required();
  e->add_option("--checkpoint", eval.checkpoint, "checkpoint file")->required();
  e->add_option("--out", eval.out, "output directory")->required();
  e->add_option("--c-high", eval.c_high, "high treatment for uplift (default: max observed)");
  e->add_option("--c-low", eval.c_low, "low treatment for uplift (default: min observed)");
  e->add_option("--threads", eval.common.threads, "worker threads");
  e->add_flag("--deterministic", eval.common.deterministic, "force single-threaded execution");

  auto* g = app.add_subcommand("gradcheck", "finite-difference audit of the analytic gradients");
  g->add_option("--seed", gradcheck.seed, "instance seed");
  g->add_option("--model", gradcheck.model, "ge | dnn | lr");
  g->add_option("--aggregator", gradcheck.aggregator, "mean | attention");
  g->add_option("--activation", gradcheck.activation, "relu | tanh | identity");
  g->add_option("--step", gradcheck.h, "finite-difference step");
  g->add_option("--depth", gradcheck.depth, "layer count");
  g->add_option("--width", gradcheck.width, "embedding dimension");

  for (auto* sub : app.get_subcommands({})) {
    for (auto* opt : sub->get_options()) {
      if (opt->get_expected_min() > 0) {
        opt->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
      }
    }
  }

  try {
    std::vector<std::string> args = expand_config_args(argc, argv);
    std::reverse(args.begin(), args.end());  // CLI::App::parse consumes reversed args
    app.parse(std::move(args));
  } catch (const CLI::ParseError& err) {
    const int code = app.exit(err);
    return code == 0 ? 0 : 1;
  } catch (const incopt::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 1;
  }

  try {
    if (*s) return run_synth(synth);
    if (*t) return run_train(train);
    if (*i) return run_infer(infer);
    if (*al) return run_allocate(allocate);
    if (*e) return run_eval(eval);
    if (*g) return run_gradcheck(gradcheck);
  } catch (const incopt::Error& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  } catch (const std::exception& err) {
    std::fprintf(stderr, "error: %s\n", err.what());
    return 2;
  }
  return 1;
}
