// End-to-end tests of the incopt binary: exit codes, file outputs,
// determinism of synth, and the full synth -> train -> infer -> allocate ->
// eval pipeline on a small campaign.
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "incopt/tsv.hpp"
#include "test_util.hpp"

namespace fs = std::filesystem;
using testutil::read_file;
using testutil::TempDir;

namespace {

struct RunResult {
  int exit_code;
  std::string output;
};

RunResult run_cli(const std::string& args) {
  const std::string bin = INCOPT_CLI_BIN;
  TempDir out("cli_run_out");
  const fs::path log = out.path() / "log.txt";
  const std::string cmd = bin + " " + args + " >" + log.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.exit_code = WEXITSTATUS(status);
  r.output = read_file(log);
  return r;
}

std::string synth_args(const fs::path& dir, int seed, int merchants = 150, int customers = 450) {
  return "synth --out " + dir.string() + " --seed " + std::to_string(seed) + " --merchants " +
         std::to_string(merchants) + " --customers " + std::to_string(customers) +
         " --intra-prob 0.05 --inter-prob 0.005 --noise-sd 0.4";
}

}  // namespace

TEST_CASE("--version prints the artifact and checkpoint format versions") {
  const auto r = run_cli("--version");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("incopt") != std::string::npos);
  CHECK(r.output.find("INCOPT01") != std::string::npos);
}

TEST_CASE("usage errors exit 1") {
  CHECK(run_cli("").exit_code == 1);
  CHECK(run_cli("frobnicate").exit_code == 1);
  CHECK(run_cli("synth").exit_code == 1);  // missing required --out
  CHECK(run_cli("train --data x").exit_code == 1);
}

TEST_CASE("synth is bit-identical under a fixed seed") {
  TempDir a("cli_synth_a");
  TempDir b("cli_synth_b");
  REQUIRE(run_cli(synth_args(a.path(), 7)).exit_code == 0);
  REQUIRE(run_cli(synth_args(b.path(), 7)).exit_code == 0);
  for (const char* name : {"nodes.tsv", "edges.tsv", "idmap.tsv", "samples.tsv", "truth.tsv",
                           "manifest.json"}) {
    CHECK(read_file(a.path() / name) == read_file(b.path() / name));
    CHECK(!read_file(a.path() / name).empty());
  }
  TempDir c("cli_synth_c");
  REQUIRE(run_cli(synth_args(c.path(), 8)).exit_code == 0);
  CHECK(read_file(a.path() / "edges.tsv") != read_file(c.path() / "edges.tsv"));
}

TEST_CASE("allocate with an infeasible budget exits 2 with a diagnostic") {
  TempDir tmp("cli_infeasible");
  testutil::write_file(tmp.path() / "curves.csv",
                       "merchant_id,gradient,intercept\n"
                       "a,2,0\nb,1,0\nc,0.5,0\n");
  const auto r = run_cli("allocate --curves " + (tmp.path() / "curves.csv").string() +
                         " --budget 2 --treatments 1,2,5 --out " +
                         (tmp.path() / "plan").string());
  CHECK(r.exit_code == 2);
  CHECK(r.output.find("InfeasibleBudget") != std::string::npos);
}

TEST_CASE("missing data files exit 2") {
  const auto r = run_cli("train --data /nonexistent_dir --out /tmp/incopt_nowhere");
  CHECK(r.exit_code == 2);
}

TEST_CASE("full pipeline on a small campaign") {
  TempDir data("cli_pipe_data");
  TempDir out("cli_pipe_out");
  REQUIRE(run_cli(synth_args(data.path(), 21, 200, 600)).exit_code == 0);

  const std::string train_dir = (out.path() / "train").string();
  const auto train = run_cli(
      "train --data " + data.path().string() + " --out " + train_dir +
      " --model ge --depth 1 --width 8 --fanouts 32 --activation tanh"
      " --lr 0.05 --batch 64 --epochs 40 --patience 40 --label-transform none --seed 3");
  REQUIRE(train.exit_code == 0);
  CHECK(fs::exists(fs::path(train_dir) / "checkpoint.bin"));
  const std::string history = read_file(fs::path(train_dir) / "history.csv");
  CHECK(history.rfind("epoch,train_mae,val_mae", 0) == 0);

  const std::string infer_dir = (out.path() / "infer").string();
  const auto infer = run_cli("infer --data " + data.path().string() + " --checkpoint " +
                             train_dir + "/checkpoint.bin --out " + infer_dir + " --threads 2");
  REQUIRE(infer.exit_code == 0);
  const std::string curves = read_file(fs::path(infer_dir) / "curves.csv");
  CHECK(curves.rfind("merchant_id,gradient,intercept", 0) == 0);
  std::size_t curve_rows = 0;
  for (char ch : curves) curve_rows += ch == '\n' ? 1 : 0;
  CHECK(curve_rows == 201);  // header + one row per merchant

  const std::string alloc_dir = (out.path() / "alloc").string();
  const auto alloc = run_cli("allocate --curves " + infer_dir +
                             "/curves.csv --budget 600 --treatments 1,2,5,10,20 --out " +
                             alloc_dir);
  REQUIRE(alloc.exit_code == 0);
  const auto summary = nlohmann::json::parse(read_file(fs::path(alloc_dir) / "summary.json"));
  CHECK(summary.at("total_spend").get<double>() <= 600.0);
  CHECK(summary.at("budget").get<double>() == 600.0);
  CHECK(summary.at("lambda").get<double>() >= 0.0);
  CHECK(summary.at("gap_bound").get<double>() >= 0.0);
  const std::string plan = read_file(fs::path(alloc_dir) / "plan.csv");
  CHECK(plan.rfind("merchant_id,treatment,predicted_objective", 0) == 0);

  const std::string eval_dir = (out.path() / "eval").string();
  const auto eval = run_cli("eval --data " + data.path().string() + " --checkpoint " +
                            train_dir + "/checkpoint.bin --out " + eval_dir);
  REQUIRE(eval.exit_code == 0);
  const auto report = nlohmann::json::parse(read_file(fs::path(eval_dir) / "report.json"));
  CHECK(report.at("regression").at("mae").get<double>() >= 0.0);
  CHECK(report.at("quintiles").size() == 5);
  CHECK(report.contains("recovery"));  // truth.tsv was present
  CHECK(read_file(fs::path(eval_dir) / "quintiles.csv").rfind("group,u,n_high,n_low", 0) == 0);
  CHECK(read_file(fs::path(eval_dir) / "regions.csv").rfind("region,ratio,n_hi,n_lo", 0) == 0);

  // every output directory carries a manifest with a config hash and seed
  for (const auto& dir : {fs::path(data.path()), fs::path(train_dir), fs::path(infer_dir),
                          fs::path(alloc_dir), fs::path(eval_dir)}) {
    const auto manifest = nlohmann::json::parse(read_file(dir / "manifest.json"));
    CHECK(manifest.contains("config_hash"));
    CHECK(manifest.contains("seed"));
    CHECK(manifest.contains("config"));
  }
}

TEST_CASE("infer output is identical for any worker count") {
  TempDir data("cli_threads_data");
  REQUIRE(run_cli(synth_args(data.path(), 51, 700, 1400)).exit_code == 0);
  TempDir train_out("cli_threads_train");
  REQUIRE(run_cli("train --data " + data.path().string() + " --out " + train_out.path().string() +
                  " --model ge --depth 1 --width 4 --fanouts 16 --epochs 2 --batch 128 --seed 2")
              .exit_code == 0);
  TempDir i1("cli_threads_i1");
  TempDir i2("cli_threads_i2");
  const std::string base = "infer --data " + data.path().string() + " --checkpoint " +
                           (train_out.path() / "checkpoint.bin").string() + " --out ";
  REQUIRE(run_cli(base + i1.path().string() + " --threads 1").exit_code == 0);
  REQUIRE(run_cli(base + i2.path().string() + " --threads 4").exit_code == 0);
  CHECK(read_file(i1.path() / "curves.csv") == read_file(i2.path() / "curves.csv"));
}

TEST_CASE("train is reproducible: identical checkpoints for identical seeds") {
  TempDir data("cli_repro_data");
  REQUIRE(run_cli(synth_args(data.path(), 31, 80, 240)).exit_code == 0);
  TempDir o1("cli_repro_1");
  TempDir o2("cli_repro_2");
  const std::string args = "train --data " + data.path().string() +
                           " --model ge --depth 1 --width 4 --fanouts 16 --epochs 6"
                           " --batch 32 --seed 11 --out ";
  REQUIRE(run_cli(args + o1.path().string()).exit_code == 0);
  REQUIRE(run_cli(args + o2.path().string()).exit_code == 0);
  CHECK(read_file(o1.path() / "checkpoint.bin") == read_file(o2.path() / "checkpoint.bin"));
  CHECK(read_file(o1.path() / "history.csv") == read_file(o2.path() / "history.csv"));
}

TEST_CASE("gradcheck subcommand passes and prints per-block errors") {
  const auto r = run_cli("gradcheck --seed 5 --aggregator attention --activation tanh");
  CHECK(r.exit_code == 0);
  CHECK(r.output.find("w_x") != std::string::npos);
  CHECK(r.output.find("overall max relative error") != std::string::npos);
}

TEST_CASE("config file values apply and flags win over the file") {
  TempDir tmp("cli_config");
  testutil::write_file(tmp.path() / "synth.cfg",
                       "merchants=60\ncustomers=180\nintra-prob=0.05\ninter-prob=0.005\n");
  TempDir d1("cli_config_d1");
  const auto r1 = run_cli("synth --config " + (tmp.path() / "synth.cfg").string() + " --seed 5 --out " +
                          d1.path().string());
  REQUIRE(r1.exit_code == 0);
  std::size_t rows = 0;
  incopt::for_each_line(d1.path() / "nodes.tsv", [&](std::size_t, std::string_view) { ++rows; });
  CHECK(rows == 240);  // 60 + 180 from the config file

  TempDir d2("cli_config_d2");
  const auto r2 = run_cli("synth --config " + (tmp.path() / "synth.cfg").string() +
                          " --seed 5 --merchants 30 --out " + d2.path().string());
  REQUIRE(r2.exit_code == 0);
  rows = 0;
  incopt::for_each_line(d2.path() / "nodes.tsv", [&](std::size_t, std::string_view) { ++rows; });
  CHECK(rows == 210);  // flag overrides merchants to 30
}
