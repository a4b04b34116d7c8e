#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <nlohmann/json.hpp>

#include <cstdlib>
#include <fstream>
#include <sstream>

#include "cramnet/experiment.hpp"
#include "cramnet/metrics.hpp"
#include "support/testers.hpp"

using namespace cramnet;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kConfigs = CRAMNET_CONFIG_DIR;
const std::string kCli = CRAMNET_CLI_PATH;

ArchitectureSpec arch(const std::string& name) {
  return load_architecture(kConfigs / "archs" / (name + ".json"));
}

std::string slurp(const fs::path& p) {
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

int run_cli(const std::string& args, const fs::path& capture = {}) {
  std::string cmd = kCli + " " + args;
  if (!capture.empty()) cmd += " > " + capture.string() + " 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

}  // namespace

TEST_CASE("parameter ratios against the baseline") {
  const auto baseline = arch("cifar10_baseline");
  CHECK(param_ratio(arch("cifar10_test1"), baseline) == doctest::Approx(10.26).epsilon(0.001));
  CHECK(param_ratio(arch("cifar10_test2"), baseline) == doctest::Approx(7.28).epsilon(0.001));
  CHECK(param_ratio(baseline, baseline) == 100.0);
}

TEST_CASE("FLOP ratios under the MAC convention") {
  const auto baseline = arch("cifar10_baseline");
  CHECK(flop_ratio(arch("cifar10_test1"), baseline) == doctest::Approx(25.17).epsilon(0.008));
  CHECK(flop_ratio(arch("cifar10_test5b"), baseline) == doctest::Approx(6.75).epsilon(0.045));
  CHECK(flop_ratio(baseline, baseline) == 100.0);
}

TEST_CASE("ratio function: zero denominator and homogeneity") {
  CHECK_THROWS_AS(ratio_percent(5, 0), std::invalid_argument);
  std::mt19937_64 rng(61);
  std::uniform_int_distribution<long long> v(1, 1'000'000);
  std::uniform_int_distribution<long long> k(2, 50);
  for (int c = 0; c < 200; ++c) {
    const long long a = v(rng), b = v(rng), scale = k(rng);
    CHECK(ratio_percent(scale * a, scale * b) == doctest::Approx(ratio_percent(a, b)).epsilon(1e-12));
  }
}

TEST_CASE("accuracy: constant predictor and tie-breaking") {
  ArchitectureSpec spec;
  spec.input_shape = {2, 2, 1};
  spec.classes = 10;
  spec.layers = {{"flat", LayerKind::flatten, 0, 0, 0, Padding::same},
                 {"output", LayerKind::softmax_output, 10, 0, 0, Padding::same}};
  Model m = build(spec, 1);
  for (auto& w : m.params.weights) w.flat().setZero();
  for (auto& b : m.params.biases) b.flat().setZero();
  // all-zero logits: every row ties, argmax resolves to class 0

  const Dataset balanced = synth_dataset(10, 30, 2, 2, 1, 62, 0.3);
  CHECK(accuracy(m, balanced) == doctest::Approx(10.0));

  CHECK(delta_a(81.66, 80.64) == doctest::Approx(1.02));
  CHECK(delta_a(50.0, 50.0) == 0.0);

  Dataset empty;
  empty.classes = 10;
  CHECK_THROWS_AS(accuracy(m, empty), std::invalid_argument);
}

TEST_CASE("accuracy and delta stay inside their ranges") {
  std::mt19937_64 rng(63);
  for (int c = 0; c < 10; ++c) {
    const ArchitectureSpec spec = testers::random_arch(rng);
    const Model m = build(spec, 500 + c);
    const Dataset d = synth_dataset(spec.classes, 6, spec.input_shape[0], spec.input_shape[1],
                                    spec.input_shape[2], 600 + c, 0.4);
    const double a = accuracy(m, d);
    CHECK(a >= 0.0);
    CHECK(a <= 100.0);
    CHECK(delta_a(a, 100.0) >= -100.0);
    CHECK(delta_a(a, 0.0) <= 100.0);
  }
}

TEST_CASE("metrics report construction and JSON round trip") {
  const auto baseline = arch("cifar10_baseline");
  const auto test1 = arch("cifar10_test1");
  const MetricsReport r = make_metrics(test1, baseline, 81.66, 80.64);
  CHECK(r.params_new == 128'314);
  CHECK(r.params_old == 1'250'858);
  CHECK(r.delta_a == doctest::Approx(1.02));
  CHECK(r.param_ratio == doctest::Approx(10.26).epsilon(0.001));
  const MetricsReport back = metrics_from_json(to_json(r));
  CHECK(back.params_new == r.params_new);
  CHECK(back.delta_a == r.delta_a);
  CHECK(back.flop_ratio == r.flop_ratio);
}

TEST_CASE("emit_report: CSV rows, markdown table, missing fields") {
  testers::TempDir tmp("report");
  std::vector<RunSummary> runs(2);
  runs[0].run_id = "test1";
  runs[0].params = 128'314;
  runs[0].param_ratio = 10.2586;
  runs[0].flop_ratio = 25.176;
  runs[0].delta_a = 1.02;
  runs[1].run_id = "baseline-only";
  emit_report(runs, tmp.path);

  const std::string csv = slurp(tmp.path / "points.csv");
  CHECK(csv == "run_id,param_ratio,flop_ratio,delta_a\n"
               "test1,10.26,25.18,1.02\n"
               "baseline-only,-,-,-\n");
  const std::string md = slurp(tmp.path / "report.md");
  CHECK(md.find("| test1 | 128314 | 10.26 | 25.18 | +1.02 |") != std::string::npos);
  CHECK(md.find("| baseline-only | - | - | - | - |") != std::string::npos);
}

namespace {

// a complete miniature experiment directory: arch, plan, config
fs::path write_mini_experiment(const fs::path& dir, const std::string& out_dir,
                               bool with_plan = true, int finetune_epochs = 2) {
  json arch_j{{"input_shape", {6, 6, 1}},
              {"classes", 3},
              {"layers",
               {{{"name", "conv1"}, {"kind", "conv2d"}, {"width", 4}, {"kernel", {3, 3}}, {"padding", "same"}},
                {{"name", "relu1"}, {"kind", "relu"}},
                {{"name", "pool1"}, {"kind", "maxpool"}},
                {{"name", "flat"}, {"kind", "flatten"}},
                {{"name", "fc1"}, {"kind", "dense"}, {"width", 8}},
                {{"name", "relu2"}, {"kind", "relu"}},
                {{"name", "output"}, {"kind", "softmax_output"}, {"width", 3}}}}};
  std::ofstream(dir / "arch.json") << arch_j.dump(2);

  json plan_j{{"teacher", "baseline.ckpt"},
              {"order", "output_to_input"},
              {"targets", {{"conv1", 2}, {"fc1", 4}}},
              {"finetune_epochs", finetune_epochs},
              {"stop", {{"max_epochs", 3}, {"patience", 3}, {"min_delta", 1e-4}}}};
  std::ofstream(dir / "plan.json") << plan_j.dump(2);

  json cfg{{"run_id", "mini"},
           {"arch", "arch.json"},
           {"data",
            {{"kind", "synthetic"}, {"classes", 3}, {"train", 90}, {"test", 30},
             {"height", 6}, {"width", 6}, {"channels", 1}, {"noise_sigma", 0.25}}},
           {"optimizer", {{"learning_rate", 5e-3}, {"batch_size", 16}}},
           {"baseline_stop", {{"max_epochs", 6}, {"patience", 6}}},
           {"val_fraction", 0.2},
           {"seeds", {{"init", 3}, {"shuffle", 4}, {"data", 5}}},
           {"stages", {"train", "compress", "finetune", "eval"}},
           {"out_dir", out_dir}};
  if (with_plan) cfg["plan"] = "plan.json";
  const fs::path cfg_path = dir / "config.json";
  std::ofstream(cfg_path) << cfg.dump(2);
  return cfg_path;
}

}  // namespace

TEST_CASE("run_experiment: full pipeline artifacts and manifest") {
  testers::TempDir tmp("exp");
  const fs::path cfg = write_mini_experiment(tmp.path, (tmp.path / "run").string());
  const RunOutcome out = run_experiment(cfg);
  CHECK(out.exit_code == 0);
  REQUIRE(out.stages.size() == 4);
  for (const auto& st : out.stages) CHECK(st.status == "ok");

  CHECK(fs::exists(tmp.path / "run" / "baseline.ckpt"));
  CHECK(fs::exists(tmp.path / "run" / "history_baseline.csv"));
  CHECK(fs::exists(tmp.path / "run" / "student.ckpt"));
  CHECK(fs::exists(tmp.path / "run" / "subproblems.csv"));
  CHECK(fs::exists(tmp.path / "run" / "final.ckpt"));
  CHECK(fs::exists(tmp.path / "run" / "metrics.json"));
  CHECK(fs::exists(tmp.path / "run" / "manifest.json"));

  json manifest;
  std::ifstream(tmp.path / "run" / "manifest.json") >> manifest;
  CHECK(manifest["status"] == "ok");
  CHECK(manifest["stages"].size() == 4);

  json metrics;
  std::ifstream(tmp.path / "run" / "metrics.json") >> metrics;
  const MetricsReport r = metrics_from_json(metrics);
  CHECK(r.params_old == count_params(load_architecture(tmp.path / "arch.json")));
  CHECK(r.param_ratio < 100.0);
}

TEST_CASE("run_experiment: identical seeds give bit-identical artifacts") {
  testers::TempDir tmp("exp_rep");
  const fs::path cfg1 = write_mini_experiment(tmp.path, (tmp.path / "run1").string());
  REQUIRE(run_experiment(cfg1).exit_code == 0);
  // second run into a different directory, same config otherwise
  CliOverrides o;
  o.out_dir = tmp.path / "run2";
  REQUIRE(run_experiment(cfg1, o).exit_code == 0);

  for (const std::string f : {"baseline.ckpt", "student.ckpt", "final.ckpt"})
    CHECK(slurp(tmp.path / "run1" / f) == slurp(tmp.path / "run2" / f));
  for (const std::string f : {"history_baseline.csv", "subproblems.csv", "history_finetune.csv",
                              "metrics.json"})
    CHECK(slurp(tmp.path / "run1" / f) == slurp(tmp.path / "run2" / f));
}

TEST_CASE("run_experiment: missing checkpoint and bad config are reported") {
  testers::TempDir tmp("exp_err");
  SUBCASE("compress without a prior baseline checkpoint") {
    const fs::path cfg = write_mini_experiment(tmp.path, (tmp.path / "run").string());
    const RunOutcome out = run_experiment(cfg, {}, {"compress"});
    CHECK(out.exit_code == 1);
    REQUIRE(!out.stages.empty());
    CHECK(out.stages.back().status == "error");
    json manifest;
    std::ifstream(tmp.path / "run" / "manifest.json") >> manifest;
    CHECK(manifest["status"] == "failed");
  }
  SUBCASE("malformed config file") {
    std::ofstream(tmp.path / "bad.json") << "{ not json";
    const RunOutcome out = run_experiment(tmp.path / "bad.json");
    CHECK(out.exit_code == 2);
  }
  SUBCASE("missing arch file") {
    json cfg{{"arch", "nope.json"},
             {"data", {{"kind", "synthetic"}, {"classes", 2}, {"train", 8}, {"test", 4},
                       {"height", 2}, {"width", 2}, {"channels", 1}}},
             {"stages", {"train"}},
             {"out_dir", (tmp.path / "run").string()}};
    std::ofstream(tmp.path / "c.json") << cfg.dump();
    const RunOutcome out = run_experiment(tmp.path / "c.json");
    CHECK(out.exit_code == 1);
  }
}

TEST_CASE("CLI: count, stage verbs, report, exit codes") {
  testers::TempDir tmp("cli");
  const fs::path cfg = write_mini_experiment(tmp.path, (tmp.path / "run").string());

  SUBCASE("count prints both networks and ratios") {
    const fs::path out = tmp.path / "count.txt";
    CHECK(run_cli("count --config " + cfg.string(), out) == 0);
    const std::string text = slurp(out);
    CHECK(text.find("baseline: params=") != std::string::npos);
    CHECK(text.find("compressed: params=") != std::string::npos);
    CHECK(text.find("param_ratio=") != std::string::npos);
  }

  SUBCASE("stage verbs chain through a full run") {
    CHECK(run_cli("train --config " + cfg.string(), tmp.path / "t.txt") == 0);
    CHECK(run_cli("compress --config " + cfg.string(), tmp.path / "c.txt") == 0);
    CHECK(run_cli("finetune --config " + cfg.string(), tmp.path / "f.txt") == 0);
    CHECK(run_cli("eval --config " + cfg.string(), tmp.path / "e.txt") == 0);
    CHECK(fs::exists(tmp.path / "run" / "metrics.json"));

    json report_cfg{{"runs", {(tmp.path / "run").string()}},
                    {"out", (tmp.path / "report").string()}};
    std::ofstream(tmp.path / "report.json") << report_cfg.dump();
    CHECK(run_cli("report --config " + (tmp.path / "report.json").string(), tmp.path / "r.txt") == 0);
    const std::string csv = slurp(tmp.path / "report" / "points.csv");
    CHECK(csv.find("run_id,param_ratio,flop_ratio,delta_a") == 0);
    CHECK(csv.find("mini,") != std::string::npos);
  }

  SUBCASE("config errors exit with 2, stage failures with 1") {
    std::ofstream(tmp.path / "bad.json") << "{";
    CHECK(run_cli("count --config " + (tmp.path / "bad.json").string(), tmp.path / "x.txt") == 2);
    CHECK(run_cli("eval --config " + cfg.string(), tmp.path / "y.txt") == 1);  // nothing trained yet
  }
}

TEST_CASE("CLI count reproduces the published table numbers") {
  testers::TempDir tmp("cli_count");
  json cfg{{"run_id", "count-only"},
           {"arch", (kConfigs / "archs" / "cifar10_baseline.json").string()},
           {"plan", (kConfigs / "plans" / "cifar10_test1.json").string()},
           {"data", {{"kind", "synthetic"}, {"classes", 10}, {"train", 8}, {"test", 4},
                     {"height", 32}, {"width", 32}, {"channels", 3}}},
           {"out_dir", (tmp.path / "run").string()}};
  std::ofstream(tmp.path / "c.json") << cfg.dump();
  const fs::path out = tmp.path / "out.txt";
  REQUIRE(run_cli("count --config " + (tmp.path / "c.json").string(), out) == 0);
  const std::string text = slurp(out);
  CHECK(text.find("params=1250858") != std::string::npos);
  CHECK(text.find("params=128314") != std::string::npos);
  CHECK(text.find("param_ratio=10.26") != std::string::npos);
  CHECK(text.find("flop_ratio=25.18") != std::string::npos);
}
