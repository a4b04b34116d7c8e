#include <CLI11.hpp>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>

#include "cramnet/compress.hpp"
#include "cramnet/experiment.hpp"
#include "cramnet/metrics.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CommonOpts {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::optional<std::string> data_dir;
  std::optional<std::string> out_dir;

  cramnet::CliOverrides overrides() const {
    cramnet::CliOverrides o;
    o.seed = seed;
    if (data_dir) o.data_dir = fs::path(*data_dir);
    if (out_dir) o.out_dir = fs::path(*out_dir);
    return o;
  }
};

void add_common(CLI::App* cmd, CommonOpts& opts) {
  cmd->add_option("--config", opts.config, "experiment config file")->required();
  cmd->add_option("--seed", opts.seed, "override every configured seed");
  cmd->add_option("--data-dir", opts.data_dir, "override the dataset directory");
  cmd->add_option("--out-dir", opts.out_dir, "override the run output directory");
}

int run_stage(const CommonOpts& opts, const std::vector<std::string>& stages) {
  const cramnet::RunOutcome out = cramnet::run_experiment(opts.config, opts.overrides(), stages);
  for (const auto& st : out.stages) {
    std::cout << st.name << ": " << st.status;
    if (!st.note.empty()) std::cout << " (" << st.note << ")";
    std::cout << '\n';
  }
  return out.exit_code;
}

int run_count(const CommonOpts& opts) {
  const auto cfg = cramnet::load_experiment_config(opts.config, opts.overrides());
  const auto arch = cramnet::load_architecture(cfg.arch);
  std::cout << "baseline: params=" << cramnet::count_params(arch)
            << " flops=" << cramnet::count_flops(arch) << '\n';
  if (cfg.plan) {
    const auto plan = cramnet::load_plan(*cfg.plan);
    const auto compressed = cramnet::plan_applied(arch, plan);
    std::cout << "compressed: params=" << cramnet::count_params(compressed)
              << " flops=" << cramnet::count_flops(compressed) << '\n';
    std::cout.setf(std::ios::fixed);
    std::cout.precision(2);
    std::cout << "param_ratio=" << cramnet::param_ratio(compressed, arch)
              << "% flop_ratio=" << cramnet::flop_ratio(compressed, arch) << "%\n";
  }
  return 0;
}

// config: {"runs": ["dir", ...], "out": "dir"}
int run_report(const CommonOpts& opts) {
  std::ifstream f(opts.config);
  if (!f) {
    std::cerr << "cannot open config " << opts.config << '\n';
    return 2;
  }
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    std::cerr << "bad config: " << e.what() << '\n';
    return 2;
  }
  const fs::path base = fs::absolute(opts.config).parent_path();
  fs::path out = j.value("out", "report");
  if (out.is_relative()) out = base / out;
  if (opts.out_dir) out = *opts.out_dir;

  std::vector<cramnet::RunSummary> runs;
  for (const auto& jr : j.at("runs")) {
    fs::path dir = jr.get<std::string>();
    if (dir.is_relative()) dir = base / dir;
    cramnet::RunSummary s;
    s.run_id = dir.filename().string();
    const fs::path manifest = dir / "manifest.json";
    if (fs::exists(manifest)) {
      std::ifstream mf(manifest);
      json m;
      if (mf >> m; m.contains("run_id")) s.run_id = m["run_id"].get<std::string>();
    }
    const fs::path metrics = dir / "metrics.json";
    if (fs::exists(metrics)) {
      std::ifstream mf(metrics);
      json m;
      mf >> m;
      const auto r = cramnet::metrics_from_json(m);
      s.params = r.params_new;
      s.param_ratio = r.param_ratio;
      s.flop_ratio = r.flop_ratio;
      s.delta_a = r.delta_a;
    }
    runs.push_back(std::move(s));
  }
  cramnet::emit_report(runs, out);
  std::cout << "wrote " << (out / "points.csv").string() << " and " << (out / "report.md").string()
            << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"layer-wise teacher-student network compression toolkit"};
  app.require_subcommand(1);

  CommonOpts train_opts, compress_opts, finetune_opts, eval_opts, count_opts, report_opts;
  add_common(app.add_subcommand("train", "train the baseline network"), train_opts);
  add_common(app.add_subcommand("compress", "run the layer-wise compression"), compress_opts);
  add_common(app.add_subcommand("finetune", "fine-tune the assembled student"), finetune_opts);
  add_common(app.add_subcommand("eval", "evaluate and write metrics"), eval_opts);
  add_common(app.add_subcommand("count", "print parameter and FLOP counts"), count_opts);
  add_common(app.add_subcommand("report", "collect runs into points.csv and report.md"), report_opts);

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("train")) return run_stage(train_opts, {"train"});
    if (app.got_subcommand("compress")) return run_stage(compress_opts, {"compress"});
    if (app.got_subcommand("finetune")) return run_stage(finetune_opts, {"finetune"});
    if (app.got_subcommand("eval")) return run_stage(eval_opts, {"eval"});
    if (app.got_subcommand("count")) return run_count(count_opts);
    if (app.got_subcommand("report")) return run_report(report_opts);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 0;
}
