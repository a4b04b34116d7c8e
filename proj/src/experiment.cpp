#include "cramnet/experiment.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <numeric>
#include <sstream>

#include "cramnet/metrics.hpp"

namespace cramnet {

using nlohmann::json;

namespace {

std::filesystem::path resolve(const std::filesystem::path& base, const std::filesystem::path& p) {
  return p.is_absolute() ? p : base / p;
}

StopRule stop_from_json(const json& j, StopRule base) {
  base.max_epochs = j.value("max_epochs", base.max_epochs);
  base.patience = j.value("patience", base.patience);
  base.min_delta = j.value("min_delta", base.min_delta);
  return base;
}

}  // namespace

ExperimentConfig load_experiment_config(const std::filesystem::path& config_path,
                                        const CliOverrides& overrides) {
  std::ifstream f(config_path);
  if (!f) throw std::runtime_error("cannot open config " + config_path.string());
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("bad config " + config_path.string() + ": " + e.what());
  }

  ExperimentConfig cfg;
  cfg.config_dir = std::filesystem::absolute(config_path).parent_path();
  try {
    cfg.run_id = j.value("run_id", config_path.stem().string());
    cfg.arch = resolve(cfg.config_dir, j.at("arch").get<std::string>());
    if (j.contains("plan")) cfg.plan = resolve(cfg.config_dir, j.at("plan").get<std::string>());

    const json& d = j.at("data");
    cfg.data.kind = d.at("kind").get<std::string>();
    if (cfg.data.kind == "cifar10") {
      cfg.data.dir = resolve(cfg.config_dir, d.value("dir", "."));
    } else if (cfg.data.kind == "synthetic") {
      cfg.data.classes = d.value("classes", cfg.data.classes);
      cfg.data.n_train = d.value("train", cfg.data.n_train);
      cfg.data.n_test = d.value("test", cfg.data.n_test);
      cfg.data.height = d.value("height", cfg.data.height);
      cfg.data.width = d.value("width", cfg.data.width);
      cfg.data.channels = d.value("channels", cfg.data.channels);
      cfg.data.noise_sigma = d.value("noise_sigma", cfg.data.noise_sigma);
    } else {
      throw std::runtime_error("data.kind must be synthetic or cifar10");
    }

    if (j.contains("optimizer")) {
      const json& o = j.at("optimizer");
      cfg.optimizer.learning_rate = o.value("learning_rate", cfg.optimizer.learning_rate);
      cfg.optimizer.decay = o.value("decay", cfg.optimizer.decay);
      cfg.optimizer.epsilon = o.value("epsilon", cfg.optimizer.epsilon);
      cfg.optimizer.batch_size = o.value("batch_size", cfg.optimizer.batch_size);
    }
    validate(cfg.optimizer);
    if (j.contains("baseline_stop")) cfg.baseline_stop = stop_from_json(j.at("baseline_stop"), cfg.baseline_stop);
    cfg.val_fraction = j.value("val_fraction", cfg.val_fraction);

    if (j.contains("seeds")) {
      const json& s = j.at("seeds");
      cfg.seed_init = s.value("init", cfg.seed_init);
      cfg.seed_shuffle = s.value("shuffle", cfg.seed_shuffle);
      cfg.seed_data = s.value("data", cfg.seed_data);
    }
    cfg.stages = j.value("stages", std::vector<std::string>{"train", "compress", "finetune", "eval"});
    for (const std::string& s : cfg.stages)
      if (s != "train" && s != "compress" && s != "finetune" && s != "eval")
        throw std::runtime_error("unknown stage '" + s + "'");
    cfg.out_dir = resolve(std::filesystem::current_path(), j.value("out_dir", "runs/" + cfg.run_id));
  } catch (const json::exception& e) {
    throw std::runtime_error("bad config " + config_path.string() + ": " + e.what());
  }

  if (overrides.seed) {
    cfg.seed_init = *overrides.seed;
    cfg.seed_shuffle = *overrides.seed + 1;
    cfg.seed_data = *overrides.seed + 2;
  }
  if (overrides.data_dir) cfg.data.dir = *overrides.data_dir;
  if (overrides.out_dir) cfg.out_dir = *overrides.out_dir;
  return cfg;
}

std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg, std::uint64_t data_seed) {
  if (cfg.kind == "cifar10") return load_cifar10(cfg.dir);

  const Index total = cfg.n_train + cfg.n_test;
  const Index per_class = (total + cfg.classes - 1) / cfg.classes;
  const Dataset all = synth_dataset(cfg.classes, per_class, cfg.height, cfg.width, cfg.channels,
                                    data_seed, cfg.noise_sigma);
  std::vector<Index> train_idx(static_cast<std::size_t>(cfg.n_train));
  std::iota(train_idx.begin(), train_idx.end(), Index{0});
  std::vector<Index> test_idx(static_cast<std::size_t>(cfg.n_test));
  std::iota(test_idx.begin(), test_idx.end(), cfg.n_train);
  return {subset(all, train_idx), subset(all, test_idx)};
}

namespace {

struct RunContext {
  ExperimentConfig cfg;
  Dataset train_split, val_split, test_set;

  std::filesystem::path baseline_ckpt() const { return cfg.out_dir / "baseline.ckpt"; }
  std::filesystem::path student_ckpt() const { return cfg.out_dir / "student.ckpt"; }
  std::filesystem::path final_ckpt() const { return cfg.out_dir / "final.ckpt"; }
  std::filesystem::path cache_dir() const { return cfg.out_dir / "cache"; }
};

CompressionPlan load_run_plan(const RunContext& ctx) {
  if (!ctx.cfg.plan) throw std::runtime_error("this stage needs a plan file in the config");
  return load_plan(*ctx.cfg.plan);
}

Model load_run_teacher(const RunContext& ctx, const CompressionPlan& plan) {
  std::filesystem::path p;
  if (plan.teacher.empty()) {
    p = ctx.baseline_ckpt();
  } else {
    p = plan.teacher;
    if (p.is_relative()) {
      if (std::filesystem::exists(ctx.cfg.out_dir / p))
        p = ctx.cfg.out_dir / p;
      else
        p = ctx.cfg.config_dir / p;
    }
  }
  return load_checkpoint(p);
}

void stage_train(RunContext& ctx) {
  const ArchitectureSpec arch = load_architecture(ctx.cfg.arch);
  Model model = build(arch, ctx.cfg.seed_init);
  TrainReport report = train(model, ctx.train_split, nullptr, ctx.val_split, nullptr,
                             LossKind::plain_ce, ctx.cfg.optimizer, ctx.cfg.baseline_stop,
                             ctx.cfg.seed_shuffle);
  if (report.diverged) throw std::runtime_error("baseline training diverged: " + report.note);
  save_checkpoint(model, ctx.baseline_ckpt());
  report.write_csv(ctx.cfg.out_dir / "history_baseline.csv");
}

std::string stage_compress(RunContext& ctx) {
  const CompressionPlan plan = load_run_plan(ctx);
  const Model teacher = load_run_teacher(ctx, plan);
  CompressConfig cc{ctx.cfg.optimizer, ctx.cfg.seed_init, ctx.cache_dir()};
  const CompressionResult result = compress(teacher, plan, ctx.train_split, ctx.val_split, cc);

  save_checkpoint(result.student, ctx.student_ckpt());
  std::ofstream csv(ctx.cfg.out_dir / "subproblems.csv");
  if (!csv) throw std::runtime_error("cannot write subproblems.csv");
  csv << "index,layer,new_width,epochs,final_val_loss,grafted_val_accuracy,diverged\n";
  csv.precision(10);
  for (const SubProblemReport& r : result.reports) {
    const double final_val = r.train.history.empty() ? std::nan("") : r.train.history.back().val_loss;
    csv << r.index << ',' << r.layer << ',' << r.new_width << ',' << r.train.history.size() << ','
        << final_val << ',' << r.grafted_val_accuracy << ',' << (r.train.diverged ? 1 : 0) << '\n';
    r.train.write_csv(ctx.cfg.out_dir /
                      ("subproblem_" + std::to_string(r.index) + "_history.csv"));
  }
  // divergence is a recorded outcome of the procedure, not a harness error
  if (result.diverged)
    return "diverged after sub-problem " + std::to_string(result.stopped_after);
  if (result.halted)
    return "halted by accuracy floor after sub-problem " + std::to_string(result.stopped_after);
  return {};
}

void stage_finetune(RunContext& ctx) {
  const CompressionPlan plan = load_run_plan(ctx);
  const Model teacher = load_run_teacher(ctx, plan);
  const Model student = load_checkpoint(ctx.student_ckpt());
  const std::string out_layer = teacher.spec.layers.back().name;
  const ActivationCache tl_train =
      capture_activations(teacher, ctx.train_split, out_layer, ctx.cache_dir());
  const ActivationCache tl_val = capture_activations(teacher, ctx.val_split, out_layer, ctx.cache_dir());
  auto [tuned, report] = finetune(student, ctx.train_split, tl_train.logits, ctx.val_split,
                                  tl_val.logits, plan.finetune_epochs, ctx.cfg.optimizer,
                                  ctx.cfg.seed_shuffle);
  save_checkpoint(tuned, ctx.final_ckpt());
  report.write_csv(ctx.cfg.out_dir / "history_finetune.csv");
}

void stage_eval(RunContext& ctx) {
  const Model teacher = load_checkpoint(ctx.baseline_ckpt());
  Model candidate = teacher;
  if (std::filesystem::exists(ctx.final_ckpt()))
    candidate = load_checkpoint(ctx.final_ckpt());
  else if (std::filesystem::exists(ctx.student_ckpt()))
    candidate = load_checkpoint(ctx.student_ckpt());

  const double a_100 = accuracy(teacher, ctx.test_set);
  const double a_c = accuracy(candidate, ctx.test_set);
  const MetricsReport metrics = make_metrics(candidate.spec, teacher.spec, a_c, a_100);
  std::ofstream f(ctx.cfg.out_dir / "metrics.json");
  if (!f) throw std::runtime_error("cannot write metrics.json");
  f << to_json(metrics).dump(2) << '\n';
}

}  // namespace

RunOutcome run_experiment(const std::filesystem::path& config_path, const CliOverrides& overrides,
                          const std::vector<std::string>& only_stages) {
  RunOutcome outcome;
  RunContext ctx;
  try {
    ctx.cfg = load_experiment_config(config_path, overrides);
  } catch (const std::exception& e) {
    outcome.exit_code = 2;
    outcome.stages.push_back({"config", "error", e.what()});
    return outcome;
  }
  outcome.out_dir = ctx.cfg.out_dir;

  std::vector<std::string> stages = ctx.cfg.stages;
  if (!only_stages.empty()) stages = only_stages;

  std::filesystem::create_directories(ctx.cfg.out_dir);
  try {
    auto [train_all, test] = make_datasets(ctx.cfg.data, ctx.cfg.seed_data);
    ctx.test_set = std::move(test);
    std::tie(ctx.train_split, ctx.val_split) =
        split(train_all, ctx.cfg.val_fraction, ctx.cfg.seed_data + 17);
  } catch (const std::exception& e) {
    outcome.exit_code = 1;
    outcome.stages.push_back({"data", "error", e.what()});
  }

  for (const std::string& name : stages) {
    if (outcome.exit_code != 0) break;
    StageStatus st{name, "ok", ""};
    try {
      if (name == "train")
        stage_train(ctx);
      else if (name == "compress")
        st.note = stage_compress(ctx);
      else if (name == "finetune")
        stage_finetune(ctx);
      else if (name == "eval")
        stage_eval(ctx);
      else
        throw std::runtime_error("unknown stage '" + name + "'");
    } catch (const std::exception& e) {
      st.status = "error";
      st.note = e.what();
      outcome.exit_code = 1;
    }
    outcome.stages.push_back(std::move(st));
  }

  json manifest{{"run_id", ctx.cfg.run_id},
                {"status", outcome.exit_code == 0 ? "ok" : "failed"},
                {"stages", json::array()}};
  for (const StageStatus& st : outcome.stages) {
    json js{{"name", st.name}, {"status", st.status}};
    if (!st.note.empty()) js["note"] = st.note;
    manifest["stages"].push_back(std::move(js));
  }
  std::ofstream mf(ctx.cfg.out_dir / "manifest.json");
  if (mf) mf << manifest.dump(2) << '\n';
  return outcome;
}

}  // namespace cramnet
