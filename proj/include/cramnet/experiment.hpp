#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "cramnet/compress.hpp"
#include "cramnet/data.hpp"
#include "cramnet/train.hpp"

namespace cramnet {

struct CliOverrides {
  std::optional<std::uint64_t> seed;  // replaces every configured seed stream
  std::optional<std::filesystem::path> data_dir;
  std::optional<std::filesystem::path> out_dir;
};

struct DataConfig {
  std::string kind;  // "synthetic" or "cifar10"
  std::filesystem::path dir;  // cifar10 batch directory
  Index classes = 8;
  Index n_train = 2000, n_test = 500;
  Index height = 16, width = 16, channels = 3;
  double noise_sigma = 0.25;
};

struct ExperimentConfig {
  std::string run_id;
  std::filesystem::path config_dir;  // directory of the config file; relative paths resolve here
  std::filesystem::path arch;
  std::optional<std::filesystem::path> plan;
  DataConfig data;
  OptimizerConfig optimizer;
  StopRule baseline_stop;
  double val_fraction = 0.1;
  std::uint64_t seed_init = 1, seed_shuffle = 2, seed_data = 3;
  std::vector<std::string> stages;  // subset of train, compress, finetune, eval
  std::filesystem::path out_dir;
};

/// Parses and validates an experiment config; throws std::runtime_error
/// with a description on any config problem.
ExperimentConfig load_experiment_config(const std::filesystem::path& config_path,
                                        const CliOverrides& overrides = {});

/// Builds the (train, test) pair the config describes. Synthetic data is
/// drawn as one stream and cut so train and test share class templates
/// but no samples.
std::pair<Dataset, Dataset> make_datasets(const DataConfig& cfg, std::uint64_t data_seed);

struct StageStatus {
  std::string name;
  std::string status;  // "ok" or "error"
  std::string note;
};

struct RunOutcome {
  int exit_code = 0;  // 0 success, 1 stage failure, 2 config error
  std::vector<StageStatus> stages;
  std::filesystem::path out_dir;
};

/// Runs the configured stages (or the `only_stages` subset) into the run
/// directory, writing checkpoints, CSV histories, metrics.json and a
/// manifest.json; deterministic for fixed seeds. A failed stage is
/// recorded in the manifest and aborts the remaining stages.
RunOutcome run_experiment(const std::filesystem::path& config_path,
                          const CliOverrides& overrides = {},
                          const std::vector<std::string>& only_stages = {});

}  // namespace cramnet
