#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "cramnet/data.hpp"
#include "cramnet/graph.hpp"
#include "cramnet/train.hpp"

namespace cramnet {

enum class CompressionOrder { output_to_input, input_to_output };

struct CompressionPlan {
  std::string teacher;                   // checkpoint path; may be resolved by the caller
  std::map<std::string, Index> targets;  // layer name -> new width
  CompressionOrder order = CompressionOrder::output_to_input;
  StopRule sub_stop;                     // per-sub-problem training budget
  int finetune_epochs = 0;
  std::optional<double> accuracy_floor;  // percent; halts compression when the grafted net drops below
  bool init_from_teacher = false;        // seed trainable layers from teacher weights when shapes permit

  bool identity(const ArchitectureSpec& teacher_spec) const;
};

nlohmann::json to_json(const CompressionPlan& plan);
CompressionPlan plan_from_json(const nlohmann::json& j);
CompressionPlan load_plan(const std::filesystem::path& path);
void save_plan(const CompressionPlan& plan, const std::filesystem::path& path);

/// The teacher spec with every target width applied.
ArchitectureSpec plan_applied(const ArchitectureSpec& teacher, const CompressionPlan& plan);

/// One three-layer retraining slice: the boundary layer provides the
/// input, the resized layer and the parameters out of it are trained, and
/// everything further downstream runs frozen through the output.
struct SubProblem {
  int index = 0;
  std::string input_boundary;  // name of the layer whose activation feeds the slice; "" = network input
  std::string resized_layer;
  Index new_width = 0;
  std::string coupled_layer;        // next parametric layer; its (into-)parameters retrain too
  ArchitectureSpec slice_spec;      // resized layer through the output, widths as of this step
  std::vector<std::string> trainable;  // == {resized_layer, coupled_layer}
};

/// Splits the plan into sub-problems, ordered for solving. In the default
/// output-to-input order every slice input is sized to the teacher width
/// at its boundary; in the experimental input-to-output order it is sized
/// to the already-compressed prefix.
std::vector<SubProblem> slice(const ArchitectureSpec& teacher, const CompressionPlan& plan);

/// Teacher activations at one layer boundary plus the capturing network's
/// logits, persisted to <cache_dir>/<fingerprint>/<boundary>/ as
/// index.json + activations.bin + logits.bin (little-endian f64).
struct ActivationCache {
  std::string boundary;
  std::string fingerprint;
  Index samples = 0;
  std::filesystem::path dir;
  bool hit = false;  // true when loaded from disk without any forward pass
  Tensor activations;  // (N, ...) boundary activations
  Tensor logits;       // (N, K)
};

ActivationCache capture_activations(const Model& net, const Dataset& data,
                                    const std::string& boundary,
                                    const std::filesystem::path& cache_dir);

struct SubProblemData {
  Tensor train_inputs, val_inputs;
  std::vector<int> train_labels, val_labels;
  Tensor train_teacher_logits, val_teacher_logits;
  Index classes = 0;
};

struct SubProblemResult {
  std::map<std::string, LayerParams> trained;
  TrainReport report;
};

/// Trains one slice with the combined loss. Frozen layers take their
/// parameters from `current` (the teacher with all previously solved
/// sub-problems grafted in).
SubProblemResult train_subproblem(const SubProblem& sub, const SubProblemData& data,
                                  const Model& current, const OptimizerConfig& cfg,
                                  const StopRule& stop, std::uint64_t seed,
                                  bool init_from_teacher, const Model* teacher);

struct SubProblemReport {
  int index = 0;
  std::string layer;
  Index new_width = 0;
  TrainReport train;
  double grafted_val_accuracy = 0;  // accuracy of the partially compressed network
};

struct CompressionResult {
  Model student;
  std::vector<SubProblemReport> reports;
  bool diverged = false;
  bool halted = false;      // accuracy floor reached
  int stopped_after = -1;   // index of the last executed sub-problem, -1 when all ran
};

struct CompressConfig {
  OptimizerConfig optimizer;
  std::uint64_t seed = 0;
  std::filesystem::path cache_dir;
};

/// Runs the full layer-wise compression: slice, then for each sub-problem
/// capture/load cached activations, train, and graft the result into the
/// evolving network. Sub-problems run strictly sequentially; each one
/// reads only parameters produced by those before it.
CompressionResult compress(const Model& teacher, const CompressionPlan& plan, const Dataset& train,
                           const Dataset& val, const CompressConfig& cc);

/// End-to-end training of the assembled student with the combined loss
/// for exactly `epochs` epochs (no early stopping).
std::pair<Model, TrainReport> finetune(const Model& student, const Dataset& train_data,
                                       const Tensor& train_teacher_logits, const Dataset& val_data,
                                       const Tensor& val_teacher_logits, int epochs,
                                       const OptimizerConfig& cfg, std::uint64_t seed);

}  // namespace cramnet
