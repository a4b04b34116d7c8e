#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "cramnet/data.hpp"
#include "cramnet/graph.hpp"
#include "cramnet/loss.hpp"
#include "cramnet/optimizer.hpp"

namespace cramnet {

enum class LossKind { plain_ce, cram };

struct StopRule {
  int max_epochs = 100;
  int patience = 10;        // epochs without val-loss improvement before stopping
  double min_delta = 1e-4;  // improvement below this does not reset patience
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0, train_acc = 0;
  double val_loss = 0, val_acc = 0;
};

struct TrainReport {
  std::vector<EpochStats> history;
  bool diverged = false;
  std::string note;

  std::string to_csv() const;  // columns epoch,train_loss,train_acc,val_loss,val_acc
  void write_csv(const std::filesystem::path& path) const;
};

struct Evaluation {
  double loss = 0;
  double accuracy = 0;  // percent
};

/// Loss and categorical accuracy over a dataset (chunked forward passes).
/// teacher_logits may be null for plain cross-entropy.
Evaluation evaluate(const Model& model, const Dataset& data, const Tensor* teacher_logits,
                    LossKind kind);

/// Mini-batch RMSProp over the trainable layers (all parametric layers when
/// `trainable` is empty). Early-stops on stagnant validation loss and keeps
/// the parameters of the best validation epoch; a non-finite batch loss or
/// gradient stops training with the diverged flag set, leaving the
/// parameters at their last finite values. Deterministic for a given
/// shuffle seed.
TrainReport train(Model& model, const Dataset& train_data, const Tensor* train_teacher_logits,
                  const Dataset& val_data, const Tensor* val_teacher_logits, LossKind kind,
                  const OptimizerConfig& cfg, const StopRule& stop, std::uint64_t shuffle_seed,
                  const std::vector<std::string>& trainable = {});

/// Max relative error between analytic gradients and central finite
/// differences (eps = 1e-5) over >= sample_coords sampled parameter
/// coordinates. Expects a small model (<= 5e4 parameters).
double gradient_check(const Model& model, const Dataset& batch, const Tensor* teacher_logits,
                      LossKind kind, std::uint64_t seed = 0, Index sample_coords = 500);

}  // namespace cramnet
