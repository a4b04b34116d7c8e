#include "cramnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>

namespace cramnet {

namespace {

constexpr Index kEvalChunk = 256;

std::vector<Index> all_indices(Index n) {
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  return idx;
}

double batch_loss(const Model& model, const Tensor& logits, const Tensor& p, const Tensor& l,
                  LossKind kind, Tensor* grad) {
  (void)model;
  LossInputs in{logits, p, l};
  return kind == LossKind::cram ? cram_loss(in, grad) : softmax_ce_loss(in, grad);
}

long count_correct(const Tensor& logits, const std::vector<int>& labels,
                   const std::vector<Index>& idx) {
  const Index k = logits.extent(1);
  long correct = 0;
  for (std::size_t r = 0; r < idx.size(); ++r)
    if (argmax_lowest(logits.data() + static_cast<Index>(r) * k, k) ==
        labels[static_cast<std::size_t>(idx[r])])
      ++correct;
  return correct;
}

}  // namespace

std::string TrainReport::to_csv() const {
  std::ostringstream out;
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  out.precision(10);
  for (const EpochStats& e : history)
    out << e.epoch << ',' << e.train_loss << ',' << e.train_acc << ',' << e.val_loss << ','
        << e.val_acc << '\n';
  return out.str();
}

void TrainReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f << to_csv();
}

Evaluation evaluate(const Model& model, const Dataset& data, const Tensor* teacher_logits,
                    LossKind kind) {
  if (data.size() == 0) throw std::invalid_argument("evaluate: empty dataset");
  const Index n = data.size();
  double loss_sum = 0;
  long correct = 0;
  for (Index start = 0; start < n; start += kEvalChunk) {
    const Index end = std::min(n, start + kEvalChunk);
    std::vector<Index> idx(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = subset_rows(data.inputs, idx);
    const Tensor l = one_hot(data.labels, idx, data.classes);
    const Tensor p = teacher_logits ? subset_rows(*teacher_logits, idx) : Tensor{};
    const Tensor logits = forward(model, x);
    loss_sum += batch_loss(model, logits, p, l, kind, nullptr) * static_cast<double>(idx.size());
    correct += count_correct(logits, data.labels, idx);
  }
  return {loss_sum / static_cast<double>(n), 100.0 * static_cast<double>(correct) / static_cast<double>(n)};
}

TrainReport train(Model& model, const Dataset& train_data, const Tensor* train_teacher_logits,
                  const Dataset& val_data, const Tensor* val_teacher_logits, LossKind kind,
                  const OptimizerConfig& cfg, const StopRule& stop, std::uint64_t shuffle_seed,
                  const std::vector<std::string>& trainable) {
  validate(cfg);
  if (train_data.size() == 0) throw std::invalid_argument("train: empty training set");
  if (kind == LossKind::cram && !train_teacher_logits)
    throw std::invalid_argument("train: the combined loss needs teacher logits");

  std::vector<Index> ords;
  if (trainable.empty()) {
    ords = all_indices(static_cast<Index>(model.params.weights.size()));
  } else {
    for (const std::string& name : trainable) ords.push_back(model.param_index(name));
  }
  std::vector<Tensor> ms_w, ms_b;
  for (Index o : ords) {
    ms_w.emplace_back(model.params.weights[static_cast<std::size_t>(o)].shape());
    ms_b.emplace_back(model.params.biases[static_cast<std::size_t>(o)].shape());
  }

  TrainReport report;
  std::mt19937_64 rng(shuffle_seed);
  const Index n = train_data.size();
  double best_val = std::numeric_limits<double>::infinity();
  int stale = 0;

  // early stopping keeps the parameters of the best validation epoch
  double best_seen = std::numeric_limits<double>::infinity();
  int best_epoch = -1;
  std::vector<Tensor> best_w(ords.size()), best_b(ords.size());
  const auto snapshot = [&](int epoch) {
    best_epoch = epoch;
    for (std::size_t s = 0; s < ords.size(); ++s) {
      best_w[s] = model.params.weights[static_cast<std::size_t>(ords[s])];
      best_b[s] = model.params.biases[static_cast<std::size_t>(ords[s])];
    }
  };
  const auto restore_best = [&] {
    if (best_epoch < 0) return;
    for (std::size_t s = 0; s < ords.size(); ++s) {
      model.params.weights[static_cast<std::size_t>(ords[s])] = std::move(best_w[s]);
      model.params.biases[static_cast<std::size_t>(ords[s])] = std::move(best_b[s]);
    }
    report.note = "restored epoch " + std::to_string(best_epoch);
  };

  for (int epoch = 0; epoch < stop.max_epochs; ++epoch) {
    double loss_sum = 0;
    long correct = 0;
    for (const auto& idx : batches(n, cfg.batch_size, rng, /*shuffle=*/true)) {
      const Tensor x = subset_rows(train_data.inputs, idx);
      const Tensor l = one_hot(train_data.labels, idx, train_data.classes);
      const Tensor p = train_teacher_logits ? subset_rows(*train_teacher_logits, idx) : Tensor{};
      ForwardTrace trace = forward_trace(model, x);
      Tensor grad_logits;
      const double loss = batch_loss(model, trace.logits, p, l, kind, &grad_logits);
      if (!std::isfinite(loss)) {
        report.diverged = true;
        report.note = "loss diverged at epoch " + std::to_string(epoch);
        return report;
      }
      loss_sum += loss * static_cast<double>(idx.size());
      correct += count_correct(trace.logits, train_data.labels, idx);

      const Gradients g = backward(model, trace, grad_logits);
      for (Index t : ords)
        if (!g.weights[static_cast<std::size_t>(t)].all_finite() ||
            !g.biases[static_cast<std::size_t>(t)].all_finite()) {
          report.diverged = true;
          report.note = "gradient diverged at epoch " + std::to_string(epoch);
          return report;
        }
      for (std::size_t s = 0; s < ords.size(); ++s) {
        const auto o = static_cast<std::size_t>(ords[s]);
        rmsprop_step(model.params.weights[o], g.weights[o], ms_w[s], cfg);
        rmsprop_step(model.params.biases[o], g.biases[o], ms_b[s], cfg);
      }
    }

    EpochStats stats;
    stats.epoch = epoch;
    stats.train_loss = loss_sum / static_cast<double>(n);
    stats.train_acc = 100.0 * static_cast<double>(correct) / static_cast<double>(n);
    if (val_data.size() > 0) {
      const Evaluation val = evaluate(model, val_data, val_teacher_logits, kind);
      stats.val_loss = val.loss;
      stats.val_acc = val.accuracy;
    }
    report.history.push_back(stats);

    if (val_data.size() > 0) {
      if (stats.val_loss < best_seen) {
        best_seen = stats.val_loss;
        snapshot(epoch);
      }
      if (stats.val_loss < best_val - stop.min_delta) {
        best_val = stats.val_loss;
        stale = 0;
      } else if (++stale >= stop.patience) {
        break;
      }
    }
  }
  restore_best();
  return report;
}

double gradient_check(const Model& model, const Dataset& batch, const Tensor* teacher_logits,
                      LossKind kind, std::uint64_t seed, Index sample_coords) {
  if (count_params(model.spec) > 50'000)
    throw std::invalid_argument("gradient_check expects a small model (<= 5e4 parameters)");
  const std::vector<Index> idx = all_indices(batch.size());
  const Tensor l = one_hot(batch.labels, idx, batch.classes);
  const Tensor p = teacher_logits ? *teacher_logits : Tensor{};

  Model probe = model;
  const auto loss_of = [&]() {
    const Tensor logits = forward(probe, batch.inputs);
    return batch_loss(probe, logits, p, l, kind, nullptr);
  };

  const ForwardTrace trace = forward_trace(model, batch.inputs);
  Tensor grad_logits;
  batch_loss(model, trace.logits, p, l, kind, &grad_logits);
  const Gradients analytic = backward(model, trace, grad_logits);

  // flatten the parameter coordinate space: (layer, weights|biases, offset)
  struct Coord {
    std::size_t layer;
    bool bias;
    Index offset;
  };
  std::vector<Coord> coords;
  for (std::size_t layer = 0; layer < model.params.weights.size(); ++layer) {
    for (Index o = 0; o < model.params.weights[layer].size(); ++o)
      coords.push_back({layer, false, o});
    for (Index o = 0; o < model.params.biases[layer].size(); ++o) coords.push_back({layer, true, o});
  }
  if (static_cast<Index>(coords.size()) > sample_coords) {
    std::mt19937_64 rng(seed);
    std::shuffle(coords.begin(), coords.end(), rng);
    coords.resize(static_cast<std::size_t>(sample_coords));
  }

  constexpr double eps = 1e-5;
  double max_rel = 0;
  for (const Coord& c : coords) {
    Tensor& t = c.bias ? probe.params.biases[c.layer] : probe.params.weights[c.layer];
    const double saved = t(c.offset);
    t(c.offset) = saved + eps;
    const double up = loss_of();
    t(c.offset) = saved - eps;
    const double down = loss_of();
    t(c.offset) = saved;
    const double numeric = (up - down) / (2 * eps);
    const double a = c.bias ? analytic.biases[c.layer](c.offset) : analytic.weights[c.layer](c.offset);
    const double denom = std::max({std::abs(a), std::abs(numeric), 1e-6});
    max_rel = std::max(max_rel, std::abs(a - numeric) / denom);
  }
  return max_rel;
}

}  // namespace cramnet
