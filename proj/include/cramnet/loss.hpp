#pragma once

#include "cramnet/tensor.hpp"

namespace cramnet {

/// Numerically stable (max-shifted) softmax; entries in (0,1), sum 1.
Eigen::ArrayXd softmax(const Eigen::Ref<const Eigen::ArrayXd>& logits);

/// H(l, q) = -sum_j l_j log q_j for one-hot l and probability vector q.
/// Returns +infinity when the probability at the true class is <= 0.
double cross_entropy(const Eigen::Ref<const Eigen::ArrayXd>& onehot,
                     const Eigen::Ref<const Eigen::ArrayXd>& probs);

/// Mean squared error between pre-softmax teacher and student logits.
double teacher_mse(const Eigen::Ref<const Eigen::ArrayXd>& p,
                   const Eigen::Ref<const Eigen::ArrayXd>& q);

struct LossInputs {
  Tensor q;  // (N, K) student pre-softmax logits
  Tensor p;  // (N, K) teacher pre-softmax logits; empty unless distilling
  Tensor l;  // (N, K) one-hot labels
};

/// Combined distillation loss, mean over the batch of
/// teacher_mse(p, q) + cross_entropy(l, softmax(q)).
/// grad_q, if given, receives dLoss/dq including the 1/N factor.
double cram_loss(const LossInputs& in, Tensor* grad_q = nullptr);

/// Plain softmax cross-entropy against the true labels; ignores in.p.
double softmax_ce_loss(const LossInputs& in, Tensor* grad_q = nullptr);

/// Index of the row maximum; ties resolve to the lowest index.
Index argmax_lowest(const double* row, Index k);

/// One-hot encodes labels[idx] rows into an (idx.size(), classes) tensor.
Tensor one_hot(const std::vector<int>& labels, const std::vector<Index>& idx, Index classes);

}  // namespace cramnet
