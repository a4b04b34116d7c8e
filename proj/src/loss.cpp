#include "cramnet/loss.hpp"

#include <cmath>
#include <limits>
#include <stdexcept>

namespace cramnet {

Eigen::ArrayXd softmax(const Eigen::Ref<const Eigen::ArrayXd>& logits) {
  const double shift = logits.maxCoeff();
  Eigen::ArrayXd e = (logits - shift).exp();
  return e / e.sum();
}

double cross_entropy(const Eigen::Ref<const Eigen::ArrayXd>& onehot,
                     const Eigen::Ref<const Eigen::ArrayXd>& probs) {
  if (onehot.size() != probs.size()) throw std::invalid_argument("cross_entropy: size mismatch");
  double h = 0.0;
  for (Index j = 0; j < onehot.size(); ++j) {
    if (onehot[j] == 0.0) continue;
    if (probs[j] <= 0.0) return std::numeric_limits<double>::infinity();
    h -= onehot[j] * std::log(probs[j]);
  }
  return h;
}

double teacher_mse(const Eigen::Ref<const Eigen::ArrayXd>& p,
                   const Eigen::Ref<const Eigen::ArrayXd>& q) {
  if (p.size() != q.size()) throw std::invalid_argument("teacher_mse: size mismatch");
  return (p - q).square().sum() / static_cast<double>(p.size());
}

namespace {

using ConstRow = Eigen::Map<const Eigen::ArrayXd>;

void check_batch(const LossInputs& in, bool need_teacher) {
  if (in.q.rank() != 2 || in.l.rank() != 2) throw std::invalid_argument("loss inputs must be (N, K)");
  if (!in.q.same_shape(in.l)) throw std::invalid_argument("logits and labels disagree on (N, K)");
  if (need_teacher && !in.q.same_shape(in.p))
    throw std::invalid_argument("teacher logits missing or shaped differently from student logits");
}

}  // namespace

double cram_loss(const LossInputs& in, Tensor* grad_q) {
  check_batch(in, true);
  const Index n = in.q.extent(0);
  const Index k = in.q.extent(1);
  if (grad_q) *grad_q = Tensor(in.q.shape());

  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    ConstRow q(in.q.data() + i * k, k);
    ConstRow p(in.p.data() + i * k, k);
    ConstRow l(in.l.data() + i * k, k);
    const Eigen::ArrayXd sq = softmax(q);
    total += teacher_mse(p, q) + cross_entropy(l, sq);
    if (grad_q) {
      Eigen::Map<Eigen::ArrayXd> g(grad_q->data() + i * k, k);
      g = (2.0 / static_cast<double>(k)) * (q - p) + (sq - l);
    }
  }
  if (grad_q) grad_q->flat() /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

double softmax_ce_loss(const LossInputs& in, Tensor* grad_q) {
  check_batch(in, false);
  const Index n = in.q.extent(0);
  const Index k = in.q.extent(1);
  if (grad_q) *grad_q = Tensor(in.q.shape());

  double total = 0.0;
  for (Index i = 0; i < n; ++i) {
    ConstRow q(in.q.data() + i * k, k);
    ConstRow l(in.l.data() + i * k, k);
    const Eigen::ArrayXd sq = softmax(q);
    total += cross_entropy(l, sq);
    if (grad_q) {
      Eigen::Map<Eigen::ArrayXd> g(grad_q->data() + i * k, k);
      g = sq - l;
    }
  }
  if (grad_q) grad_q->flat() /= static_cast<double>(n);
  return total / static_cast<double>(n);
}

Index argmax_lowest(const double* row, Index k) {
  Index best = 0;
  for (Index j = 1; j < k; ++j)
    if (row[j] > row[best]) best = j;
  return best;
}

Tensor one_hot(const std::vector<int>& labels, const std::vector<Index>& idx, Index classes) {
  Tensor t(Shape{static_cast<Index>(idx.size()), classes});
  for (std::size_t r = 0; r < idx.size(); ++r) {
    const int label = labels[static_cast<std::size_t>(idx[r])];
    if (label < 0 || label >= classes)
      throw std::invalid_argument("label " + std::to_string(label) + " out of range for " +
                                  std::to_string(classes) + " classes");
    t(static_cast<Index>(r), label) = 1.0;
  }
  return t;
}

}  // namespace cramnet
