#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <stdexcept>

#include "cramnet/tensor.hpp"

namespace cramnet {

enum class Padding { same, valid };

inline Index conv_out_extent(Index in, Index kernel, Padding padding) {
  if (padding == Padding::same) return in;
  const Index out = in - (kernel - 1);
  if (out < 1)
    throw std::invalid_argument("valid convolution needs input extent >= kernel extent, got " +
                                std::to_string(in) + " vs " + std::to_string(kernel));
  return out;
}

inline Index pool_out_extent(Index in) {
  if (in < 2) throw std::invalid_argument("maxpool input extent must be >= 2, got " + std::to_string(in));
  return in / 2;  // odd leftover row/column is truncated
}

/// View over a (height, width, in_channels, out_channels) weight tensor:
/// one 2-D kernel per (input channel, filter) pair. Extents must be odd.
template <typename Scalar>
struct KernelStackT {
  Index height = 0;
  Index width = 0;
  Index in_channels = 0;
  Index out_channels = 0;
  const TensorT<Scalar>* weights = nullptr;

  explicit KernelStackT(const TensorT<Scalar>& w) : weights(&w) {
    if (w.rank() != 4)
      throw std::invalid_argument("kernel stack expects (h, w, in, out) weights, got shape " +
                                  to_string(w.shape()));
    height = w.extent(0);
    width = w.extent(1);
    in_channels = w.extent(2);
    out_channels = w.extent(3);
    if (height % 2 == 0 || width % 2 == 0)
      throw std::invalid_argument("kernel extents must be odd, got " + to_string(w.shape()));
  }

  Index half_height() const { return (height - 1) / 2; }
  Index half_width() const { return (width - 1) / 2; }
};

using KernelStack = KernelStackT<double>;

namespace detail {

struct ConvDims {
  Index n, h, w, c;      // input
  Index oh, ow;          // output spatial extents
  Index pad_h, pad_w;
  bool batched;
};

template <typename Scalar>
ConvDims conv_dims(const TensorT<Scalar>& input, const KernelStackT<Scalar>& kernels, Padding padding) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3)
    throw std::invalid_argument("conv2d input must be (H,W,C) or (N,H,W,C), got " + to_string(input.shape()));
  ConvDims d;
  d.batched = batched;
  d.n = batched ? input.extent(0) : 1;
  d.h = input.extent(batched ? 1 : 0);
  d.w = input.extent(batched ? 2 : 1);
  d.c = input.extent(batched ? 3 : 2);
  if (d.c != kernels.in_channels)
    throw std::invalid_argument("conv2d channel mismatch: input has " + std::to_string(d.c) +
                                ", kernels expect " + std::to_string(kernels.in_channels));
  d.pad_h = padding == Padding::same ? kernels.half_height() : 0;
  d.pad_w = padding == Padding::same ? kernels.half_width() : 0;
  d.oh = conv_out_extent(d.h, kernels.height, padding);
  d.ow = conv_out_extent(d.w, kernels.width, padding);
  return d;
}

// One row per output position, one column per (ki, kj, ci) patch entry.
template <typename Scalar>
void im2col(const Scalar* img, Index h, Index w, Index c, Index kh, Index kw, Index pad_h,
            Index pad_w, Index oh, Index ow, Scalar* cols) {
  const Index patch = kh * kw * c;
  for (Index oi = 0; oi < oh; ++oi) {
    for (Index oj = 0; oj < ow; ++oj) {
      Scalar* row = cols + (oi * ow + oj) * patch;
      for (Index ki = 0; ki < kh; ++ki) {
        const Index ii = oi + ki - pad_h;
        for (Index kj = 0; kj < kw; ++kj) {
          const Index jj = oj + kj - pad_w;
          Scalar* dst = row + (ki * kw + kj) * c;
          if (ii < 0 || ii >= h || jj < 0 || jj >= w) {
            std::fill(dst, dst + c, Scalar(0));
          } else {
            const Scalar* src = img + (ii * w + jj) * c;
            std::copy(src, src + c, dst);
          }
        }
      }
    }
  }
}

// Scatter-add inverse of im2col; img must be zero-initialised.
template <typename Scalar>
void col2im(const Scalar* cols, Index h, Index w, Index c, Index kh, Index kw, Index pad_h,
            Index pad_w, Index oh, Index ow, Scalar* img) {
  const Index patch = kh * kw * c;
  for (Index oi = 0; oi < oh; ++oi) {
    for (Index oj = 0; oj < ow; ++oj) {
      const Scalar* row = cols + (oi * ow + oj) * patch;
      for (Index ki = 0; ki < kh; ++ki) {
        const Index ii = oi + ki - pad_h;
        if (ii < 0 || ii >= h) continue;
        for (Index kj = 0; kj < kw; ++kj) {
          const Index jj = oj + kj - pad_w;
          if (jj < 0 || jj >= w) continue;
          Scalar* dst = img + (ii * w + jj) * c;
          const Scalar* src = row + (ki * kw + kj) * c;
          for (Index ci = 0; ci < c; ++ci) dst[ci] += src[ci];
        }
      }
    }
  }
}

}  // namespace detail

/// Cross-correlation of each input channel with its kernel, summed per
/// filter, plus a per-filter bias. Stride is fixed at 1; same padding
/// zero-pads the border, valid padding shrinks each spatial extent by
/// kernel-1. Accepts (H,W,C) or batched (N,H,W,C) input.
template <typename Scalar>
TensorT<Scalar> conv2d_forward(const TensorT<Scalar>& input, const KernelStackT<Scalar>& kernels,
                               const TensorT<Scalar>& biases, Padding padding) {
  const auto d = detail::conv_dims(input, kernels, padding);
  if (biases.size() != kernels.out_channels)
    throw std::invalid_argument("conv2d bias count must equal filter count");
  const Index patch = kernels.height * kernels.width * d.c;
  const Index positions = d.oh * d.ow;

  MatrixRM<Scalar> cols(d.n * positions, patch);
  for (Index b = 0; b < d.n; ++b)
    detail::im2col(input.data() + b * d.h * d.w * d.c, d.h, d.w, d.c, kernels.height, kernels.width,
                   d.pad_h, d.pad_w, d.oh, d.ow, cols.data() + b * positions * patch);

  // (kh, kw, cin, cout) row-major data is exactly a (patch x cout) matrix
  Eigen::Map<const MatrixRM<Scalar>> wmat(kernels.weights->data(), patch, kernels.out_channels);

  TensorT<Scalar> out(d.batched ? Shape{d.n, d.oh, d.ow, kernels.out_channels}
                                : Shape{d.oh, d.ow, kernels.out_channels});
  Eigen::Map<MatrixRM<Scalar>> omat(out.data(), d.n * positions, kernels.out_channels);
  omat.noalias() = cols * wmat;
  omat.rowwise() +=
      Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(biases.data(), kernels.out_channels);
  return out;
}

template <typename Scalar>
struct Conv2dGradsT {
  TensorT<Scalar> input, weights, biases;
};

using Conv2dGrads = Conv2dGradsT<double>;

template <typename Scalar>
Conv2dGradsT<Scalar> conv2d_backward(const TensorT<Scalar>& grad_out, const TensorT<Scalar>& input,
                                     const KernelStackT<Scalar>& kernels, Padding padding) {
  const auto d = detail::conv_dims(input, kernels, padding);
  const Shape expect = d.batched ? Shape{d.n, d.oh, d.ow, kernels.out_channels}
                                 : Shape{d.oh, d.ow, kernels.out_channels};
  if (grad_out.shape() != expect)
    throw std::invalid_argument("conv2d_backward: grad_out shape " + to_string(grad_out.shape()) +
                                " does not match forward output " + to_string(expect));
  const Index patch = kernels.height * kernels.width * d.c;
  const Index positions = d.oh * d.ow;
  const Index cout = kernels.out_channels;

  Conv2dGradsT<Scalar> g{TensorT<Scalar>(input.shape()), TensorT<Scalar>(kernels.weights->shape()),
                         TensorT<Scalar>(Shape{cout})};
  Eigen::Map<MatrixRM<Scalar>> gw(g.weights.data(), patch, cout);
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(g.biases.data(), cout);
  Eigen::Map<const MatrixRM<Scalar>> wmat(kernels.weights->data(), patch, cout);

  MatrixRM<Scalar> cols(positions, patch);
  MatrixRM<Scalar> gcols(positions, patch);
  for (Index b = 0; b < d.n; ++b) {
    detail::im2col(input.data() + b * d.h * d.w * d.c, d.h, d.w, d.c, kernels.height, kernels.width,
                   d.pad_h, d.pad_w, d.oh, d.ow, cols.data());
    Eigen::Map<const MatrixRM<Scalar>> go(grad_out.data() + b * positions * cout, positions, cout);
    gw.noalias() += cols.transpose() * go;
    gb.noalias() += go.colwise().sum().transpose();
    gcols.noalias() = go * wmat.transpose();
    detail::col2im(gcols.data(), d.h, d.w, d.c, kernels.height, kernels.width, d.pad_h, d.pad_w,
                   d.oh, d.ow, g.input.data() + b * d.h * d.w * d.c);
  }
  return g;
}

/// Affine map out_i = sum_p w_ip * in_p + b_i for (S x P) weights.
/// Accepts (P) or batched (N,P) input.
template <typename Scalar>
TensorT<Scalar> dense_forward(const TensorT<Scalar>& input, const TensorT<Scalar>& weights,
                              const TensorT<Scalar>& biases) {
  if (weights.rank() != 2) throw std::invalid_argument("dense weights must be a (S, P) matrix");
  const Index s = weights.extent(0);
  const Index p = weights.extent(1);
  if (biases.size() != s) throw std::invalid_argument("dense bias count must equal neuron count");
  const bool batched = input.rank() == 2;
  if (!batched && input.rank() != 1)
    throw std::invalid_argument("dense input must be (P) or (N,P), got " + to_string(input.shape()));
  const Index n = batched ? input.extent(0) : 1;
  const Index in_dim = batched ? input.extent(1) : input.extent(0);
  if (in_dim != p)
    throw std::invalid_argument("dense dimension mismatch: input width " + std::to_string(in_dim) +
                                " vs weight columns " + std::to_string(p));

  TensorT<Scalar> out(batched ? Shape{n, s} : Shape{s});
  Eigen::Map<const MatrixRM<Scalar>> x(input.data(), n, p);
  Eigen::Map<const MatrixRM<Scalar>> wmat(weights.data(), s, p);
  Eigen::Map<MatrixRM<Scalar>> o(out.data(), n, s);
  o.noalias() = x * wmat.transpose();
  o.rowwise() += Eigen::Map<const Eigen::Matrix<Scalar, 1, Eigen::Dynamic>>(biases.data(), s);
  return out;
}

template <typename Scalar>
struct DenseGradsT {
  TensorT<Scalar> input, weights, biases;
};

using DenseGrads = DenseGradsT<double>;

template <typename Scalar>
DenseGradsT<Scalar> dense_backward(const TensorT<Scalar>& grad_out, const TensorT<Scalar>& input,
                                   const TensorT<Scalar>& weights) {
  const Index s = weights.extent(0);
  const Index p = weights.extent(1);
  const bool batched = input.rank() == 2;
  const Index n = batched ? input.extent(0) : 1;
  const Shape expect = batched ? Shape{n, s} : Shape{s};
  if (grad_out.shape() != expect)
    throw std::invalid_argument("dense_backward: grad_out shape " + to_string(grad_out.shape()) +
                                " does not match output " + to_string(expect));
  DenseGradsT<Scalar> g{TensorT<Scalar>(input.shape()), TensorT<Scalar>(weights.shape()),
                        TensorT<Scalar>(Shape{s})};
  Eigen::Map<const MatrixRM<Scalar>> x(input.data(), n, p);
  Eigen::Map<const MatrixRM<Scalar>> wmat(weights.data(), s, p);
  Eigen::Map<const MatrixRM<Scalar>> go(grad_out.data(), n, s);
  Eigen::Map<MatrixRM<Scalar>> gx(g.input.data(), n, p);
  Eigen::Map<MatrixRM<Scalar>> gw(g.weights.data(), s, p);
  Eigen::Map<Eigen::Matrix<Scalar, Eigen::Dynamic, 1>> gb(g.biases.data(), s);
  gx.noalias() = go * wmat;
  gw.noalias() = go.transpose() * x;
  gb = go.colwise().sum().transpose();
  return g;
}

/// 2x2 max pooling with stride 2; odd leftover rows/columns are dropped.
template <typename Scalar>
TensorT<Scalar> maxpool2d(const TensorT<Scalar>& input) {
  const bool batched = input.rank() == 4;
  if (!batched && input.rank() != 3)
    throw std::invalid_argument("maxpool input must be (H,W,C) or (N,H,W,C)");
  const Index n = batched ? input.extent(0) : 1;
  const Index h = input.extent(batched ? 1 : 0);
  const Index w = input.extent(batched ? 2 : 1);
  const Index c = input.extent(batched ? 3 : 2);
  const Index oh = pool_out_extent(h);
  const Index ow = pool_out_extent(w);

  TensorT<Scalar> out(batched ? Shape{n, oh, ow, c} : Shape{oh, ow, c});
  const Scalar* in = input.data();
  Scalar* o = out.data();
  for (Index b = 0; b < n; ++b) {
    const Scalar* img = in + b * h * w * c;
    Scalar* dst = o + b * oh * ow * c;
    for (Index oi = 0; oi < oh; ++oi)
      for (Index oj = 0; oj < ow; ++oj)
        for (Index ci = 0; ci < c; ++ci) {
          Scalar m = img[((2 * oi) * w + 2 * oj) * c + ci];
          m = std::max(m, img[((2 * oi) * w + 2 * oj + 1) * c + ci]);
          m = std::max(m, img[((2 * oi + 1) * w + 2 * oj) * c + ci]);
          m = std::max(m, img[((2 * oi + 1) * w + 2 * oj + 1) * c + ci]);
          dst[(oi * ow + oj) * c + ci] = m;
        }
  }
  return out;
}

/// Routes each output gradient to the first-encountered maximum of its
/// window, scanning the window in row-major order.
template <typename Scalar>
TensorT<Scalar> maxpool2d_backward(const TensorT<Scalar>& grad_out, const TensorT<Scalar>& input) {
  const bool batched = input.rank() == 4;
  const Index n = batched ? input.extent(0) : 1;
  const Index h = input.extent(batched ? 1 : 0);
  const Index w = input.extent(batched ? 2 : 1);
  const Index c = input.extent(batched ? 3 : 2);
  const Index oh = pool_out_extent(h);
  const Index ow = pool_out_extent(w);
  const Shape expect = batched ? Shape{n, oh, ow, c} : Shape{oh, ow, c};
  if (grad_out.shape() != expect)
    throw std::invalid_argument("maxpool2d_backward: grad_out shape mismatch");

  TensorT<Scalar> g(input.shape());
  const Scalar* in = input.data();
  const Scalar* go = grad_out.data();
  Scalar* gi = g.data();
  for (Index b = 0; b < n; ++b) {
    const Scalar* img = in + b * h * w * c;
    const Scalar* gout = go + b * oh * ow * c;
    Scalar* gimg = gi + b * h * w * c;
    for (Index oi = 0; oi < oh; ++oi)
      for (Index oj = 0; oj < ow; ++oj)
        for (Index ci = 0; ci < c; ++ci) {
          Index best = ((2 * oi) * w + 2 * oj) * c + ci;
          Scalar m = img[best];
          const Index cands[3] = {((2 * oi) * w + 2 * oj + 1) * c + ci,
                                  ((2 * oi + 1) * w + 2 * oj) * c + ci,
                                  ((2 * oi + 1) * w + 2 * oj + 1) * c + ci};
          for (Index cand : cands)
            if (img[cand] > m) {
              m = img[cand];
              best = cand;
            }
          gimg[best] += gout[(oi * ow + oj) * c + ci];
        }
  }
  return g;
}

template <typename Scalar>
TensorT<Scalar> relu(const TensorT<Scalar>& input) {
  return TensorT<Scalar>(input.shape(), input.flat().max(Scalar(0)));
}

template <typename Scalar>
TensorT<Scalar> relu_backward(const TensorT<Scalar>& grad_out, const TensorT<Scalar>& input) {
  if (!grad_out.same_shape(input))
    throw std::invalid_argument("relu_backward: shape mismatch");
  return TensorT<Scalar>(input.shape(),
                         grad_out.flat() * (input.flat() > Scalar(0)).template cast<Scalar>());
}

}  // namespace cramnet
