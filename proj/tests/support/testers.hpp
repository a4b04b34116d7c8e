#pragma once

#include <filesystem>
#include <functional>
#include <random>
#include <string>

#include "cramnet/graph.hpp"
#include "cramnet/tensor.hpp"

namespace testers {

using cramnet::Index;
using cramnet::Shape;
using cramnet::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> dist(lo, hi);
  Tensor t(std::move(shape));
  for (Index i = 0; i < t.size(); ++i) t(i) = dist(rng);
  return t;
}

/// Central difference of a scalar functional with respect to one tensor
/// coordinate; the tensor is restored afterwards.
template <class LossFn>
double central_diff(LossFn&& f, Tensor& x, Index i, double eps = 1e-5) {
  const double saved = x(i);
  x(i) = saved + eps;
  const double up = f();
  x(i) = saved - eps;
  const double down = f();
  x(i) = saved;
  return (up - down) / (2 * eps);
}

inline double rel_err(double a, double b) {
  const double denom = std::max({std::abs(a), std::abs(b), 1e-6});
  return std::abs(a - b) / denom;
}

/// Direct evaluation of the correlation sum, one output position at a
/// time; deliberately shares no code with the im2col path it checks.
inline Tensor conv_bruteforce(const Tensor& in, const Tensor& w, const Tensor& bias,
                              cramnet::Padding padding) {
  const Index h = in.extent(0), wid = in.extent(1), cin = in.extent(2);
  const Index kh = w.extent(0), kw = w.extent(1), cout = w.extent(3);
  const Index hh = (kh - 1) / 2, hw = (kw - 1) / 2;
  const bool same = padding == cramnet::Padding::same;
  const Index oh = same ? h : h - 2 * hh;
  const Index ow = same ? wid : wid - 2 * hw;
  Tensor out({oh, ow, cout});
  for (Index oi = 0; oi < oh; ++oi)
    for (Index oj = 0; oj < ow; ++oj)
      for (Index co = 0; co < cout; ++co) {
        double acc = bias(co);
        for (Index ki = 0; ki < kh; ++ki)
          for (Index kj = 0; kj < kw; ++kj)
            for (Index ci = 0; ci < cin; ++ci) {
              const Index ii = same ? oi + ki - hh : oi + ki;
              const Index jj = same ? oj + kj - hw : oj + kj;
              if (ii < 0 || ii >= h || jj < 0 || jj >= wid) continue;
              acc += w(ki, kj, ci, co) * in(ii, jj, ci);
            }
        out(oi, oj, co) = acc;
      }
  return out;
}

/// Random but always-valid architecture: a few conv/pool blocks, then
/// flatten, optional hidden dense layers, and the output layer.
inline cramnet::ArchitectureSpec random_arch(std::mt19937_64& rng) {
  using cramnet::ArchitectureSpec;
  using cramnet::LayerKind;
  using cramnet::LayerSpec;
  std::uniform_int_distribution<int> d2(0, 1);
  std::uniform_int_distribution<Index> hw(6, 12);
  std::uniform_int_distribution<Index> chan(1, 3);
  std::uniform_int_distribution<Index> width(2, 8);
  std::uniform_int_distribution<Index> classes(2, 5);

  ArchitectureSpec spec;
  Index h = hw(rng), w = hw(rng);
  spec.input_shape = {h, w, chan(rng)};
  spec.classes = classes(rng);

  int block = 0;
  const int blocks = 1 + d2(rng);
  for (; block < blocks; ++block) {
    LayerSpec conv;
    conv.name = "conv" + std::to_string(block);
    conv.kind = LayerKind::conv2d;
    conv.width = width(rng);
    conv.kernel_h = conv.kernel_w = d2(rng) ? 3 : 1;
    conv.padding = (d2(rng) && h > conv.kernel_h && w > conv.kernel_w) ? cramnet::Padding::valid
                                                                       : cramnet::Padding::same;
    if (conv.padding == cramnet::Padding::valid) {
      h -= conv.kernel_h - 1;
      w -= conv.kernel_w - 1;
    }
    spec.layers.push_back(conv);
    spec.layers.push_back({"relu" + std::to_string(block), LayerKind::relu, 0, 0, 0,
                           cramnet::Padding::same});
    if (h >= 4 && w >= 4 && d2(rng)) {
      spec.layers.push_back({"pool" + std::to_string(block), LayerKind::maxpool, 0, 0, 0,
                             cramnet::Padding::same});
      h /= 2;
      w /= 2;
    }
  }
  spec.layers.push_back({"flat", LayerKind::flatten, 0, 0, 0, cramnet::Padding::same});
  if (d2(rng)) {
    spec.layers.push_back({"fc0", LayerKind::dense, width(rng) * 4, 0, 0, cramnet::Padding::same});
    spec.layers.push_back({"relu_fc0", LayerKind::relu, 0, 0, 0, cramnet::Padding::same});
  }
  spec.layers.push_back({"output", LayerKind::softmax_output, spec.classes, 0, 0,
                         cramnet::Padding::same});
  cramnet::validate(spec);
  return spec;
}

/// Unique scratch directory under the build tree, removed on destruction.
struct TempDir {
  std::filesystem::path path;
  explicit TempDir(const std::string& tag) {
    path = std::filesystem::temp_directory_path() /
           ("cramnet_" + tag + "_" + std::to_string(std::random_device{}()));
    std::filesystem::create_directories(path);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
};

}  // namespace testers
