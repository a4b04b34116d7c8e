#include "cramnet/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

namespace cramnet {

namespace {

constexpr Index kCifarDim = 32;
constexpr Index kCifarChannels = 3;
constexpr Index kCifarClasses = 10;
constexpr std::streamsize kRecordBytes = 1 + kCifarDim * kCifarDim * kCifarChannels;

std::vector<unsigned char> read_all(const std::filesystem::path& file) {
  std::ifstream f(file, std::ios::binary | std::ios::ate);
  if (!f) throw std::runtime_error("cannot open dataset file " + file.string());
  const std::streamsize size = f.tellg();
  f.seekg(0);
  std::vector<unsigned char> bytes(static_cast<std::size_t>(size));
  f.read(reinterpret_cast<char*>(bytes.data()), size);
  if (!f) throw std::runtime_error("failed reading " + file.string());
  return bytes;
}

void parse_records(const std::vector<unsigned char>& bytes, const std::filesystem::path& file,
                   Dataset& out, Index offset) {
  const Index records = static_cast<Index>(bytes.size()) / kRecordBytes;
  const Index plane = kCifarDim * kCifarDim;
  for (Index r = 0; r < records; ++r) {
    const unsigned char* rec = bytes.data() + r * kRecordBytes;
    const int label = rec[0];
    if (label >= kCifarClasses)
      throw std::runtime_error(file.string() + ": record " + std::to_string(r) + " has label " +
                               std::to_string(label));
    out.labels[static_cast<std::size_t>(offset + r)] = label;
    double* img = out.inputs.data() + (offset + r) * plane * kCifarChannels;
    // channel-planar bytes -> interleaved H x W x C doubles
    for (Index ch = 0; ch < kCifarChannels; ++ch) {
      const unsigned char* src = rec + 1 + ch * plane;
      for (Index px = 0; px < plane; ++px) img[px * kCifarChannels + ch] = src[px] / 255.0;
    }
  }
}

}  // namespace

Dataset load_cifar10_batch(const std::filesystem::path& file) {
  const auto bytes = read_all(file);
  if (bytes.empty() || static_cast<std::streamsize>(bytes.size()) % kRecordBytes != 0)
    throw std::runtime_error(file.string() + ": size " + std::to_string(bytes.size()) +
                             " is not a multiple of the 3073-byte record");
  const Index records = static_cast<Index>(bytes.size()) / kRecordBytes;
  Dataset out;
  out.classes = kCifarClasses;
  out.inputs = Tensor({records, kCifarDim, kCifarDim, kCifarChannels});
  out.labels.resize(static_cast<std::size_t>(records));
  parse_records(bytes, file, out, 0);
  return out;
}

std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir) {
  Dataset train;
  train.classes = kCifarClasses;
  std::vector<std::vector<unsigned char>> parts;
  Index total = 0;
  for (int b = 1; b <= 5; ++b) {
    auto bytes = read_all(dir / ("data_batch_" + std::to_string(b) + ".bin"));
    if (bytes.empty() || static_cast<std::streamsize>(bytes.size()) % kRecordBytes != 0)
      throw std::runtime_error("data_batch_" + std::to_string(b) + ".bin has a malformed size");
    total += static_cast<Index>(bytes.size()) / kRecordBytes;
    parts.push_back(std::move(bytes));
  }
  train.inputs = Tensor({total, kCifarDim, kCifarDim, kCifarChannels});
  train.labels.resize(static_cast<std::size_t>(total));
  Index offset = 0;
  for (int b = 0; b < 5; ++b) {
    parse_records(parts[static_cast<std::size_t>(b)], dir / ("data_batch_" + std::to_string(b + 1) + ".bin"),
                  train, offset);
    offset += static_cast<Index>(parts[static_cast<std::size_t>(b)].size()) / kRecordBytes;
  }
  Dataset test = load_cifar10_batch(dir / "test_batch.bin");
  return {std::move(train), std::move(test)};
}

void save_cifar10_batch(const Dataset& data, const std::filesystem::path& file) {
  const Shape want{data.size(), kCifarDim, kCifarDim, kCifarChannels};
  if (data.inputs.shape() != want)
    throw std::invalid_argument("binary batch format requires (N,32,32,3) images, got " +
                                to_string(data.inputs.shape()));
  if (data.classes > kCifarClasses)
    throw std::invalid_argument("binary batch format carries at most 10 classes");
  std::ofstream f(file, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + file.string());
  const Index plane = kCifarDim * kCifarDim;
  std::vector<unsigned char> rec(static_cast<std::size_t>(kRecordBytes));
  for (Index r = 0; r < data.size(); ++r) {
    rec[0] = static_cast<unsigned char>(data.labels[static_cast<std::size_t>(r)]);
    const double* img = data.inputs.data() + r * plane * kCifarChannels;
    for (Index ch = 0; ch < kCifarChannels; ++ch)
      for (Index px = 0; px < plane; ++px)
        rec[static_cast<std::size_t>(1 + ch * plane + px)] =
            static_cast<unsigned char>(std::llround(img[px * kCifarChannels + ch] * 255.0));
    f.write(reinterpret_cast<const char*>(rec.data()), kRecordBytes);
  }
  if (!f) throw std::runtime_error("failed writing " + file.string());
}

Dataset synth_dataset(Index classes, Index per_class, Index h, Index w, Index c, std::uint64_t seed,
                      double noise_sigma) {
  if (classes < 1 || h < 1 || w < 1 || c < 1 || per_class < 0)
    throw std::invalid_argument("synth_dataset: sizes must be positive");
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> uni(0.0, 1.0);
  const Index pixels = h * w * c;

  // Per-class template, box-smoothed twice so neighbourhoods carry signal.
  std::vector<Eigen::ArrayXd> templates;
  for (Index k = 0; k < classes; ++k) {
    Eigen::ArrayXd t(pixels);
    for (Index i = 0; i < pixels; ++i) t[i] = uni(rng);
    for (int pass = 0; pass < 2; ++pass) {
      Eigen::ArrayXd s(pixels);
      for (Index i = 0; i < h; ++i)
        for (Index j = 0; j < w; ++j)
          for (Index ch = 0; ch < c; ++ch) {
            double sum = 0.0;
            int cnt = 0;
            for (Index di = -1; di <= 1; ++di)
              for (Index dj = -1; dj <= 1; ++dj) {
                const Index ii = i + di, jj = j + dj;
                if (ii < 0 || ii >= h || jj < 0 || jj >= w) continue;
                sum += t[(ii * w + jj) * c + ch];
                ++cnt;
              }
            s[(i * w + j) * c + ch] = sum / cnt;
          }
      t = std::move(s);
    }
    // partially restore the contrast lost to smoothing; the factor is
    // balanced so noise_sigma spans easy (<0.1) to hard (>0.4) tasks
    t = ((t - 0.5) * 1.2 + 0.5).cwiseMax(0.0).cwiseMin(1.0);
    templates.push_back(std::move(t));
  }

  Dataset out;
  out.classes = classes;
  const Index n = classes * per_class;
  out.labels.resize(static_cast<std::size_t>(n));
  if (n == 0) return out;  // empty dataset, inputs stay null
  out.inputs = Tensor({n, h, w, c});
  std::normal_distribution<double> gauss(0.0, noise_sigma);
  for (Index i = 0; i < n; ++i) {
    const Index k = i % classes;
    out.labels[static_cast<std::size_t>(i)] = static_cast<int>(k);
    double* img = out.inputs.data() + i * pixels;
    const Eigen::ArrayXd& t = templates[static_cast<std::size_t>(k)];
    for (Index px = 0; px < pixels; ++px)
      img[px] = std::clamp(t[px] + gauss(rng), 0.0, 1.0);
  }
  return out;
}

Tensor subset_rows(const Tensor& t, const std::vector<Index>& idx) {
  if (t.empty()) return {};
  Shape shape = t.shape();
  const Index row = t.size() / shape[0];
  shape[0] = static_cast<Index>(idx.size());
  Tensor out(shape);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    if (idx[r] < 0 || idx[r] * row >= t.size())
      throw std::out_of_range("subset_rows: index " + std::to_string(idx[r]) + " out of range");
    std::copy(t.data() + idx[r] * row, t.data() + (idx[r] + 1) * row,
              out.data() + static_cast<Index>(r) * row);
  }
  return out;
}

Dataset subset(const Dataset& data, const std::vector<Index>& idx) {
  Dataset out;
  out.classes = data.classes;
  out.inputs = subset_rows(data.inputs, idx);
  out.labels.reserve(idx.size());
  for (Index i : idx) out.labels.push_back(data.labels[static_cast<std::size_t>(i)]);
  return out;
}

Dataset take(const Dataset& data, Index n) {
  if (n > data.size()) throw std::invalid_argument("take: not enough samples");
  std::vector<Index> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), Index{0});
  return subset(data, idx);
}

std::vector<std::vector<Index>> batches(Index n, Index batch_size, std::mt19937_64& rng, bool shuffle) {
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  if (shuffle) std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<Index>> out;
  for (Index start = 0; start < n; start += batch_size) {
    const Index end = std::min(n, start + batch_size);
    out.emplace_back(order.begin() + start, order.begin() + end);
  }
  return out;
}

std::vector<std::vector<Index>> batches(const Dataset& data, Index batch_size, std::uint64_t seed,
                                        bool shuffle) {
  std::mt19937_64 rng(seed);
  return batches(data.size(), batch_size, rng, shuffle);
}

std::pair<std::vector<Index>, std::vector<Index>> split_indices(Index n, double val_fraction,
                                                                std::uint64_t seed) {
  if (!(val_fraction > 0.0 && val_fraction < 1.0))
    throw std::invalid_argument("val_fraction must be in (0, 1)");
  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Index{0});
  std::mt19937_64 rng(seed);
  std::shuffle(order.begin(), order.end(), rng);
  Index n_val = static_cast<Index>(std::llround(static_cast<double>(n) * val_fraction));
  n_val = std::clamp<Index>(n_val, 1, n - 1);
  std::vector<Index> val(order.begin(), order.begin() + n_val);
  std::vector<Index> train(order.begin() + n_val, order.end());
  return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, std::uint64_t seed) {
  auto [train_idx, val_idx] = split_indices(data.size(), val_fraction, seed);
  return {subset(data, train_idx), subset(data, val_idx)};
}

}  // namespace cramnet
