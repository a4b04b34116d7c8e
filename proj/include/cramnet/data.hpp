#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <utility>
#include <vector>

#include "cramnet/tensor.hpp"

namespace cramnet {

struct Dataset {
  Tensor inputs;            // (N, H, W, C) images or (N, P) flat samples
  std::vector<int> labels;  // class ids in [0, classes)
  Index classes = 0;

  Index size() const { return inputs.empty() ? 0 : inputs.extent(0); }
};

/// Loads the standard binary batch files (data_batch_1..5.bin plus
/// test_batch.bin): 3073-byte records of one label byte followed by
/// channel-planar R/G/B pixels, scaled to [0,1].
std::pair<Dataset, Dataset> load_cifar10(const std::filesystem::path& dir);

/// Loads a single binary batch file in the same record format.
Dataset load_cifar10_batch(const std::filesystem::path& file);

/// Writes a dataset to the binary batch format; requires (N,32,32,3)
/// images with at most 10 classes.
void save_cifar10_batch(const Dataset& data, const std::filesystem::path& file);

/// Gaussian blobs around per-class templates (spatially smoothed so that
/// local structure matters); sample i belongs to class i % classes.
/// Values are clamped to [0,1].
Dataset synth_dataset(Index classes, Index per_class, Index h, Index w, Index c,
                      std::uint64_t seed, double noise_sigma = 0.25);

/// Gathers rows (leading-dimension slices) of a tensor.
Tensor subset_rows(const Tensor& t, const std::vector<Index>& idx);

Dataset subset(const Dataset& data, const std::vector<Index>& idx);

/// First n samples (the synthetic generator interleaves classes, so a
/// prefix stays near-balanced).
Dataset take(const Dataset& data, Index n);

/// Index batches for one pass; the final short batch is included.
std::vector<std::vector<Index>> batches(Index n, Index batch_size, std::mt19937_64& rng, bool shuffle);
std::vector<std::vector<Index>> batches(const Dataset& data, Index batch_size, std::uint64_t seed,
                                        bool shuffle);

/// Disjoint, exhaustive, deterministic split; val gets round(N * val_fraction).
std::pair<std::vector<Index>, std::vector<Index>> split_indices(Index n, double val_fraction,
                                                                std::uint64_t seed);
std::pair<Dataset, Dataset> split(const Dataset& data, double val_fraction, std::uint64_t seed);

}  // namespace cramnet
