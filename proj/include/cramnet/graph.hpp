#pragma once

#include <nlohmann/json_fwd.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "cramnet/layers.hpp"
#include "cramnet/tensor.hpp"

namespace cramnet {

enum class LayerKind { conv2d, dense, maxpool, relu, flatten, softmax_output };

std::string to_string(LayerKind kind);
LayerKind layer_kind_from_string(const std::string& s);

struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::relu;
  Index width = 0;                  // conv2d: output channels; dense/softmax_output: neurons
  Index kernel_h = 0, kernel_w = 0; // conv2d only
  Padding padding = Padding::same;  // conv2d only

  bool operator==(const LayerSpec&) const = default;
};

inline bool is_parametric(LayerKind k) {
  return k == LayerKind::conv2d || k == LayerKind::dense || k == LayerKind::softmax_output;
}

// conv and dense layers may be re-sized; the output layer is pinned to K.
inline bool is_resizable(const LayerSpec& l) {
  return l.kind == LayerKind::conv2d || l.kind == LayerKind::dense;
}

struct ArchitectureSpec {
  Shape input_shape;  // (H, W, C) for image input or (P) for flat input
  Index classes = 0;
  std::vector<LayerSpec> layers;

  bool operator==(const ArchitectureSpec&) const = default;

  /// Index into layers, or -1 when absent.
  Index layer_index(const std::string& name) const;
  const LayerSpec& layer(const std::string& name) const;
};

/// Throws std::invalid_argument describing the first violated invariant.
void validate(const ArchitectureSpec& spec);

/// Pure shape algebra: output shape of one layer for an unbatched input shape.
Shape layer_output_shape(const LayerSpec& layer, const Shape& input);

/// Activation shape after each layer, aligned with spec.layers.
std::vector<Shape> activation_shapes(const ArchitectureSpec& spec);

struct LayerCost {
  std::string name;
  long long params = 0;
  long long macs = 0;
};

std::vector<LayerCost> per_layer_costs(const ArchitectureSpec& spec);
long long count_params(const ArchitectureSpec& spec);

/// Multiply-accumulate count of conv and dense layers; bias adds,
/// activations and pooling are excluded by convention.
long long count_flops(const ArchitectureSpec& spec);

nlohmann::json to_json(const ArchitectureSpec& spec);
ArchitectureSpec architecture_from_json(const nlohmann::json& j);
ArchitectureSpec load_architecture(const std::filesystem::path& path);
void save_architecture(const ArchitectureSpec& spec, const std::filesystem::path& path);

struct LayerParams {
  Tensor weights, biases;
};

/// Weight/bias tensors aligned with the parametric layers in declaration order.
struct ParameterSet {
  std::vector<Tensor> weights, biases;
};

struct Model {
  ArchitectureSpec spec;
  ParameterSet params;
  std::uint64_t seed = 0;

  /// Ordinal of a parametric layer within the parameter set; throws for
  /// unknown or non-parametric names.
  Index param_index(const std::string& layer_name) const;
};

/// Indices (into spec.layers) of the parametric layers, in order.
std::vector<Index> parametric_layer_ids(const ArchitectureSpec& spec);

/// Expected weight shape of one parametric layer given its input shape.
Shape weight_shape(const LayerSpec& layer, const Shape& input);

/// Builds a model with fan-balanced uniform weights (+-sqrt(6/(fan_in+fan_out)))
/// and zero biases; bit-deterministic for a given seed.
Model build(const ArchitectureSpec& spec, std::uint64_t seed);

/// Runs the net on a batch; returns pre-softmax logits (N, K).
Tensor forward(const Model& model, const Tensor& batch);

/// As above, also captures the activation after each named layer.
Tensor forward(const Model& model, const Tensor& batch, const std::vector<std::string>& capture,
               std::map<std::string, Tensor>* captured);

struct ForwardTrace {
  std::vector<Tensor> layer_inputs;  // tensor fed into each layer, aligned with spec.layers
  Tensor logits;
};

ForwardTrace forward_trace(const Model& model, const Tensor& batch);

struct Gradients {
  std::vector<Tensor> weights, biases;
};

/// Backpropagates dLoss/dlogits through the trace; returns parameter
/// gradients aligned with the parameter set.
Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits);

/// Binary checkpoint: 8-byte magic "CRAMNET1", u64-length-prefixed spec
/// JSON, then per-layer weight and bias blobs in declaration order, each
/// prefixed by a u64 element count; all values little-endian f64.
void save_checkpoint(const Model& model, const std::filesystem::path& path);
Model load_checkpoint(const std::filesystem::path& path);

}  // namespace cramnet
