#include "cramnet/graph.hpp"

#include <nlohmann/json.hpp>

#include <bit>
#include <fstream>
#include <random>
#include <set>
#include <sstream>

namespace cramnet {

static_assert(std::endian::native == std::endian::little,
              "checkpoint and cache formats assume a little-endian host");

using nlohmann::json;

std::string to_string(LayerKind kind) {
  switch (kind) {
    case LayerKind::conv2d: return "conv2d";
    case LayerKind::dense: return "dense";
    case LayerKind::maxpool: return "maxpool";
    case LayerKind::relu: return "relu";
    case LayerKind::flatten: return "flatten";
    case LayerKind::softmax_output: return "softmax_output";
  }
  throw std::logic_error("unknown layer kind");
}

LayerKind layer_kind_from_string(const std::string& s) {
  if (s == "conv2d") return LayerKind::conv2d;
  if (s == "dense") return LayerKind::dense;
  if (s == "maxpool") return LayerKind::maxpool;
  if (s == "relu") return LayerKind::relu;
  if (s == "flatten") return LayerKind::flatten;
  if (s == "softmax_output") return LayerKind::softmax_output;
  throw std::invalid_argument("unknown layer kind: " + s);
}

Index ArchitectureSpec::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return static_cast<Index>(i);
  return -1;
}

const LayerSpec& ArchitectureSpec::layer(const std::string& name) const {
  const Index i = layer_index(name);
  if (i < 0) throw std::invalid_argument("no layer named '" + name + "'");
  return layers[static_cast<std::size_t>(i)];
}

Shape layer_output_shape(const LayerSpec& layer, const Shape& input) {
  switch (layer.kind) {
    case LayerKind::conv2d: {
      if (input.size() != 3)
        throw std::invalid_argument("layer '" + layer.name + "': conv2d needs a (H,W,C) input, got " +
                                    to_string(input));
      if (layer.kernel_h < 1 || layer.kernel_w < 1 || layer.kernel_h % 2 == 0 || layer.kernel_w % 2 == 0)
        throw std::invalid_argument("layer '" + layer.name + "': kernel extents must be odd and positive");
      return {conv_out_extent(input[0], layer.kernel_h, layer.padding),
              conv_out_extent(input[1], layer.kernel_w, layer.padding), layer.width};
    }
    case LayerKind::maxpool: {
      if (input.size() != 3)
        throw std::invalid_argument("layer '" + layer.name + "': maxpool needs a (H,W,C) input");
      return {pool_out_extent(input[0]), pool_out_extent(input[1]), input[2]};
    }
    case LayerKind::relu:
      return input;
    case LayerKind::flatten:
      return {volume(input)};
    case LayerKind::dense:
    case LayerKind::softmax_output: {
      if (input.size() != 1)
        throw std::invalid_argument("layer '" + layer.name +
                                    "': dense needs a flat input; add a flatten layer first");
      return {layer.width};
    }
  }
  throw std::logic_error("unknown layer kind");
}

std::vector<Shape> activation_shapes(const ArchitectureSpec& spec) {
  std::vector<Shape> shapes;
  shapes.reserve(spec.layers.size());
  Shape cur = spec.input_shape;
  for (const LayerSpec& l : spec.layers) {
    cur = layer_output_shape(l, cur);
    shapes.push_back(cur);
  }
  return shapes;
}

void validate(const ArchitectureSpec& spec) {
  if (spec.input_shape.size() != 3 && spec.input_shape.size() != 1)
    throw std::invalid_argument("input_shape must be (H,W,C) or (P)");
  for (Index e : spec.input_shape)
    if (e < 1) throw std::invalid_argument("input_shape extents must be positive");
  if (spec.classes < 2) throw std::invalid_argument("class count must be >= 2");
  if (spec.layers.empty()) throw std::invalid_argument("architecture has no layers");

  std::set<std::string> names;
  for (const LayerSpec& l : spec.layers) {
    if (l.name.empty()) throw std::invalid_argument("layer names must be non-empty");
    if (!names.insert(l.name).second)
      throw std::invalid_argument("duplicate layer name '" + l.name + "'");
    if (is_parametric(l.kind) && l.width < 1)
      throw std::invalid_argument("layer '" + l.name + "': width must be >= 1");
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const bool last = i + 1 == spec.layers.size();
    if ((spec.layers[i].kind == LayerKind::softmax_output) != last)
      throw std::invalid_argument("exactly one softmax_output layer is required, in last position");
  }
  if (spec.layers.back().width != spec.classes)
    throw std::invalid_argument("output layer width must equal the class count");
  activation_shapes(spec);  // throws if the shape algebra does not compose
}

std::vector<LayerCost> per_layer_costs(const ArchitectureSpec& spec) {
  std::vector<LayerCost> costs;
  costs.reserve(spec.layers.size());
  Shape cur = spec.input_shape;
  for (const LayerSpec& l : spec.layers) {
    const Shape out = layer_output_shape(l, cur);
    LayerCost c{l.name, 0, 0};
    if (l.kind == LayerKind::conv2d) {
      const long long kernel_volume = static_cast<long long>(l.kernel_h) * l.kernel_w * cur[2];
      c.params = kernel_volume * l.width + l.width;
      c.macs = static_cast<long long>(out[0]) * out[1] * l.width * kernel_volume;
    } else if (l.kind == LayerKind::dense || l.kind == LayerKind::softmax_output) {
      c.params = static_cast<long long>(cur[0]) * l.width + l.width;
      c.macs = static_cast<long long>(cur[0]) * l.width;
    }
    costs.push_back(std::move(c));
    cur = out;
  }
  return costs;
}

long long count_params(const ArchitectureSpec& spec) {
  long long total = 0;
  for (const LayerCost& c : per_layer_costs(spec)) total += c.params;
  return total;
}

long long count_flops(const ArchitectureSpec& spec) {
  long long total = 0;
  for (const LayerCost& c : per_layer_costs(spec)) total += c.macs;
  return total;
}

json to_json(const ArchitectureSpec& spec) {
  json layers = json::array();
  for (const LayerSpec& l : spec.layers) {
    json jl{{"name", l.name}, {"kind", to_string(l.kind)}};
    if (is_parametric(l.kind)) jl["width"] = l.width;
    if (l.kind == LayerKind::conv2d) {
      jl["kernel"] = {l.kernel_h, l.kernel_w};
      jl["padding"] = l.padding == Padding::same ? "same" : "valid";
    }
    layers.push_back(std::move(jl));
  }
  return json{{"input_shape", spec.input_shape}, {"classes", spec.classes}, {"layers", layers}};
}

ArchitectureSpec architecture_from_json(const json& j) {
  ArchitectureSpec spec;
  spec.input_shape = j.at("input_shape").get<Shape>();
  spec.classes = j.at("classes").get<Index>();
  for (const json& jl : j.at("layers")) {
    LayerSpec l;
    l.name = jl.at("name").get<std::string>();
    l.kind = layer_kind_from_string(jl.at("kind").get<std::string>());
    if (jl.contains("width")) l.width = jl.at("width").get<Index>();
    if (l.kind == LayerKind::softmax_output && l.width == 0) l.width = spec.classes;
    if (l.kind == LayerKind::conv2d) {
      const auto kernel = jl.at("kernel").get<std::vector<Index>>();
      if (kernel.size() != 2) throw std::invalid_argument("layer '" + l.name + "': kernel must be [h, w]");
      l.kernel_h = kernel[0];
      l.kernel_w = kernel[1];
      const std::string pad = jl.value("padding", "same");
      if (pad == "same")
        l.padding = Padding::same;
      else if (pad == "valid")
        l.padding = Padding::valid;
      else
        throw std::invalid_argument("layer '" + l.name + "': padding must be same or valid");
    }
    spec.layers.push_back(std::move(l));
  }
  validate(spec);
  return spec;
}

ArchitectureSpec load_architecture(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open architecture file " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("bad architecture file " + path.string() + ": " + e.what());
  }
  return architecture_from_json(j);
}

void save_architecture(const ArchitectureSpec& spec, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write architecture file " + path.string());
  f << to_json(spec).dump(2) << '\n';
}

std::vector<Index> parametric_layer_ids(const ArchitectureSpec& spec) {
  std::vector<Index> ids;
  for (std::size_t i = 0; i < spec.layers.size(); ++i)
    if (is_parametric(spec.layers[i].kind)) ids.push_back(static_cast<Index>(i));
  return ids;
}

Index Model::param_index(const std::string& layer_name) const {
  const auto ids = parametric_layer_ids(spec);
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (spec.layers[static_cast<std::size_t>(ids[i])].name == layer_name) return static_cast<Index>(i);
  throw std::invalid_argument("'" + layer_name + "' is not a parametric layer of this model");
}

Shape weight_shape(const LayerSpec& layer, const Shape& input) {
  if (layer.kind == LayerKind::conv2d) return {layer.kernel_h, layer.kernel_w, input[2], layer.width};
  if (layer.kind == LayerKind::dense || layer.kind == LayerKind::softmax_output)
    return {layer.width, input[0]};
  throw std::invalid_argument("layer '" + layer.name + "' has no weights");
}

namespace {

struct FanPair {
  double fan_in, fan_out;
};

FanPair fans(const LayerSpec& layer, const Shape& input) {
  if (layer.kind == LayerKind::conv2d) {
    const double receptive = static_cast<double>(layer.kernel_h) * layer.kernel_w;
    return {receptive * static_cast<double>(input[2]), receptive * static_cast<double>(layer.width)};
  }
  return {static_cast<double>(input[0]), static_cast<double>(layer.width)};
}

}  // namespace

Model build(const ArchitectureSpec& spec, std::uint64_t seed) {
  validate(spec);
  Model m;
  m.spec = spec;
  m.seed = seed;
  std::mt19937_64 rng(seed);
  Shape cur = spec.input_shape;
  for (const LayerSpec& l : spec.layers) {
    if (is_parametric(l.kind)) {
      const auto [fan_in, fan_out] = fans(l, cur);
      const double limit = std::sqrt(6.0 / (fan_in + fan_out));
      std::uniform_real_distribution<double> dist(-limit, limit);
      Tensor w(weight_shape(l, cur));
      for (Index i = 0; i < w.size(); ++i) w(i) = dist(rng);
      m.params.weights.push_back(std::move(w));
      m.params.biases.push_back(Tensor(Shape{l.width}));
    }
    cur = layer_output_shape(l, cur);
  }
  return m;
}

namespace {

// Shared forward walker; `sink` sees the activation after every layer.
template <typename Sink>
Tensor run_forward(const Model& model, const Tensor& batch, Sink&& sink) {
  const Shape& in = model.spec.input_shape;
  const bool image_input = in.size() == 3;
  const Index want_rank = image_input ? 4 : 2;
  if (batch.rank() != want_rank)
    throw std::invalid_argument("batch rank must be " + std::to_string(want_rank) +
                                " (leading batch extent), got shape " + to_string(batch.shape()));
  for (std::size_t d = 0; d < in.size(); ++d)
    if (batch.extent(static_cast<Index>(d) + 1) != in[d])
      throw std::invalid_argument("batch shape " + to_string(batch.shape()) +
                                  " does not match model input " + to_string(in));

  const Index n = batch.extent(0);
  Tensor cur = batch;
  Index p = 0;
  for (std::size_t i = 0; i < model.spec.layers.size(); ++i) {
    const LayerSpec& l = model.spec.layers[i];
    switch (l.kind) {
      case LayerKind::conv2d: {
        KernelStack ks(model.params.weights[p]);
        cur = conv2d_forward(cur, ks, model.params.biases[p], l.padding);
        ++p;
        break;
      }
      case LayerKind::dense:
      case LayerKind::softmax_output:
        cur = dense_forward(cur, model.params.weights[p], model.params.biases[p]);
        ++p;
        break;
      case LayerKind::maxpool:
        cur = maxpool2d(cur);
        break;
      case LayerKind::relu:
        cur = relu(cur);
        break;
      case LayerKind::flatten:
        cur = cur.reshaped({n, cur.size() / n});
        break;
    }
    sink(i, cur);
  }
  return cur;
}

}  // namespace

Tensor forward(const Model& model, const Tensor& batch) {
  return run_forward(model, batch, [](std::size_t, const Tensor&) {});
}

Tensor forward(const Model& model, const Tensor& batch, const std::vector<std::string>& capture,
               std::map<std::string, Tensor>* captured) {
  for (const std::string& name : capture)
    if (model.spec.layer_index(name) < 0)
      throw std::invalid_argument("capture boundary '" + name + "' is not a layer");
  return run_forward(model, batch, [&](std::size_t i, const Tensor& act) {
    const std::string& name = model.spec.layers[i].name;
    if (captured && std::find(capture.begin(), capture.end(), name) != capture.end())
      (*captured)[name] = act;
  });
}

ForwardTrace forward_trace(const Model& model, const Tensor& batch) {
  ForwardTrace t;
  t.layer_inputs.resize(model.spec.layers.size());
  Tensor prev = batch;
  t.logits = run_forward(model, batch, [&](std::size_t i, const Tensor& act) {
    t.layer_inputs[i] = std::move(prev);
    prev = act;
  });
  return t;
}

Gradients backward(const Model& model, const ForwardTrace& trace, const Tensor& grad_logits) {
  const auto& layers = model.spec.layers;
  if (trace.layer_inputs.size() != layers.size())
    throw std::invalid_argument("trace does not match model");
  Gradients g;
  g.weights.resize(model.params.weights.size());
  g.biases.resize(model.params.biases.size());

  Tensor grad = grad_logits;
  Index p = static_cast<Index>(model.params.weights.size());
  for (Index i = static_cast<Index>(layers.size()) - 1; i >= 0; --i) {
    const LayerSpec& l = layers[static_cast<std::size_t>(i)];
    const Tensor& input = trace.layer_inputs[static_cast<std::size_t>(i)];
    switch (l.kind) {
      case LayerKind::conv2d: {
        --p;
        KernelStack ks(model.params.weights[p]);
        Conv2dGrads cg = conv2d_backward(grad, input, ks, l.padding);
        g.weights[p] = std::move(cg.weights);
        g.biases[p] = std::move(cg.biases);
        grad = std::move(cg.input);
        break;
      }
      case LayerKind::dense:
      case LayerKind::softmax_output: {
        --p;
        DenseGrads dg = dense_backward(grad, input, model.params.weights[p]);
        g.weights[p] = std::move(dg.weights);
        g.biases[p] = std::move(dg.biases);
        grad = std::move(dg.input);
        break;
      }
      case LayerKind::maxpool:
        grad = maxpool2d_backward(grad, input);
        break;
      case LayerKind::relu:
        grad = relu_backward(grad, input);
        break;
      case LayerKind::flatten:
        grad = grad.reshaped(input.shape());
        break;
    }
  }
  return g;
}

namespace {

constexpr char kMagic[8] = {'C', 'R', 'A', 'M', 'N', 'E', 'T', '1'};

void write_u64(std::ostream& out, std::uint64_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

std::uint64_t read_u64(std::istream& in, const char* what) {
  std::uint64_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error(std::string("corrupt checkpoint: truncated ") + what);
  return v;
}

void read_blob(std::istream& in, Tensor& t, const std::string& layer, const char* what) {
  const std::uint64_t count = read_u64(in, what);
  if (count != static_cast<std::uint64_t>(t.size()))
    throw std::runtime_error("corrupt checkpoint: layer '" + layer + "' " + what + " holds " +
                             std::to_string(count) + " values, expected " + std::to_string(t.size()));
  in.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(count * sizeof(double)));
  if (!in) throw std::runtime_error("corrupt checkpoint: truncated " + layer + " payload");
}

}  // namespace

void save_checkpoint(const Model& model, const std::filesystem::path& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint " + path.string());
  f.write(kMagic, sizeof kMagic);
  const std::string spec_json = to_json(model.spec).dump();
  write_u64(f, spec_json.size());
  f.write(spec_json.data(), static_cast<std::streamsize>(spec_json.size()));
  for (std::size_t i = 0; i < model.params.weights.size(); ++i) {
    const Tensor& w = model.params.weights[i];
    const Tensor& b = model.params.biases[i];
    write_u64(f, static_cast<std::uint64_t>(w.size()));
    f.write(reinterpret_cast<const char*>(w.data()), static_cast<std::streamsize>(w.size() * 8));
    write_u64(f, static_cast<std::uint64_t>(b.size()));
    f.write(reinterpret_cast<const char*>(b.data()), static_cast<std::streamsize>(b.size() * 8));
  }
  if (!f) throw std::runtime_error("failed writing checkpoint " + path.string());
}

Model load_checkpoint(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open checkpoint " + path.string());
  char magic[8];
  f.read(magic, sizeof magic);
  if (!f || std::memcmp(magic, kMagic, sizeof kMagic) != 0)
    throw std::runtime_error(path.string() + " is not a CRAMNET1 checkpoint");
  const std::uint64_t spec_len = read_u64(f, "spec length");
  std::string spec_json(spec_len, '\0');
  f.read(spec_json.data(), static_cast<std::streamsize>(spec_len));
  if (!f) throw std::runtime_error("corrupt checkpoint: truncated spec");

  ArchitectureSpec spec;
  try {
    spec = architecture_from_json(json::parse(spec_json));
  } catch (const std::exception& e) {
    throw std::runtime_error("corrupt checkpoint spec: " + std::string(e.what()));
  }

  Model m;
  m.spec = std::move(spec);
  Shape cur = m.spec.input_shape;
  for (const LayerSpec& l : m.spec.layers) {
    if (is_parametric(l.kind)) {
      Tensor w(weight_shape(l, cur));
      Tensor b(Shape{l.width});
      read_blob(f, w, l.name, "weights");
      read_blob(f, b, l.name, "biases");
      m.params.weights.push_back(std::move(w));
      m.params.biases.push_back(std::move(b));
    }
    cur = layer_output_shape(l, cur);
  }
  f.peek();
  if (!f.eof()) throw std::runtime_error("corrupt checkpoint: trailing data in " + path.string());
  return m;
}

}  // namespace cramnet
