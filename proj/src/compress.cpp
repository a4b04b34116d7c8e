#include "cramnet/compress.hpp"

#include <nlohmann/json.hpp>

#include <algorithm>
#include <fstream>
#include <sstream>

namespace cramnet {

using nlohmann::json;

bool CompressionPlan::identity(const ArchitectureSpec& teacher_spec) const {
  for (const auto& [name, width] : targets)
    if (teacher_spec.layer(name).width != width) return false;
  return true;
}

json to_json(const CompressionPlan& plan) {
  json targets = json::object();
  for (const auto& [name, width] : plan.targets) targets[name] = width;
  json stop{{"max_epochs", plan.sub_stop.max_epochs},
            {"patience", plan.sub_stop.patience},
            {"min_delta", plan.sub_stop.min_delta}};
  if (plan.accuracy_floor) stop["accuracy_floor"] = *plan.accuracy_floor;
  json j{{"teacher", plan.teacher},
         {"order", plan.order == CompressionOrder::output_to_input ? "output_to_input"
                                                                   : "input_to_output"},
         {"targets", targets},
         {"finetune_epochs", plan.finetune_epochs},
         {"stop", stop}};
  if (plan.init_from_teacher) j["init_from_teacher"] = true;
  return j;
}

CompressionPlan plan_from_json(const json& j) {
  CompressionPlan plan;
  plan.teacher = j.value("teacher", std::string{});
  const std::string order = j.value("order", "output_to_input");
  if (order == "output_to_input")
    plan.order = CompressionOrder::output_to_input;
  else if (order == "input_to_output")
    plan.order = CompressionOrder::input_to_output;
  else
    throw std::invalid_argument("plan order must be output_to_input or input_to_output");
  for (const auto& [name, width] : j.at("targets").items())
    plan.targets[name] = width.get<Index>();
  plan.finetune_epochs = j.value("finetune_epochs", 0);
  if (j.contains("stop")) {
    const json& s = j.at("stop");
    plan.sub_stop.max_epochs = s.value("max_epochs", plan.sub_stop.max_epochs);
    plan.sub_stop.patience = s.value("patience", plan.sub_stop.patience);
    plan.sub_stop.min_delta = s.value("min_delta", plan.sub_stop.min_delta);
    if (s.contains("accuracy_floor")) plan.accuracy_floor = s.at("accuracy_floor").get<double>();
  }
  plan.init_from_teacher = j.value("init_from_teacher", false);
  return plan;
}

CompressionPlan load_plan(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open plan file " + path.string());
  json j;
  try {
    f >> j;
  } catch (const json::parse_error& e) {
    throw std::runtime_error("bad plan file " + path.string() + ": " + e.what());
  }
  return plan_from_json(j);
}

void save_plan(const CompressionPlan& plan, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("cannot write plan file " + path.string());
  f << to_json(plan).dump(2) << '\n';
}

namespace {

void validate_targets(const ArchitectureSpec& teacher, const CompressionPlan& plan) {
  for (const auto& [name, width] : plan.targets) {
    const Index li = teacher.layer_index(name);
    if (li < 0) throw std::invalid_argument("plan targets unknown layer '" + name + "'");
    const LayerSpec& l = teacher.layers[static_cast<std::size_t>(li)];
    if (!is_resizable(l))
      throw std::invalid_argument("plan targets non-resizable layer '" + name + "'");
    if (width < 1 || width > l.width)
      throw std::invalid_argument("plan width for '" + name + "' must be in [1, " +
                                  std::to_string(l.width) + "], got " + std::to_string(width));
  }
}

}  // namespace

ArchitectureSpec plan_applied(const ArchitectureSpec& teacher, const CompressionPlan& plan) {
  validate_targets(teacher, plan);
  ArchitectureSpec out = teacher;
  for (auto& l : out.layers) {
    const auto it = plan.targets.find(l.name);
    if (it != plan.targets.end()) l.width = it->second;
  }
  validate(out);
  return out;
}

std::vector<SubProblem> slice(const ArchitectureSpec& teacher, const CompressionPlan& plan) {
  validate(teacher);
  validate_targets(teacher, plan);

  std::vector<Index> order;
  for (std::size_t i = 0; i < teacher.layers.size(); ++i)
    if (plan.targets.count(teacher.layers[i].name)) order.push_back(static_cast<Index>(i));
  if (plan.order == CompressionOrder::output_to_input) std::reverse(order.begin(), order.end());

  // `current` tracks the altered network as sub-problems would be solved:
  // targets already processed are at their new widths, the rest at teacher widths.
  ArchitectureSpec current = teacher;
  std::vector<SubProblem> subs;
  for (Index li : order) {
    const auto i = static_cast<std::size_t>(li);
    SubProblem sp;
    sp.index = static_cast<int>(subs.size());
    sp.resized_layer = current.layers[i].name;
    sp.new_width = plan.targets.at(sp.resized_layer);
    sp.input_boundary = li == 0 ? std::string{} : current.layers[i - 1].name;

    const std::vector<Shape> shapes = activation_shapes(current);
    const Shape in_shape = li == 0 ? current.input_shape : shapes[i - 1];

    current.layers[i].width = sp.new_width;

    sp.slice_spec.input_shape = in_shape;
    sp.slice_spec.classes = current.classes;
    sp.slice_spec.layers.assign(current.layers.begin() + li, current.layers.end());
    validate(sp.slice_spec);

    for (std::size_t j = i + 1; j < current.layers.size(); ++j)
      if (is_parametric(current.layers[j].kind)) {
        sp.coupled_layer = current.layers[j].name;
        break;
      }
    sp.trainable = {sp.resized_layer, sp.coupled_layer};
    subs.push_back(std::move(sp));
  }
  return subs;
}

namespace {

struct Fnv1a {
  std::uint64_t h = 1469598103934665603ULL;
  void update(const void* data, std::size_t len) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < len; ++i) {
      h ^= p[i];
      h *= 1099511628211ULL;
    }
  }
  std::string hex() const {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
    return buf;
  }
};

// Hash of the source data plus the capturing network (spec and every
// parameter, i.e. its checkpoint content).
std::string cache_fingerprint(const Model& net, const Dataset& data) {
  Fnv1a f;
  f.update(data.inputs.data(), static_cast<std::size_t>(data.inputs.size()) * sizeof(double));
  f.update(data.labels.data(), data.labels.size() * sizeof(int));
  f.update(&data.classes, sizeof data.classes);
  const std::string spec_json = to_json(net.spec).dump();
  f.update(spec_json.data(), spec_json.size());
  for (std::size_t p = 0; p < net.params.weights.size(); ++p) {
    const Tensor& w = net.params.weights[p];
    const Tensor& b = net.params.biases[p];
    f.update(w.data(), static_cast<std::size_t>(w.size()) * sizeof(double));
    f.update(b.data(), static_cast<std::size_t>(b.size()) * sizeof(double));
  }
  return f.hex();
}

void write_bin(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write " + path.string());
  f.write(reinterpret_cast<const char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  if (!f) throw std::runtime_error("failed writing " + path.string());
}

bool read_bin(const std::filesystem::path& path, Tensor& t) {
  std::ifstream f(path, std::ios::binary | std::ios::ate);
  if (!f) return false;
  if (f.tellg() != static_cast<std::streamoff>(t.size() * 8)) return false;
  f.seekg(0);
  f.read(reinterpret_cast<char*>(t.data()), static_cast<std::streamsize>(t.size() * 8));
  return static_cast<bool>(f);
}

}  // namespace

ActivationCache capture_activations(const Model& net, const Dataset& data,
                                    const std::string& boundary,
                                    const std::filesystem::path& cache_dir) {
  validate(net.spec);
  if (!boundary.empty() && net.spec.layer_index(boundary) < 0)
    throw std::invalid_argument("capture boundary '" + boundary + "' is not a layer");

  if (data.size() == 0) throw std::invalid_argument("capture_activations: empty dataset");

  ActivationCache cache;
  cache.boundary = boundary;
  cache.samples = data.size();
  cache.fingerprint = cache_fingerprint(net, data);
  cache.dir = cache_dir / cache.fingerprint / (boundary.empty() ? "input" : boundary);

  Shape act_shape;  // unbatched boundary activation shape
  if (boundary.empty()) {
    act_shape = net.spec.input_shape;
  } else {
    const auto shapes = activation_shapes(net.spec);
    act_shape = shapes[static_cast<std::size_t>(net.spec.layer_index(boundary))];
  }
  Shape full = act_shape;
  full.insert(full.begin(), data.size());

  const auto index_path = cache.dir / "index.json";
  if (std::filesystem::exists(index_path)) {
    std::ifstream f(index_path);
    json idx;
    if (f && (f >> idx, f) && idx.value("fingerprint", "") == cache.fingerprint &&
        idx.value("samples", Index{-1}) == data.size() && idx.contains("boundary") &&
        idx.at("boundary").get<std::string>() == boundary) {
      Tensor acts(full);
      Tensor logits({data.size(), net.spec.classes});
      if (read_bin(cache.dir / "activations.bin", acts) && read_bin(cache.dir / "logits.bin", logits)) {
        cache.activations = std::move(acts);
        cache.logits = std::move(logits);
        cache.hit = true;
        return cache;
      }
    }
  }

  // miss (or corrupt entry): recompute and persist
  cache.activations = Tensor(full);
  cache.logits = Tensor({data.size(), net.spec.classes});
  const Index chunk = 256;
  const Index act_row = volume(act_shape);
  for (Index start = 0; start < data.size(); start += chunk) {
    const Index end = std::min(data.size(), start + chunk);
    std::vector<Index> idx(static_cast<std::size_t>(end - start));
    std::iota(idx.begin(), idx.end(), start);
    const Tensor x = subset_rows(data.inputs, idx);
    Tensor logits;
    if (boundary.empty()) {
      std::copy(x.data(), x.data() + x.size(), cache.activations.data() + start * act_row);
      logits = forward(net, x);
    } else {
      std::map<std::string, Tensor> captured;
      logits = forward(net, x, {boundary}, &captured);
      const Tensor& act = captured.at(boundary);
      std::copy(act.data(), act.data() + act.size(), cache.activations.data() + start * act_row);
    }
    std::copy(logits.data(), logits.data() + logits.size(),
              cache.logits.data() + start * net.spec.classes);
  }

  std::filesystem::create_directories(cache.dir);
  write_bin(cache.dir / "activations.bin", cache.activations);
  write_bin(cache.dir / "logits.bin", cache.logits);
  json idx{{"boundary", boundary},
           {"samples", data.size()},
           {"activation_shape", act_shape},
           {"classes", net.spec.classes},
           {"fingerprint", cache.fingerprint}};
  std::ofstream f(index_path);
  if (!f) throw std::runtime_error("cannot write " + index_path.string());
  f << idx.dump(2) << '\n';
  return cache;
}

namespace {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t salt) {
  std::uint64_t x = seed + 0x9e3779b97f4a7c15ULL * (salt + 1);
  x ^= x >> 30;
  x *= 0xbf58476d1ce4e5b9ULL;
  x ^= x >> 27;
  x *= 0x94d049bb133111ebULL;
  x ^= x >> 31;
  return x;
}

}  // namespace

SubProblemResult train_subproblem(const SubProblem& sub, const SubProblemData& data,
                                  const Model& current, const OptimizerConfig& cfg,
                                  const StopRule& stop, std::uint64_t seed,
                                  bool init_from_teacher, const Model* teacher) {
  if (data.train_inputs.empty() || data.train_inputs.extent(0) == 0)
    throw std::invalid_argument("sub-problem has no training data");
  {
    Shape sample_shape(data.train_inputs.shape().begin() + 1, data.train_inputs.shape().end());
    if (sample_shape != sub.slice_spec.input_shape)
      throw std::invalid_argument(
          "cached activations shaped " + to_string(sample_shape) + " do not match sub-problem " +
          std::to_string(sub.index) + " boundary " + to_string(sub.slice_spec.input_shape));
  }

  Model slice_model = build(sub.slice_spec, mix_seed(seed, static_cast<std::uint64_t>(sub.index)));
  const auto is_trainable = [&](const std::string& name) {
    return std::find(sub.trainable.begin(), sub.trainable.end(), name) != sub.trainable.end();
  };
  // frozen layers carry the already-solved (or original) parameters;
  // trainable ones keep their fresh initialisation unless seeded from the teacher
  for (const LayerSpec& l : sub.slice_spec.layers) {
    if (!is_parametric(l.kind)) continue;
    const Index si = slice_model.param_index(l.name);
    if (!is_trainable(l.name)) {
      const Index ci = current.param_index(l.name);
      const Tensor& w = current.params.weights[static_cast<std::size_t>(ci)];
      const Tensor& b = current.params.biases[static_cast<std::size_t>(ci)];
      if (!w.same_shape(slice_model.params.weights[static_cast<std::size_t>(si)]))
        throw std::logic_error("frozen layer '" + l.name + "' has incompatible parameters");
      slice_model.params.weights[static_cast<std::size_t>(si)] = w;
      slice_model.params.biases[static_cast<std::size_t>(si)] = b;
    } else if (init_from_teacher && teacher) {
      const Index ti = teacher->param_index(l.name);
      const Tensor& w = teacher->params.weights[static_cast<std::size_t>(ti)];
      if (w.same_shape(slice_model.params.weights[static_cast<std::size_t>(si)])) {
        slice_model.params.weights[static_cast<std::size_t>(si)] = w;
        slice_model.params.biases[static_cast<std::size_t>(si)] =
            teacher->params.biases[static_cast<std::size_t>(ti)];
      }
    }
  }

  Dataset strain{data.train_inputs, data.train_labels, data.classes};
  Dataset sval{data.val_inputs, data.val_labels, data.classes};
  SubProblemResult res;
  res.report = train(slice_model, strain, &data.train_teacher_logits, sval,
                     &data.val_teacher_logits, LossKind::cram, cfg, stop,
                     mix_seed(seed, 0xC0FFEEULL + static_cast<std::uint64_t>(sub.index)),
                     sub.trainable);
  for (const std::string& name : sub.trainable) {
    const Index si = slice_model.param_index(name);
    res.trained[name] = LayerParams{slice_model.params.weights[static_cast<std::size_t>(si)],
                                    slice_model.params.biases[static_cast<std::size_t>(si)]};
  }
  return res;
}

namespace {

// Install new parameters for one layer of `net`, resizing its width.
void graft(Model& net, const std::string& layer, Index new_width, const LayerParams& params) {
  const Index li = net.spec.layer_index(layer);
  net.spec.layers[static_cast<std::size_t>(li)].width = new_width;
  const Index pi = net.param_index(layer);
  net.params.weights[static_cast<std::size_t>(pi)] = params.weights;
  net.params.biases[static_cast<std::size_t>(pi)] = params.biases;
}

}  // namespace

CompressionResult compress(const Model& teacher, const CompressionPlan& plan, const Dataset& train,
                           const Dataset& val, const CompressConfig& cc) {
  validate(teacher.spec);
  validate(cc.optimizer);
  const std::vector<SubProblem> subs = slice(teacher.spec, plan);

  CompressionResult res;
  Model current = teacher;  // the altered origin network, updated as sub-problems solve

  // loss targets are always the original teacher's raw outputs
  const std::string out_layer = teacher.spec.layers.back().name;
  const ActivationCache tl_train = capture_activations(teacher, train, out_layer, cc.cache_dir);
  const ActivationCache tl_val = capture_activations(teacher, val, out_layer, cc.cache_dir);

  for (const SubProblem& sp : subs) {
    const ActivationCache act_train = capture_activations(current, train, sp.input_boundary, cc.cache_dir);
    const ActivationCache act_val = capture_activations(current, val, sp.input_boundary, cc.cache_dir);

    SubProblemData data{act_train.activations, act_val.activations, train.labels,
                        val.labels,            tl_train.logits,     tl_val.logits,
                        train.classes};
    SubProblemResult r = train_subproblem(sp, data, current, cc.optimizer, plan.sub_stop, cc.seed,
                                          plan.init_from_teacher, &teacher);

    graft(current, sp.resized_layer, sp.new_width, r.trained.at(sp.resized_layer));
    const Index ci = current.spec.layer_index(sp.coupled_layer);
    graft(current, sp.coupled_layer, current.spec.layers[static_cast<std::size_t>(ci)].width,
          r.trained.at(sp.coupled_layer));
    validate(current.spec);

    const double acc = evaluate(current, val, nullptr, LossKind::plain_ce).accuracy;
    res.reports.push_back({sp.index, sp.resized_layer, sp.new_width, std::move(r.report), acc});

    if (res.reports.back().train.diverged) {
      res.diverged = true;
      res.stopped_after = sp.index;
      break;
    }
    if (plan.accuracy_floor && acc < *plan.accuracy_floor) {
      res.halted = true;
      res.stopped_after = sp.index;
      break;
    }
  }

  res.student = std::move(current);
  return res;
}

std::pair<Model, TrainReport> finetune(const Model& student, const Dataset& train_data,
                                       const Tensor& train_teacher_logits, const Dataset& val_data,
                                       const Tensor& val_teacher_logits, int epochs,
                                       const OptimizerConfig& cfg, std::uint64_t seed) {
  Model m = student;
  if (epochs <= 0) return {std::move(m), TrainReport{}};
  StopRule rule;
  rule.max_epochs = epochs;
  rule.patience = epochs + 1;  // run the configured budget to the end
  rule.min_delta = 0.0;
  TrainReport report = train(m, train_data, &train_teacher_logits, val_data, &val_teacher_logits,
                             LossKind::cram, cfg, rule, mix_seed(seed, 0xF1DE));
  return {std::move(m), std::move(report)};
}

}  // namespace cramnet
