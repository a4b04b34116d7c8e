#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>
#include <nlohmann/json.hpp>

#include <filesystem>
#include <fstream>

#include "cramnet/graph.hpp"
#include "support/testers.hpp"

using namespace cramnet;
namespace fs = std::filesystem;

namespace {

const fs::path kConfigs = CRAMNET_CONFIG_DIR;

ArchitectureSpec arch(const std::string& name) {
  return load_architecture(kConfigs / "archs" / (name + ".json"));
}

}  // namespace

TEST_CASE("parameter counting matches the published totals") {
  const ArchitectureSpec baseline = arch("cifar10_baseline");
  const auto costs = per_layer_costs(baseline);
  CHECK(costs[0].name == "conv1");
  CHECK(costs[0].params == 896);  // 96 kernels of 3x3 plus 32 biases
  CHECK(count_params(baseline) == 1'250'858);
  CHECK(count_params(arch("cifar10_test1")) == 128'314);
  CHECK(count_params(arch("cifar10_test2")) == 91'098);
  CHECK(count_params(arch("cifar10_test3")) == 72'490);
  CHECK(count_params(arch("cifar10_test4")) == 53'882);
  CHECK(count_params(arch("cifar10_test5")) == 35'274);
  CHECK(count_params(arch("cifar10_test5b")) == 13'698);
  CHECK(count_params(arch("cifar10_test1b")) == 60'658);
  CHECK(count_params(arch("cifar10_test1c")) == 68'394);
  CHECK(count_params(arch("vgg16")) == 138'357'544);
}

TEST_CASE("MAC counting: dense product and the hand-summed baseline") {
  const ArchitectureSpec baseline = arch("cifar10_baseline");
  const auto costs = per_layer_costs(baseline);
  long long fc1 = 0;
  for (const auto& c : costs)
    if (c.name == "fc1") fc1 = c.macs;
  CHECK(fc1 == 2304LL * 512);  // 1,179,648

  // independent hand sum over the layer geometry
  const long long hand = 32LL * 32 * 32 * (3 * 3 * 3)     // conv1 same on 32x32
                         + 30LL * 30 * 32 * (3 * 3 * 32)  // conv2 valid -> 30x30
                         + 15LL * 15 * 64 * (3 * 3 * 32)  // conv3 same on 15x15
                         + 13LL * 13 * 64 * (3 * 3 * 64)  // conv4 valid -> 13x13
                         + 2304LL * 512                   // fc1
                         + 512LL * 10;                    // output
  CHECK(hand == 20'741'120);
  CHECK(count_flops(baseline) == hand);
}

TEST_CASE("shape algebra composes and matches executed shapes") {
  const ArchitectureSpec baseline = arch("cifar10_baseline");
  const auto shapes = activation_shapes(baseline);
  CHECK(shapes[baseline.layer_index("pool1")] == Shape{15, 15, 32});
  CHECK(shapes[baseline.layer_index("conv4")] == Shape{13, 13, 64});
  CHECK(shapes[baseline.layer_index("pool2")] == Shape{6, 6, 64});
  CHECK(shapes[baseline.layer_index("flat")] == Shape{2304});

  std::mt19937_64 rng(31);
  for (int c = 0; c < 25; ++c) {
    const ArchitectureSpec spec = testers::random_arch(rng);
    const Model m = build(spec, 5 + c);
    Tensor batch = testers::random_tensor(
        {2, spec.input_shape[0], spec.input_shape[1], spec.input_shape[2]}, rng, 0.0, 1.0);
    std::map<std::string, Tensor> captured;
    std::vector<std::string> names;
    for (const auto& l : spec.layers) names.push_back(l.name);
    forward(m, batch, names, &captured);
    const auto shapes2 = activation_shapes(spec);
    for (std::size_t i = 0; i < spec.layers.size(); ++i) {
      Shape want = shapes2[i];
      want.insert(want.begin(), 2);
      if (spec.layers[i].kind == LayerKind::flatten || want.size() > 4) {
        // flattened stages collapse to (N, P)
        want = {2, volume(shapes2[i])};
      }
      CHECK(captured.at(spec.layers[i].name).shape() == want);
    }
  }
}

TEST_CASE("validate rejects malformed specs") {
  ArchitectureSpec s = arch("cifar10_baseline");
  SUBCASE("missing output layer") {
    s.layers.pop_back();
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
  }
  SUBCASE("output width must equal classes") {
    s.layers.back().width = 7;
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
  }
  SUBCASE("duplicate names") {
    s.layers[0].name = "relu1";
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
  }
  SUBCASE("even kernel") {
    s.layers[0].kernel_h = 2;
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
  }
  SUBCASE("dense before flatten") {
    LayerSpec d{"early_fc", LayerKind::dense, 8, 0, 0, Padding::same};
    s.layers.insert(s.layers.begin(), d);
    CHECK_THROWS_AS(validate(s), std::invalid_argument);
  }
}

TEST_CASE("build: shapes, determinism, tiny dense layer") {
  const ArchitectureSpec baseline = arch("cifar10_baseline");
  const Model m = build(baseline, 99);
  CHECK(m.params.weights[0].shape() == Shape{3, 3, 3, 32});
  CHECK(m.params.biases[0].shape() == Shape{32});
  CHECK((m.params.biases[0].flat() == 0.0).all());

  const Model m2 = build(baseline, 99);
  for (std::size_t i = 0; i < m.params.weights.size(); ++i)
    CHECK(bit_equal(m.params.weights[i], m2.params.weights[i]));
  const Model m3 = build(baseline, 100);
  CHECK_FALSE(bit_equal(m.params.weights[0], m3.params.weights[0]));

  ArchitectureSpec tiny;
  tiny.input_shape = {1};
  tiny.classes = 2;
  tiny.layers = {{"d1", LayerKind::dense, 1, 0, 0, Padding::same},
                 {"output", LayerKind::softmax_output, 2, 0, 0, Padding::same}};
  const Model t = build(tiny, 1);
  CHECK(t.params.weights[0].shape() == Shape{1, 1});
  CHECK(t.params.biases[0].shape() == Shape{1});
}

TEST_CASE("forward: zero model, capture equivalence, determinism") {
  ArchitectureSpec spec;
  spec.input_shape = {6, 6, 1};
  spec.classes = 3;
  spec.layers = {{"conv1", LayerKind::conv2d, 4, 3, 3, Padding::same},
                 {"relu1", LayerKind::relu, 0, 0, 0, Padding::same},
                 {"pool1", LayerKind::maxpool, 0, 0, 0, Padding::same},
                 {"flat", LayerKind::flatten, 0, 0, 0, Padding::same},
                 {"fc1", LayerKind::dense, 5, 0, 0, Padding::same},
                 {"output", LayerKind::softmax_output, 3, 0, 0, Padding::same}};
  Model m = build(spec, 4);

  std::mt19937_64 rng(32);
  Tensor batch = testers::random_tensor({2, 6, 6, 1}, rng);

  SUBCASE("zero weights and biases give zero logits") {
    for (auto& w : m.params.weights) w.flat().setZero();
    Tensor logits = forward(m, batch);
    CHECK(logits.shape() == Shape{2, 3});
    CHECK(logits.flat().abs().maxCoeff() == 0.0);
  }

  SUBCASE("captured activation equals a truncated recomputation") {
    std::map<std::string, Tensor> captured;
    forward(m, batch, {"pool1"}, &captured);

    Model trunc;  // prefix of the net; runs fine without an output layer
    trunc.spec.input_shape = spec.input_shape;
    trunc.spec.classes = spec.classes;
    trunc.spec.layers.assign(spec.layers.begin(), spec.layers.begin() + 3);
    trunc.params.weights = {m.params.weights[0]};
    trunc.params.biases = {m.params.biases[0]};
    Tensor expect = forward(trunc, batch);
    CHECK(bit_equal(captured.at("pool1"), expect));
  }

  SUBCASE("identical samples produce identical logit rows") {
    Tensor twice({2, 6, 6, 1});
    std::copy(batch.data(), batch.data() + 36, twice.data());
    std::copy(batch.data(), batch.data() + 36, twice.data() + 36);
    Tensor logits = forward(m, twice);
    for (Index j = 0; j < 3; ++j) CHECK(logits(0, j) == logits(1, j));
  }

  SUBCASE("capture at every boundary leaves the logits unchanged") {
    std::vector<std::string> names;
    for (const auto& l : spec.layers) names.push_back(l.name);
    std::map<std::string, Tensor> captured;
    Tensor with = forward(m, batch, names, &captured);
    Tensor plain = forward(m, batch);
    CHECK(bit_equal(with, plain));
    CHECK(bit_equal(captured.at("output"), plain));
  }
}

TEST_CASE("count properties: additivity, name invariance, width scaling") {
  std::mt19937_64 rng(33);
  for (int c = 0; c < 30; ++c) {
    ArchitectureSpec spec = testers::random_arch(rng);
    long long sum = 0;
    for (const auto& lc : per_layer_costs(spec)) sum += lc.params;
    CHECK(sum == count_params(spec));

    ArchitectureSpec renamed = spec;
    for (std::size_t i = 0; i < renamed.layers.size(); ++i)
      renamed.layers[i].name = "layer_" + std::to_string(i);
    CHECK(count_params(renamed) == count_params(spec));
    CHECK(count_flops(renamed) == count_flops(spec));

    // widening a hidden dense layer by f scales its own cost by exactly f
    const Index fi = spec.layer_index("fc0");
    if (fi >= 0) {
      const int f = 2 + (c % 3);
      ArchitectureSpec wider = spec;
      wider.layers[fi].width *= f;
      const auto before = per_layer_costs(spec);
      const auto after = per_layer_costs(wider);
      CHECK(after[fi].params == f * before[fi].params);
      CHECK(after[fi].macs == f * before[fi].macs);
    }
  }
}

TEST_CASE("checkpoint round trip is bit exact") {
  std::mt19937_64 rng(34);
  testers::TempDir tmp("ckpt");
  for (int c = 0; c < 10; ++c) {
    const ArchitectureSpec spec = testers::random_arch(rng);
    const Model m = build(spec, 1000 + c);
    const auto path = tmp.path / ("m" + std::to_string(c) + ".ckpt");
    save_checkpoint(m, path);
    const Model r = load_checkpoint(path);
    CHECK(r.spec == m.spec);
    for (std::size_t i = 0; i < m.params.weights.size(); ++i) {
      CHECK(bit_equal(r.params.weights[i], m.params.weights[i]));
      CHECK(bit_equal(r.params.biases[i], m.params.biases[i]));
    }
  }
}

TEST_CASE("checkpoint file size follows the format arithmetic") {
  testers::TempDir tmp("ckpt_size");
  const ArchitectureSpec baseline = arch("cifar10_baseline");
  const Model m = build(baseline, 7);
  const auto path = tmp.path / "baseline.ckpt";
  save_checkpoint(m, path);

  const std::uintmax_t json_len = to_json(baseline).dump().size();
  std::uintmax_t expect = 8 + 8 + json_len;  // magic + length prefix + spec
  for (std::size_t i = 0; i < m.params.weights.size(); ++i)
    expect += 8 + 8 * static_cast<std::uintmax_t>(m.params.weights[i].size()) + 8 +
              8 * static_cast<std::uintmax_t>(m.params.biases[i].size());
  CHECK(fs::file_size(path) == expect);
  CHECK(fs::file_size(path) >= 8u * 1'250'858u);
}

TEST_CASE("checkpoint corruption is reported") {
  testers::TempDir tmp("ckpt_bad");
  std::mt19937_64 rng(35);
  const ArchitectureSpec spec = testers::random_arch(rng);
  const Model m = build(spec, 3);
  const auto path = tmp.path / "m.ckpt";
  save_checkpoint(m, path);

  SUBCASE("truncated file") {
    const auto sz = fs::file_size(path);
    fs::resize_file(path, sz - 16);
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  SUBCASE("bad magic") {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.write("NOTANNET", 8);
    f.close();
    CHECK_THROWS_WITH_AS(load_checkpoint(path), doctest::Contains("not a CRAMNET1 checkpoint"),
                         std::runtime_error);
  }
  SUBCASE("trailing garbage") {
    std::ofstream f(path, std::ios::app | std::ios::binary);
    f.write("xx", 2);
    f.close();
    CHECK_THROWS_AS(load_checkpoint(path), std::runtime_error);
  }
  SUBCASE("missing file") { CHECK_THROWS_AS(load_checkpoint(tmp.path / "nope.ckpt"), std::runtime_error); }
}

TEST_CASE("architecture JSON round trip") {
  std::mt19937_64 rng(36);
  testers::TempDir tmp("arch");
  for (int c = 0; c < 10; ++c) {
    const ArchitectureSpec spec = testers::random_arch(rng);
    const auto path = tmp.path / "a.json";
    save_architecture(spec, path);
    CHECK(load_architecture(path) == spec);
  }
  CHECK_THROWS_AS(load_architecture(tmp.path / "missing.json"), std::runtime_error);
}
