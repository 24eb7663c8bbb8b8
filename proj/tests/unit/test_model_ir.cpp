#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "intriuap/model/architectures.hpp"
#include "intriuap/model/certify.hpp"
#include "intriuap/model/forward.hpp"
#include "intriuap/model/manifest.hpp"

using namespace intriuap;
using namespace intriuap::model;
namespace fs = std::filesystem;
using nlohmann::json;
using T4 = Tensor<double>;

namespace {

T4 randn(Shape s, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  return tensor::random_normal<double>(std::move(s), rng);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name) : path(fs::temp_directory_path() / ("intriuap_" + name)) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

std::string read_file(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

// conv(1->2, 3x3) -> relu -> flatten -> fc(2*4*4 -> 3), with blobs written to dir.
json minimal_manifest(const fs::path& dir) {
  ntsr::save(dir / "conv.weight.ntsr", randn({2, 1, 3, 3}, 1));
  ntsr::save(dir / "fc.weight.ntsr", randn({3, 32}, 2));
  ntsr::save(dir / "fc.bias.ntsr", randn({3}, 3));
  return json::parse(R"({
    "format": "intriuap.model.v1", "name": "mini", "input_shape": [1, 4, 4], "class_count": 3, "output": "fc",
    "nodes": [
      {"id": "conv", "kind": "Conv2d", "inputs": ["input"], "stride": [1, 1], "padding": {"mode": "zero", "size": [1, 1]},
       "params": {"weight": {"file": "conv.weight.ntsr", "shape": [2, 1, 3, 3]}}},
      {"id": "relu", "kind": "ReLU", "inputs": ["conv"]},
      {"id": "flat", "kind": "Flatten", "inputs": ["relu"]},
      {"id": "fc", "kind": "FullyConnected", "inputs": ["flat"],
       "params": {"weight": {"file": "fc.weight.ntsr"}, "bias": {"file": "fc.bias.ntsr"}}}
    ]})");
}

void write_json(const fs::path& p, const json& j) { std::ofstream(p) << j.dump(2); }

ModelFault load_fault(const fs::path& file) {
  try {
    load_model<double>(file);
  } catch (const ModelError& e) {
    return e.fault();
  }
  ADD_FAILURE() << "expected a ModelError";
  return ModelFault::BadManifest;
}

}  // namespace

TEST(LoadModel, MinimalManifest) {
  TempDir d("mini");
  write_json(d.path / "model.json", minimal_manifest(d.path));
  const auto g = load_model<double>(d.path / "model.json");
  EXPECT_EQ(g.linear_layer_order(), (std::vector<std::string>{"conv", "fc"}));
  EXPECT_EQ(g.node("conv").out_shape, (Shape{2, 4, 4}));
  EXPECT_EQ(g.node("flat").out_shape, (Shape{32}));
  EXPECT_EQ(g.class_count(), 3u);
}

TEST(LoadModel, UnsupportedKindIsL1losViolation) {
  TempDir d("sigmoid");
  auto j = minimal_manifest(d.path);
  j["nodes"][1]["kind"] = "sigmoid";
  write_json(d.path / "model.json", j);
  EXPECT_EQ(load_fault(d.path / "model.json"), ModelFault::L1losViolation);
  const auto report = validate_l1los(j);
  EXPECT_FALSE(report.pass);
  EXPECT_EQ(report.failing(), std::vector<std::string>{"relu"});
}

TEST(LoadModel, DistinctFaults) {
  TempDir d("faults");
  const auto base = minimal_manifest(d.path);

  auto missing = base;
  missing["nodes"][0]["params"]["weight"]["file"] = "nope.ntsr";
  write_json(d.path / "missing.json", missing);
  EXPECT_EQ(load_fault(d.path / "missing.json"), ModelFault::MissingBlob);

  auto declared = base;
  declared["nodes"][0]["params"]["weight"]["shape"] = {4, 1, 3, 3};
  write_json(d.path / "declared.json", declared);
  EXPECT_EQ(load_fault(d.path / "declared.json"), ModelFault::ShapeMismatch);

  auto geometry = base;
  geometry["input_shape"] = {1, 5, 5};
  write_json(d.path / "geometry.json", geometry);
  EXPECT_EQ(load_fault(d.path / "geometry.json"), ModelFault::ShapeMismatch);

  auto cycle = base;
  cycle["nodes"][0]["inputs"] = {"relu"};
  cycle["nodes"][1]["inputs"] = {"conv"};
  cycle["nodes"].push_back(json::parse(R"({"id": "dummy", "kind": "ReLU", "inputs": ["input"]})"));
  write_json(d.path / "cycle.json", cycle);
  EXPECT_EQ(load_fault(d.path / "cycle.json"), ModelFault::Cycle);

  auto two_outputs = base;
  two_outputs["nodes"].push_back(json::parse(R"({"id": "extra", "kind": "ReLU", "inputs": ["conv"]})"));
  write_json(d.path / "two.json", two_outputs);
  EXPECT_EQ(load_fault(d.path / "two.json"), ModelFault::BadTopology);

  auto arity = base;
  arity["nodes"][1]["kind"] = "ResidualAdd";
  write_json(d.path / "arity.json", arity);
  EXPECT_EQ(load_fault(d.path / "arity.json"), ModelFault::BadTopology);

  std::ofstream(d.path / "garbage.json") << "{ not json";
  EXPECT_EQ(load_fault(d.path / "garbage.json"), ModelFault::BadManifest);

  EXPECT_THROW(load_model<double>(d.path / "absent.json"), IoError);
}

TEST(LoadModel, NegativeMovingVarianceRejected) {
  auto g = smallcnn<double>(1);
  auto nodes = g.nodes();
  for (auto& n : nodes)
    if (n.id == "bn2") n.params["moving_var"][3] = -1.0;
  EXPECT_THROW(ModelGraph<double>::build("x", g.input_shape(), 10, nodes, "fc"), ModelError);
}

TEST(LoadModel, SaveLoadRoundTripsBitExactly) {
  TempDir d("roundtrip");
  auto g = smallres<double>(7);
  g.metadata()["note"] = "round trip";
  save_model(g, d.path / "a");
  const auto back = load_model<double>(d.path / "a");
  save_model(back, d.path / "b");
  for (const auto& entry : fs::directory_iterator(d.path / "a"))
    EXPECT_EQ(read_file(entry.path()), read_file(d.path / "b" / entry.path().filename())) << entry.path();
  for (std::size_t i = 0; i < g.size(); ++i)
    for (const auto& [name, t] : g.node(i).params) EXPECT_EQ(back.node(i).param(name), t);
  EXPECT_EQ(back.metadata().at("note"), "round trip");
}

TEST(Architectures, SmallcnnLinearOrder) {
  const auto g = smallcnn<double>(0);
  EXPECT_EQ(g.linear_layer_order(), (std::vector<std::string>{"conv1", "bn1", "conv2", "bn2", "conv3", "bn3", "fc"}));
  EXPECT_EQ(g.node("fc").in_shapes.front(), (Shape{784}));
}

TEST(Architectures, SmallresLinearOrder) {
  const auto g = smallres<double>(0);
  EXPECT_EQ(g.linear_count(), 13u);
  EXPECT_EQ(g.linear_layer_order().front(), "stem.conv");
  EXPECT_EQ(g.linear_layer_order()[6], "down.conv");
  EXPECT_EQ(g.node("block2.add").out_shape, (Shape{16, 7, 7}));
}

TEST(Forward, ZeroInputThroughBiasFreeNetGivesZeroLogits) {
  const auto g = smallcnn<double>(3);  // BN shifts and FC bias start at zero
  const auto out = forward(g, T4({2, 1, 28, 28}));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 10}));
  for (double v : out.logits.data()) EXPECT_EQ(v, 0.0);
  EXPECT_EQ(out.linear_inputs.size(), 7u);
}

TEST(Forward, IdentityOneByOneConvNet) {
  std::vector<LayerNode<double>> nodes;
  nodes.push_back({"conv", LayerKind::Conv2d, {"input"}, {{"weight", T4({2, 2, 1, 1}, {1, 0, 0, 1})}}, ConvAttrs{}, {}, {}});
  nodes.push_back({"flat", LayerKind::Flatten, {"conv"}, {}, {}, {}, {}});
  const auto w = randn({4, 18}, 4);
  nodes.push_back({"fc", LayerKind::FullyConnected, {"flat"}, {{"weight", w}}, {}, {}, {}});
  const auto g = ModelGraph<double>::build("id", {2, 3, 3}, 4, nodes, "fc");
  const auto x = randn({1, 2, 3, 3}, 5);
  const auto y = logits(g, x);
  for (std::size_t o = 0; o < 4; ++o) {
    double ref = 0;
    for (std::size_t i = 0; i < 18; ++i) ref += w[o * 18 + i] * x[i];
    EXPECT_NEAR(y[o], ref, 1e-13);
  }
}

TEST(Forward, RejectsWrongInputShape) {
  const auto g = smallcnn<double>(0);
  EXPECT_THROW(forward(g, T4({1, 1, 27, 28})), DimensionError);
  EXPECT_THROW(forward(g, T4({1, 28, 28})), DimensionError);
}

TEST(Forward, DeterministicAndPure) {
  const auto g = smallres<double>(8);
  const auto x = randn({3, 1, 28, 28}, 9);
  const auto a = forward(g, x), b = forward(g, x);
  EXPECT_EQ(ntsr::to_bytes(a.logits), ntsr::to_bytes(b.logits));
  for (std::size_t k = 0; k < a.linear_inputs.size(); ++k) EXPECT_EQ(a.linear_inputs[k], b.linear_inputs[k]);
}

TEST(Forward, TruncationStopsAtLinearLimit) {
  const auto g = smallcnn<double>(2);
  const auto x = randn({1, 1, 28, 28}, 10);
  const auto full = forward(g, x);
  const auto part = forward(g, x, 3);
  EXPECT_TRUE(part.logits.empty());
  ASSERT_EQ(part.linear_inputs.size(), 3u);
  for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(part.linear_inputs[k], full.linear_inputs[k]);
}

namespace {

// Reference evaluation of a single node from tape-free kernels.
T4 eval_node(const LayerNode<double>& n, const std::vector<T4>& in) {
  switch (n.kind) {
    case LayerKind::Conv2d: return kernels::conv2d_forward(in[0], n.param("weight"), n.find_param("bias"), n.conv().stride, n.conv().padding);
    case LayerKind::BatchNorm:
      return kernels::batchnorm_inference(in[0], n.param("gamma"), n.param("beta"), n.param("moving_mean"), n.param("moving_var"),
                                          n.batchnorm().eps);
    case LayerKind::FullyConnected: return kernels::fully_connected_forward(in[0], n.param("weight"), n.find_param("bias"));
    case LayerKind::ReLU: return kernels::relu_forward(in[0]);
    case LayerKind::MaxPool: return kernels::maxpool2d_forward(in[0], n.pool().window, n.pool().stride, nullptr);
    case LayerKind::AvgPool: return kernels::avgpool2d_forward(in[0], n.pool().window, n.pool().stride);
    case LayerKind::ResidualAdd: {
      T4 s = in[0];
      for (std::size_t i = 1; i < in.size(); ++i) s = tensor::add(s, in[i]);
      return s;
    }
    case LayerKind::Concat: {
      std::vector<const T4*> p;
      for (const auto& t : in) p.push_back(&t);
      return kernels::concat_channels(p);
    }
    case LayerKind::Flatten: return in[0].reshaped({in[0].dim(0), in[0].numel() / in[0].dim(0)});
  }
  return {};
}

}  // namespace

TEST(Forward, SnapshotsSatisfyTheRecursion) {
  for (const auto& g : {smallcnn<double>(11), smallres<double>(12)}) {
    const auto x = randn({2, 1, 28, 28}, 13);
    Tape<double> tape;
    const auto in = tape.constant(x);
    const auto tr = trace_forward(g, tape, in);
    // Re-evaluate every node from its recorded inputs; linear nodes read their snapshot.
    std::size_t k = 0;
    for (std::size_t i = 0; i < g.size(); ++i) {
      std::vector<T4> ins;
      for (auto j : g.input_indices(i)) ins.push_back(j == ModelGraph<double>::kGraphInput ? x : tape.value(*tr.node_values[j]));
      if (is_linear(g.node(i).kind)) {
        EXPECT_EQ(tape.value(tr.linear_inputs[k]), ins[0]) << g.node(i).id;
        ins[0] = tape.value(tr.linear_inputs[k++]);
      }
      EXPECT_LT(tensor::max_abs_diff(eval_node(g.node(i), ins), tape.value(*tr.node_values[i])), 1e-12) << g.node(i).id;
    }
    EXPECT_EQ(k, g.linear_count());
  }
}

TEST(Forward, ResidualBlockComposition) {
  const auto g = smallres<double>(14);
  const auto x = randn({2, 1, 28, 28}, 15);
  Tape<double> tape;
  const auto tr = trace_forward(g, tape, tape.constant(x));
  const auto& block_in = tape.value(*tr.node_values[g.index_of("stem.pool")]);
  auto h = eval_node(g.node("block1.conv1"), {block_in});
  h = kernels::relu_forward(eval_node(g.node("block1.bn1"), {h}));
  h = eval_node(g.node("block1.conv2"), {h});
  h = kernels::relu_forward(eval_node(g.node("block1.bn2"), {h}));
  const auto expected = tensor::add(h, block_in);
  EXPECT_LT(tensor::max_abs_diff(expected, tape.value(*tr.node_values[g.index_of("block1.add")])), 1e-12);
}

TEST(Forward, ConcatBranchesStayOutOfLinearOrderAndShapesAdd) {
  GraphBuilder<double> b(16, 1);
  auto l = b.conv("left", kInputId, 1, 2, 3);
  auto r = b.conv("right", kInputId, 1, 3, 1, 1, 0);
  auto c = b.join("cat", LayerKind::Concat, {l, r});
  auto f = b.unary("flat", LayerKind::Flatten, c);
  b.fc("fc", f, 5 * 6 * 6, 4);
  const auto g = b.finish("cat", {1, 6, 6}, 4, "fc");
  EXPECT_EQ(g.node("cat").out_shape, (Shape{5, 6, 6}));
  EXPECT_EQ(g.linear_layer_order(), (std::vector<std::string>{"left", "right", "fc"}));
  const auto out = forward(g, randn({2, 1, 6, 6}, 17));
  EXPECT_EQ(out.logits.shape(), (Shape{2, 4}));
}

TEST(ValidateL1los, ChainPasses) {
  const auto r = validate_l1los(smallcnn<double>(0));
  EXPECT_TRUE(r.pass);
  EXPECT_EQ(r.nodes.size(), smallcnn<double>(0).size());
}

TEST(ValidateL1los, AvgPoolCertifiedByDenseSvd) {
  GraphBuilder<double> b(18, 1);
  auto x = b.conv("conv", kInputId, 1, 2, 3);
  x = b.unary("pool", LayerKind::AvgPool, x);
  x = b.unary("flat", LayerKind::Flatten, x);
  b.fc("fc", x, 2 * 4 * 4, 3);
  const auto r = validate_l1los(b.finish("avg", {1, 8, 8}, 3, "fc"));
  EXPECT_TRUE(r.pass);
  EXPECT_NE(r.nodes[1].reason.find("spectral norm 0.5"), std::string::npos) << r.nodes[1].reason;
}

TEST(ValidateL1los, AvgPoolOperatorNormIsHalf) {
  const auto op = linops::materialize_avgpool<double>({2, 2}, {2, 2}, 6, 6);
  EXPECT_NEAR(spectral::dense_svd_max(op).sigma_max, 0.5, 1e-12);  // disjoint windows: each row has norm 1/2
}

TEST(ModelGraph, CastPreservesStructure) {
  const auto g = smallres<double>(19);
  const auto f = g.cast<float>();
  EXPECT_EQ(f.linear_layer_order(), g.linear_layer_order());
  const auto x = randn({1, 1, 28, 28}, 20);
  EXPECT_LT(tensor::max_abs_diff(logits(f, x.cast<float>()).cast<double>(), logits(g, x)), 1e-3);
}

TEST(ModelGraph, ArgmaxTiesGoToLowestIndex) {
  const T4 l({2, 3}, {1.0, 1.0, 0.5, -1.0, 2.0, 2.0});
  EXPECT_EQ(argmax_rows(l), (std::vector<int>{0, 1}));
}

TEST(Fixtures, GoldenLogitsReproduce) {
  const auto root = std::filesystem::path(INTRIUAP_SOURCE_DIR) / "fixtures";
  for (const char* arch : {"smallcnn", "smallres"}) {
    const auto g = model::load_model<double>(root / arch);
    const auto x = ntsr::load<double>(root / arch / "golden_input.ntsr");
    const auto want = ntsr::load<double>(root / arch / "golden_logits.ntsr");
    EXPECT_LE(tensor::max_abs_diff(model::logits(g, x), want), 1e-5) << arch;
    EXPECT_TRUE(model::validate_l1los(g).pass) << arch;
  }
  EXPECT_EQ(model::load_model<double>(root / "smallcnn").linear_layer_order(),
            (std::vector<std::string>{"conv1", "bn1", "conv2", "bn2", "conv3", "bn3", "fc"}));
}
