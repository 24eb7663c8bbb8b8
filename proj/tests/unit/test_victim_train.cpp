#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <random>

#include "intriuap/autodiff/grad_check.hpp"
#include "intriuap/model/architectures.hpp"
#include "intriuap/model/manifest.hpp"
#include "intriuap/train/trainer.hpp"

using namespace intriuap;
using namespace intriuap::train;
using model::LayerKind;
using T4 = Tensor<double>;

namespace {

const std::filesystem::path kMnist = std::filesystem::path(INTRIUAP_SOURCE_DIR) / "data" / "mnist-10k";

std::filesystem::path temp_dir(const std::string& name) {
  auto d = std::filesystem::temp_directory_path() / ("intriuap_train_" + name);
  std::filesystem::remove_all(d);
  std::filesystem::create_directories(d);
  return d;
}

// Two Gaussian blobs on a 2x2 image, separable by the sign of the mean pixel minus 0.5.
Dataset<double> blobs(std::size_t n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(0.0, 0.05);
  Dataset<double> ds{T4({n, 1, 2, 2}), {}};
  for (std::size_t i = 0; i < n; ++i) {
    const int label = static_cast<int>(i % 2);
    for (std::size_t j = 0; j < 4; ++j) ds.images[i * 4 + j] = (label ? 0.75 : 0.25) + z(rng);
    ds.labels.push_back(label);
  }
  return ds;
}

model::ModelGraph<double> linear_classifier() {
  model::GraphBuilder<double> b(1, 1);
  auto x = b.unary("flat", LayerKind::Flatten, model::kInputId);
  b.fc("fc", x, 4, 2);
  return b.finish("toy", {1, 2, 2}, 2, "fc");
}

model::ModelGraph<double> conv_bn_classifier(std::uint64_t seed) {
  model::GraphBuilder<double> b(seed, 1);
  auto x = b.conv("conv", model::kInputId, 1, 3, 3);
  x = b.bn("bn", x, 3);
  x = b.unary("relu", LayerKind::ReLU, x);
  x = b.unary("flat", LayerKind::Flatten, x);
  b.fc("fc", x, 3 * 4 * 4, 2);
  return b.finish("convbn", {1, 4, 4}, 2, "fc");
}

const Dataset<double>* const kNoTest = nullptr;

}  // namespace

TEST(Idx, ReadsMnistSubset) {
  const auto tr = load_dataset<float>(kMnist, "train");
  const auto te = load_dataset<float>(kMnist, "test");
  EXPECT_EQ(tr.images.shape(), (Shape{8000, 1, 28, 28}));
  EXPECT_EQ(te.size(), 2000u);
  EXPECT_EQ(tr.max_label(), 9);
  float lo = 1, hi = 0;
  for (float v : te.images.data()) {
    lo = std::min(lo, v);
    hi = std::max(hi, v);
  }
  EXPECT_EQ(lo, 0.0f);
  EXPECT_EQ(hi, 1.0f);
}

TEST(Idx, RoundTrip) {
  const auto dir = temp_dir("idx");
  Dataset<double> ds{T4({2, 1, 2, 3}, {0, 1, 0.5, 0.2, 1, 0, 1, 1, 1, 0, 0, 0}), {7, 3}};
  save_idx(dir / "train-images-idx3-ubyte", dir / "train-labels-idx1-ubyte", ds);
  const auto back = load_dataset<double>(dir, "train");
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_LE(tensor::max_abs_diff(back.images, ds.images), 0.5 / 255.0 + 1e-12);
  EXPECT_EQ(std::filesystem::file_size(dir / "train-images-idx3-ubyte"), 16u + 12u);
}

TEST(Idx, RejectsCorruptFiles) {
  const auto dir = temp_dir("idx_bad");
  {
    std::ofstream os(dir / "bad", std::ios::binary);
    os << "not an idx file";
  }
  EXPECT_THROW(load_idx_images<float>(dir / "bad"), IoError);
  {
    std::ofstream os(dir / "short", std::ios::binary);
    const char hdr[] = {0, 0, 8, 1, 0, 0, 0, 10, 1, 2};
    os.write(hdr, sizeof hdr);
  }
  EXPECT_THROW(load_idx_labels(dir / "short"), IoError);
  EXPECT_THROW(load_dataset<float>(dir / "missing", "train"), IoError);
  EXPECT_THROW(load_dataset<float>(dir, "train"), IoError);
  EXPECT_THROW(load_dataset<float>(dir, "validation"), InvalidParameter);
}

TEST(NtsrDataset, RoundTripAndSplitLayout) {
  const auto dir = temp_dir("ntsr");
  const auto ds = blobs(6, 1);
  save_ntsr_dataset(dir / "test", ds);
  const auto back = load_dataset<double>(dir, "test");
  EXPECT_EQ(back.labels, ds.labels);
  EXPECT_EQ(back.images.storage(), ds.images.storage());
  save_ntsr_dataset(dir / "flat", ds);
  EXPECT_EQ(load_dataset<double>(dir / "flat", "train").size(), 6u);
}

TEST(BatchNormTrain, GradientsMatchFiniteDifferences) {
  std::mt19937_64 rng(3);
  const auto x0 = tensor::random_normal<double>({3, 2, 2, 2}, rng);
  const auto gamma = tensor::random_uniform<double>({2}, rng, 0.5, 1.5);
  const auto beta = tensor::random_uniform<double>({2}, rng, -0.5, 0.5);
  const auto w = tensor::random_normal<double>({3, 2, 2, 2}, rng);
  auto objective = [&](ad::Tape<double>& t, ad::ValueId y) {
    return ad::sum(t, ad::mul(t, y, t.constant(w)));
  };
  ad::ScalarProgram wrt_x = [&](ad::Tape<double>& t, ad::ValueId x) {
    return objective(t, batchnorm_train(t, x, t.constant(gamma), t.constant(beta), 1e-5));
  };
  ad::ScalarProgram wrt_gamma = [&](ad::Tape<double>& t, ad::ValueId g) {
    return objective(t, batchnorm_train(t, t.constant(x0), g, t.constant(beta), 1e-5));
  };
  ad::ScalarProgram wrt_beta = [&](ad::Tape<double>& t, ad::ValueId b) {
    return objective(t, batchnorm_train(t, t.constant(x0), t.constant(gamma), b, 1e-5));
  };
  EXPECT_LE(ad::grad_check(wrt_x, x0).max_rel_error, 1e-6);
  EXPECT_LE(ad::grad_check(wrt_gamma, gamma).max_rel_error, 1e-6);
  EXPECT_LE(ad::grad_check(wrt_beta, beta).max_rel_error, 1e-6);
}

TEST(BatchNormTrain, AgreesWithInferenceWhenStatisticsMatch) {
  std::mt19937_64 rng(4);
  const auto x = tensor::random_normal<double>({4, 3, 2, 2}, rng, 0.3, 2.0);
  const auto gamma = tensor::random_uniform<double>({3}, rng, 0.5, 1.5);
  const auto beta = tensor::random_uniform<double>({3}, rng, -0.5, 0.5);
  ad::Tape<double> tape;
  BatchStats<double> st;
  const auto y = batchnorm_train(tape, tape.constant(x), tape.constant(gamma), tape.constant(beta), 1e-5, &st);
  EXPECT_EQ(st.count, 16u);
  const auto inf = ad::batchnorm_inference(tape, tape.constant(x), tape.constant(gamma), tape.constant(beta), tape.constant(st.mean),
                                           tape.constant(st.var), 1e-5);
  EXPECT_LE(tensor::max_abs_diff(tape.value(y), tape.value(inf)), 1e-12);
}

TEST(Optim, AdamFirstStepIsSignedLearningRate) {
  optim::Adam<double> adam({0.1, 0.9, 0.999, 1e-8});
  T4 p({3}, {0.0, 1.0, 2.0});
  const T4 g({3}, {2.0, -0.5, 1e-3});
  adam.step({&p}, {&g});
  EXPECT_NEAR(p[0], -0.1, 1e-6);
  EXPECT_NEAR(p[1], 1.1, 1e-6);
  EXPECT_NEAR(p[2], 1.9, 1e-5);
  EXPECT_EQ(adam.steps(), 1u);
}

TEST(Optim, SgdMomentumAccumulates) {
  optim::Sgd<double> sgd({0.1, 0.5, 0.0});
  T4 p({1}, {1.0});
  const T4 g({1}, {1.0});
  sgd.step({&p}, {&g});
  EXPECT_DOUBLE_EQ(p[0], 0.9);
  sgd.step({&p}, {&g});
  EXPECT_DOUBLE_EQ(p[0], 0.9 - 0.1 * 1.5);
}

TEST(Optim, StepLrSchedule) {
  const auto s = optim::StepLR::for_epochs(100);
  EXPECT_EQ(s.step_size, 20u);
  EXPECT_EQ(s.rate(0.01, 19), 0.01);
  EXPECT_EQ(s.rate(0.01, 20), 0.005);
  EXPECT_EQ(optim::StepLR::for_epochs(3).step_size, 1u);
}

TEST(Train, SeparableBlobsReachNinetyNinePercent) {
  const auto tr = blobs(400, 5), te = blobs(200, 6);
  TrainConfig c;
  c.epochs = 5;
  c.learning_rate = 0.05;
  c.batch_size = 16;
  for (auto kind : {OptimizerKind::Adam, OptimizerKind::Sgd}) {
    c.optimizer = kind;
    const auto r = train::train(linear_classifier(), tr, &te, c);
    EXPECT_GE(*r.test_accuracy, 0.99) << optimizer_name(kind);
    EXPECT_EQ(r.history.size(), 5u);
    EXPECT_LT(r.history.back().train_loss, r.history.front().train_loss);
  }
}

TEST(Train, ZeroEpochsIsChanceLevel) {
  const auto te = load_dataset<float>(kMnist, "test");
  TrainConfig c;
  c.epochs = 0;
  const auto r = train::train(model::smallcnn<float>(11), load_dataset<float>(kMnist, "test").slice(0, 10), &te, c);
  EXPECT_TRUE(r.history.empty());
  EXPECT_NEAR(*r.test_accuracy, 0.1, 0.05);
}

TEST(Train, BitReproducibleUnderFixedSeed) {
  const auto tr = blobs(64, 7);
  auto data = Dataset<double>{T4({64, 1, 4, 4}), tr.labels};
  std::mt19937_64 rng(8);
  for (std::size_t i = 0; i < data.images.numel(); ++i) data.images[i] = tr.images[i / 4] + 0.01 * static_cast<double>(rng() % 7);
  TrainConfig c;
  c.epochs = 2;
  c.batch_size = 8;
  c.seed = 42;
  const auto a = train::train(conv_bn_classifier(1), data, kNoTest, c);
  const auto b = train::train(conv_bn_classifier(1), data, kNoTest, c);
  for (std::size_t i = 0; i < a.model.size(); ++i)
    for (const auto& [name, t] : a.model.node(i).params) EXPECT_EQ(t.storage(), b.model.node(i).param(name).storage()) << name;
  c.seed = 43;
  const auto d = train::train(conv_bn_classifier(1), data, kNoTest, c);
  EXPECT_NE(d.model.node(d.model.index_of("fc")).param("weight").storage(),
            a.model.node(a.model.index_of("fc")).param("weight").storage());
}

TEST(Train, MovingStatisticsUseMomentum) {
  const auto g0 = conv_bn_classifier(2);
  Dataset<double> data{T4({4, 1, 4, 4}), {0, 1, 0, 1}};
  std::mt19937_64 rng(9);
  for (double& v : data.images.data()) v = std::uniform_real_distribution<double>(0, 1)(rng);
  // Batch statistics of the conv output, straight from the untrained model.
  ad::Tape<double> tape;
  const auto tr0 = model::trace_forward(g0, tape, tape.constant(data.images));
  const T4 conv_out = tape.value(*tr0.node_values[g0.index_of("conv")]);
  BatchStats<double> st;
  ad::Tape<double> t2;
  batchnorm_train(t2, t2.constant(conv_out), t2.constant(T4({3}, 1.0)), t2.constant(T4({3})), 1e-5, &st);

  TrainConfig c;
  c.epochs = 1;
  c.batch_size = 4;
  const auto r = train::train(g0, data, kNoTest, c);
  const auto& bn = r.model.node(r.model.index_of("bn"));
  for (std::size_t ch = 0; ch < 3; ++ch) {
    EXPECT_NEAR(bn.param("moving_mean")[ch], 0.1 * st.mean[ch], 1e-12);
    EXPECT_NEAR(bn.param("moving_var")[ch], 0.9 + 0.1 * st.var[ch] * 64.0 / 63.0, 1e-12);
  }
}

TEST(Train, DivergenceAbortsWithDiagnostic) {
  auto data = blobs(8, 3);
  data.images[5] = std::numeric_limits<double>::quiet_NaN();
  TrainConfig c;
  c.batch_size = 8;
  try {
    train::train(linear_classifier(), data, kNoTest, c);
    FAIL() << "expected NumericError";
  } catch (const NumericError& e) {
    EXPECT_NE(std::string(e.what()).find("epoch 1, step 1"), std::string::npos) << e.what();
  }
}

TEST(Train, ValidatesDatasetAgainstModel) {
  auto data = blobs(4, 1);
  data.labels[0] = 2;
  EXPECT_THROW(train::train(linear_classifier(), data, kNoTest, TrainConfig{}), InvalidParameter);
  EXPECT_THROW(train::train(conv_bn_classifier(1), blobs(4, 1), kNoTest, TrainConfig{}), DimensionError);
  TrainConfig c;
  c.batch_size = 0;
  EXPECT_THROW(train::train(linear_classifier(), blobs(4, 1), kNoTest, c), InvalidParameter);
}

TEST(EvaluateAccuracy, ConstantLogitsPickTheFavoredClass) {
  auto g = linear_classifier();
  g.mutable_param(g.index_of("fc"), "weight") = T4({2, 4});
  g.mutable_param(g.index_of("fc"), "bias") = T4({2}, {0.0, 1.0});
  Dataset<double> ds{T4({5, 1, 2, 2}), {1, 1, 0, 1, 0}};
  EXPECT_DOUBLE_EQ(evaluate_accuracy(g, ds), 0.6);
  // Equal logits break toward class 0.
  g.mutable_param(g.index_of("fc"), "bias") = T4({2}, {1.0, 1.0});
  EXPECT_DOUBLE_EQ(evaluate_accuracy(g, ds), 0.4);
}

TEST(EvaluateAccuracy, MemorizedToySetIsPerfect) {
  const auto tr = blobs(40, 12);
  TrainConfig c;
  c.epochs = 5;
  c.learning_rate = 0.05;
  c.batch_size = 4;
  const auto r = train::train(linear_classifier(), tr, kNoTest, c);
  EXPECT_EQ(evaluate_accuracy(r.model, tr), 1.0);
  EXPECT_EQ(evaluate_accuracy(r.model, tr, 3), 1.0);
}

TEST(Fixtures, ReferenceCheckpointAccuracyMatchesMetadata) {
  const auto g = model::load_model<float>(std::filesystem::path(INTRIUAP_SOURCE_DIR) / "fixtures" / "smallcnn");
  const double acc = evaluate_accuracy(g, load_dataset<float>(kMnist, "test"));
  EXPECT_NEAR(acc, std::stod(g.metadata().at("test_accuracy")), 1e-3);
  EXPECT_GE(acc, 0.97);
}
