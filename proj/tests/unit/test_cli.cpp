#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include "intriuap/cli/app.hpp"

using namespace intriuap;
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Result {
  int code;
  std::string out, err;
};

Result run(std::vector<std::string> args) {
  args.insert(args.begin(), "intriuap");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = cli::run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), {}};
}

fs::path fresh(const std::string& name) {
  const auto d = fs::temp_directory_path() / "intriuap_cli" / name;
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

class CliTest : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    root_ = fresh("fixtures");
    model::save_model(model::smallcnn<float>(3, 1, 8, 3), root_ / "small");
    model::save_model(model::smallcnn<float>(4, 1, 8, 3), root_ / "other");
    model::save_model(model::smallcnn<float>(5, 1, 12, 3), root_ / "wide");
    std::mt19937_64 rng(6);
    for (const char* split : {"train", "test"}) {
      train::Dataset<float> ds{tensor::random_uniform<float>({60, 1, 8, 8}, rng), {}};
      for (std::size_t i = 0; i < 60; ++i) {
        ds.labels.push_back(static_cast<int>(i % 3));
        for (std::size_t j = 0; j < 64; ++j) ds.images[i * 64 + j] = std::min(1.0f, ds.images[i * 64 + j] * 0.5f + 0.25f * static_cast<float>(i % 3));
      }
      train::save_ntsr_dataset(root_ / "data" / split, ds);
    }
    ntsr::save(root_ / "zero.ntsr", Tensor<double>({1, 1, 8, 8}));
  }

  static fs::path root_;
};

fs::path CliTest::root_;

json without_run_fields(json m) {
  for (const char* k : {"started_at", "finished_at", "wall_clock_seconds", "output_dir"}) m.erase(k);
  return m;
}

}  // namespace

TEST_F(CliTest, HelpDocumentsFlagsAndDefaults) {
  const auto top = run({"--help"});
  EXPECT_EQ(top.code, 0);
  for (const char* sub : {"train", "spectrum", "attack", "eval", "transfer", "defaults"}) EXPECT_NE(top.out.find(sub), std::string::npos) << sub;
  const std::map<std::string, std::vector<std::string>> expected{
      {"train", {"--arch", "[smallcnn]", "--data", "--out", "--epochs", "[4]", "--lr", "[0.003]", "--seed", "[0]", "--threads", "[1]"}},
      {"spectrum", {"--model", "--out", "--tol", "[1e-06]", "--max-iters", "[500]", "--oracle", "--probes", "[1000]", "--dump-dense"}},
      {"attack",
       {"--model", "--eps", "[0.0392157]", "10/255", "--epochs", "[100]", "--lr", "[0.01]", "--init", "[range]", "{range,gaussian,uniform}",
        "--xi-init", "[zeros]", "--layer-fraction", "[1]", "--seed", "--out", "--lr-step", "--lr-decay", "[0.5]"}},
      {"eval", {"--model", "--uap", "--data", "--defense", "[none]", "--split", "[test]", "--limit", "--out"}},
      {"transfer", {"--models", "--uaps", "--data", "--out", "--defense"}}};
  for (const auto& [sub, flags] : expected) {
    const auto h = run({sub, "--help"});
    EXPECT_EQ(h.code, 0);
    for (const auto& f : flags) EXPECT_NE(h.out.find(f), std::string::npos) << sub << " help lacks " << f;
  }
  const auto d = json::parse(run({"defaults"}).out);
  EXPECT_EQ(d["attack"]["epsilon"], 10.0 / 255.0);
  EXPECT_EQ(d["attack"]["layer_fraction"], 1.0);
  EXPECT_EQ(d["spectrum"]["max_iters"], 500);
}

TEST_F(CliTest, ExitCodesPerErrorClass) {
  const auto missing = run({"attack"});
  EXPECT_EQ(missing.code, cli::kExitBadArgs);
  EXPECT_EQ(missing.err.rfind("error: bad-args: ", 0), 0u) << missing.err;
  EXPECT_EQ(std::count(missing.err.begin(), missing.err.end(), '\n'), 1);
  EXPECT_EQ(run({"attack", "--model", (root_ / "small").string(), "--init", "noise"}).code, cli::kExitBadArgs);
  EXPECT_EQ(run({"eval", "--model", "m", "--uap", "u", "--data", "d", "--defense", "median:2"}).code, cli::kExitBadArgs);
  EXPECT_EQ(run({"frobnicate"}).code, cli::kExitBadArgs);

  const auto io = run({"attack", "--model", (root_ / "absent").string(), "--out", fresh("io").string()});
  EXPECT_EQ(io.code, cli::kExitIo);
  EXPECT_EQ(io.err.rfind("error: io: ", 0), 0u) << io.err;

  const auto bad_dir = fresh("bad_model");
  std::ofstream(bad_dir / "model.json") << "{ not json";
  EXPECT_EQ(run({"attack", "--model", bad_dir.string(), "--out", fresh("bad_out").string()}).code, cli::kExitValidation);
  const auto frac = run({"attack", "--model", (root_ / "small").string(), "--layer-fraction", "0", "--out", fresh("frac").string()});
  EXPECT_EQ(frac.code, cli::kExitValidation);
  EXPECT_EQ(frac.err.rfind("error: validation: ", 0), 0u) << frac.err;

  EXPECT_EQ(run({"--version"}).code, 0);
}

TEST_F(CliTest, SubprocessReportsExitCode) {
  const std::string cmd = std::string(INTRIUAP_CLI_PATH) + " eval --model /nonexistent --uap x --data y --out " + fresh("sub").string() + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  ASSERT_TRUE(WIFEXITED(status));
  EXPECT_EQ(WEXITSTATUS(status), cli::kExitIo);
}

TEST_F(CliTest, LayerFractionDefaultsToOne) {
  const auto a = fresh("frac_default"), b = fresh("frac_explicit");
  ASSERT_EQ(run({"attack", "--model", (root_ / "small").string(), "--epochs", "6", "--out", a.string()}).code, 0);
  ASSERT_EQ(run({"attack", "--model", (root_ / "small").string(), "--epochs", "6", "--layer-fraction", "1.0", "--out", b.string()}).code, 0);
  for (const char* f : {"xi.ntsr", "attack.json", "xi.ppm"}) EXPECT_EQ(slurp(a / f), slurp(b / f)) << f;
  EXPECT_EQ(without_run_fields(json::parse(slurp(a / "run_manifest.json"))), without_run_fields(json::parse(slurp(b / "run_manifest.json"))));
}

TEST_F(CliTest, AttackArtifactsReferenceManifest) {
  const auto d = fresh("attack_manifest");
  ASSERT_EQ(run({"attack", "--model", (root_ / "small").string(), "--epochs", "4", "--eps", "10/255", "--out", d.string()}).code, 0);
  const auto report = json::parse(slurp(d / "attack.json"));
  EXPECT_EQ(report["run_manifest"], "run_manifest.json");
  EXPECT_EQ(report["config"]["epsilon"], 10.0 / 255.0);
  const auto m = json::parse(slurp(d / "run_manifest.json"));
  EXPECT_EQ(m["subcommand"], "attack");
  EXPECT_EQ(m["config"]["layer_fraction"], 1.0);
  for (const auto& f : m["artifacts"]) EXPECT_TRUE(fs::exists(d / f.get<std::string>())) << f;
  EXPECT_TRUE(m.contains("started_at"));
  EXPECT_TRUE(m.contains("wall_clock_seconds"));
}

TEST_F(CliTest, OutputDirectoryFromEnvironment) {
  const auto base = fresh("env_out");
  ::setenv(cli::kOutDirEnv, base.string().c_str(), 1);
  const auto r = run({"attack", "--model", (root_ / "small").string(), "--epochs", "2"});
  ::unsetenv(cli::kOutDirEnv);
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(fs::exists(base / "attack" / "xi.ntsr"));
}

TEST_F(CliTest, EvalOfZeroPerturbationIsZero) {
  const auto d = fresh("eval_zero");
  const auto r = run({"eval", "--model", (root_ / "small").string(), "--uap", (root_ / "zero.ntsr").string(), "--data", (root_ / "data").string(),
                      "--out", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(d / "eval.csv");
  EXPECT_NE(csv.find("\nsmall,zero,none,60,0.000000,"), std::string::npos) << csv;
  EXPECT_EQ(json::parse(slurp(d / "eval.json"))["run_manifest"], "run_manifest.json");
}

TEST_F(CliTest, EvalRobustnessTableAndIdempotence) {
  const auto atk = fresh("eval_atk");
  ASSERT_EQ(run({"attack", "--model", (root_ / "small").string(), "--epochs", "5", "--eps", "0.2", "--out", atk.string()}).code, 0);
  std::string first;
  for (int rep = 0; rep < 2; ++rep) {
    const auto d = fresh("eval_table" + std::to_string(rep));
    const auto r = run({"eval", "--model", (root_ / "small").string(), "--uap", atk.string(), "--data", (root_ / "data").string(), "--defense",
                        "median:1", "--defense", "gaussian:1", "--defense", "median:3", "--examples", "2", "--out", d.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto csv = slurp(d / "eval.csv");
    if (rep == 0) first = csv;
    else EXPECT_EQ(csv, first);
    EXPECT_TRUE(fs::exists(d / "examples" / "example_001.ppm"));
  }
  std::istringstream is(first);
  std::vector<std::string> lines;
  for (std::string l; std::getline(is, l);) lines.push_back(l);
  ASSERT_EQ(lines.size(), 5u);
  EXPECT_EQ(lines[1].find("small,eval_atk,none,"), 0u);
  EXPECT_EQ(lines[2].find("small,eval_atk,median:1,"), 0u);
  EXPECT_EQ(lines[1].substr(lines[1].find(",60,")), lines[2].substr(lines[2].find(",60,")));
  EXPECT_NE(lines[3].find("gaussian:1.0:3"), std::string::npos);
}

TEST_F(CliTest, TransferMarksMismatchedCells) {
  const auto d = fresh("transfer");
  const auto r = run({"transfer", "--models", (root_ / "small").string(), (root_ / "other").string(), (root_ / "wide").string(),
                      (root_ / "small" / "model.json").string(), "--uaps", (root_ / "zero.ntsr").string(), "--data", (root_ / "data").string(),
                      "--out", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(d / "transfer.csv"), "uap,small,other,wide,small#2\nzero,0.000000,0.000000,unavailable,0.000000\n");
  const auto j = json::parse(slurp(d / "transfer.json"));
  EXPECT_EQ(j["notes"].size(), 1u);
  EXPECT_EQ(j["run_manifest"], "run_manifest.json");
}

TEST_F(CliTest, SpectrumWritesCsvOracleAndCertificate) {
  const auto d = fresh("spectrum");
  const auto r = run({"spectrum", "--model", (root_ / "small").string(), "--oracle", "--probes", "60", "--direction-trials", "100", "--dump-dense",
                      "fc", "--out", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto csv = slurp(d / "spectrum.csv");
  EXPECT_EQ(csv.rfind("layer_id,sigma_max,iterations,residual\n", 0), 0u);
  const auto g = model::load_model<double>(root_ / "small");
  EXPECT_EQ(static_cast<std::size_t>(std::count(csv.begin(), csv.end(), '\n')), 1 + g.linear_layer_order().size());
  const auto oracle = slurp(d / "oracle.csv");
  EXPECT_EQ(oracle.find("over-cap"), std::string::npos);
  std::istringstream is(oracle);
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    std::vector<std::string> f;
    std::stringstream ls(line);
    for (std::string c; std::getline(ls, c, ',');) f.push_back(c);
    ASSERT_EQ(f.size(), 6u) << line;
    EXPECT_LE(std::stod(f[3]), 1e-4) << line;
    EXPECT_LE(std::stod(f[4]), 1e-6 * std::max(1.0, std::stod(f[1]))) << line;
  }
  const auto cert = json::parse(slurp(d / "certificate.json"));
  EXPECT_TRUE(cert["holds"].get<bool>());
  EXPECT_TRUE(cert["direction_checks_pass"].get<bool>());
  EXPECT_TRUE(cert["l1los"]["pass"].get<bool>());
  EXPECT_LE(cert["probe_max"].get<double>(), cert["bound"].get<double>());
  const auto dense = ntsr::load<double>(d / "dense_fc.ntsr");
  EXPECT_EQ(dense.shape(), (Shape{3, g.node("fc").param("weight").dim(1)}));
}

TEST_F(CliTest, TrainProducesLoadableModel) {
  const auto d = fresh("train");
  const auto r = run({"train", "--data", (root_ / "data").string(), "--epochs", "2", "--lr", "0.01", "--batch-size", "10", "--out", d.string()});
  ASSERT_EQ(r.code, 0) << r.err;
  const auto g = model::load_model<float>(d / "model");
  EXPECT_EQ(g.input_shape(), (Shape{1, 8, 8}));
  EXPECT_EQ(g.class_count(), 3u);
  const auto rep = json::parse(slurp(d / "train_report.json"));
  EXPECT_EQ(rep["history"].size(), 2u);
  EXPECT_EQ(g.metadata().at("test_accuracy"), eval::detail::fixed(rep["test_accuracy"].get<double>()));
  EXPECT_EQ(run({"train", "--data", (root_ / "data").string(), "--epochs", "0", "--out", d.string()}).code, cli::kExitBadArgs);
}
