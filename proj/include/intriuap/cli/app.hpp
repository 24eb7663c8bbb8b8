#pragma once

#include <chrono>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"

#include "intriuap/attack/artifact.hpp"
#include "intriuap/cli/defaults.hpp"
#include "intriuap/eval/report.hpp"
#include "intriuap/linops/dense.hpp"
#include "intriuap/model/architectures.hpp"
#include "intriuap/model/certify.hpp"
#include "intriuap/model/manifest.hpp"
#include "intriuap/spectral/dense_svd.hpp"

namespace intriuap::cli {

enum ExitCode : int { kExitOk = 0, kExitBadArgs = 2, kExitIo = 3, kExitValidation = 4, kExitNumeric = 5 };

inline int exit_code(ErrorClass c) {
  switch (c) {
    case ErrorClass::BadArgs: return kExitBadArgs;
    case ErrorClass::Io: return kExitIo;
    case ErrorClass::Validation: return kExitValidation;
    case ErrorClass::Numeric: return kExitNumeric;
  }
  return kExitValidation;
}

inline constexpr const char* kRunManifestFile = "run_manifest.json";

namespace detail {

using json = nlohmann::json;

inline std::string utc_timestamp(std::chrono::system_clock::time_point t) {
  const std::time_t tt = std::chrono::system_clock::to_time_t(t);
  std::tm tm{};
  gmtime_r(&tt, &tm);
  char buf[32];
  std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
  return buf;
}

/// Collects what a subcommand did and writes run_manifest.json. Timestamps live
/// only here, so every other artifact is byte-stable across reruns.
class RunRecorder {
 public:
  RunRecorder(std::string subcommand, std::filesystem::path out_dir)
      : subcommand_(std::move(subcommand)), out_(std::move(out_dir)), wall_(std::chrono::system_clock::now()), mono_(std::chrono::steady_clock::now()) {
    std::error_code ec;
    std::filesystem::create_directories(out_, ec);
    if (ec) throw IoError("cannot create output directory " + out_.string() + ": " + ec.message());
  }

  const std::filesystem::path& dir() const { return out_; }
  json& config() { return config_; }
  void input(const std::string& key, const json& value) { inputs_[key] = value; }
  void seed(std::uint64_t s) { seed_ = s; }

  /// Registers an artifact (relative to the output directory) and returns its full path.
  std::filesystem::path artifact(const std::string& rel) {
    artifacts_.push_back(rel);
    return out_ / rel;
  }

  void finish() const {
    const auto end = std::chrono::system_clock::now();
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - mono_).count();
    json j{{"format", "intriuap.run.v1"},
           {"tool", "intriuap"},
           {"tool_version", kToolVersion},
           {"defaults_version", kDefaultsVersion},
           {"subcommand", subcommand_},
           {"config", config_},
           {"inputs", inputs_},
           {"output_dir", out_.string()},
           {"artifacts", artifacts_},
           {"started_at", utc_timestamp(wall_)},
           {"finished_at", utc_timestamp(end)},
           {"wall_clock_seconds", secs}};
    if (seed_) j["seed"] = *seed_;
    eval::detail::write_text(out_ / kRunManifestFile, j.dump(2) + "\n");
  }

 private:
  std::string subcommand_;
  std::filesystem::path out_;
  std::chrono::system_clock::time_point wall_;
  std::chrono::steady_clock::time_point mono_;
  json config_ = json::object();
  json inputs_ = json::object();
  std::vector<std::string> artifacts_;
  std::optional<std::uint64_t> seed_;
};

inline json with_manifest_ref(json j) {
  j["run_manifest"] = kRunManifestFile;
  return j;
}

/// Short identifier for a model or perturbation path: the directory name when the
/// path is a directory or a default-named file inside one, else the file stem.
inline std::string path_id(const std::filesystem::path& p) {
  auto q = p.lexically_normal();
  if (q.filename().empty()) q = q.parent_path();
  if (q.filename() == "model.json" || q.filename() == "xi.ntsr") q = q.parent_path();
  else if (!std::filesystem::is_directory(q)) return q.stem().string();
  const auto name = q.filename().string();
  return name.empty() || name == "." ? std::filesystem::absolute(q).lexically_normal().filename().string() : name;
}

/// Makes ids unique by appending #2, #3, ... to repeats.
inline std::vector<std::string> unique_ids(const std::vector<std::string>& ids) {
  std::vector<std::string> out = ids;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    const auto rep = std::count(ids.begin(), ids.begin() + static_cast<std::ptrdiff_t>(i), ids[i]);
    if (rep) out[i] += "#" + std::to_string(rep + 1);
  }
  return out;
}

template <Real T>
train::Dataset<T> load_eval_set(const std::string& data, const std::string& split, std::size_t limit) {
  auto ds = train::load_dataset<T>(data, split);
  if (limit && limit < ds.size()) ds = ds.slice(0, limit);
  return ds;
}

/// Rewrites simple fractions such as 10/255 to decimals; plain numbers pass through.
inline std::string fraction_to_decimal(std::string& s) {
  const auto slash = s.find('/');
  if (slash == std::string::npos) return {};
  double num = 0.0, den = 0.0;
  if (!CLI::detail::lexical_cast(s.substr(0, slash), num) || !CLI::detail::lexical_cast(s.substr(slash + 1), den) || den == 0.0)
    return "'" + s + "' is not a number or fraction";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", num / den);
  s = buf;
  return {};
}

inline const CLI::Validator& defense_validator() {
  static const CLI::Validator v(
      [](std::string& s) -> std::string {
        try {
          eval::parse_defense(s);
        } catch (const Error& e) {
          return e.what();
        }
        return {};
      },
      "DEFENSE");
  return v;
}

inline const CLI::Validator& xi_init_validator() {
  static const CLI::Validator v(
      [](std::string& s) -> std::string {
        try {
          attack::parse_xi_init(s);
        } catch (const Error& e) {
          return e.what();
        }
        return {};
      },
      "XI_INIT");
  return v;
}

inline void add_threads(CLI::App* sub, std::size_t& threads) {
  sub->add_option("--threads", threads, "Worker thread cap; 1 gives bit-reproducible output")->check(CLI::PositiveNumber);
}

inline void add_out(CLI::App* sub, std::string& out, const std::string& name) {
  sub->add_option("--out", out, "Output directory (default $" + std::string(kOutDirEnv) + "/" + name + ", or out/" + name + ")");
}

// ---------------------------------------------------------------- train

struct TrainArgs {
  std::string arch = defaults().arch;
  std::string data;
  std::string out;
  std::size_t epochs = defaults().train.epochs;
  double lr = defaults().train.learning_rate;
  std::size_t batch_size = defaults().train.batch_size;
  std::string optimizer = train::optimizer_name(defaults().train.optimizer);
  std::uint64_t seed = defaults().seed;
  std::size_t threads = defaults().threads;
};

inline int cmd_train(const TrainArgs& a, std::ostream& out) {
  RunRecorder rec("train", a.out.empty() ? default_out_dir("train") : a.out);
  train::TrainConfig cfg = defaults().train;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.batch_size = a.batch_size;
  cfg.optimizer = train::parse_optimizer(a.optimizer);
  cfg.seed = a.seed;
  cfg.eval_threads = a.threads;
  rec.config() = {{"arch", a.arch},
                  {"epochs", cfg.epochs},
                  {"learning_rate", cfg.learning_rate},
                  {"batch_size", cfg.batch_size},
                  {"optimizer", a.optimizer},
                  {"lr_step", cfg.lr_step},
                  {"lr_decay", cfg.lr_decay},
                  {"bn_momentum", cfg.bn_momentum},
                  {"seed", cfg.seed},
                  {"threads", a.threads}};
  rec.input("data", a.data);
  rec.seed(a.seed);

  const auto tr = train::load_dataset<float>(a.data, "train");
  const auto te = train::load_dataset<float>(a.data, "test");
  const Shape s = tr.sample_shape();
  if (s.size() != 3 || s[1] != s[2]) throw DimensionError("training images must be square [C,H,W], got " + shape_str(s));
  const std::size_t classes = static_cast<std::size_t>(std::max(tr.max_label(), te.max_label())) + 1;
  auto g = model::make_architecture<float>(a.arch, a.seed, s[0], s[1], classes);
  auto result = train::train(std::move(g), tr, &te, cfg, [&](const train::EpochStats& e) {
    out << "epoch " << e.epoch << ": loss " << eval::detail::fixed(e.train_loss) << ", train accuracy " << eval::detail::fixed(e.train_accuracy)
        << ", test accuracy " << eval::detail::fixed(*e.test_accuracy) << "\n";
  });
  result.model.metadata()["test_accuracy"] = eval::detail::fixed(*result.test_accuracy);
  result.model.metadata()["train_seed"] = std::to_string(a.seed);
  model::save_model(result.model, rec.artifact("model"));

  json hist = json::array();
  for (const auto& e : result.history)
    hist.push_back({{"epoch", e.epoch}, {"train_loss", e.train_loss}, {"train_accuracy", e.train_accuracy}, {"test_accuracy", *e.test_accuracy}});
  const json report{{"format", "intriuap.train.v1"},
                    {"arch", a.arch},
                    {"model_dir", "model"},
                    {"train_images", tr.size()},
                    {"test_images", te.size()},
                    {"history", hist},
                    {"test_accuracy", *result.test_accuracy}};
  eval::detail::write_text(rec.artifact("train_report.json"), with_manifest_ref(report).dump(2) + "\n");
  rec.finish();
  out << "test accuracy " << eval::detail::fixed(*result.test_accuracy) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- spectrum

struct SpectrumArgs {
  std::string model;
  std::string out;
  double tol = defaults().power.tol;
  std::size_t max_iters = defaults().power.max_iters;
  std::uint64_t seed = defaults().seed;
  bool oracle = false;
  std::size_t probes = defaults().probes;
  std::size_t direction_trials = 1000;
  std::vector<std::string> dump_dense;
  std::size_t threads = defaults().threads;
};

inline int cmd_spectrum(const SpectrumArgs& a, std::ostream& out) {
  RunRecorder rec("spectrum", a.out.empty() ? default_out_dir("spectrum") : a.out);
  rec.config() = {{"tol", a.tol},       {"max_iters", a.max_iters},           {"seed", a.seed},         {"oracle", a.oracle},
                  {"probes", a.probes}, {"direction_trials", a.direction_trials}, {"dump_dense", a.dump_dense}, {"threads", a.threads}};
  rec.input("model", a.model);
  rec.seed(a.seed);

  const auto g = model::load_model<double>(a.model);
  const auto l1los = model::validate_l1los(g);
  const auto pairs = spectral::layer_spectra(g, spectral::PowerIterationOptions{a.tol, a.max_iters, a.seed}, 0, a.threads);
  const auto views = linops::linear_views(g);

  std::ostringstream csv;
  csv << "layer_id,sigma_max,iterations,residual\n";
  for (const auto& p : pairs) csv << p.layer_id << ',' << eval::detail::fixed(p.sigma_max, 9) << ',' << p.iterations << ',' << p.residual << '\n';
  eval::detail::write_text(rec.artifact("spectrum.csv"), csv.str());

  if (a.oracle) {
    std::ostringstream oc;
    oc << "layer_id,sigma_power,sigma_dense,rel_error,av_error,status\n";
    for (std::size_t k = 0; k < pairs.size(); ++k) {
      const auto& p = pairs[k];
      const double av = std::abs(tensor::norm2(views[k].apply(p.v_max)) - p.sigma_max);
      try {
        const auto d = spectral::dense_svd_max(g, p.layer_id);
        const double rel = d.sigma_max > 0 ? std::abs(p.sigma_max - d.sigma_max) / d.sigma_max : std::abs(p.sigma_max);
        oc << p.layer_id << ',' << eval::detail::fixed(p.sigma_max, 9) << ',' << eval::detail::fixed(d.sigma_max, 9) << ',' << rel << ',' << av
           << ",ok\n";
      } catch (const InvalidParameter&) {
        oc << p.layer_id << ',' << eval::detail::fixed(p.sigma_max, 9) << ",,," << av << ",over-cap\n";
      }
    }
    eval::detail::write_text(rec.artifact("oracle.csv"), oc.str());
  }

  for (const auto& id : a.dump_dense) {
    const auto d = linops::materialize_layer(g, id);
    const Tensor<double> m({d.rows(), d.cols()}, d.dense());
    ntsr::save(rec.artifact("dense_" + id + ".ntsr"), m);
  }

  spectral::ProbeOptions po;
  po.count = a.probes;
  po.seed = a.seed;
  const auto cert = spectral::lipschitz_product_bound(g, pairs, po);
  json layers = json::array();
  bool directions_ok = true;
  for (std::size_t k = 0; k < pairs.size(); ++k) {
    json l{{"id", pairs[k].layer_id}, {"sigma_max", pairs[k].sigma_max}, {"iterations", pairs[k].iterations}, {"converged", pairs[k].converged}};
    if (a.direction_trials) {
      const auto dc = spectral::verify_max_direction(pairs[k], views[k], a.direction_trials, a.seed + k);
      l["direction_check"] = {{"pass", dc.pass}, {"trials", dc.trials}, {"worst_ratio", dc.worst_ratio}};
      directions_ok = directions_ok && dc.pass;
    }
    layers.push_back(l);
  }
  json nodes = json::array();
  for (const auto& n : l1los.nodes)
    if (!n.pass) nodes.push_back({{"id", n.id}, {"kind", n.kind}, {"reason", n.reason}});
  const json report{{"format", "intriuap.certificate.v1"},
                    {"model", g.name()},
                    {"l1los", {{"pass", l1los.pass}, {"violations", nodes}}},
                    {"layers", layers},
                    {"sigma_product", cert.sigma_product},
                    {"bound", cert.bound},
                    {"probe_max", cert.max_observed_ratio},
                    {"probes", cert.probes},
                    {"violations", cert.violations},
                    {"holds", cert.violations == 0},
                    {"direction_checks_pass", directions_ok}};
  eval::detail::write_text(rec.artifact("certificate.json"), with_manifest_ref(report).dump(2) + "\n");
  rec.finish();
  out << csv.str() << "bound " << cert.bound << " (product " << cert.sigma_product << "), probe max " << cert.max_observed_ratio << ", violations "
      << cert.violations << "\n";
  if (cert.violations)
    throw NumericError("Lipschitz bound violated by " + std::to_string(cert.violations) + " of " + std::to_string(cert.probes) + " probes");
  return kExitOk;
}

// ---------------------------------------------------------------- attack

struct AttackArgs {
  std::string model;
  std::string out;
  double eps = defaults().attack.epsilon;
  std::size_t epochs = defaults().attack.epochs;
  double lr = defaults().attack.learning_rate;
  std::size_t lr_step = defaults().attack.lr_step;
  double lr_decay = defaults().attack.lr_decay;
  std::string init = attack::init_kind_name(defaults().attack.init_data.kind);
  std::size_t init_count = defaults().attack.init_data.count;
  std::string xi_init = attack::xi_init_name(defaults().attack.xi_init);
  double layer_fraction = defaults().attack.layer_fraction;
  bool resample = defaults().attack.resample_prior_each_epoch;
  std::uint64_t seed = defaults().seed;
  double tol = defaults().power.tol;
  std::size_t max_iters = defaults().power.max_iters;
  std::size_t threads = defaults().threads;
};

inline int cmd_attack(const AttackArgs& a, std::ostream& out) {
  RunRecorder rec("attack", a.out.empty() ? default_out_dir("attack") : a.out);
  attack::AttackConfig cfg = defaults().attack;
  cfg.epsilon = a.eps;
  cfg.epochs = a.epochs;
  cfg.learning_rate = a.lr;
  cfg.lr_step = a.lr_step;
  cfg.lr_decay = a.lr_decay;
  cfg.init_data.kind = attack::parse_init_kind(a.init);
  cfg.init_data.count = a.init_count;
  cfg.xi_init = attack::parse_xi_init(a.xi_init);
  cfg.layer_fraction = a.layer_fraction;
  cfg.resample_prior_each_epoch = a.resample;
  cfg.seed = a.seed;
  cfg.validate();
  rec.config() = attack::to_json(cfg);
  rec.config()["spectral"] = {{"tol", a.tol}, {"max_iters", a.max_iters}};
  rec.config()["threads"] = a.threads;
  rec.input("model", a.model);
  rec.seed(a.seed);

  const auto g = model::load_model<double>(a.model);
  attack::AttackRunOptions<double> opt;
  opt.spectral = {a.tol, a.max_iters, a.seed};
  opt.threads = a.threads;
  const auto art = attack::run_attack(g, cfg, opt);
  for (const char* f : {"xi.ntsr", "attack.json", "xi.ppm"}) rec.artifact(f);
  attack::write_artifact(rec.dir(), art, {{"run_manifest", kRunManifestFile}});
  rec.finish();
  out << "attacked " << art.layer_ids.size() << " linear layers over " << cfg.epochs << " epochs; final objective "
      << art.final_objective << ", max |xi| " << (art.xi_max_abs.empty() ? 0.0 : art.xi_max_abs.back()) << "\n";
  return kExitOk;
}

// ---------------------------------------------------------------- eval

struct EvalArgs {
  std::string model;
  std::string uap;
  std::string data;
  std::string split = defaults().split;
  std::vector<std::string> defenses{defaults().defense};
  std::size_t limit = defaults().eval_limit;
  std::size_t examples = defaults().examples;
  std::string out;
  std::size_t threads = defaults().threads;
};

inline int cmd_eval(const EvalArgs& a, std::ostream& out) {
  RunRecorder rec("eval", a.out.empty() ? default_out_dir("eval") : a.out);
  rec.config() = {{"split", a.split}, {"defenses", a.defenses}, {"limit", a.limit}, {"examples", a.examples}, {"threads", a.threads}};
  rec.input("model", a.model);
  rec.input("uap", a.uap);
  rec.input("data", a.data);

  const auto g = model::load_model<double>(a.model);
  const auto xi = attack::load_xi<double>(a.uap);
  const auto ds = load_eval_set<double>(a.data, a.split, a.limit);
  std::vector<eval::Defense> filters;
  for (const auto& d : a.defenses) filters.push_back(eval::parse_defense(d));
  eval::EvalOptions opt;
  opt.threads = a.threads;

  std::vector<eval::EvalReport> rows;
  const std::string mid = path_id(a.model), uid = path_id(a.uap);
  if (filters.size() == 1) {
    opt.defense = filters[0];
    rows.push_back(eval::fooling_ratio(g, xi, ds, opt, uid));
  } else {
    rows = eval::robustness_table(g, xi, ds, filters, opt, uid);
  }
  for (auto& r : rows) r.model_id = mid;

  const auto csv = eval::reports_csv(rows);
  eval::detail::write_text(rec.artifact("eval.csv"), csv);
  eval::detail::write_text(rec.artifact("eval.json"), with_manifest_ref(eval::reports_json(rows)).dump(2) + "\n");
  if (a.examples) {
    eval::dump_examples(rec.dir() / "examples", ds, eval::as_input_geometry(xi, g.input_shape()), a.examples);
    rec.artifact("examples");
  }
  rec.finish();
  out << csv;
  return kExitOk;
}

// ---------------------------------------------------------------- transfer

struct TransferArgs {
  std::vector<std::string> models;
  std::vector<std::string> uaps;
  std::string data;
  std::string split = defaults().split;
  std::string defense = defaults().defense;
  std::size_t limit = defaults().eval_limit;
  std::string out;
  std::size_t threads = defaults().threads;
};

inline int cmd_transfer(const TransferArgs& a, std::ostream& out) {
  RunRecorder rec("transfer", a.out.empty() ? default_out_dir("transfer") : a.out);
  rec.config() = {{"split", a.split}, {"defense", a.defense}, {"limit", a.limit}, {"threads", a.threads}};
  rec.input("models", a.models);
  rec.input("uaps", a.uaps);
  rec.input("data", a.data);

  std::vector<model::ModelGraph<double>> graphs;
  for (const auto& m : a.models) graphs.push_back(model::load_model<double>(m));
  std::vector<std::string> mids, uids;
  for (const auto& m : a.models) mids.push_back(path_id(m));
  for (const auto& u : a.uaps) uids.push_back(path_id(u));
  mids = unique_ids(mids);
  uids = unique_ids(uids);
  std::vector<eval::NamedModel<double>> models;
  for (std::size_t i = 0; i < graphs.size(); ++i) models.push_back({mids[i], &graphs[i]});
  std::vector<eval::NamedUap<double>> uaps;
  for (std::size_t i = 0; i < a.uaps.size(); ++i) uaps.push_back({uids[i], attack::load_xi<double>(a.uaps[i])});
  const auto ds = load_eval_set<double>(a.data, a.split, a.limit);
  eval::EvalOptions opt;
  opt.defense = eval::parse_defense(a.defense);
  opt.threads = a.threads;

  const auto m = eval::transfer_matrix(models, uaps, ds, opt);
  const auto csv = eval::transfer_csv(m);
  eval::detail::write_text(rec.artifact("transfer.csv"), csv);
  auto j = eval::transfer_json(m);
  j["defense"] = opt.defense.name();
  j["n_images"] = ds.size();
  eval::detail::write_text(rec.artifact("transfer.json"), with_manifest_ref(j).dump(2) + "\n");
  rec.finish();
  out << csv;
  for (const auto& n : m.notes) out << "note: " << n << "\n";
  return kExitOk;
}

}  // namespace detail

/// Parses argv and runs one subcommand. Failures print a single line
/// "error: <class>: <message>" to err and return that class's exit code.
inline int run_cli(int argc, const char* const* argv, std::ostream& out = std::cout, std::ostream& err = std::cerr) {
  using namespace detail;
  CLI::App app{"Data-free universal adversarial perturbations from layer singular vectors"};
  app.name("intriuap");
  app.require_subcommand(1);
  app.set_version_flag("--version", kToolVersion);
  app.option_defaults()->always_capture_default();
  app.footer("Exit codes: 0 ok, 2 bad-args, 3 io, 4 validation, 5 numeric-failure.\n"
             "Run 'intriuap defaults' for the full defaults table (" + std::string(kDefaultsVersion) + ").");

  TrainArgs ta;
  auto* train_cmd = app.add_subcommand("train", "Train a victim classifier and save it as a model directory");
  train_cmd->add_option("--arch", ta.arch, "Architecture")->check(CLI::IsMember({"smallcnn", "smallres"}));
  train_cmd->add_option("--data", ta.data, "Dataset directory (IDX files or images.ntsr per split)")->required();
  add_out(train_cmd, ta.out, "train");
  train_cmd->add_option("--epochs", ta.epochs, "Training epochs")->check(CLI::PositiveNumber);
  train_cmd->add_option("--lr", ta.lr, "Initial learning rate (halved every 2 epochs)")->check(CLI::PositiveNumber);
  train_cmd->add_option("--batch-size", ta.batch_size, "Mini-batch size")->check(CLI::PositiveNumber);
  train_cmd->add_option("--optimizer", ta.optimizer, "Optimizer")->check(CLI::IsMember({"adam", "sgd"}));
  train_cmd->add_option("--seed", ta.seed, "Seed for initialization and shuffling");
  add_threads(train_cmd, ta.threads);

  SpectrumArgs sa;
  auto* spec_cmd = app.add_subcommand("spectrum", "Per-layer top singular values, dense cross-check and Lipschitz certificate");
  spec_cmd->add_option("--model", sa.model, "Model directory or manifest")->required();
  add_out(spec_cmd, sa.out, "spectrum");
  spec_cmd->add_option("--tol", sa.tol, "Power iteration relative tolerance")->check(CLI::PositiveNumber);
  spec_cmd->add_option("--max-iters", sa.max_iters, "Power iteration cap")->check(CLI::PositiveNumber);
  spec_cmd->add_option("--seed", sa.seed, "Seed for start vectors and probes");
  spec_cmd->add_flag("--oracle", sa.oracle, "Cross-check every layer against a dense SVD (skips layers over the memory cap)");
  spec_cmd->add_option("--probes", sa.probes, "Random probe pairs for the Lipschitz certificate");
  spec_cmd->add_option("--direction-trials", sa.direction_trials, "Random unit directions per layer for the maximal-direction check (0 skips)");
  spec_cmd->add_option("--dump-dense", sa.dump_dense, "Write this layer's dense matrix as dense_<id>.ntsr (repeatable)");
  add_threads(spec_cmd, sa.threads);

  AttackArgs aa;
  auto* atk_cmd = app.add_subcommand("attack", "Synthesize a universal perturbation without data");
  atk_cmd->add_option("--model", aa.model, "Model directory or manifest")->required();
  add_out(atk_cmd, aa.out, "attack");
  atk_cmd->add_option("--eps", aa.eps, "L-inf budget on the [0,1] scale (10/255 by default; fractions accepted)")->transform(
      CLI::Validator(fraction_to_decimal, "NUMBER|A/B"));
  atk_cmd->add_option("--epochs", aa.epochs, "Optimization epochs");
  atk_cmd->add_option("--lr", aa.lr, "Adam learning rate");
  atk_cmd->add_option("--lr-step", aa.lr_step, "Epochs between rate decays (0: max(1, epochs/5))");
  atk_cmd->add_option("--lr-decay", aa.lr_decay, "Rate multiplier per decay step");
  atk_cmd->add_option("--init", aa.init, "Pseudo-input prior")->check(CLI::IsMember({"range", "gaussian", "uniform"}));
  atk_cmd->add_option("--init-count", aa.init_count, "Pseudo-inputs per batch")->check(CLI::PositiveNumber);
  atk_cmd->add_option("--xi-init", aa.xi_init, "Perturbation start: zeros or uniform:<amplitude>")->check(xi_init_validator());
  atk_cmd->add_option("--layer-fraction", aa.layer_fraction, "Leading share of linear layers used (semi-white-box below 1)");
  atk_cmd->add_flag("--resample", aa.resample, "Draw a fresh pseudo-input every epoch");
  atk_cmd->add_option("--seed", aa.seed, "Seed for priors, start vector and singular vectors");
  atk_cmd->add_option("--tol", aa.tol, "Power iteration relative tolerance")->check(CLI::PositiveNumber);
  atk_cmd->add_option("--max-iters", aa.max_iters, "Power iteration cap")->check(CLI::PositiveNumber);
  add_threads(atk_cmd, aa.threads);

  EvalArgs ea;
  auto* eval_cmd = app.add_subcommand("eval", "Fooling ratio of a perturbation, optionally under smoothing defenses");
  eval_cmd->add_option("--model", ea.model, "Model directory or manifest")->required();
  eval_cmd->add_option("--uap", ea.uap, "Attack directory or .ntsr perturbation")->required();
  eval_cmd->add_option("--data", ea.data, "Dataset directory")->required();
  eval_cmd->add_option("--split", ea.split, "Dataset split")->check(CLI::IsMember({"train", "test"}));
  eval_cmd->add_option("--defense", ea.defenses, "none, gaussian:SIGMA[:RADIUS] or median:K; repeat for a robustness table")
      ->check(defense_validator());
  eval_cmd->add_option("--limit", ea.limit, "Evaluate only the first N images (0: all)");
  eval_cmd->add_option("--examples", ea.examples, "Write N side-by-side clean/perturbed PPM images");
  add_out(eval_cmd, ea.out, "eval");
  add_threads(eval_cmd, ea.threads);

  TransferArgs xa;
  auto* xfer_cmd = app.add_subcommand("transfer", "Fooling ratio of every perturbation against every model");
  xfer_cmd->add_option("--models", xa.models, "Model directories or manifests (columns; space or comma separated)")->required()->delimiter(',');
  xfer_cmd->add_option("--uaps", xa.uaps, "Attack directories or .ntsr perturbations (rows; space or comma separated)")->required()->delimiter(',');
  xfer_cmd->add_option("--data", xa.data, "Dataset directory")->required();
  xfer_cmd->add_option("--split", xa.split, "Dataset split")->check(CLI::IsMember({"train", "test"}));
  xfer_cmd->add_option("--defense", xa.defense, "Defense applied to every cell")->check(defense_validator());
  xfer_cmd->add_option("--limit", xa.limit, "Evaluate only the first N images (0: all)");
  add_out(xfer_cmd, xa.out, "transfer");
  add_threads(xfer_cmd, xa.threads);

  auto* defaults_cmd = app.add_subcommand("defaults", "Print the defaults table as JSON");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    err << "error: " << error_class_name(ErrorClass::BadArgs) << ": " << e.what() << "\n";
    return kExitBadArgs;
  }

  try {
    if (*train_cmd) return cmd_train(ta, out);
    if (*spec_cmd) return cmd_spectrum(sa, out);
    if (*atk_cmd) return cmd_attack(aa, out);
    if (*eval_cmd) return cmd_eval(ea, out);
    if (*xfer_cmd) return cmd_transfer(xa, out);
    if (*defaults_cmd) {
      out << defaults().to_json().dump(2) << "\n";
      return kExitOk;
    }
  } catch (const Error& e) {
    err << "error: " << error_class_name(e.error_class()) << ": " << e.what() << "\n";
    return exit_code(e.error_class());
  } catch (const nlohmann::json::exception& e) {
    err << "error: " << error_class_name(ErrorClass::Validation) << ": malformed json: " << e.what() << "\n";
    return kExitValidation;
  } catch (const std::filesystem::filesystem_error& e) {
    err << "error: " << error_class_name(ErrorClass::Io) << ": " << e.what() << "\n";
    return kExitIo;
  }
  return kExitBadArgs;
}

}  // namespace intriuap::cli
