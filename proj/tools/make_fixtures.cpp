// Trains the two reference victims and writes them, with golden blobs and
// regression numbers, under fixtures/.
#include <iostream>
#include <random>

#include "CLI11.hpp"

#include "intriuap/attack/run.hpp"
#include "intriuap/eval/report.hpp"
#include "intriuap/model/architectures.hpp"
#include "intriuap/model/manifest.hpp"
#include "intriuap/train/trainer.hpp"

using namespace intriuap;
using nlohmann::json;

int main(int argc, char** argv) {
  CLI::App app{"Build reference fixture models"};
  std::string data = "data/mnist-10k", out = "fixtures";
  train::TrainConfig cfg;
  std::size_t threads = 1;
  app.option_defaults()->always_capture_default();
  app.add_option("--data", data, "Dataset directory");
  app.add_option("--out", out, "Fixture directory");
  app.add_option("--epochs", cfg.epochs, "Training epochs");
  app.add_option("--seed", cfg.seed, "Training seed");
  app.add_option("--threads", threads, "Evaluation threads");
  CLI11_PARSE(app, argc, argv);
  cfg.eval_threads = threads;

  try {
    const auto tr = train::load_dataset<float>(data, "train");
    const auto te = train::load_dataset<float>(data, "test");
    const auto te64 = te.cast<double>();
    json regression{{"format", "intriuap.regression.v1"}, {"data", data}, {"test_images", te.size()}};

    for (const std::string arch : {"smallcnn", "smallres"}) {
      auto r = train::train(model::make_architecture<float>(arch, cfg.seed), tr, &te, cfg, [&](const train::EpochStats& e) {
        std::cout << arch << " epoch " << e.epoch << ": loss " << e.train_loss << ", test accuracy " << *e.test_accuracy << std::endl;
      });
      r.model.metadata()["test_accuracy"] = eval::detail::fixed(*r.test_accuracy);
      r.model.metadata()["train_epochs"] = std::to_string(cfg.epochs);
      r.model.metadata()["train_seed"] = std::to_string(cfg.seed);
      const auto dir = std::filesystem::path(out) / arch;
      model::save_model(r.model, dir);

      // Golden blobs come from the f64 path on the saved weights.
      const auto g = model::load_model<double>(dir);
      std::mt19937_64 rng(1234);
      const auto x = tensor::random_uniform<double>({2, 1, 28, 28}, rng);
      ntsr::save(dir / "golden_input.ntsr", x);
      ntsr::save(dir / "golden_logits.ntsr", model::logits(g, x));

      attack::AttackConfig ac;
      const auto art = attack::run_attack(g, ac);
      ac.epsilon = 0.1;
      const auto art01 = attack::run_attack(g, ac);
      eval::EvalOptions eo;
      eo.threads = threads;
      regression[arch] = {
          {"test_accuracy", *r.test_accuracy},
          {"test_accuracy_f64", train::evaluate_accuracy(g, te64, threads)},
          {"linear_layers", g.linear_layer_order()},
          {"attack_default",
           {{"objective_epoch1", art.loss_trajectory.front()},
            {"objective_epoch2", art.loss_trajectory.at(1)},
            {"final_objective", art.final_objective},
            {"fooling_ratio", eval::fooling_ratio(g, art.xi, te64, eo).fooling_ratio}}},
          {"attack_eps_0.1",
           {{"final_objective", art01.final_objective}, {"fooling_ratio", eval::fooling_ratio(g, art01.xi, te64, eo).fooling_ratio}}}};
      std::cout << arch << ": test accuracy " << *r.test_accuracy << std::endl;
    }
    eval::detail::write_text(std::filesystem::path(out) / "regression.json", regression.dump(2) + "\n");
  } catch (const Error& e) {
    std::cerr << "error: " << error_class_name(e.error_class()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
