// Loads the reference smallcnn, crafts a UAP from its linear-layer spectra alone,
// then measures it on the held-out digits with and without a median filter.
//
//   ./build/sample_attack [repo root]
#include <filesystem>
#include <iostream>

#include "intriuap/attack/artifact.hpp"
#include "intriuap/eval/metrics.hpp"
#include "intriuap/model/manifest.hpp"
#include "intriuap/train/trainer.hpp"

using namespace intriuap;

int main(int argc, char** argv) {
  const std::filesystem::path root = argc > 1 ? argv[1] : ".";
  try {
    const auto g = model::load_model<double>(root / "fixtures" / "smallcnn");
    const auto test = train::load_dataset<double>(root / "data" / "mnist-10k", "test");
    std::cout << "clean accuracy " << train::evaluate_accuracy(g, test) << "\n";

    attack::AttackConfig cfg;
    cfg.epsilon = 0.1;
    cfg.epochs = 50;
    attack::AttackRunOptions<double> opt;
    opt.on_epoch = [](const attack::EpochRecord& e) {
      if (e.epoch % 10 == 0) std::cout << "epoch " << e.epoch << " objective " << e.objective << " max|xi| " << e.xi_max_abs << "\n";
    };
    const auto art = attack::run_attack(g, cfg, opt);
    attack::write_artifact("out/sample_attack", art);

    for (const auto& row : eval::robustness_table(g, art.xi, test, {eval::Defense::median(3)}))
      std::cout << row.defense << ": fooling " << row.fooling_ratio << ", accuracy " << row.clean_accuracy << " -> " << row.perturbed_accuracy
                << "\n";
  } catch (const Error& e) {
    std::cerr << "error: " << error_class_name(e.error_class()) << ": " << e.what() << "\n";
    return 1;
  }
  return 0;
}
