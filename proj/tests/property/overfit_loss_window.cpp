// Overfit run: train loss is non-increasing over every 20-epoch window after
// epoch 10, read as loss[e + 20] <= loss[e] for all e >= 10.
//
//   overfit_loss_window --config <overfit.toml> --work <dir>

#include <CLI11.hpp>
#include <cstdio>
#include <filesystem>

#include "defectvit/commands.hpp"

using namespace defectvit;
namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"overfit loss window property"};
  std::string config, work;
  app.add_option("--config", config)->required();
  app.add_option("--work", work)->required();
  CLI11_PARSE(app, argc, argv);

  RunConfig cfg = load_config(config);
  cfg.data.root = (fs::path(work) / "data").string();
  cfg.output_dir = (fs::path(work) / "run").string();
  fs::remove_all(work);
  run_generate(cfg, false, 1);
  const auto h = run_train(cfg, std::nullopt, 1).state.history;

  std::size_t checked = 0, violations = 0, first = 0;
  double worst = 0;
  for (std::size_t e = 10; e + 20 <= h.size(); ++e) {
    const double rise = h[e + 19].train_loss - h[e - 1].train_loss;
    ++checked;
    if (rise > 0) {
      if (violations++ == 0) first = e;
      worst = std::max(worst, rise);
    }
  }
  std::printf("%s overfit loss window: %zu of %zu windows rose (first at epoch %zu, max rise %.3g, final loss %.3g)\n",
              violations == 0 ? "PASS" : "FAIL", violations, checked, first, worst, h.back().train_loss);
  return violations == 0 ? 0 : 1;
}
