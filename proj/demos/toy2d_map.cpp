// Trains the 2-D mixture model from a config and prints, per stage, the energy distance of the new
// pseudo-negatives to the data, then a character map of the final classifier over [-1,1]^2 with
// the last stage's samples overlaid.
//
//   toy2d_map demos/configs/toy2d.ini [section.key=value ...]

#include <algorithm>
#include <iostream>

#include "winn/run.hpp"

using namespace winn;

int main(int argc, char** argv) {
  if (argc < 2) {
    std::cerr << "usage: toy2d_map <config.ini> [section.key=value ...]\n";
    return 1;
  }
  try {
    RunConfig cfg = load_config(argv[1], std::vector<std::string>(argv + 2, argv + argc));
    cfg.sync();
    if (cfg.train.energy_reference == 0) cfg.train.energy_reference = 500;
    const ArchitectureSpec spec = cfg.spec();
    const Dataset ds = make_dataset(cfg.data, cfg.seed);
    if (ds.sample_shape != Shape{2}) throw ConfigError("toy2d_map needs 2-D point data");

    TrainHooks hooks;
    hooks.on_stage = [](const StageRecord& r, const TrainState&) {
      std::cout << "stage " << r.stage << "  energy " << r.energy << "  threshold " << r.threshold << "\n";
    };
    const TrainResult res = run_training(spec, cfg.train, ds.sampler(), std::nullopt, hooks);

    constexpr int n = 41;
    Tensor grid({n * n, 2});
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        grid[2 * (i * n + j)] = -1.0 + 2.0 * j / (n - 1);
        grid[2 * (i * n + j) + 1] = 1.0 - 2.0 * i / (n - 1);
      }
    const Tensor f = eval_f(res.state.params, spec, grid, Mode::Eval, 0);
    const auto [lo, hi] = std::minmax_element(f.values().begin(), f.values().end());
    std::vector<std::string> rows(n, std::string(n, ' '));
    const char* ramp = " .:-=+*#%@";
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j) {
        const double t = (f[i * n + j] - *lo) / std::max(*hi - *lo, 1e-12);
        rows[i][j] = ramp[std::min(9, static_cast<int>(t * 10.0))];
      }
    const Tensor last = res.state.pool.stage_samples(cfg.train.stages);
    for (std::size_t k = 0; k < last.dim(0); ++k) {
      const int j = static_cast<int>(std::lround((last[2 * k] + 1.0) / 2.0 * (n - 1)));
      const int i = static_cast<int>(std::lround((1.0 - last[2 * k + 1]) / 2.0 * (n - 1)));
      if (i >= 0 && i < n && j >= 0 && j < n) rows[i][j] = 'o';
    }
    std::cout << "\nf over [-1,1]^2 (dark = low, @ = high), o = final-stage samples\n";
    for (const auto& r : rows) std::cout << r << "\n";
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
