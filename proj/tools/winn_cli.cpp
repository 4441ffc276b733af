// winn: command-line front end for training, synthesis, attacks and the divergence checks.

#include <CLI11.hpp>
#include <Eigen/Core>
#include <cstdlib>
#include <iostream>

#include "winn/run.hpp"

namespace {

using namespace winn;

enum Exit { Ok = 0, Usage = 1, Runtime = 2 };

struct Common {
  std::string config;
  std::vector<std::string> sets;
  bool quiet = false;
};

void add_common(CLI::App* cmd, Common& c, bool config_required) {
  auto* opt = cmd->add_option("-c,--config", c.config, "run config (INI)");
  if (config_required) opt->required();
  cmd->add_option("-s,--set", c.sets, "override, section.key=value (repeatable)");
  cmd->add_flag("-q,--quiet", c.quiet, "no progress output");
}

RunConfig load(const Common& c) {
  RunConfig cfg = c.config.empty() ? RunConfig{} : load_config(c.config, c.sets);
  if (c.config.empty()) {
    for (const auto& o : c.sets) apply_override(cfg, o);
    cfg.validate();
  }
  return cfg;
}

std::ostream* progress(const Common& c) { return c.quiet ? nullptr : &std::cerr; }

void apply_threads() {
  if (const char* t = std::getenv("WINN_THREADS"); t && *t) {
    char* end = nullptr;
    const long n = std::strtol(t, &end, 10);
    if (*end != '\0' || n < 1) throw ConfigError("WINN_THREADS must be a positive integer, got '" + std::string(t) + "'");
    Eigen::setNbThreads(static_cast<int>(n));
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"winn: introspective classifier training and synthesis"};
  app.require_subcommand(1);

  Common train_c, cascade_c, texture_c, classify_c, attack_c, inspect_c;
  std::string resume, cascade_resume, texture_ckpt, synth_ckpt, synth_out, inspect_ckpt;
  std::size_t synth_count = 16;
  SweepSettings sweep;
  sweep.max_support = 16;

  auto* train = app.add_subcommand("train", "train a single classifier by reclassification-by-synthesis");
  add_common(train, train_c, true);
  train->add_option("--resume", resume, "continue from a checkpoint of the same config");

  auto* cascade = app.add_subcommand("cascade", "train a cascade of classifiers");
  add_common(cascade, cascade_c, true);
  cascade->add_option("--resume", cascade_resume, "continue from a checkpoint of the same config");

  auto* synth = app.add_subcommand("synthesize", "draw samples from a trained checkpoint");
  synth->add_option("--checkpoint", synth_ckpt, "checkpoint file")->required();
  synth->add_option("-n,--count", synth_count, "number of samples")->check(CLI::PositiveNumber);
  synth->add_option("-o,--out", synth_out, "output directory (default <run>/synthesized)");

  auto* texture = app.add_subcommand("texture", "grow a large texture with a patch model");
  add_common(texture, texture_c, true);
  texture->add_option("--checkpoint", texture_ckpt, "use this trained model instead of training one");

  auto* classify = app.add_subcommand("classify", "train baseline and WINN-regularized digit classifiers");
  add_common(classify, classify_c, true);

  auto* attack = app.add_subcommand("attack", "FGSM adversarial error and correction rates");
  add_common(attack, attack_c, true);

  auto* theory = app.add_subcommand("theory", "check the divergence identity and bounds on random pairs");
  theory->add_option("--trials", sweep.trials, "random pairs")->check(CLI::PositiveNumber);
  theory->add_option("--support", sweep.max_support, "largest support size")->check(CLI::Range(1, 1 << 20));
  theory->add_option("--min-support", sweep.min_support, "smallest support size")->check(CLI::Range(1, 1 << 20));
  theory->add_option("--floor", sweep.floor, "minimum probability")->check(CLI::Range(0.0, 1.0));
  theory->add_option("--seed", sweep.seed, "master seed");

  auto* inspect = app.add_subcommand("inspect", "print a checkpoint header or a resolved config");
  add_common(inspect, inspect_c, false);
  inspect->add_option("--checkpoint", inspect_ckpt, "checkpoint file");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? Ok : Usage;
  }

  try {
    apply_threads();
    if (*train || *cascade) {
      const bool is_cascade = static_cast<bool>(*cascade);
      const Common& c = is_cascade ? cascade_c : train_c;
      TrainRunOptions opt;
      opt.cascade = is_cascade;
      const std::string& r = is_cascade ? cascade_resume : resume;
      if (!r.empty()) opt.resume = r;
      opt.log = progress(c);
      const TrainRunSummary s = run_train_pipeline(load(c), opt);
      std::cout << "run directory " << s.dir.string() << "\n";
      if (s.last_checkpoint) std::cout << "checkpoint " << s.last_checkpoint->string() << "\n";
      std::cout << (s.result.finished ? "finished" : "stopped early") << " after " << s.result.records.size()
                << " stages\n";
    } else if (*synth) {
      std::optional<fs::path> out;
      if (!synth_out.empty()) out = synth_out;
      const SynthesizeSummary s = run_synthesize_pipeline(synth_ckpt, synth_count, out, &std::cerr);
      std::cout << s.samples.dim(0) << " samples written to " << s.dir.string() << " (" << s.exhausted
                << " hit the step budget)\n";
    } else if (*texture) {
      std::optional<fs::path> ck;
      if (!texture_ckpt.empty()) ck = texture_ckpt;
      const TextureSummary s = run_texture_pipeline(load(texture_c), ck, progress(texture_c));
      std::cout << "texture written to " << (s.dir / "texture/texture.png").string() << "\n";
    } else if (*classify) {
      const ClassifySummary s = run_classify_pipeline(load(classify_c), progress(classify_c));
      for (const auto& m : s.models) std::cout << m.name << " clean error " << m.clean_error << "\n";
    } else if (*attack) {
      for (const auto& r : run_attack_pipeline(load(attack_c), progress(attack_c)))
        std::cout << "attacked " << r.attacked << ", checked by " << r.second << ": n " << r.report.n << ", n_a "
                  << r.report.n_a << ", n_ab " << r.report.n_ab << ", adversarial error " << r.report.adversarial_error
                  << ", correction rate " << r.report.correction_rate << "\n";
    } else if (*theory) {
      if (sweep.min_support > sweep.max_support) throw UsageError("--min-support exceeds --support");
      std::cout << theory_table(divergence_sweep(sweep));
    } else if (*inspect) {
      if (!inspect_ckpt.empty()) {
        CheckpointMeta meta;
        const TrainState st = load_checkpoint(inspect_ckpt, 0, &meta);
        std::cout << "format version " << kCheckpointVersion << "\nconfig hash " << hex64(meta.config_hash) << "\nseed "
                  << meta.seed << "\ncursor cascade " << st.cascade + 1 << " stage " << st.stage << "\nparameters "
                  << st.params.scalar_count() << " in " << st.params.size() << " tensors\npool " << st.pool.size()
                  << " samples\nfinished cascades " << st.finished.size() << "\n\n"
                  << meta.config;
      } else if (!inspect_c.config.empty() || !inspect_c.sets.empty()) {
        const RunConfig cfg = load(inspect_c);
        std::cout << "# config hash " << hex64(config_hash(cfg)) << "\n" << serialize_config(cfg);
      } else {
        throw UsageError("inspect needs --checkpoint or --config");
      }
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return Usage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return Usage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return Runtime;
  }
  return Ok;
}
