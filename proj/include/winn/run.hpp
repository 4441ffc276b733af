#pragma once

#include <charconv>
#include <filesystem>
#include <map>
#include <optional>
#include <ostream>
#include <sstream>
#include <string>
#include <vector>

#include "winn/anysize.hpp"
#include "winn/checkpoint.hpp"
#include "winn/config.hpp"
#include "winn/datasets.hpp"
#include "winn/divergence.hpp"
#include "winn/supervised.hpp"

namespace winn {

namespace fs = std::filesystem;

/// Shortest round-trip text for a CSV cell; non-finite values print as nan / inf / -inf.
inline std::string csv_num(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
inline std::string csv_num(std::size_t v) { return std::to_string(v); }

/// Output directory of one run. Every file goes through `write`, which records its size and
/// content hash for manifest.txt.
class RunDirectory {
 public:
  explicit RunDirectory(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw IoError("cannot create output directory '" + root_.string() + "': " + ec.message());
    const fs::path m = root_ / "manifest.txt";
    if (fs::exists(m)) {
      std::istringstream in(read_file(m));
      std::string hash, size, rel;
      while (in >> hash >> size && std::getline(in >> std::ws, rel)) files_[rel] = {std::stoull(size), hash};
    }
  }

  const fs::path& root() const noexcept { return root_; }
  fs::path path(const std::string& rel) const { return root_ / rel; }

  void write(const std::string& rel, const std::string& bytes) {
    const fs::path p = path(rel);
    fs::create_directories(p.parent_path());
    write_file_atomic(p, bytes);
    files_[rel] = {bytes.size(), hex64(fnv1a64(bytes))};
  }

  /// Registers a file produced outside `write`.
  void record(const std::string& rel) {
    const std::string bytes = read_file(path(rel));
    files_[rel] = {bytes.size(), hex64(fnv1a64(bytes))};
  }

  void save_manifest() const {
    std::string out;
    for (const auto& [rel, f] : files_) out += f.second + " " + std::to_string(f.first) + " " + rel + "\n";
    write_file_atomic(root_ / "manifest.txt", out);
  }

  const std::map<std::string, std::pair<std::size_t, std::string>>& files() const noexcept { return files_; }

 private:
  fs::path root_;
  std::map<std::string, std::pair<std::size_t, std::string>> files_;
};

/// CSV text kept in memory and rewritten whole, so resuming can drop rows past a checkpoint.
class CsvTable {
 public:
  explicit CsvTable(std::string header) : header_(std::move(header)) {}

  void row(const std::vector<std::string>& cells) {
    std::string line;
    for (std::size_t i = 0; i < cells.size(); ++i) line += (i ? "," : "") + cells[i];
    rows_.push_back(std::move(line));
  }

  std::string text() const {
    std::string out = header_ + "\n";
    for (const auto& r : rows_) out += r + "\n";
    return out;
  }

  /// Reloads rows from a previous run, keeping those whose (cascade, stage) prefix `keep` accepts.
  template <class Keep>
  void reload(const std::string& text, Keep&& keep) {
    std::istringstream in(text);
    std::string line;
    std::getline(in, line);
    if (line != header_) throw CheckpointError("cannot resume: CSV header differs from '" + header_ + "'");
    rows_.clear();
    while (std::getline(in, line)) {
      std::size_t c = 0, t = 0;
      if (std::sscanf(line.c_str(), "%zu,%zu", &c, &t) != 2) throw CheckpointError("cannot resume: malformed CSV row '" + line + "'");
      if (keep(c, t)) rows_.push_back(line);
    }
  }

 private:
  std::string header_;
  std::vector<std::string> rows_;
};

inline bool is_image_shape(const Shape& s) { return s.size() == 3 && (s[0] == 1 || s[0] == 3); }

/// Writes a batch as one raw dump plus, for images, per-sample PNGs and a grid.
inline void write_samples(RunDirectory& dir, const std::string& prefix, const Tensor& batch, bool per_sample) {
  dir.write(prefix + "samples.f64", encode_f64(batch));
  const Shape s(batch.shape().begin() + 1, batch.shape().end());
  if (!is_image_shape(s)) return;
  std::size_t cols = 1;
  while (cols * cols < batch.dim(0)) ++cols;
  dir.write(prefix + "grid.png", encode_png(to_raster(image_grid(batch, cols))));
  if (!per_sample) return;
  for (std::size_t i = 0; i < batch.dim(0); ++i) {
    Tensor one(s);
    std::copy_n(batch.data() + i * one.numel(), one.numel(), one.data());
    dir.write(prefix + "sample-" + std::to_string(i) + ".png", encode_png(to_raster(one)));
  }
}

inline void check_data_shape(const Dataset& ds, const ArchitectureSpec& spec) {
  if (ds.sample_shape != spec.input_shape)
    throw ConfigError("model.preset " + spec.name + " takes inputs of shape " + to_string(spec.input_shape) +
                      " but data.kind yields " + to_string(ds.sample_shape));
}

// ---------------------------------------------------------------------------
// train / cascade

struct TrainRunOptions {
  bool cascade = false;           // false: force one cascade
  std::optional<fs::path> resume;  // checkpoint to continue from
  bool per_sample_images = true;
  std::ostream* log = nullptr;
};

struct TrainRunSummary {
  fs::path dir;
  TrainResult result;
  std::optional<fs::path> last_checkpoint;
};

constexpr const char* kMetricsHeader =
    "cascade,stage,step,loss,wasserstein,penalty,lambda,cross_entropy,total,mean_f_pos,mean_f_neg,clamped,eligible";
constexpr const char* kSynthesisHeader =
    "cascade,stage,threshold,f_pos_min,f_pos_max,samples,reached,exhausted,reinitialized,mean_steps,mean_final_f,"
    "energy,pool_size";
constexpr const char* kTimingHeader = "cascade,stage,wall_seconds";

inline std::string checkpoint_name(std::size_t cascade, std::size_t stage) {
  return "checkpoints/c" + std::to_string(cascade + 1) + "-s" + std::to_string(stage) + ".ckpt";
}

/// Trains a single model (`cascade` false) or the full cascade, writing metrics.csv (one row per
/// classifier step), synthesis.csv (one row per stage), timing.csv, per-stage samples and
/// checkpoints. Wall-clock time lives only in timing.csv so the other CSVs are reproducible bytes.
inline TrainRunSummary run_train_pipeline(RunConfig cfg, const TrainRunOptions& opt = {}) {
  cfg.sync();
  if (!opt.cascade) cfg.train.cascades = 1;
  cfg.validate();
  const ArchitectureSpec spec = cfg.spec();
  const Dataset ds = make_dataset(cfg.data, cfg.seed);
  check_data_shape(ds, spec);
  const std::uint64_t hash = config_hash(cfg);
  const std::string cfg_text = serialize_config(cfg);

  TrainRunSummary out;
  out.dir = output_dir(cfg);
  RunDirectory dir(out.dir);
  dir.write("config.ini", cfg_text);
  CsvTable metrics(kMetricsHeader), synthesis(kSynthesisHeader), timing(kTimingHeader);

  std::optional<TrainState> resume;
  if (opt.resume) {
    resume = load_checkpoint(*opt.resume, hash);
    const std::size_t rc = resume->cascade + 1, rs = resume->stage;
    auto keep = [&](std::size_t c, std::size_t t) { return c < rc || (c == rc && t <= rs); };
    metrics.reload(read_file(dir.path("metrics.csv")), keep);
    synthesis.reload(read_file(dir.path("synthesis.csv")), keep);
    if (fs::exists(dir.path("timing.csv"))) timing.reload(read_file(dir.path("timing.csv")), keep);
  }

  auto flush = [&] {
    dir.write("metrics.csv", metrics.text());
    dir.write("synthesis.csv", synthesis.text());
    dir.write("timing.csv", timing.text());
    dir.save_manifest();
  };
  auto checkpoint = [&](const TrainState& st) {
    const std::string rel = checkpoint_name(st.cascade, st.stage);
    fs::create_directories(dir.path(rel).parent_path());
    save_checkpoint(dir.path(rel), st, cfg.seed, hash, cfg_text);
    dir.record(rel);
    dir.record(rel + ".pool");
    out.last_checkpoint = dir.path(rel);
  };

  std::pair<std::size_t, std::size_t> saved{~std::size_t{0}, 0};
  TrainHooks hooks;
  hooks.on_stage = [&](const StageRecord& rec, const TrainState& st) {
    const std::string c = csv_num(rec.cascade + 1), t = csv_num(rec.stage);
    for (std::size_t i = 0; i < rec.steps.size(); ++i) {
      const LossReport& l = rec.steps[i];
      metrics.row({c, t, csv_num(i + 1), loss_kind_name(cfg.train.classifier.loss), csv_num(l.wasserstein),
                   csv_num(l.penalty), csv_num(l.lambda), csv_num(l.cross_entropy), csv_num(l.total),
                   csv_num(l.mean_f_pos), csv_num(l.mean_f_neg), csv_num(l.clamped), csv_num(rec.eligible)});
    }
    const SynthesisResult& sr = rec.synthesis;
    std::size_t exhausted = 0, reinit = 0;
    double steps = 0.0, final_f = 0.0;
    for (std::size_t i = 0; i < sr.stop_step.size(); ++i) {
      exhausted += sr.budget_exhausted[i];
      reinit += sr.reinitialized[i];
      steps += static_cast<double>(sr.stop_step[i]);
      final_f += sr.final_score[i];
    }
    const double n = static_cast<double>(sr.stop_step.size());
    synthesis.row({c, t, csv_num(rec.threshold), csv_num(rec.f_pos_min), csv_num(rec.f_pos_max),
                   csv_num(sr.stop_step.size()), csv_num(sr.stop_step.size() - exhausted), csv_num(exhausted),
                   csv_num(reinit), csv_num(steps / n), csv_num(final_f / n), csv_num(rec.energy), csv_num(rec.pool_size)});
    timing.row({c, t, csv_num(rec.wall_seconds)});
    write_samples(dir, "cascade-" + c + "/stage-" + t + "/", sr.samples, opt.per_sample_images);
    if (opt.log)
      *opt.log << "cascade " << c << " stage " << t << ": W " << rec.steps.back().wasserstein << ", threshold "
               << rec.threshold << ", exhausted " << exhausted << "/" << sr.stop_step.size()
               << (std::isnan(rec.energy) ? std::string() : ", energy " + csv_num(rec.energy)) << "\n";
    const bool last = rec.cascade + 1 == cfg.train.cascades && rec.stage == cfg.train.stages;
    if (rec.stage % cfg.checkpoint_every == 0 || last) {
      checkpoint(st);
      saved = {st.cascade, st.stage};
    }
    flush();
  };

  out.result = run_training(spec, cfg.train, ds.sampler(), std::move(resume), hooks);
  if (saved != std::pair{out.result.state.cascade, out.result.state.stage}) checkpoint(out.result.state);
  flush();
  return out;
}

// ---------------------------------------------------------------------------
// synthesize

struct SynthesizeSummary {
  fs::path dir;
  Tensor samples;
  std::size_t exhausted = 0;
};

/// Fresh samples from a checkpoint: cascade 1 starts from its initializer, each later cascade
/// refines the previous cascade's output.
inline SynthesizeSummary run_synthesize_pipeline(const fs::path& checkpoint, std::size_t count,
                                                 std::optional<fs::path> out_dir = std::nullopt,
                                                 std::ostream* log = nullptr) {
  if (count < 1) throw UsageError("synthesize: --count must be >= 1");
  CheckpointMeta meta;
  const TrainState st = load_checkpoint(checkpoint, 0, &meta);
  RunConfig cfg = parse_config(meta.config);
  const ArchitectureSpec spec = cfg.spec();
  const Dataset ds = make_dataset(cfg.data, cfg.seed);
  check_data_shape(ds, spec);
  const auto models = cascade_models(st);
  SynthesizeSummary res;
  res.dir = out_dir ? *out_dir : output_dir(cfg) / "synthesized";
  RunDirectory dir(res.dir);
  constexpr std::uint64_t kOffline = std::uint64_t{1} << 62;  // keeps these streams apart from training's
  Tensor current;
  for (std::size_t k = 0; k < models.size(); ++k) {
    Rng thr_rng = make_rng(meta.seed, Stream::Threshold, kOffline | k);
    const Tensor ref = ds.sample(cfg.train.threshold_batch, thr_rng);
    const Tensor f_pos = eval_f(models[k], spec, ref, Mode::Eval, 0);
    const double tau = early_stop_threshold(f_pos.values(), thr_rng);
    SynthesisConfig sc = detail::cascade_synthesis(cfg.train, k);
    const SynthesisResult sr =
        synthesize(models[k], spec, sc, count, tau, derive_seed(meta.seed, Stream::SynthesisInit, kOffline | k),
                   k > 0 ? &current : nullptr);
    current = sr.samples;
    res.exhausted = 0;
    for (bool b : sr.budget_exhausted) res.exhausted += b;
    if (log) *log << "cascade " << k + 1 << ": threshold " << tau << ", exhausted " << res.exhausted << "/" << count << "\n";
  }
  res.samples = current;
  const Shape s = spec.input_shape;
  for (std::size_t i = 0; i < count; ++i) {
    Tensor one(s);
    std::copy_n(current.data() + i * one.numel(), one.numel(), one.data());
    dir.write("sample-" + std::to_string(i) + ".f64", encode_f64(one));
    if (is_image_shape(s)) dir.write("sample-" + std::to_string(i) + ".png", encode_png(to_raster(one)));
  }
  dir.write("samples.f64", encode_f64(current));
  dir.save_manifest();
  return res;
}

// ---------------------------------------------------------------------------
// texture

struct TextureSummary {
  fs::path dir;
  AnysizeResult result;
};

/// Grows one large texture with a patch model, training the model first unless a checkpoint is given.
inline TextureSummary run_texture_pipeline(RunConfig cfg, std::optional<fs::path> checkpoint, std::ostream* log = nullptr) {
  cfg.sync();
  ModelParams params;
  if (checkpoint) {
    CheckpointMeta meta;
    params = load_checkpoint(*checkpoint, 0, &meta).params;
    const RunConfig trained = parse_config(meta.config);
    cfg.preset = trained.preset;
    cfg.dropout = trained.dropout;
    cfg.dropout_layers = trained.dropout_layers;
  } else {
    params = run_train_pipeline(cfg, {false, std::nullopt, false, log}).result.state.params;
  }
  const ArchitectureSpec spec = cfg.spec();
  cfg.anysize.validate(spec);
  TextureSummary res;
  res.dir = output_dir(cfg);
  RunDirectory dir(res.dir);
  res.result = anysize_synthesize(params, spec, cfg.anysize, derive_seed(cfg.seed, Stream::SynthesisInit, std::uint64_t{1} << 61));
  CsvTable curve("iteration,mean_patch_score");
  for (std::size_t i = 0; i < res.result.mean_patch_score.size(); ++i)
    curve.row({csv_num(i + 1), csv_num(res.result.mean_patch_score[i])});
  dir.write("texture/anysize.csv", curve.text());
  dir.write("texture/texture.png", encode_png(to_raster(res.result.image)));
  dir.write("texture/texture.f64", encode_f64(res.result.image));
  dir.save_manifest();
  if (log) *log << "texture " << to_string(res.result.image.shape()) << " written to " << dir.path("texture/texture.png") << "\n";
  return res;
}

// ---------------------------------------------------------------------------
// classify / attack

struct ClassifyModel {
  std::string name;  // baseline | winn
  ModelParams params;
  double clean_error = 0.0;
};

struct ClassifySummary {
  fs::path dir;
  ArchitectureSpec spec;
  Dataset data;
  std::vector<ClassifyModel> models;
};

inline Dataset labeled_dataset(const RunConfig& cfg, const ArchitectureSpec& spec) {
  Dataset ds = make_dataset(cfg.data, cfg.seed);
  if (ds.classes < 2) throw ConfigError("data.kind must be a labeled set (digits) for classify/attack");
  check_data_shape(ds, spec);
  if (spec.classes != ds.classes)
    throw ConfigError("model.preset has " + std::to_string(spec.classes) + " classes, data has " + std::to_string(ds.classes));
  return ds;
}

/// Trains the cross-entropy baseline and the WINN-regularized classifier on identical batches.
inline ClassifySummary run_classify_pipeline(RunConfig cfg, std::ostream* log = nullptr) {
  cfg.sync();
  cfg.validate();
  ClassifySummary res;
  res.spec = cfg.spec();
  res.data = labeled_dataset(cfg, res.spec);
  res.dir = output_dir(cfg);
  RunDirectory dir(res.dir);
  dir.write("config.ini", serialize_config(cfg));
  CsvTable curve("mode,stage,step,cross_entropy,wasserstein,penalty,total");
  CsvTable summary("model,clean_error");
  for (const std::string mode : {"baseline", "winn"}) {
    SupervisedSettings s = cfg.supervised;
    if (mode == "baseline") s.weight = 0.0;
    const SupervisedResult r = train_supervised(res.spec, s, res.data.train, res.data.train_labels, [&](const SupervisedStage& st) {
      for (std::size_t i = 0; i < st.steps.size(); ++i) {
        const LossReport& l = st.steps[i];
        curve.row({mode, csv_num(st.stage), csv_num(i + 1), csv_num(l.cross_entropy), csv_num(l.wasserstein),
                   csv_num(l.penalty), csv_num(l.total)});
      }
      if (log) *log << mode << " stage " << st.stage << ": cross-entropy " << st.steps.back().cross_entropy << "\n";
    });
    ClassifyModel m{mode, r.params, error_rate(r.params, res.spec, res.data.test, res.data.test_labels)};
    summary.row({mode, csv_num(m.clean_error)});
    TrainState st;
    st.params = r.params;
    st.adam = r.adam;
    st.pool = r.pool;
    fs::create_directories(dir.path("models"));
    save_checkpoint(dir.path("models/" + mode + ".ckpt"), st, cfg.seed, config_hash(cfg), serialize_config(cfg));
    dir.record("models/" + mode + ".ckpt");
    dir.record("models/" + mode + ".ckpt.pool");
    if (log) *log << mode << " clean test error " << m.clean_error << "\n";
    res.models.push_back(std::move(m));
  }
  dir.write("supervised.csv", curve.text());
  dir.write("classify.csv", summary.text());
  dir.save_manifest();
  return res;
}

struct AttackRow {
  std::string attacked, second;
  AttackReport report;
};

/// FGSM against each model in turn, scored by the other; reuses models/ from a classify run
/// in the same output directory, training them when absent.
inline std::vector<AttackRow> run_attack_pipeline(RunConfig cfg, std::ostream* log = nullptr) {
  cfg.sync();
  cfg.validate();
  const ArchitectureSpec spec = cfg.spec();
  const fs::path root = output_dir(cfg);
  std::vector<ClassifyModel> models;
  Dataset ds;
  if (fs::exists(root / "models/baseline.ckpt") && fs::exists(root / "models/winn.ckpt")) {
    ds = labeled_dataset(cfg, spec);
    for (const std::string name : {"baseline", "winn"}) {
      ClassifyModel m{name, load_checkpoint(root / ("models/" + name + ".ckpt"), config_hash(cfg)).params, 0.0};
      m.clean_error = error_rate(m.params, spec, ds.test, ds.test_labels);
      models.push_back(std::move(m));
    }
  } else {
    ClassifySummary c = run_classify_pipeline(cfg, log);
    ds = std::move(c.data);
    models = std::move(c.models);
  }
  RunDirectory dir(root);
  std::vector<AttackRow> rows;
  CsvTable table("attacked,second,epsilon,n,n_a,n_ab,adversarial_error,correction_rate,clean_error");
  for (std::size_t a = 0; a < models.size(); ++a)
    for (std::size_t b = 0; b < models.size(); ++b) {
      if (a == b) continue;
      AttackRow r{models[a].name, models[b].name,
                  evaluate_attack(models[a].params, spec, models[b].params, spec, ds.test, ds.test_labels, cfg.epsilon)};
      table.row({r.attacked, r.second, csv_num(cfg.epsilon), csv_num(r.report.n), csv_num(r.report.n_a),
                 csv_num(r.report.n_ab), csv_num(r.report.adversarial_error), csv_num(r.report.correction_rate),
                 csv_num(models[a].clean_error)});
      if (log)
        *log << "attack " << r.attacked << " (checked by " << r.second << "): adversarial error "
             << r.report.adversarial_error << ", correction rate " << r.report.correction_rate << "\n";
      rows.push_back(std::move(r));
    }
  dir.write("attack.csv", table.text());
  dir.save_manifest();
  return rows;
}

// ---------------------------------------------------------------------------
// theory

inline std::string theory_table(const SweepSummary& s) {
  std::ostringstream out;
  out << "bound            violations  worst_margin   result\n";
  for (std::size_t i = 0; i < s.names.size(); ++i) {
    char line[128];
    std::snprintf(line, sizeof line, "%-16s %10zu  %12.4e   %s\n", s.names[i].c_str(), s.violations[i], s.worst_margin[i],
                  s.violations[i] == 0 ? "PASS" : "FAIL");
    out << line;
  }
  char line[128];
  std::snprintf(line, sizeof line, "%-16s %10s  %12.4e   %s\n", "objective_gap", "-", s.max_objective_gap,
                s.max_objective_gap <= 1e-9 ? "PASS" : "FAIL");
  out << line << "trials " << s.trials << "\n";
  return out.str();
}

}  // namespace winn
