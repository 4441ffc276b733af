#pragma once

#include <boost/property_tree/ini_parser.hpp>
#include <boost/property_tree/ptree.hpp>

#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "winn/anysize.hpp"
#include "winn/cascade.hpp"
#include "winn/datasets.hpp"
#include "winn/io.hpp"
#include "winn/supervised.hpp"

namespace winn {

/// Everything a run needs; one master seed feeds every random stream.
struct RunConfig {
  std::string name = "run";
  std::uint64_t seed = 0;
  std::string output = "runs/run";
  DatasetSpec data;
  std::string preset = "mlp2d(64)";
  double dropout = 0.0;
  std::size_t dropout_layers = 0;
  TrainSettings train;
  std::size_t checkpoint_every = 1;
  AnysizeConfig anysize;
  SupervisedSettings supervised;
  double epsilon = 0.125;

  ArchitectureSpec spec() const {
    ArchitectureSpec s = preset_spec(preset);
    if (dropout > 0.0) s = with_dropout(s, dropout, dropout_layers);
    return s;
  }

  /// Derived fields: sub-setting seeds follow the master seed, one batch size serves both classes.
  void sync() {
    train.seed = seed;
    supervised.seed = seed;
    train.classifier.batch_neg = train.classifier.batch_pos;
  }

  void validate() const {
    if (name.empty()) throw ConfigError("run.name must not be empty");
    if (output.empty()) throw ConfigError("run.output must not be empty");
    if (!(epsilon >= 0.0)) throw ConfigError("supervised.epsilon must be >= 0");
    if (checkpoint_every < 1) throw ConfigError("cascade.checkpoint_every must be >= 1");
    data.validate();
    const ArchitectureSpec s = spec();
    train.validate();
    supervised.validate();
    if (s.input_shape.size() == 3 && s.input_shape[1] == s.input_shape[2] && anysize.working >= s.input_shape[1])
      anysize.validate(s);
  }
};

namespace config_detail {

inline std::string fmt(double v) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}
inline std::string fmt(std::uint64_t v) { return std::to_string(v); }
inline std::string fmt(bool v) { return v ? "true" : "false"; }
inline std::string fmt(const std::string& v) { return v; }

[[noreturn]] inline void bad(const std::string& field, const std::string& value, const char* want) {
  throw ConfigError(field + ": cannot parse '" + value + "' as " + want);
}

inline void parse(const std::string& f, const std::string& s, double& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size() || !std::isfinite(out)) bad(f, s, "a finite number");
}
inline void parse(const std::string& f, const std::string& s, std::uint64_t& out) {
  auto r = std::from_chars(s.data(), s.data() + s.size(), out);
  if (r.ec != std::errc() || r.ptr != s.data() + s.size()) bad(f, s, "a non-negative integer");
}
inline void parse(const std::string& f, const std::string& s, bool& out) {
  if (s == "true") out = true;
  else if (s == "false") out = false;
  else bad(f, s, "true or false");
}
inline void parse(const std::string&, const std::string& s, std::string& out) { out = s; }

struct Field {
  std::string section, key;
  bool hashed = true;  // part of the config hash
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
  std::string path() const { return section + "." + key; }
};

/// Field bound to a member reached through `acc`; size_t and uint64_t share the integer parser.
template <class Acc>
Field field(std::string section, std::string key, Acc acc, bool hashed = true) {
  Field f{section, key, hashed, {}, {}};
  const std::string path = section + "." + key;
  f.get = [acc](const RunConfig& c) {
    auto& v = acc(const_cast<RunConfig&>(c));
    using T = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<T, std::size_t>) return fmt(static_cast<std::uint64_t>(v));
    else return fmt(v);
  };
  f.set = [acc, path](RunConfig& c, const std::string& s) {
    auto& v = acc(c);
    using T = std::decay_t<decltype(v)>;
    if constexpr (std::is_same_v<T, std::size_t>) {
      std::uint64_t u = 0;
      parse(path, s, u);
      v = static_cast<std::size_t>(u);
    } else {
      parse(path, s, v);
    }
  };
  return f;
}

/// Enum field with name/parse functions.
template <class Acc, class Name, class Parse>
Field enum_field(std::string section, std::string key, Acc acc, Name name, Parse parse_fn) {
  Field f{section, key, true, {}, {}};
  const std::string path = section + "." + key;
  f.get = [acc, name](const RunConfig& c) { return std::string(name(acc(const_cast<RunConfig&>(c)))); };
  f.set = [acc, parse_fn, path](RunConfig& c, const std::string& s) {
    try {
      acc(c) = parse_fn(s);
    } catch (const ConfigError& e) {
      throw ConfigError(path + ": " + e.what());
    }
  };
  return f;
}

#define WINN_F(sec, key, expr) field(sec, key, [](RunConfig& c) -> auto& { return expr; })

inline const std::vector<Field>& fields() {
  static const std::vector<Field> all = [] {
    std::vector<Field> v{
        WINN_F("run", "name", c.name),
        WINN_F("run", "seed", c.seed),
        field("run", "output", [](RunConfig& c) -> auto& { return c.output; }, false),

        WINN_F("data", "kind", c.data.kind),
        WINN_F("data", "count", c.data.count),
        WINN_F("data", "components", c.data.components),
        WINN_F("data", "radius", c.data.radius),
        WINN_F("data", "std", c.data.std),
        WINN_F("data", "pattern", c.data.pattern),
        WINN_F("data", "path", c.data.path),
        WINN_F("data", "texture_size", c.data.texture_size),
        WINN_F("data", "crop", c.data.crop),
        WINN_F("data", "image_size", c.data.image_size),
        WINN_F("data", "channels", c.data.channels),
        WINN_F("data", "train", c.data.train),
        WINN_F("data", "test", c.data.test),
        WINN_F("data", "digit_size", c.data.digit_size),

        WINN_F("model", "preset", c.preset),
        WINN_F("model", "dropout", c.dropout),
        WINN_F("model", "dropout_layers", c.dropout_layers),

        enum_field("classifier", "loss", [](RunConfig& c) -> auto& { return c.train.classifier.loss; }, loss_kind_name,
                   parse_loss_kind),
        WINN_F("classifier", "steps", c.train.classifier.steps),
        WINN_F("classifier", "lambda", c.train.classifier.lambda),
        WINN_F("classifier", "batch", c.train.classifier.batch_pos),
        WINN_F("classifier", "lr", c.train.adam.lr),
        WINN_F("classifier", "beta1", c.train.adam.beta1),
        WINN_F("classifier", "beta2", c.train.adam.beta2),
        WINN_F("classifier", "eps", c.train.adam.eps),

        WINN_F("cascade", "stages", c.train.stages),
        WINN_F("cascade", "cascades", c.train.cascades),
        WINN_F("cascade", "per_stage", c.train.per_stage),
        WINN_F("cascade", "initial_negatives", c.train.initial_negatives),
        WINN_F("cascade", "pool_cap", c.train.pool_cap),
        WINN_F("cascade", "threshold_batch", c.train.threshold_batch),
        WINN_F("cascade", "energy_reference", c.train.energy_reference),
        WINN_F("cascade", "warm_start", c.train.warm_start),
        field("cascade", "checkpoint_every", [](RunConfig& c) -> auto& { return c.checkpoint_every; }, false),
        field("cascade", "stop_after_stage", [](RunConfig& c) -> auto& { return c.train.stop_after_stage; }, false),

        enum_field("synthesis", "init", [](RunConfig& c) -> auto& { return c.train.synthesis.init; }, init_mode_name,
                   parse_init_mode),
        WINN_F("synthesis", "sigma", c.train.synthesis.sigma),
        WINN_F("synthesis", "lr", c.train.synthesis.adam.lr),
        WINN_F("synthesis", "beta1", c.train.synthesis.adam.beta1),
        WINN_F("synthesis", "beta2", c.train.synthesis.adam.beta2),
        WINN_F("synthesis", "max_steps", c.train.synthesis.max_steps),
        enum_field("synthesis", "noise", [](RunConfig& c) -> auto& { return c.train.synthesis.noise; }, noise_mode_name,
                   parse_noise_mode),
        WINN_F("synthesis", "langevin_epsilon", c.train.synthesis.langevin.epsilon0),
        WINN_F("synthesis", "langevin_decay", c.train.synthesis.langevin.decay),
        WINN_F("synthesis", "langevin_floor", c.train.synthesis.langevin.floor),
        WINN_F("synthesis", "langevin_noise_scale", c.train.synthesis.langevin.noise_scale),
        WINN_F("synthesis", "dropout", c.train.synthesis.dropout),
        WINN_F("synthesis", "divergence_limit", c.train.synthesis.divergence_limit),
        WINN_F("synthesis", "alt_seed", c.train.synthesis.alt_initializer_seed),

        WINN_F("anysize", "working", c.anysize.working),
        WINN_F("anysize", "center", c.anysize.center),
        WINN_F("anysize", "patches", c.anysize.patches_per_iter),
        WINN_F("anysize", "iters", c.anysize.iters),
        enum_field("anysize", "mode", [](RunConfig& c) -> auto& { return c.anysize.mode; }, patch_mode_name,
                   parse_patch_mode),
        WINN_F("anysize", "sigma", c.anysize.sigma),
        WINN_F("anysize", "lr", c.anysize.adam.lr),
        WINN_F("anysize", "beta1", c.anysize.adam.beta1),
        WINN_F("anysize", "beta2", c.anysize.adam.beta2),
        WINN_F("anysize", "chunk", c.anysize.score_chunk),

        WINN_F("supervised", "stages", c.supervised.stages),
        WINN_F("supervised", "steps", c.supervised.steps_per_stage),
        WINN_F("supervised", "batch", c.supervised.batch),
        WINN_F("supervised", "weight", c.supervised.weight),
        WINN_F("supervised", "lambda", c.supervised.lambda),
        WINN_F("supervised", "lr", c.supervised.adam.lr),
        WINN_F("supervised", "beta1", c.supervised.adam.beta1),
        WINN_F("supervised", "beta2", c.supervised.adam.beta2),
        WINN_F("supervised", "synthesis_lr", c.supervised.synthesis.adam.lr),
        WINN_F("supervised", "synthesis_beta1", c.supervised.synthesis.adam.beta1),
        WINN_F("supervised", "synthesis_sigma", c.supervised.synthesis.sigma),
        WINN_F("supervised", "synthesis_max_steps", c.supervised.synthesis.max_steps),
        WINN_F("supervised", "per_stage", c.supervised.per_stage),
        WINN_F("supervised", "epsilon", c.epsilon),
    };
    return v;
  }();
  return all;
}

#undef WINN_F

inline const Field& find_field(const std::string& path) {
  for (const auto& f : fields())
    if (f.path() == path) return f;
  throw ConfigError("unknown config field '" + path + "'");
}

}  // namespace config_detail

/// Canonical text: every field, fixed order, shortest round-trip number formatting.
inline std::string serialize_config(const RunConfig& c, bool hashed_only = false) {
  std::string out, section;
  for (const auto& f : config_detail::fields()) {
    if (hashed_only && !f.hashed) continue;
    if (f.section != section) {
      if (!section.empty()) out += "\n";
      section = f.section;
      out += "[" + section + "]\n";
    }
    out += f.key + " = " + f.get(c) + "\n";
  }
  return out;
}

/// Hash of the fields that determine the run's results (output location and stop/checkpoint
/// cadence excluded).
inline std::uint64_t config_hash(const RunConfig& c) { return fnv1a64(serialize_config(c, true)); }

/// Sets one field from "section.key" and a string value.
inline void set_config_value(RunConfig& c, const std::string& path, const std::string& value) {
  config_detail::find_field(path).set(c, value);
  c.sync();
}

/// Applies "section.key=value".
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError("override '" + assignment + "' is not of the form section.key=value");
  auto trim = [](std::string s) {
    const auto a = s.find_first_not_of(" \t"), b = s.find_last_not_of(" \t");
    return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
  };
  set_config_value(c, trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

/// Parses INI text on top of `base`; unknown sections or keys are errors.
inline RunConfig parse_config(const std::string& text, RunConfig base = {}) {
  boost::property_tree::ptree tree;
  std::istringstream in(text);
  try {
    boost::property_tree::ini_parser::read_ini(in, tree);
  } catch (const boost::property_tree::ini_parser_error& e) {
    throw ConfigError("config: " + e.message() + " (line " + std::to_string(e.line()) + ")");
  }
  for (const auto& [section, keys] : tree) {
    if (keys.empty() && !keys.data().empty())
      throw ConfigError("config: key '" + section + "' must live inside a [section]");
    for (const auto& [key, value] : keys) set_config_value(base, section + "." + key, value.data());
  }
  base.sync();
  base.validate();
  return base;
}

inline RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides = {}) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const IoError& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  RunConfig c = parse_config(text);
  for (const auto& o : overrides) apply_override(c, o);
  c.validate();
  return c;
}

/// Output directory with the WINN_OUTPUT_ROOT override applied to relative paths.
inline std::filesystem::path output_dir(const RunConfig& c) {
  std::filesystem::path p = c.output;
  if (const char* root = std::getenv("WINN_OUTPUT_ROOT"); root && *root && p.is_relative()) p = std::filesystem::path(root) / p;
  return p;
}

}  // namespace winn
