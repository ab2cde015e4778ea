#pragma once

// Experiment configuration files: "key = value" lines grouped under
// [experiment], [fit], [optimizer] and [output]. '#' starts a comment.
// Every key is optional; unknown sections and keys are errors.

#include <algorithm>
#include <charconv>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "tenma/errors.hpp"
#include "tenma/simulation.hpp"
#include "tenma/text_io.hpp"

namespace tenma {

inline constexpr const char* kOutputDirEnv = "TENMA_OUTPUT_DIR";

struct ExperimentConfig {
  /// n_train is taken from `n_train` below; everything else from the plan.
  ExperimentPlan plan;
  std::vector<std::size_t> n_train{500};
  std::filesystem::path output_dir = "tenma_out";
  bool save_datasets = false;

  [[nodiscard]] std::vector<ExperimentPlan> plans() const {
    std::vector<ExperimentPlan> out;
    for (std::size_t n : n_train) {
      ExperimentPlan p = plan;
      p.n_train = n;
      out.push_back(std::move(p));
    }
    return out;
  }

  void validate() const {
    if (n_train.empty()) throw InputError("n_train needs at least one value");
    for (const ExperimentPlan& p : plans()) p.validate();
  }
};

namespace detail {

inline double to_real(std::string_view v) {
  double out = 0.0;
  if (!parse_double(v, out)) throw InputError("expected a number, got '" + std::string(v) + "'");
  return out;
}

inline std::uint64_t to_unsigned(std::string_view v) {
  v = trim(v);
  std::uint64_t out = 0;
  const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
  if (v.empty() || res.ec != std::errc{} || res.ptr != v.data() + v.size())
    throw InputError("expected a nonnegative integer, got '" + std::string(v) + "'");
  return out;
}

inline int to_int(std::string_view v) {
  const std::uint64_t u = to_unsigned(v);
  if (u > static_cast<std::uint64_t>(std::numeric_limits<int>::max()))
    throw InputError("integer out of range: '" + std::string(v) + "'");
  return static_cast<int>(u);
}

inline bool to_bool(std::string_view v) {
  if (v == "true" || v == "yes" || v == "1") return true;
  if (v == "false" || v == "no" || v == "0") return false;
  throw InputError("expected true or false, got '" + std::string(v) + "'");
}

inline std::vector<std::size_t> to_size_list(std::string_view v) {
  std::vector<std::size_t> out;
  for (std::string_view item : split_commas(v)) out.push_back(static_cast<std::size_t>(to_unsigned(item)));
  return out;
}

template <typename T>
std::string join(const std::vector<T>& items) {
  std::string out;
  for (std::size_t k = 0; k < items.size(); ++k) out += (k ? ", " : "") + std::to_string(items[k]);
  return out;
}

using Setter = std::function<void(ExperimentConfig&, std::string_view)>;
using Getter = std::function<std::string(const ExperimentConfig&)>;

struct ConfigKey {
  std::string section;
  std::string name;
  Setter set;
  Getter get;
};

inline const std::vector<ConfigKey>& config_schema() {
  using C = ExperimentConfig;
  static const std::vector<ConfigKey> keys{
      {"experiment", "signal", [](C& c, std::string_view v) { c.plan.signal = find_signal(v).name; },
       [](const C& c) { return c.plan.signal; }},
      {"experiment", "family", [](C& c, std::string_view v) { c.plan.family = parse_family_kind(v); },
       [](const C& c) { return std::string(family_token(c.plan.family)); }},
      {"experiment", "n_train", [](C& c, std::string_view v) { c.n_train = to_size_list(v); },
       [](const C& c) { return join(c.n_train); }},
      {"experiment", "n_test", [](C& c, std::string_view v) { c.plan.n_test = to_unsigned(v); },
       [](const C& c) { return std::to_string(c.plan.n_test); }},
      {"experiment", "noise", [](C& c, std::string_view v) { c.plan.noise.level = to_real(v); },
       [](const C& c) { return exact_number(c.plan.noise.level); }},
      {"experiment", "noise_absolute", [](C& c, std::string_view v) { c.plan.noise.absolute = to_bool(v); },
       [](const C& c) { return std::string(c.plan.noise.absolute ? "true" : "false"); }},
      {"experiment", "link_scale",
       [](C& c, std::string_view v) {
         if (v == "default")
           c.plan.link_scale.reset();
         else
           c.plan.link_scale = to_real(v);
       },
       [](const C& c) { return c.plan.link_scale ? exact_number(*c.plan.link_scale) : std::string("default"); }},
      {"experiment", "replications", [](C& c, std::string_view v) { c.plan.replications = to_unsigned(v); },
       [](const C& c) { return std::to_string(c.plan.replications); }},
      {"experiment", "seed", [](C& c, std::string_view v) { c.plan.base_seed = to_unsigned(v); },
       [](const C& c) { return std::to_string(c.plan.base_seed); }},
      {"experiment", "ranks", [](C& c, std::string_view v) { c.plan.ranks = to_size_list(v); },
       [](const C& c) { return join(c.plan.ranks); }},
      {"experiment", "folds", [](C& c, std::string_view v) { c.plan.folds = to_unsigned(v); },
       [](const C& c) { return std::to_string(c.plan.folds); }},
      {"experiment", "shuffle_folds", [](C& c, std::string_view v) { c.plan.shuffle_folds = to_bool(v); },
       [](const C& c) { return std::string(c.plan.shuffle_folds ? "true" : "false"); }},
      {"experiment", "df_formula", [](C& c, std::string_view v) { c.plan.df_formula = parse_df_formula(v); },
       [](const C& c) {
         return std::string(c.plan.df_formula == DfFormula::standard ? "standard" : "per_mode");
       }},
      {"experiment", "kl_grid_resolution", [](C& c, std::string_view v) { c.plan.kl_grid_resolution = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.kl_grid_resolution); }},
      {"fit", "max_cycles", [](C& c, std::string_view v) { c.plan.candidates.fit.max_cycles = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.candidates.fit.max_cycles); }},
      {"fit", "rel_tol", [](C& c, std::string_view v) { c.plan.candidates.fit.rel_tol = to_real(v); },
       [](const C& c) { return exact_number(c.plan.candidates.fit.rel_tol); }},
      {"fit", "irls_max_iter", [](C& c, std::string_view v) { c.plan.candidates.fit.irls_max_iter = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.candidates.fit.irls_max_iter); }},
      {"fit", "irls_tol", [](C& c, std::string_view v) { c.plan.candidates.fit.irls_tol = to_real(v); },
       [](const C& c) { return exact_number(c.plan.candidates.fit.irls_tol); }},
      {"fit", "init_seed", [](C& c, std::string_view v) { c.plan.candidates.fit.init_seed = to_unsigned(v); },
       [](const C& c) { return std::to_string(c.plan.candidates.fit.init_seed); }},
      {"fit", "init_scale", [](C& c, std::string_view v) { c.plan.candidates.fit.init_scale = to_real(v); },
       [](const C& c) { return exact_number(c.plan.candidates.fit.init_scale); }},
      {"fit", "restarts", [](C& c, std::string_view v) { c.plan.candidates.fit.n_restarts = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.candidates.fit.n_restarts); }},
      {"fit", "high_rank_restarts",
       [](C& c, std::string_view v) { c.plan.candidates.high_rank_restarts = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.candidates.high_rank_restarts); }},
      {"fit", "high_rank_threshold",
       [](C& c, std::string_view v) { c.plan.candidates.high_rank_threshold = to_unsigned(v); },
       [](const C& c) { return std::to_string(c.plan.candidates.high_rank_threshold); }},
      {"fit", "extrapolate", [](C& c, std::string_view v) { c.plan.candidates.fit.extrapolate = to_bool(v); },
       [](const C& c) { return std::string(c.plan.candidates.fit.extrapolate ? "true" : "false"); }},
      {"optimizer", "max_iter", [](C& c, std::string_view v) { c.plan.optimizer.max_iter = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.optimizer.max_iter); }},
      {"optimizer", "rel_tol", [](C& c, std::string_view v) { c.plan.optimizer.rel_tol = to_real(v); },
       [](const C& c) { return exact_number(c.plan.optimizer.rel_tol); }},
      {"optimizer", "armijo", [](C& c, std::string_view v) { c.plan.optimizer.armijo = to_real(v); },
       [](const C& c) { return exact_number(c.plan.optimizer.armijo); }},
      {"optimizer", "newton_polish_iter",
       [](C& c, std::string_view v) { c.plan.optimizer.newton_polish_iter = to_int(v); },
       [](const C& c) { return std::to_string(c.plan.optimizer.newton_polish_iter); }},
      {"output", "dir", [](C& c, std::string_view v) { c.output_dir = std::string(v); },
       [](const C& c) { return c.output_dir.string(); }},
      {"output", "save_datasets", [](C& c, std::string_view v) { c.save_datasets = to_bool(v); },
       [](const C& c) { return std::string(c.save_datasets ? "true" : "false"); }},
  };
  return keys;
}

}  // namespace detail

/// Parses a configuration text; `source` prefixes error messages as
/// "source:line: ...". Values are validated as a whole at the end.
inline ExperimentConfig parse_config(std::istream& is, const std::string& source) {
  ExperimentConfig cfg;
  std::string section;
  std::string line;
  std::size_t line_no = 0;
  std::map<std::string, std::size_t> seen;
  const auto fail = [&](const std::string& msg) {
    throw InputError(source + ":" + std::to_string(line_no) + ": " + msg);
  };
  while (std::getline(is, line)) {
    ++line_no;
    std::string_view t = line;
    if (const auto hash = t.find('#'); hash != std::string_view::npos) t = t.substr(0, hash);
    t = trim(t);
    if (t.empty()) continue;
    if (t.front() == '[') {
      if (t.back() != ']') fail("malformed section header");
      section = std::string(trim(t.substr(1, t.size() - 2)));
      if (section != "experiment" && section != "fit" && section != "optimizer" && section != "output")
        fail("unknown section [" + section + "]");
      continue;
    }
    const auto eq = t.find('=');
    if (eq == std::string_view::npos) fail("expected 'key = value'");
    if (section.empty()) fail("key outside of any section");
    const std::string key(trim(t.substr(0, eq)));
    const std::string_view value = trim(t.substr(eq + 1));
    const auto& schema = detail::config_schema();
    const auto it = std::find_if(schema.begin(), schema.end(),
                                 [&](const detail::ConfigKey& k) { return k.section == section && k.name == key; });
    if (it == schema.end()) fail("unknown key '" + key + "' in [" + section + "]");
    const std::string full = section + "." + key;
    if (const auto prev = seen.find(full); prev != seen.end())
      fail("duplicate key '" + key + "' (first set on line " + std::to_string(prev->second) + ")");
    seen[full] = line_no;
    if (value.empty()) fail("empty value for '" + key + "'");
    try {
      it->set(cfg, value);
    } catch (const InputError& e) {
      fail(key + ": " + e.what());
    }
  }
  try {
    cfg.validate();
  } catch (const InputError& e) {
    throw InputError(source + ": " + e.what());
  }
  return cfg;
}

inline ExperimentConfig parse_config_text(const std::string& text, const std::string& source = "config") {
  std::istringstream is(text);
  return parse_config(is, source);
}

inline ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw InputError("cannot open config " + path.string());
  return parse_config(is, path.string());
}

/// Every key with its effective value; parsing the result yields the same
/// configuration.
inline std::string resolved_config_text(const ExperimentConfig& cfg) {
  std::string out;
  std::string section;
  for (const detail::ConfigKey& k : detail::config_schema()) {
    if (k.section != section) {
      out += (section.empty() ? "" : "\n") + std::string("[") + k.section + "]\n";
      section = k.section;
    }
    out += k.name + " = " + k.get(cfg) + "\n";
  }
  return out;
}

/// Output directory precedence: command line, then TENMA_OUTPUT_DIR, then
/// the config file's [output] dir.
inline std::filesystem::path resolve_output_dir(const ExperimentConfig& cfg,
                                                const std::optional<std::filesystem::path>& cli) {
  if (cli) return *cli;
  if (const char* env = std::getenv(kOutputDirEnv); env && *env) return env;
  return cfg.output_dir;
}

}  // namespace tenma
