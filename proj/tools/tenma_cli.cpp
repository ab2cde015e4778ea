// tenma: simulate, fit, predict, signals.
//
// Exit codes: 0 success, 2 input error, 3 numerical failure.

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <mutex>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "tenma/averaging.hpp"
#include "tenma/config.hpp"
#include "tenma/model_file.hpp"
#include "tenma/parallel.hpp"
#include "tenma/signals.hpp"
#include "tenma/simulation.hpp"
#include "tenma/text_io.hpp"
#include "tenma/tnsr_io.hpp"
#include "tenma/version.hpp"

namespace fs = std::filesystem;
using namespace tenma;

namespace {

struct CommonOptions {
  std::size_t jobs = 0;  // 0: all logical cores
  std::optional<std::uint64_t> seed;
  std::optional<fs::path> out;
};

std::size_t resolve_jobs(std::size_t jobs) { return jobs == 0 ? default_jobs() : jobs; }

/// All result files pass through here, from the main thread only.
class OutputDir {
public:
  explicit OutputDir(fs::path root) : root_(std::move(root)) {
    std::error_code ec;
    fs::create_directories(root_, ec);
    if (ec) throw InputError("cannot create output directory " + root_.string() + ": " + ec.message());
  }

  [[nodiscard]] const fs::path& root() const noexcept { return root_; }

  fs::path path(const fs::path& rel) {
    const fs::path p = root_ / rel;
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    files_.push_back(rel.generic_string());
    return p;
  }

  void text(const fs::path& rel, const std::string& content) {
    std::ofstream os(path(rel), std::ios::binary | std::ios::trunc);
    if (!os) throw InputError("cannot create " + (root_ / rel).string());
    os << content;
    if (!os) throw InputError("failed writing " + (root_ / rel).string());
  }

  [[nodiscard]] const std::vector<std::string>& files() const noexcept { return files_; }

private:
  fs::path root_;
  std::vector<std::string> files_;
};

void write_manifest(OutputDir& out, const std::string& command, const std::vector<std::string>& argv,
                    const nlohmann::ordered_json& settings, double wall_seconds, std::size_t jobs) {
  nlohmann::ordered_json m;
  m["tool"] = "tenma";
  m["version"] = std::string(kVersion);
  m["command"] = command;
  m["arguments"] = argv;
  m["settings"] = settings;
  m["signal_catalog_version"] = kSignalCatalogVersion;
  m["eigen_version"] = std::to_string(EIGEN_WORLD_VERSION) + "." + std::to_string(EIGEN_MAJOR_VERSION) + "." +
                       std::to_string(EIGEN_MINOR_VERSION);
#if defined(__clang__)
  m["compiler"] = std::string("clang ") + __clang_version__;
#elif defined(__GNUC__)
  m["compiler"] = std::string("gcc ") + __VERSION__;
#endif
  m["jobs"] = jobs;
  m["wall_time_seconds"] = wall_seconds;
  m["outputs"] = out.files();
  std::ofstream os(out.root() / "manifest.json", std::ios::trunc);
  os << m.dump(2) << '\n';
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string to_csv(const auto& writer) {
  std::ostringstream os;
  writer(os);
  return os.str();
}

void save_dataset(OutputDir& out, const ExperimentPlan& plan) {
  const GeneratedData gen = generate_dataset(plan, 0);
  const fs::path dir = fs::path("data") / ("n" + std::to_string(plan.n_train));
  write_stack(out.path(dir / "train_covariates.tnsr"), gen.train.covariates);
  write_responses(out.path(dir / "train_responses.csv"), gen.train.responses);
  write_stack(out.path(dir / "test_covariates.tnsr"), gen.test.covariates);
  write_responses(out.path(dir / "test_responses.csv"), gen.test.responses);
  write_tensor(out.path(dir / "coefficient.tnsr"), gen.truth.coefficient);
}

int cmd_simulate(const fs::path& config_path, bool save_data, const CommonOptions& common,
                 const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg = load_config(config_path);
  if (common.seed) cfg.plan.base_seed = *common.seed;
  if (save_data) cfg.save_datasets = true;
  cfg.output_dir = resolve_output_dir(cfg, common.out);
  cfg.validate();
  const std::size_t jobs = resolve_jobs(common.jobs);

  OutputDir out(cfg.output_dir);
  std::vector<ExperimentResult> results;
  std::mutex log;
  for (const ExperimentPlan& plan : cfg.plans()) {
    std::cerr << "simulate " << plan.signal << " " << family_token(plan.family) << " n=" << plan.n_train << ": "
              << plan.replications << " replications\n";
    results.push_back(run_experiment(plan, jobs, [&](const ReplicationRecord& r) {
      std::lock_guard lock(log);
      std::cerr << "  replication " << r.replication + 1 << (r.failed ? " failed: " + r.failure : " done") << '\n';
    }));
  }

  out.text("config.resolved.cfg", resolved_config_text(cfg));
  out.text("replications.csv", to_csv([&](std::ostream& os) {
             for (std::size_t k = 0; k < results.size(); ++k) write_replications_csv(os, results[k], k == 0);
           }));
  out.text("aggregate.csv", to_csv([&](std::ostream& os) {
             for (std::size_t k = 0; k < results.size(); ++k) write_aggregate_csv(os, results[k], k == 0);
           }));
  out.text("plot_kl_ratio.csv", to_csv([&](std::ostream& os) { write_sweep_csv(os, results, SweepSeries::kl_ratio); }));
  out.text("plot_trma_error.csv",
           to_csv([&](std::ostream& os) { write_sweep_csv(os, results, SweepSeries::trma_error); }));
  out.text("plot_underfit_weight.csv",
           to_csv([&](std::ostream& os) { write_sweep_csv(os, results, SweepSeries::underfit_weight); }));
  if (cfg.save_datasets)
    for (const ExperimentPlan& plan : cfg.plans()) save_dataset(out, plan);

  nlohmann::ordered_json settings;
  settings["config"] = config_path.string();
  settings["resolved_config"] = "config.resolved.cfg";
  settings["base_seed"] = cfg.plan.base_seed;
  write_manifest(out, "simulate", argv, settings, seconds_since(t0), jobs);
  std::cerr << "wrote " << out.root().string() << '\n';
  return 0;
}

struct FitOptions {
  fs::path covariates;
  fs::path responses;
  std::string family;
  std::string ranks = "1,2,3,4,5";
  std::size_t folds = 5;
  std::optional<fs::path> config;
};

int cmd_fit(const FitOptions& opt, const CommonOptions& common, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  ExperimentConfig cfg;
  if (opt.config) cfg = load_config(*opt.config);
  CandidateOptions cand = cfg.plan.candidates;
  if (common.seed) cand.fit.init_seed = *common.seed;
  const std::size_t jobs = resolve_jobs(common.jobs);
  cand.jobs = jobs;

  std::vector<std::size_t> ranks;
  try {
    for (std::string_view r : split_commas(opt.ranks)) ranks.push_back(detail::to_unsigned(r));
  } catch (const InputError& e) {
    throw InputError(std::string("--ranks: ") + e.what());
  }
  validate_ranks(ranks);

  TensorStack x = read_stack(opt.covariates);
  std::vector<double> y = read_responses(opt.responses);
  if (x.count() != y.size())
    throw InputError("covariate stack holds " + std::to_string(x.count()) + " observations but " +
                     opt.responses.string() + " has " + std::to_string(y.size()) + " responses");
  RegressionData data(std::move(x), std::move(y), make_family(parse_family_kind(opt.family)));
  data.validate();
  if (opt.folds < 2 || opt.folds > data.size()) throw InputError("--folds must be between 2 and n");

  const FoldPlan folds = FoldPlan::make(data.size(), opt.folds,
                                        cfg.plan.shuffle_folds ? std::optional<std::uint64_t>(cand.fit.init_seed)
                                                               : std::nullopt);
  const CandidateSet cs = build_candidates(data, ranks, folds, cand);
  if (data.family.kind == FamilyKind::gaussian)
    data.family = data.family.with_dispersion(estimate_dispersion(cs, data, cfg.plan.df_formula));
  const AveragedModel trma = optimize_weights(cs, data, cfg.plan.optimizer);
  const InformationCriteria ic = information_criteria(cs, data, cfg.plan.df_formula);
  const std::vector<MethodOutcome> outcomes = all_method_weights(cs, ic, trma);
  const ModelFile model = make_model_file(cs, data, ic, outcomes, trma);

  OutputDir out(common.out.value_or("tenma_fit"));
  write_model_file(out.path("model.tenma"), model);
  const Vector theta = predict_theta(model.estimate, data.covariates);
  out.text("fitted.csv", to_csv([&](std::ostream& os) {
             os << "observation,theta,mean\n";
             for (Eigen::Index i = 0; i < theta.size(); ++i)
               os << i + 1 << ',' << exact_number(theta[i]) << ',' << exact_number(mean(data.family, theta[i]))
                  << '\n';
           }));

  nlohmann::ordered_json settings;
  settings["covariates"] = opt.covariates.string();
  settings["responses"] = opt.responses.string();
  settings["family"] = opt.family;
  settings["ranks"] = ranks;
  settings["folds"] = opt.folds;
  settings["init_seed"] = cand.fit.init_seed;
  settings["resolved_config"] = resolved_config_text(cfg);
  write_manifest(out, "fit", argv, settings, seconds_since(t0), jobs);
  for (const MethodWeights& w : model.methods) {
    std::cerr << w.method << ":";
    for (double v : w.weights) std::cerr << ' ' << format_number(v);
    std::cerr << '\n';
  }
  return 0;
}

int cmd_predict(const fs::path& model_path, const fs::path& covariates, const std::string& method,
                const CommonOptions& common, const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  const ModelFile model = read_model_file(model_path);
  const TensorStack x = read_stack(covariates);
  if (x.shape() != model.shape)
    throw InputError("covariates have shape " + x.shape().to_string() + " but the model expects " +
                     model.shape.to_string());
  const Vector theta = predict_theta(model.coefficient(method), x);
  const bool classify = model.family.kind == FamilyKind::bernoulli;

  OutputDir out(common.out.value_or("tenma_predict"));
  out.text("predictions.csv", to_csv([&](std::ostream& os) {
             os << "observation,theta,mean" << (classify ? ",class" : "") << '\n';
             for (Eigen::Index i = 0; i < theta.size(); ++i) {
               const double mu = mean(model.family, theta[i]);
               os << i + 1 << ',' << exact_number(theta[i]) << ',' << exact_number(mu);
               if (classify) os << ',' << (mu > 0.5 ? 1 : 0);
               os << '\n';
             }
           }));
  nlohmann::ordered_json settings;
  settings["model"] = model_path.string();
  settings["covariates"] = covariates.string();
  settings["method"] = method;
  write_manifest(out, "predict", argv, settings, seconds_since(t0), 1);
  return 0;
}

int cmd_signals(const std::vector<std::string>& names, const CommonOptions& common,
                const std::vector<std::string>& argv) {
  const auto t0 = std::chrono::steady_clock::now();
  std::vector<const SignalSpec*> chosen;
  if (names.empty())
    for (const SignalSpec& s : signal_catalog()) chosen.push_back(&s);
  else
    for (const std::string& n : names) chosen.push_back(&find_signal(n));

  OutputDir out(common.out.value_or("tenma_signals"));
  std::ostringstream catalog;
  catalog << "name,shape,cp_rank,matrix_rank,description\n";
  for (const SignalSpec* s : chosen) {
    const DenseTensor b = make_signal(*s);
    write_tensor(out.path(s->name + ".tnsr"), b);
    catalog << s->name << ',' << s->shape.to_string() << ',' << (s->cp_rank ? std::to_string(*s->cp_rank) : "NA")
            << ',' << (s->shape.order() == 2 ? std::to_string(numerical_rank(b)) : "NA") << ",\"" << s->description
            << "\"\n";
  }
  out.text("signals.csv", catalog.str());
  nlohmann::ordered_json settings;
  settings["signals"] = names;
  write_manifest(out, "signals", argv, settings, seconds_since(t0), 1);
  return 0;
}

void add_common(CLI::App* cmd, CommonOptions& common, bool with_jobs, bool with_seed) {
  if (with_jobs)
    cmd->add_option("--jobs", common.jobs, "Worker threads (0 = all logical cores)")->capture_default_str();
  if (with_seed) cmd->add_option("--seed", common.seed, "Override the random seed");
  cmd->add_option("--out", common.out, "Output directory");
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"CP tensor regression with cross-validated model averaging"};
  app.set_version_flag("--version", std::string(kVersion));
  app.require_subcommand(1);

  CommonOptions common;

  fs::path config_path;
  bool save_data = false;
  auto* simulate = app.add_subcommand("simulate", "Run a simulation study from a config file");
  simulate->add_option("--config", config_path, "Experiment config")->required();
  simulate->add_flag("--save-data", save_data, "Also write replication 1 datasets (TNSR + CSV)");
  add_common(simulate, common, true, true);

  FitOptions fit_opt;
  auto* fit = app.add_subcommand("fit", "Fit candidate ranks and average them");
  fit->add_option("--covariates", fit_opt.covariates, "TNSR stack with dims (n, p_1, ..., p_D)")->required();
  fit->add_option("--responses", fit_opt.responses, "One response per line")->required();
  fit->add_option("--family", fit_opt.family, "gaussian | bernoulli | poisson")->required();
  fit->add_option("--ranks", fit_opt.ranks, "Candidate ranks, comma separated")->capture_default_str();
  fit->add_option("--folds", fit_opt.folds, "Cross-validation folds")->capture_default_str();
  fit->add_option("--config", fit_opt.config, "Config whose [fit] and [optimizer] sections apply");
  add_common(fit, common, true, true);

  fs::path model_path;
  fs::path predict_covariates;
  std::string method = "TRMA";
  auto* predict = app.add_subcommand("predict", "Predict from a fitted model");
  predict->add_option("--model", model_path, "Model file written by fit")->required();
  predict->add_option("--covariates", predict_covariates, "TNSR stack")->required();
  predict->add_option("--method", method, "AIC, BIC, SAIC, SBIC, MAX, EQMA or TRMA")->capture_default_str();
  add_common(predict, common, false, false);

  std::vector<std::string> signal_names;
  auto* signals = app.add_subcommand("signals", "Write the signal catalog as TNSR files");
  signals->add_option("names", signal_names, "Signals to write (default: all)");
  add_common(signals, common, false, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    if (*simulate) return cmd_simulate(config_path, save_data, common, args);
    if (*fit) return cmd_fit(fit_opt, common, args);
    if (*predict) return cmd_predict(model_path, predict_covariates, method, common, args);
    if (*signals) return cmd_signals(signal_names, common, args);
  } catch (const InputError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const NumericalError& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return 3;
  } catch (const fs::filesystem_error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 0;
}
