#include "hybridtrial/cli.hpp"

#include "hybridtrial/adaptive.hpp"
#include "hybridtrial/conformal.hpp"
#include "hybridtrial/data.hpp"
#include "hybridtrial/error.hpp"
#include "hybridtrial/estimators.hpp"
#include "hybridtrial/frt.hpp"
#include "hybridtrial/report.hpp"
#include "hybridtrial/simlab.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <ostream>
#include <sstream>

namespace hybridtrial {

namespace {

namespace fs = std::filesystem;
using nlohmann::json;

// Failure carrying a code string, for errors that do not originate in the
// library (validation summaries, config parsing).
struct CliFailure {
  std::string code;
  std::string message;
};

struct Flags {
  std::string input;
  std::string scenario;
  std::string out;
  std::string config;
  std::string validation_report;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 0;
  double alpha = 0.05;
  int B = 0;
  int L = 100;
  int replications = 500;
  std::string gamma = "adaptive";
  std::vector<std::string> methods;
  std::string conformal = "cv+";
  int folds = 10;
  double prob = 0.5;
  bool recompute_threshold = false;
  std::string outcome_col = "y";
  std::string assignment_col = "a";
  std::string sample_col = "s";
  std::string id_col;
  std::vector<std::string> covariate_cols;
};

// Resolves a setting: explicit flag, then config file, then fallback.
class Settings {
 public:
  Settings(const CLI::App* app, json config) : app_(app), config_(std::move(config)) {}

  bool explicit_flag(const std::string& name) const {
    return app_->get_option_no_throw("--" + name) != nullptr &&
           app_->get_option("--" + name)->count() > 0;
  }
  bool in_config(const std::string& key) const { return config_.contains(key); }
  const json& config() const { return config_; }

  template <typename T>
  T get(const std::string& name, const T& flag_value, const T& fallback) const {
    if (explicit_flag(name)) return flag_value;
    if (in_config(name)) {
      try {
        return config_.at(name).get<T>();
      } catch (const json::exception& e) {
        throw CliFailure{"InvalidArgument", "config key '" + name + "': " + e.what()};
      }
    }
    return fallback;
  }

  std::vector<std::string> methods(const std::vector<std::string>& flag_value,
                                   std::vector<std::string> fallback) const {
    if (explicit_flag("method")) return flag_value;
    if (in_config("method")) {
      const json& m = config_.at("method");
      if (m.is_string()) return {m.get<std::string>()};
      return get<std::vector<std::string>>("method", flag_value, fallback);
    }
    return fallback;
  }

  unsigned threads(unsigned flag_value) const {
    if (explicit_flag("threads")) return flag_value;
    if (in_config("threads")) return get<unsigned>("threads", flag_value, 0);
    if (const char* env = std::getenv("HYBRIDTRIAL_THREADS"); env && *env) {
      try {
        return static_cast<unsigned>(std::stoul(env));
      } catch (const std::exception&) {
        throw CliFailure{"InvalidArgument", "HYBRIDTRIAL_THREADS must be a count"};
      }
    }
    return 0;
  }

 private:
  const CLI::App* app_;
  json config_;
};

json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw CliFailure{"InvalidArgument", path + ": " + e.what()};
  }
}

void write_file(const fs::path& path, const std::function<void(std::ostream&)>& body,
                std::vector<std::string>& written) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path.string());
  body(out);
  out.close();
  if (!out) throw Error(ErrorCode::Io, "failed writing " + path.string());
  written.push_back(path.string());
}

ColumnSchema make_schema(const Settings& s, const Flags& f) {
  ColumnSchema schema;
  schema.outcome = s.get("outcome-col", f.outcome_col, schema.outcome);
  schema.assignment = s.get("assignment-col", f.assignment_col, schema.assignment);
  schema.sample = s.get("sample-col", f.sample_col, schema.sample);
  schema.covariates = s.get("covariate-cols", f.covariate_cols, schema.covariates);
  const std::string id = s.get("id-col", f.id_col, std::string());
  if (!id.empty()) schema.id_column = id;
  return schema;
}

TrialData load_validated(const std::string& path, const ColumnSchema& schema,
                         const std::string& report_path, std::vector<std::string>& written) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  const std::vector<ValidationIssue> issues = validate_dataset(in, schema);
  if (!report_path.empty()) {
    // JSON lines: one object per issue; an empty file means the input is valid.
    write_file(report_path, [&](std::ostream& out) {
      for (const auto& issue : issues) {
        nlohmann::ordered_json j;
        j["row"] = issue.row;
        j["column"] = issue.column;
        j["code"] = issue.code;
        j["message"] = issue.message;
        out << j.dump() << '\n';
      }
    }, written);
  }
  if (!issues.empty()) {
    throw CliFailure{issues.front().code, std::to_string(issues.size()) +
                                              " validation issue(s); first: " +
                                              issues.front().message};
  }
  return load_dataset_file(path, schema);
}

ConformalMethod make_conformal(const Settings& s, const Flags& f) {
  return ConformalMethod::parse(s.get("conformal", f.conformal, std::string("cv+")),
                                s.get("folds", f.folds, 10));
}

std::vector<EstimatorSpec> make_specs(const std::vector<std::string>& names,
                                      const std::string& gamma, const ConformalMethod& method,
                                      int L) {
  std::vector<EstimatorSpec> specs;
  for (const std::string& name : names) {
    if (name == "difmeans") specs.push_back(EstimatorSpec::difmeans());
    else if (name == "nb") specs.push_back(EstimatorSpec::no_borrow());
    else if (name == "fb") specs.push_back(EstimatorSpec::full_borrow());
    else if (name == "csb") {
      if (gamma == "adaptive") {
        AdaptiveConfig adaptive;
        adaptive.bootstrap_count = L;
        specs.push_back(EstimatorSpec::selective_adaptive(method, adaptive));
      } else {
        double g = 0.0;
        try {
          std::size_t used = 0;
          g = std::stod(gamma, &used);
          if (used != gamma.size()) throw std::invalid_argument(gamma);
        } catch (const std::exception&) {
          throw CliFailure{"InvalidArgument", "--gamma must be a number in [0, 1] or 'adaptive'"};
        }
        specs.push_back(EstimatorSpec::selective(g, method));
      }
    } else {
      throw CliFailure{"InvalidArgument", "unknown method '" + name + "'"};
    }
  }
  if (specs.empty()) throw CliFailure{"InvalidArgument", "no methods requested"};
  return specs;
}

// The config file may give the threshold as a number or as "adaptive".
std::string gamma_setting(const Settings& s, const Flags& f) {
  if (!s.explicit_flag("gamma") && s.config().contains("gamma") && s.config().at("gamma").is_number()) {
    return format_real(s.config().at("gamma").get<double>());
  }
  return s.get("gamma", f.gamma, std::string("adaptive"));
}

DesignSpec make_design(const Settings& s, const Flags& f, const IndexSets& sets) {
  const double observed = static_cast<double>(sets.treated.size()) /
                          static_cast<double>(sets.rct_all.size());
  return DesignSpec::bernoulli(s.get("prob", f.prob, observed));
}

std::vector<std::string> cmd_analyze(const Settings& s, const Flags& f, const fs::path& out_dir) {
  std::vector<std::string> written;
  const std::string input = s.get("input", f.input, std::string());
  if (input.empty()) throw CliFailure{"InvalidArgument", "analyze needs --input"};
  const TrialData data = load_validated(input, make_schema(s, f),
                                        s.get("validation-report", f.validation_report, std::string()),
                                        written);
  const IndexSets sets = partition(data);
  const DesignSpec design = make_design(s, f, sets);
  const std::uint64_t seed = s.get("seed", f.seed, kDefaultSeed);
  const unsigned threads = s.threads(f.threads);
  const int B = s.get("B", f.B, 5000);
  const int L = s.get("L", f.L, 100);
  const ConformalMethod method = make_conformal(s, f);
  const std::vector<EstimatorSpec> specs =
      make_specs(s.methods(f.methods, {"nb", "fb", "csb"}), gamma_setting(s, f),
                 method, L);

  AnalysisReport report;
  report.seed = seed;
  report.alpha = s.get("alpha", f.alpha, 0.05);
  report.B = B;
  report.L = L;
  report.n_treated = static_cast<Index>(sets.treated.size());
  report.n_rct_controls = static_cast<Index>(sets.rct_controls.size());
  report.n_external = static_cast<Index>(sets.external.size());

  std::optional<ConformalReport> conformal;
  for (std::size_t m = 0; m < specs.size(); ++m) {
    const EstimatorSpec& spec = specs[m];
    AnalysisRow row;
    row.method = spec.name();
    if (B > 0) {
      FrtConfig frt;
      frt.B = B;
      frt.statistic = spec;
      frt.seed = seed;
      frt.threads = threads;
      const FrtResult res = run_frt(data, sets, design, frt);
      row.estimate = res.observed;
      row.exact_p = res.p_value;
      row.observed_stat = res.observed_stat;
    } else {
      Rng rng = make_rng(seed, Stream::Observed);
      row.estimate = evaluate(spec, data, sets, design, rng);
    }
    if (L > 0) {
      Rng rng = make_rng(seed, Stream::Bootstrap, m);
      const BootstrapSummary boot =
          bootstrap_se_ci(data, sets, design, spec, row.estimate.value, L, rng, threads);
      row.estimate.se_bootstrap = boot.se;
      row.estimate.ci = boot.ci;
    }
    row.selected_ids = data.unit_ids(row.estimate.selected);
    if (spec.kind == EstimatorSpec::Kind::ConformalSelective && !conformal && !sets.external.empty()) {
      // Same seed stream as the estimate, so these are the p-values it used.
      Rng rng = make_rng(seed, Stream::Observed);
      conformal = make_conformal_report(data, sets, spec.conformal,
                                        row.estimate.gamma_used.value_or(0.0), rng);
    }
    report.rows.push_back(std::move(row));
  }

  write_file(out_dir / "report.json", [&](std::ostream& o) { write_analysis_json(o, report); }, written);
  write_file(out_dir / "report.csv", [&](std::ostream& o) { write_analysis_csv(o, report); }, written);
  if (conformal) {
    write_file(out_dir / "conformal_report.json",
               [&](std::ostream& o) { write_conformal_json(o, data, sets, *conformal, seed); }, written);
  }
  return written;
}

Hypothesis parse_hypothesis(const std::string& name) {
  if (name == "sharp_null" || name == "null") return Hypothesis::SharpNull;
  if (name == "alternative") return Hypothesis::Alternative;
  throw CliFailure{"InvalidArgument", "hypothesis must be 'sharp_null' or 'alternative'"};
}

template <typename T>
std::vector<T> as_list(const json& j) {
  if (j.is_array()) return j.get<std::vector<T>>();
  return {j.get<T>()};
}

Eigen::VectorXd as_vector(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Index>(v.size()));
}

// A scenario file holds one scenario; bias_b, tau0 and hypothesis may be lists,
// expanded as a grid (hypothesis outermost).
std::vector<ScenarioConfig> parse_scenarios(const json& j) {
  try {
    ScenarioConfig base;
    if (j.contains("n1")) base.n1 = j.at("n1").get<Index>();
    if (j.contains("n0")) base.n0 = j.at("n0").get<Index>();
    if (j.contains("nE")) base.nE = j.at("nE").get<Index>();
    if (j.contains("p")) base.p = j.at("p").get<Index>();
    if (j.contains("covariate_law")) {
      const auto law = j.at("covariate_law").get<std::string>();
      if (law == "uniform") base.covariate_law = CovariateLaw::Uniform;
      else if (law == "gaussian_toeplitz") base.covariate_law = CovariateLaw::GaussianToeplitz;
      else throw CliFailure{"InvalidArgument", "covariate_law must be 'uniform' or 'gaussian_toeplitz'"};
    }
    if (j.contains("toeplitz_rho")) base.toeplitz_rho = j.at("toeplitz_rho").get<double>();
    if (j.contains("eta")) base.eta = as_vector(j.at("eta"));
    if (j.contains("beta0")) base.beta0 = as_vector(j.at("beta0"));
    if (j.contains("beta1")) base.beta1 = as_vector(j.at("beta1"));
    if (j.contains("biased_fraction")) base.biased_fraction = j.at("biased_fraction").get<double>();
    if (j.contains("ec_noise_scale")) base.ec_noise_scale = j.at("ec_noise_scale").get<double>();

    const std::vector<std::string> hyps =
        j.contains("hypothesis") ? as_list<std::string>(j.at("hypothesis"))
                                 : std::vector<std::string>{"alternative"};
    const std::vector<double> biases =
        j.contains("bias_b") ? as_list<double>(j.at("bias_b")) : std::vector<double>{0.0};
    const std::vector<double> taus =
        j.contains("tau0") ? as_list<double>(j.at("tau0")) : std::vector<double>{base.tau0};

    std::vector<ScenarioConfig> out;
    for (const std::string& h : hyps)
      for (const double b : biases)
        for (const double t : taus) {
          ScenarioConfig c = base;
          c.hypothesis = parse_hypothesis(h);
          c.bias_b = b;
          c.tau0 = t;
          c.resolved();
          out.push_back(std::move(c));
        }
    return out;
  } catch (const json::exception& e) {
    throw CliFailure{"InvalidArgument", std::string("scenario file: ") + e.what()};
  }
}

std::vector<std::string> cmd_simulate(const Settings& s, const Flags& f, const fs::path& out_dir) {
  std::vector<std::string> written;
  const std::uint64_t seed = s.get("seed", f.seed, kDefaultSeed);
  const ConformalMethod method = make_conformal(s, f);
  const int L = s.get("L", f.L, 100);

  SimulationConfig sim;
  sim.replications = s.get("replications", f.replications, 500);
  sim.B = s.get("B", f.B, 1000);
  sim.alpha = s.get("alpha", f.alpha, 0.05);
  sim.threads = s.threads(f.threads);
  sim.recompute_threshold = s.get("recompute-threshold", f.recompute_threshold, false);
  sim.methods = make_specs(s.methods(f.methods, {"nb", "fb", "csb"}),
                           gamma_setting(s, f), method, L);

  std::vector<ScenarioRun> runs;
  for (ScenarioConfig scenario : parse_scenarios(s.config())) {
    scenario.seed = seed;
    sim.scenario = scenario;
    runs.push_back({scenario, run_replications(sim)});
  }

  write_file(out_dir / "replications.csv", [&](std::ostream& o) { write_replications_csv(o, runs, seed); },
             written);
  write_file(out_dir / "metrics.csv",
             [&](std::ostream& o) { write_metrics_csv(o, runs, sim.alpha, seed); }, written);
  write_file(out_dir / "metrics.json",
             [&](std::ostream& o) { write_metrics_json(o, runs, sim.alpha, seed); }, written);
  return written;
}

std::vector<std::string> cmd_diagnose(const Settings& s, const Flags& f, const fs::path& out_dir) {
  std::vector<std::string> written;
  const std::string input = s.get("input", f.input, std::string());
  if (input.empty()) throw CliFailure{"InvalidArgument", "diagnose needs --input"};
  const TrialData data = load_validated(input, make_schema(s, f),
                                        s.get("validation-report", f.validation_report, std::string()),
                                        written);
  const IndexSets sets = partition(data);
  if (sets.external.empty()) throw Error(ErrorCode::EmptyGroup, "dataset has no external controls");
  const DesignSpec design = make_design(s, f, sets);
  const std::uint64_t seed = s.get("seed", f.seed, kDefaultSeed);
  const ConformalMethod method = make_conformal(s, f);
  AdaptiveConfig adaptive;
  adaptive.bootstrap_count = s.get("L", f.L, 100);

  Rng rng = make_rng(seed, Stream::Observed);
  const ConformalPValues pvalues = conformal_pvalues(data, sets, method, rng);
  // A fresh stream reproduces the same p-values inside the threshold search.
  Rng search_rng = make_rng(seed, Stream::Observed);
  const AdaptiveResult result = adaptive_estimate(data, sets, design, method, adaptive, search_rng,
                                                  {}, s.threads(f.threads));

  write_file(out_dir / "ec_diagnostics.csv",
             [&](std::ostream& o) { write_ec_diagnostics_csv(o, data, sets, pvalues, adaptive.grid, seed); },
             written);
  write_file(out_dir / "mse_profile.csv",
             [&](std::ostream& o) { write_mse_profile_csv(o, result.profile, seed); }, written);
  write_file(out_dir / "diagnose.json", [&](std::ostream& o) {
    nlohmann::ordered_json j;
    j["seed"] = seed;
    j["conformal"] = method.name();
    j["L"] = adaptive.bootstrap_count;
    j["gamma_hat"] = result.profile.gamma_star;
    j["estimate"] = result.estimate.value;
    j["n_borrowed"] = result.estimate.n_borrowed;
    j["selected_ids"] = data.unit_ids(result.estimate.selected);
    o << j.dump(2) << '\n';
  }, written);
  return written;
}

void add_common(CLI::App* sub, Flags& f) {
  sub->add_option("--out", f.out, "Output directory")->required();
  sub->add_option("--config", f.config, "JSON config file; explicit flags take precedence");
  sub->add_option("--seed", f.seed, "Base seed");
  sub->add_option("--threads", f.threads, "Worker threads (0 = all cores)");
  sub->add_option("--alpha", f.alpha, "Test level");
  sub->add_option("--B", f.B, "Randomization resamples");
  sub->add_option("--L", f.L, "Bootstrap replicates");
  sub->add_option("--gamma", f.gamma, "Selection threshold in [0, 1] or 'adaptive'");
  sub->add_option("--method", f.methods, "difmeans | nb | fb | csb (repeatable)");
  sub->add_option("--conformal", f.conformal, "split | full | cv+ | jackknife+");
  sub->add_option("--folds", f.folds, "Folds for cv+");
}

void add_data(CLI::App* sub, Flags& f) {
  sub->add_option("--input", f.input, "Dataset CSV");
  sub->add_option("--validation-report", f.validation_report, "Write dataset validation JSON here");
  sub->add_option("--prob", f.prob, "Treatment probability of the Bernoulli design (default: observed)");
  sub->add_option("--outcome-col", f.outcome_col, "Outcome column");
  sub->add_option("--assignment-col", f.assignment_col, "Assignment column");
  sub->add_option("--sample-col", f.sample_col, "Sample indicator column (1 = RCT)");
  sub->add_option("--id-col", f.id_col, "Unit id column");
  sub->add_option("--covariate-cols", f.covariate_cols, "Covariate columns (default: all others)")
      ->delimiter(',');
}

void report_failure(std::ostream& err, const fs::path& out_dir, const std::string& code,
                    const std::string& message) {
  std::ostringstream doc;
  write_error_json(doc, code, message);
  err << doc.str();
  if (!out_dir.empty() && fs::is_directory(out_dir)) {
    std::ofstream file(out_dir / "error.json", std::ios::binary);
    file << doc.str();
  }
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Randomization inference for hybrid controlled trials with external controls"};
  app.require_subcommand(1);
  Flags f;
  CLI::App* analyze = app.add_subcommand("analyze", "Estimate, test and report on a dataset");
  CLI::App* simulate = app.add_subcommand("simulate", "Run a simulation study");
  CLI::App* diagnose = app.add_subcommand("diagnose", "Per-external conformal diagnostics");
  for (CLI::App* sub : {analyze, simulate, diagnose}) add_common(sub, f);
  add_data(analyze, f);
  add_data(diagnose, f);
  simulate->add_option("--scenario", f.scenario, "Scenario JSON file")->required();
  simulate->add_option("--replications,-R", f.replications, "Replications per scenario");
  simulate->add_flag("--recompute-threshold", f.recompute_threshold,
                     "Rerun the adaptive threshold search in every resample");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e, out, err);
  }

  const fs::path out_dir = f.out;
  try {
    CLI::App* sub = app.get_subcommands().front();
    json config = json::object();
    if (sub == simulate) config = read_json_file(f.scenario);
    if (!f.config.empty()) config.update(read_json_file(f.config));
    const Settings settings(sub, std::move(config));

    fs::create_directories(out_dir);
    std::vector<std::string> written;
    if (sub == analyze) written = cmd_analyze(settings, f, out_dir);
    else if (sub == simulate) written = cmd_simulate(settings, f, out_dir);
    else written = cmd_diagnose(settings, f, out_dir);
    for (const std::string& path : written) out << "wrote " << path << '\n';
    return 0;
  } catch (const Error& e) {
    report_failure(err, out_dir, std::string(to_string(e.code())), e.what());
  } catch (const CliFailure& e) {
    report_failure(err, out_dir, e.code, e.message);
  } catch (const std::exception& e) {
    report_failure(err, out_dir, "Internal", e.what());
  }
  return 2;
}

}  // namespace hybridtrial
