#include "hybridtrial/report.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ostream>

namespace hybridtrial {

namespace {

using nlohmann::ordered_json;

ordered_json real_or_null(double value) {
  if (!std::isfinite(value)) return nullptr;
  return value;
}

template <typename T>
ordered_json optional_json(const std::optional<T>& value) {
  if (!value) return nullptr;
  return *value;
}

ordered_json real_or_null(const std::optional<double>& value) {
  return value ? real_or_null(*value) : ordered_json(nullptr);
}

std::string optional_real(const std::optional<double>& value) {
  return value ? format_real(*value) : "NA";
}

void seed_line(std::ostream& out, std::uint64_t seed) { out << "# seed=" << seed << '\n'; }

ordered_json metrics_json(const Metrics& m) {
  ordered_json j;
  j["bias"] = real_or_null(m.bias);
  j["sd"] = real_or_null(m.sd);
  j["mse"] = real_or_null(m.mse);
  j["rejection_rate"] = real_or_null(m.rejection_rate);
  j["rejection_se"] = real_or_null(m.rejection_se);
  j["mean_n_borrowed"] = real_or_null(m.mean_n_borrowed);
  j["mean_frac_biased_borrowed"] = real_or_null(m.mean_frac_biased_borrowed);
  j["mean_frac_unbiased_borrowed"] = real_or_null(m.mean_frac_unbiased_borrowed);
  j["mean_gamma"] = real_or_null(m.mean_gamma);
  j["replications"] = m.replications;
  j["failures"] = m.failures;
  return j;
}

ordered_json scenario_json(const ScenarioConfig& raw) {
  const ScenarioConfig c = raw.resolved();
  auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  ordered_json j;
  j["n1"] = c.n1;
  j["n0"] = c.n0;
  j["nE"] = c.nE;
  j["p"] = c.p;
  j["covariate_law"] = to_string(c.covariate_law);
  if (c.covariate_law == CovariateLaw::GaussianToeplitz) j["toeplitz_rho"] = c.toeplitz_rho;
  j["eta"] = vec(c.eta);
  j["tau0"] = c.tau0;
  j["beta0"] = vec(c.beta0);
  j["beta1"] = vec(c.beta1);
  j["bias_b"] = c.bias_b;
  j["biased_fraction"] = c.biased_fraction;
  j["ec_noise_scale"] = c.ec_noise_scale;
  j["hypothesis"] = to_string(c.hypothesis);
  j["seed"] = c.seed;
  return j;
}

}  // namespace

std::string format_real(double value) {
  if (std::isnan(value)) return "NA";
  if (std::isinf(value)) return value > 0 ? "Inf" : "-Inf";
  char buffer[40];
  std::snprintf(buffer, sizeof buffer, "%.17g", value);
  return buffer;
}

std::string to_string(Hypothesis hypothesis) {
  return hypothesis == Hypothesis::SharpNull ? "sharp_null" : "alternative";
}

std::string to_string(CovariateLaw law) {
  return law == CovariateLaw::Uniform ? "uniform" : "gaussian_toeplitz";
}

void write_analysis_json(std::ostream& out, const AnalysisReport& report) {
  ordered_json j;
  j["seed"] = report.seed;
  j["alpha"] = report.alpha;
  j["B"] = report.B;
  j["L"] = report.L;
  j["n_treated"] = report.n_treated;
  j["n_rct_controls"] = report.n_rct_controls;
  j["n_external"] = report.n_external;
  ordered_json rows = ordered_json::array();
  for (const AnalysisRow& row : report.rows) {
    const Estimate& e = row.estimate;
    ordered_json r;
    r["method"] = row.method;
    r["est"] = real_or_null(e.value);
    r["se"] = real_or_null(e.se_bootstrap);
    r["ci_lo"] = e.ci ? real_or_null(e.ci->first) : ordered_json(nullptr);
    r["ci_hi"] = e.ci ? real_or_null(e.ci->second) : ordered_json(nullptr);
    r["exact_p"] = real_or_null(row.exact_p);
    r["observed_stat"] = row.exact_p ? real_or_null(row.observed_stat) : ordered_json(nullptr);
    r["n_borrowed"] = e.n_borrowed;
    r["gamma_used"] = optional_json(e.gamma_used);
    r["selected_ids"] = row.selected_ids;
    rows.push_back(std::move(r));
  }
  j["estimators"] = std::move(rows);
  out << j.dump(2) << '\n';
}

void write_analysis_csv(std::ostream& out, const AnalysisReport& report) {
  seed_line(out, report.seed);
  out << "method,est,se,ci_lo,ci_hi,exact_p,B,n_borrowed,gamma_used\n";
  for (const AnalysisRow& row : report.rows) {
    const Estimate& e = row.estimate;
    out << row.method << ',' << format_real(e.value) << ',' << optional_real(e.se_bootstrap) << ','
        << (e.ci ? format_real(e.ci->first) : "NA") << ','
        << (e.ci ? format_real(e.ci->second) : "NA") << ',' << optional_real(row.exact_p) << ','
        << (row.exact_p ? std::to_string(report.B) : "NA") << ',' << e.n_borrowed << ','
        << optional_real(e.gamma_used) << '\n';
  }
}

void write_conformal_json(std::ostream& out, const TrialData& data, const IndexSets& sets,
                          const ConformalReport& report, std::uint64_t seed) {
  ordered_json j;
  j["seed"] = seed;
  j["method"] = report.method.name();
  if (report.method.kind == ConformalMethod::Kind::CVPlus) j["folds"] = report.method.folds;
  j["gamma"] = report.gamma;
  j["reference_size"] = report.calibration_size;
  IndexList selected = report.selected;
  std::sort(selected.begin(), selected.end());
  ordered_json units = ordered_json::array();
  for (std::size_t k = 0; k < sets.external.size(); ++k) {
    const Index row = sets.external[k];
    ordered_json u;
    u["unit_id"] = data.unit_id(row);
    u["p_value"] = real_or_null(report.pvalues[static_cast<Index>(k)]);
    u["score"] = real_or_null(report.scores_ec[static_cast<Index>(k)]);
    u["selected"] = std::binary_search(selected.begin(), selected.end(), row);
    units.push_back(std::move(u));
  }
  j["n_selected"] = report.selected.size();
  j["external_controls"] = std::move(units);
  out << j.dump(2) << '\n';
}

void write_ec_diagnostics_csv(std::ostream& out, const TrialData& data, const IndexSets& sets,
                              const ConformalPValues& pvalues, const std::vector<double>& grid,
                              std::uint64_t seed) {
  seed_line(out, seed);
  out << "unit_id,p_value,score";
  for (const double g : grid) out << ",selected_" << format_real(g);
  out << '\n';
  for (std::size_t k = 0; k < sets.external.size(); ++k) {
    const double p = pvalues.pvalues[static_cast<Index>(k)];
    out << data.unit_id(sets.external[k]) << ',' << format_real(p) << ','
        << format_real(pvalues.scores[static_cast<Index>(k)]);
    for (const double g : grid) out << ',' << (p > g ? 1 : 0);
    out << '\n';
  }
}

void write_mse_profile_csv(std::ostream& out, const MseProfile& profile, std::uint64_t seed) {
  seed_line(out, seed);
  out << "# gamma_hat=" << format_real(profile.gamma_star) << " L=" << profile.bootstrap_count << '\n';
  out << "gamma,tau_hat,var_diff,var_gamma,mse_hat,selected\n";
  for (std::size_t g = 0; g < profile.grid.size(); ++g) {
    const auto i = static_cast<Index>(g);
    out << format_real(profile.grid[g]) << ',' << format_real(profile.tau_hat[i]) << ','
        << format_real(profile.var_diff[i]) << ',' << format_real(profile.var_gamma[i]) << ','
        << format_real(profile.mse_hat[i]) << ',' << (profile.grid[g] == profile.gamma_star ? 1 : 0)
        << '\n';
  }
}

void write_replications_csv(std::ostream& out, const std::vector<ScenarioRun>& runs,
                            std::uint64_t seed) {
  seed_line(out, seed);
  out << "scenario,bias_b,tau0,hypothesis,replication,method,truth,estimate,p,n_borrowed,gamma,"
         "frac_biased_borrowed,frac_unbiased_borrowed,error\n";
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const ScenarioConfig& c = runs[s].scenario;
    for (const ReplicationRecord& r : runs[s].result.records) {
      out << s << ',' << format_real(c.bias_b) << ',' << format_real(c.tau0) << ','
          << to_string(c.hypothesis) << ',' << r.replication << ',' << r.method << ','
          << format_real(r.truth) << ',' << format_real(r.estimate) << ','
          << format_real(r.p_value) << ',' << r.n_borrowed << ',' << optional_real(r.gamma) << ','
          << format_real(r.frac_biased_borrowed) << ',' << format_real(r.frac_unbiased_borrowed)
          << ',' << (r.error ? "\"" + *r.error + "\"" : std::string()) << '\n';
    }
  }
}

void write_metrics_csv(std::ostream& out, const std::vector<ScenarioRun>& runs, double alpha,
                       std::uint64_t seed) {
  seed_line(out, seed);
  out << "scenario,bias_b,tau0,hypothesis,method,alpha,bias,sd,mse,rejection_rate,rejection_se,"
         "mean_n_borrowed,mean_frac_biased_borrowed,mean_frac_unbiased_borrowed,mean_gamma,"
         "replications,failures\n";
  for (std::size_t s = 0; s < runs.size(); ++s) {
    const ScenarioConfig& c = runs[s].scenario;
    for (const MethodMetrics& mm : runs[s].result.metrics) {
      const Metrics& m = mm.metrics;
      out << s << ',' << format_real(c.bias_b) << ',' << format_real(c.tau0) << ','
          << to_string(c.hypothesis) << ',' << mm.method << ',' << format_real(alpha) << ','
          << format_real(m.bias) << ',' << format_real(m.sd) << ',' << format_real(m.mse) << ','
          << format_real(m.rejection_rate) << ',' << format_real(m.rejection_se) << ','
          << format_real(m.mean_n_borrowed) << ',' << format_real(m.mean_frac_biased_borrowed)
          << ',' << format_real(m.mean_frac_unbiased_borrowed) << ','
          << format_real(m.mean_gamma) << ',' << m.replications << ',' << m.failures << '\n';
    }
  }
}

void write_metrics_json(std::ostream& out, const std::vector<ScenarioRun>& runs, double alpha,
                        std::uint64_t seed) {
  ordered_json j;
  j["seed"] = seed;
  j["alpha"] = alpha;
  ordered_json scenarios = ordered_json::array();
  for (const ScenarioRun& run : runs) {
    ordered_json s;
    s["scenario"] = scenario_json(run.scenario);
    ordered_json methods = ordered_json::array();
    for (const MethodMetrics& mm : run.result.metrics) {
      ordered_json m = metrics_json(mm.metrics);
      m["method"] = mm.method;
      methods.push_back(std::move(m));
    }
    s["methods"] = std::move(methods);
    scenarios.push_back(std::move(s));
  }
  j["scenarios"] = std::move(scenarios);
  out << j.dump(2) << '\n';
}

void write_error_json(std::ostream& out, const std::string& code, const std::string& message) {
  ordered_json j;
  j["error"] = {{"code", code}, {"message", message}};
  out << j.dump(2) << '\n';
}

}  // namespace hybridtrial
