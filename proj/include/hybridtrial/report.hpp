#pragma once

#include "hybridtrial/adaptive.hpp"
#include "hybridtrial/conformal.hpp"
#include "hybridtrial/data.hpp"
#include "hybridtrial/estimators.hpp"
#include "hybridtrial/frt.hpp"
#include "hybridtrial/simlab.hpp"

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace hybridtrial {

// Writers for every file the command-line tool produces. CSV files start with
// a "# seed=..." comment line; JSON documents carry a "seed" field. Reals are
// printed with 17 significant digits (NA / null when undefined), so outputs
// round-trip and diff cleanly.

std::string format_real(double value);

struct AnalysisRow {
  std::string method;
  Estimate estimate;
  std::vector<std::string> selected_ids;
  std::optional<double> exact_p;
  double observed_stat = 0.0;
};

struct AnalysisReport {
  std::uint64_t seed = 0;
  double alpha = 0.05;
  int B = 0;
  int L = 0;
  Index n_treated = 0;
  Index n_rct_controls = 0;
  Index n_external = 0;
  std::vector<AnalysisRow> rows;
};

void write_analysis_json(std::ostream& out, const AnalysisReport& report);
void write_analysis_csv(std::ostream& out, const AnalysisReport& report);

/// Per-external conformal p-values, scores and selection at the report's gamma.
void write_conformal_json(std::ostream& out, const TrialData& data, const IndexSets& sets,
                          const ConformalReport& report, std::uint64_t seed);

/// One row per external control: id, p-value, score, and a selected flag at
/// every threshold of the grid.
void write_ec_diagnostics_csv(std::ostream& out, const TrialData& data, const IndexSets& sets,
                              const ConformalPValues& pvalues, const std::vector<double>& grid,
                              std::uint64_t seed);

void write_mse_profile_csv(std::ostream& out, const MseProfile& profile, std::uint64_t seed);

struct ScenarioRun {
  ScenarioConfig scenario;
  SimulationResult result;
};

void write_replications_csv(std::ostream& out, const std::vector<ScenarioRun>& runs,
                            std::uint64_t seed);
void write_metrics_csv(std::ostream& out, const std::vector<ScenarioRun>& runs, double alpha,
                       std::uint64_t seed);
void write_metrics_json(std::ostream& out, const std::vector<ScenarioRun>& runs, double alpha,
                        std::uint64_t seed);

void write_error_json(std::ostream& out, const std::string& code, const std::string& message);

std::string to_string(Hypothesis hypothesis);
std::string to_string(CovariateLaw law);

}  // namespace hybridtrial
