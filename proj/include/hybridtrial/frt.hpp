#pragma once

#include "hybridtrial/data.hpp"
#include "hybridtrial/estimators.hpp"
#include "hybridtrial/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <functional>
#include <optional>
#include <vector>

namespace hybridtrial {

struct FrtConfig {
  int B = 5000;
  // The test statistic is |tau_hat| of this estimator.
  EstimatorSpec statistic = EstimatorSpec::no_borrow();
  // Rerun the adaptive threshold search inside every resample instead of
  // fixing the threshold chosen on the observed data.
  bool recompute_threshold = false;
  std::uint64_t seed = kDefaultSeed;
  unsigned threads = 1;
  int redraw_budget = 10;
};

struct FrtResult {
  double observed_stat = 0.0;
  Estimate observed;
  std::vector<double> resample_stats;
  double p_value = 1.0;
  std::optional<std::vector<double>> gamma_per_resample;
  int B = 0;
  std::uint64_t seed = 0;
};

/// (#{stats >= observed} + 1) / (B + 1).
double frt_pvalue(double observed, const std::vector<double>& resample_stats);

/// Fresh Bernoulli draw for randomized units; externals stay at 0. Draws with
/// an empty treated or control group are redrawn.
Eigen::VectorXi resample_assignment(const DesignSpec& design, const IndexSets& sets, Index n,
                                    Rng& rng);

/// Monte Carlo Fisher randomization test of the sharp null. Every resample
/// recomputes the statistic from scratch, conformal selection included.
FrtResult run_frt(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                  const FrtConfig& config);

using Statistic = std::function<double(const TrialData&, const IndexSets&)>;

/// |tau_hat| of the spec, with the conformal randomness seeded identically on
/// every call so the statistic is a deterministic function of the data.
Statistic make_statistic(const EstimatorSpec& spec, const DesignSpec& design, std::uint64_t seed);

struct EnumerationResult {
  double p_value = 1.0;
  double observed_stat = 0.0;
  std::vector<Eigen::VectorXi> assignments;  // the reference set actually used
  std::vector<double> statistics;
  std::vector<double> weights;  // design probabilities, normalized over the reference set
  std::vector<double> pvalues;  // p-value each assignment would receive
  // Assignments with T' >= T for each reference assignment; used for exact
  // integer comparisons when the weights are uniform.
  std::vector<std::size_t> count_at_least;
  std::size_t excluded_degenerate = 0;
  std::size_t excluded_failed = 0;
  bool uniform = false;

  std::size_t reference_size() const { return statistics.size(); }

  /// P(p <= alpha) over the reference distribution.
  double rejection_probability(double alpha) const;
  /// Number of reference assignments with p <= alpha (uniform weights only).
  std::size_t rejection_count(double alpha) const;
  bool statistics_distinct() const;
};

/// Exact test by enumerating every assignment of the randomized units.
/// All-treated and all-control assignments are excluded, as are assignments
/// on which the statistic cannot be computed; both counts are reported.
EnumerationResult enumerate_frt(const TrialData& data, const IndexSets& sets,
                                const DesignSpec& design, const Statistic& statistic);

}  // namespace hybridtrial
