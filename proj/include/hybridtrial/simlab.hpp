#pragma once

#include "hybridtrial/data.hpp"
#include "hybridtrial/estimators.hpp"
#include "hybridtrial/random.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace hybridtrial {

enum class CovariateLaw { Uniform, GaussianToeplitz };
enum class Hypothesis { SharpNull, Alternative };

/// Simulation scenario: RCT of n1 + n0 units plus nE external controls, a
/// logistic sampling score with covariate shift, linear outcomes, and a hidden
/// shift -b on a fraction of the externals. Empty coefficient vectors take
/// their defaults (eta = 0.1, beta0 = 1, beta1 = 2 in every coordinate).
struct ScenarioConfig {
  Index n1 = 50;
  Index n0 = 25;
  Index nE = 50;
  Index p = 2;
  CovariateLaw covariate_law = CovariateLaw::Uniform;
  double toeplitz_rho = 0.6;
  Eigen::VectorXd eta;
  double tau0 = 0.4;
  Eigen::VectorXd beta0;
  Eigen::VectorXd beta1;
  double bias_b = 0.0;
  double biased_fraction = 0.5;
  double ec_noise_scale = 0.5;
  Hypothesis hypothesis = Hypothesis::Alternative;
  std::uint64_t seed = kDefaultSeed;

  /// Fills defaulted vectors and checks ranges; throws InvalidArgument.
  ScenarioConfig resolved() const;
};

struct Truth {
  // ATE over the RCT population, E{Y(1) - Y(0) | S = 1}; zero under the sharp
  // null. Covariate shift makes it differ from tau0 when beta1 != beta0.
  double tau = 0.0;
  double tau0 = 0.0;
  double sample_tau = 0.0;  // mean of Y(1) - Y(0) over the drawn randomized units
  Eigen::VectorXi biased_flags;  // one per external control, in row order
};

struct Scenario {
  TrialData data;
  Truth truth;
};

/// Intercept eta0 such that the mean of 1 / (1 + exp(eta0 + x' eta)) over the
/// rows of x equals `target` (bisection on [-20, 20]).
double solve_sampling_intercept(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& eta, double target,
                                double tol = 1e-10);

/// E{Y(1) - Y(0) | S = 1} under the scenario, by Monte Carlo over `draws`
/// covariate vectors from a fixed seed, so it depends on the DGP parameters only.
double population_ate(const ScenarioConfig& config, Index draws = 2000000);

/// Randomized units come first (rows 0..nR-1), then externals. The assignment
/// is Bernoulli(n1 / nR), redrawn if a group comes out empty.
/// `population_tau` skips the Monte Carlo when the caller already has it.
Scenario generate_scenario(const ScenarioConfig& config, Rng& rng,
                           std::optional<double> population_tau = std::nullopt);

struct Metrics {
  double bias = 0.0;
  double sd = 0.0;  // sample SD of estimate - truth
  double mse = 0.0;
  double rejection_rate = 0.0;  // NaN when no p-values were computed
  double rejection_se = 0.0;
  double mean_n_borrowed = 0.0;
  double mean_frac_biased_borrowed = 0.0;    // NaN when no external is biased
  double mean_frac_unbiased_borrowed = 0.0;  // NaN when every external is biased
  double mean_gamma = 0.0;                   // NaN for estimators without a threshold
  Index replications = 0;
  Index failures = 0;
};

/// Bias, SD and MSE of estimates against per-replication truths, and the
/// rejection rate of p <= alpha (pvalues may be empty).
Metrics compute_metrics(const Eigen::Ref<const Eigen::VectorXd>& estimates,
                        const Eigen::Ref<const Eigen::VectorXd>& truths,
                        const Eigen::Ref<const Eigen::VectorXd>& pvalues, double alpha);

struct SimulationConfig {
  ScenarioConfig scenario;
  int replications = 500;
  std::vector<EstimatorSpec> methods = {EstimatorSpec::no_borrow(), EstimatorSpec::full_borrow(),
                                        EstimatorSpec::selective_adaptive()};
  int B = 1000;  // randomization resamples per replication; 0 skips the test
  bool recompute_threshold = false;
  double alpha = 0.05;
  unsigned threads = 1;
  double max_failure_fraction = 0.01;
};

struct ReplicationRecord {
  Index replication = 0;
  std::string method;
  double truth = 0.0;
  double estimate = 0.0;
  double p_value = 0.0;  // NaN when B = 0
  Index n_borrowed = 0;
  std::optional<double> gamma;
  double frac_biased_borrowed = 0.0;
  double frac_unbiased_borrowed = 0.0;
  std::optional<std::string> error;
};

struct MethodMetrics {
  std::string method;
  Metrics metrics;
};

struct SimulationResult {
  std::vector<ReplicationRecord> records;  // replication-major, methods in config order
  std::vector<MethodMetrics> metrics;
  std::uint64_t seed = 0;
};

/// Runs every method on R independent scenario draws. Replication r is a pure
/// function of (scenario seed, r), so results do not depend on the thread
/// count. Throws ReplicationFailures if more than max_failure_fraction of the
/// replications of any method fail.
SimulationResult run_replications(const SimulationConfig& config);

}  // namespace hybridtrial
