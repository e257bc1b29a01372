#pragma once

#include "hybridtrial/conformal.hpp"
#include "hybridtrial/data.hpp"
#include "hybridtrial/estimators.hpp"
#include "hybridtrial/random.hpp"

#include <Eigen/Dense>

#include <vector>

namespace hybridtrial {

/// Selective-borrowing estimates over a threshold grid, on the original sample
/// and on L stratified bootstrap resamples (one resample shared by all grid
/// points).
struct BootstrapGrid {
  std::vector<double> grid;
  Eigen::VectorXd tau_hat;      // |grid|
  Eigen::MatrixXd replicates;   // |grid| x L
};

/// Bootstrap-estimated MSE of each grid estimator, using the no-borrowing
/// estimate (gamma = 1) as the bias reference.
struct MseProfile {
  std::vector<double> grid;
  Eigen::VectorXd tau_hat;
  Eigen::VectorXd var_diff;   // V(tau_gamma - tau_1)
  Eigen::VectorXd var_gamma;  // V(tau_gamma)
  Eigen::VectorXd mse_hat;    // may be negative; not floored
  double gamma_star = 1.0;
  int bootstrap_count = 0;
};

BootstrapGrid bootstrap_grid(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                             const std::vector<double>& grid, int bootstrap_count,
                             const ConformalMethod& method, Rng& rng, unsigned threads = 1,
                             const NuisanceConfig& config = {});

/// `replicates` is |grid| x L; the grid must contain 1.
MseProfile estimate_mse_profile(const std::vector<double>& grid,
                                const Eigen::Ref<const Eigen::MatrixXd>& replicates,
                                const Eigen::Ref<const Eigen::VectorXd>& tau_hat);

/// Grid point with the smallest estimated MSE; ties go to the largest gamma.
double select_threshold(const MseProfile& profile);

struct AdaptiveResult {
  Estimate estimate;
  MseProfile profile;
};

/// Full adaptive pipeline: grid bootstrap, MSE profile, argmin threshold, and
/// the selective-borrowing estimate at that threshold on the original sample.
AdaptiveResult adaptive_estimate(const TrialData& data, const IndexSets& sets,
                                 const DesignSpec& design, const ConformalMethod& method,
                                 const AdaptiveConfig& config, Rng& rng,
                                 const NuisanceConfig& nuisance = {}, unsigned threads = 1);

}  // namespace hybridtrial
