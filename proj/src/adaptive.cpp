#include "hybridtrial/adaptive.hpp"

#include "hybridtrial/error.hpp"
#include "hybridtrial/parallel.hpp"

#include <map>

namespace hybridtrial {

namespace {

Index index_of_one(const std::vector<double>& grid) {
  for (std::size_t g = 0; g < grid.size(); ++g) {
    if (grid[g] == 1.0) return static_cast<Index>(g);
  }
  throw Error(ErrorCode::InvalidArgument, "threshold grid must contain 1");
}

void validate_grid(const std::vector<double>& grid) {
  if (grid.empty()) throw Error(ErrorCode::InvalidArgument, "threshold grid is empty");
  for (const double g : grid) {
    if (!(g >= 0.0 && g <= 1.0)) {
      throw Error(ErrorCode::InvalidArgument, "threshold grid values must lie in [0, 1]");
    }
  }
  index_of_one(grid);
}

// Selective estimates at every grid point for one dataset. Conformal p-values
// are computed once; grid points that select the same set share one fit.
Eigen::VectorXd grid_estimates(const TrialData& data, const IndexSets& sets,
                               const DesignSpec& design, const std::vector<double>& grid,
                               const ConformalMethod& method, Rng& rng,
                               const NuisanceConfig& config, std::vector<IndexList>* selections) {
  const BorrowingEvaluator evaluator(data, sets, design, config);
  Eigen::VectorXd pvalues;
  if (!sets.external.empty()) pvalues = conformal_pvalues(data, sets, method, rng).pvalues;

  std::map<IndexList, double> cache;
  Eigen::VectorXd out(static_cast<Index>(grid.size()));
  for (std::size_t g = 0; g < grid.size(); ++g) {
    IndexList borrowed = selected_rows(sets, pvalues, grid[g]);
    auto it = cache.find(borrowed);
    if (it == cache.end()) it = cache.emplace(borrowed, evaluator.evaluate(borrowed)).first;
    out[static_cast<Index>(g)] = it->second;
    if (selections) selections->push_back(std::move(borrowed));
  }
  return out;
}

BootstrapGrid run_grid(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                       const std::vector<double>& grid, int bootstrap_count,
                       const ConformalMethod& method, Rng& rng, unsigned threads,
                       const NuisanceConfig& config, std::vector<IndexList>* selections) {
  validate_grid(grid);
  if (bootstrap_count < 50) throw Error(ErrorCode::InvalidArgument, "bootstrap needs L >= 50");

  BootstrapGrid out;
  out.grid = grid;
  out.tau_hat = grid_estimates(data, sets, design, grid, method, rng, config, selections);

  const std::uint64_t base = rng();
  out.replicates.resize(static_cast<Index>(grid.size()), bootstrap_count);
  parallel_for(static_cast<std::size_t>(bootstrap_count), threads, [&](std::size_t l) {
    Rng local = make_rng(base, Stream::Bootstrap, l);
    const IndexList rows = stratified_bootstrap_rows(sets, local);
    const TrialData resample = data.subset(rows);
    const IndexSets resample_sets = partition(resample);
    out.replicates.col(static_cast<Index>(l)) =
        grid_estimates(resample, resample_sets, design, grid, method, local, config, nullptr);
  });
  return out;
}

}  // namespace

BootstrapGrid bootstrap_grid(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                             const std::vector<double>& grid, int bootstrap_count,
                             const ConformalMethod& method, Rng& rng, unsigned threads,
                             const NuisanceConfig& config) {
  return run_grid(data, sets, design, grid, bootstrap_count, method, rng, threads, config, nullptr);
}

MseProfile estimate_mse_profile(const std::vector<double>& grid,
                                const Eigen::Ref<const Eigen::MatrixXd>& replicates,
                                const Eigen::Ref<const Eigen::VectorXd>& tau_hat) {
  validate_grid(grid);
  const Index n_grid = static_cast<Index>(grid.size());
  if (replicates.rows() != n_grid || tau_hat.size() != n_grid) {
    throw Error(ErrorCode::InvalidArgument, "replicate matrix does not match the grid");
  }
  if (replicates.cols() < 2) {
    throw Error(ErrorCode::InvalidArgument, "MSE profile needs at least two bootstrap replicates");
  }
  const Index one = index_of_one(grid);
  const double denom = static_cast<double>(replicates.cols() - 1);
  auto sample_variance = [&](const Eigen::RowVectorXd& v) {
    return (v.array() - v.mean()).square().sum() / denom;
  };

  MseProfile profile;
  profile.grid = grid;
  profile.tau_hat = tau_hat;
  profile.bootstrap_count = static_cast<int>(replicates.cols());
  profile.var_diff.resize(n_grid);
  profile.var_gamma.resize(n_grid);
  profile.mse_hat.resize(n_grid);
  const Eigen::RowVectorXd reference = replicates.row(one);
  for (Index g = 0; g < n_grid; ++g) {
    const Eigen::RowVectorXd row = replicates.row(g);
    profile.var_diff[g] = sample_variance(row - reference);
    profile.var_gamma[g] = sample_variance(row);
    const double gap = tau_hat[g] - tau_hat[one];
    profile.mse_hat[g] = gap * gap - profile.var_diff[g] + profile.var_gamma[g];
  }
  profile.gamma_star = select_threshold(profile);
  return profile;
}

double select_threshold(const MseProfile& profile) {
  Index best = 0;
  for (Index g = 1; g < profile.mse_hat.size(); ++g) {
    const double mse = profile.mse_hat[g];
    const double incumbent = profile.mse_hat[best];
    if (mse < incumbent || (mse == incumbent && profile.grid[g] > profile.grid[best])) best = g;
  }
  return profile.grid[best];
}

AdaptiveResult adaptive_estimate(const TrialData& data, const IndexSets& sets,
                                 const DesignSpec& design, const ConformalMethod& method,
                                 const AdaptiveConfig& config, Rng& rng,
                                 const NuisanceConfig& nuisance, unsigned threads) {
  // The original-sample p-values drive both the profile and the returned
  // estimate, so the reported value is exactly tau_hat at gamma_star.
  std::vector<IndexList> selections;
  const BootstrapGrid boot = run_grid(data, sets, design, config.grid, config.bootstrap_count,
                                      method, rng, threads, nuisance, &selections);

  AdaptiveResult result;
  result.profile = estimate_mse_profile(config.grid, boot.replicates, boot.tau_hat);
  Index star = 0;
  while (config.grid[star] != result.profile.gamma_star) ++star;
  result.estimate.value = boot.tau_hat[star];
  result.estimate.selected = selections[star];
  result.estimate.n_borrowed = static_cast<Index>(selections[star].size());
  result.estimate.gamma_used = result.profile.gamma_star;
  return result;
}

}  // namespace hybridtrial
