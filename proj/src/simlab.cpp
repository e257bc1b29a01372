#include "hybridtrial/simlab.hpp"

#include "hybridtrial/error.hpp"
#include "hybridtrial/frt.hpp"
#include "hybridtrial/parallel.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numeric>

namespace hybridtrial {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

Eigen::MatrixXd draw_covariates(const ScenarioConfig& c, Index rows, Rng& rng) {
  Eigen::MatrixXd x(rows, c.p);
  if (c.covariate_law == CovariateLaw::Uniform) {
    std::uniform_real_distribution<double> unif(-2.0, 2.0);
    for (Index i = 0; i < rows; ++i)
      for (Index j = 0; j < c.p; ++j) x(i, j) = unif(rng);
    return x;
  }
  Eigen::MatrixXd sigma(c.p, c.p);
  for (Index i = 0; i < c.p; ++i)
    for (Index j = 0; j < c.p; ++j) sigma(i, j) = std::pow(c.toeplitz_rho, std::abs(i - j));
  const Eigen::MatrixXd lower = sigma.llt().matrixL();
  std::normal_distribution<double> normal;
  Eigen::VectorXd z(c.p);
  for (Index i = 0; i < rows; ++i) {
    for (Index j = 0; j < c.p; ++j) z[j] = normal(rng);
    x.row(i) = (lower * z).transpose();
  }
  return x;
}

double mean_sampling_score(const Eigen::VectorXd& linear, double eta0) {
  return (1.0 / (1.0 + (linear.array() + eta0).exp())).mean();
}

double nan_mean(const std::vector<double>& v) {
  double sum = 0.0;
  Index count = 0;
  for (const double x : v) {
    if (std::isnan(x)) continue;
    sum += x;
    ++count;
  }
  return count == 0 ? kNaN : sum / static_cast<double>(count);
}

std::string unit_label(Index i, Index n) {
  const int width = static_cast<int>(std::to_string(n).size());
  char buffer[32];
  std::snprintf(buffer, sizeof buffer, "u%0*lld", width, static_cast<long long>(i + 1));
  return buffer;
}

}  // namespace

ScenarioConfig ScenarioConfig::resolved() const {
  ScenarioConfig c = *this;
  if (c.n1 < 1 || c.n0 < 1 || c.nE < 1 || c.p < 1) {
    throw Error(ErrorCode::InvalidArgument, "scenario needs n1, n0, nE, p >= 1");
  }
  if (c.eta.size() == 0) c.eta = Eigen::VectorXd::Constant(c.p, 0.1);
  if (c.beta0.size() == 0) c.beta0 = Eigen::VectorXd::Constant(c.p, 1.0);
  if (c.beta1.size() == 0) c.beta1 = Eigen::VectorXd::Constant(c.p, 2.0);
  if (c.eta.size() != c.p || c.beta0.size() != c.p || c.beta1.size() != c.p) {
    throw Error(ErrorCode::InvalidArgument, "eta, beta0 and beta1 must have length p");
  }
  if (!(c.biased_fraction >= 0.0 && c.biased_fraction <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "biased_fraction must lie in [0, 1]");
  }
  if (!(c.bias_b >= 0.0) || !(c.ec_noise_scale > 0.0)) {
    throw Error(ErrorCode::InvalidArgument, "bias_b must be >= 0 and ec_noise_scale > 0");
  }
  if (c.covariate_law == CovariateLaw::GaussianToeplitz && !(std::abs(c.toeplitz_rho) < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "Toeplitz correlation must lie in (-1, 1)");
  }
  return c;
}

double solve_sampling_intercept(const Eigen::Ref<const Eigen::MatrixXd>& x,
                                const Eigen::Ref<const Eigen::VectorXd>& eta, double target,
                                double tol) {
  if (!(target > 0.0 && target < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "target sampling fraction must lie in (0, 1)");
  }
  const Eigen::VectorXd linear = x * eta;
  // The mean score decreases in eta0.
  double lo = -20.0, hi = 20.0;
  while (hi - lo > tol) {
    const double mid = 0.5 * (lo + hi);
    if (mean_sampling_score(linear, mid) > target) lo = mid;
    else hi = mid;
  }
  return 0.5 * (lo + hi);
}

double population_ate(const ScenarioConfig& config, Index draws) {
  const ScenarioConfig c = config.resolved();
  const double target = static_cast<double>(c.n1 + c.n0) / static_cast<double>(c.n1 + c.n0 + c.nE);
  Rng rng = make_rng(0x5eed0a7eULL);
  const Eigen::MatrixXd x = draw_covariates(c, draws, rng);
  const double eta0 = solve_sampling_intercept(x, c.eta, target);
  const Eigen::ArrayXd pi = 1.0 / (1.0 + ((x * c.eta).array() + eta0).exp());
  const Eigen::ArrayXd effect = ((x * (c.beta1 - c.beta0)).array() + c.tau0);
  return (pi * effect).sum() / pi.sum();
}

Scenario generate_scenario(const ScenarioConfig& config, Rng& rng,
                           std::optional<double> population_tau) {
  const ScenarioConfig c = config.resolved();
  const Index n_r = c.n1 + c.n0;
  const Index n = n_r + c.nE;
  const double target = static_cast<double>(n_r) / static_cast<double>(n);

  // Oversample a pool, draw S from the sampling score, keep the first n_r
  // randomized and first nE external units.
  Eigen::MatrixXd x(n, c.p);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  for (Index pool_size = 3 * n;; pool_size *= 2) {
    const Eigen::MatrixXd pool = draw_covariates(c, pool_size, rng);
    const double eta0 = solve_sampling_intercept(pool, c.eta, target);
    const Eigen::VectorXd linear = pool * c.eta;
    IndexList rct, ext;
    for (Index i = 0; i < pool_size; ++i) {
      const double pi = 1.0 / (1.0 + std::exp(eta0 + linear[i]));
      if (unit(rng) < pi) {
        if (static_cast<Index>(rct.size()) < n_r) rct.push_back(i);
      } else if (static_cast<Index>(ext.size()) < c.nE) {
        ext.push_back(i);
      }
    }
    if (static_cast<Index>(rct.size()) < n_r || static_cast<Index>(ext.size()) < c.nE) continue;
    for (Index k = 0; k < n_r; ++k) x.row(k) = pool.row(rct[k]);
    for (Index k = 0; k < c.nE; ++k) x.row(n_r + k) = pool.row(ext[k]);
    break;
  }

  Eigen::VectorXi s = Eigen::VectorXi::Zero(n);
  s.head(n_r).setOnes();
  Eigen::VectorXi a = Eigen::VectorXi::Zero(n);
  std::bernoulli_distribution coin(static_cast<double>(c.n1) / static_cast<double>(n_r));
  for (;;) {
    for (Index i = 0; i < n_r; ++i) a[i] = coin(rng) ? 1 : 0;
    const Index treated = a.head(n_r).sum();
    if (treated > 0 && treated < n_r) break;
  }

  std::normal_distribution<double> normal;
  Eigen::VectorXd eps(n);
  for (Index i = 0; i < n; ++i) eps[i] = normal(rng);

  Truth truth;
  truth.tau0 = c.tau0;
  truth.biased_flags = Eigen::VectorXi::Zero(c.nE);
  std::vector<Index> order(static_cast<std::size_t>(c.nE));
  std::iota(order.begin(), order.end(), Index{0});
  std::shuffle(order.begin(), order.end(), rng);
  // Without a shift nobody is biased; the shuffle still runs so that draws
  // line up across values of b.
  const auto n_biased = c.bias_b > 0.0
                            ? static_cast<std::size_t>(std::floor(c.biased_fraction * static_cast<double>(c.nE)))
                            : std::size_t{0};
  for (std::size_t k = 0; k < n_biased; ++k) truth.biased_flags[order[k]] = 1;

  const Eigen::VectorXd y0 = x * c.beta0 + eps;
  Eigen::VectorXd y(n);
  double effect_sum = 0.0;
  for (Index i = 0; i < n_r; ++i) {
    const double y1 = c.tau0 + x.row(i).dot(c.beta1) + eps[i];
    effect_sum += y1 - y0[i];
    y[i] = (c.hypothesis == Hypothesis::Alternative && a[i] == 1) ? y1 : y0[i];
  }
  for (Index k = 0; k < c.nE; ++k) {
    const Index i = n_r + k;
    y[i] = -c.bias_b * truth.biased_flags[k] + x.row(i).dot(c.beta0) + c.ec_noise_scale * eps[i];
  }
  truth.sample_tau = effect_sum / static_cast<double>(n_r);
  if (c.hypothesis == Hypothesis::Alternative) {
    truth.tau = population_tau ? *population_tau : population_ate(c);
  }

  std::vector<std::string> ids(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) ids[static_cast<std::size_t>(i)] = unit_label(i, n);
  return Scenario{TrialData(CovariateMatrix(x), std::move(y), std::move(a), std::move(s), std::move(ids)),
                  std::move(truth)};
}

Metrics compute_metrics(const Eigen::Ref<const Eigen::VectorXd>& estimates,
                        const Eigen::Ref<const Eigen::VectorXd>& truths,
                        const Eigen::Ref<const Eigen::VectorXd>& pvalues, double alpha) {
  const Index r = estimates.size();
  if (r < 2 || truths.size() != r || (pvalues.size() != 0 && pvalues.size() != r)) {
    throw Error(ErrorCode::InvalidArgument, "metrics need matching vectors of length >= 2");
  }
  const Eigen::ArrayXd err = (estimates - truths).array();
  Metrics m;
  m.replications = r;
  m.bias = err.mean();
  m.sd = std::sqrt((err - m.bias).square().sum() / static_cast<double>(r - 1));
  m.mse = err.square().mean();
  if (pvalues.size() == 0) {
    m.rejection_rate = kNaN;
    m.rejection_se = kNaN;
  } else {
    m.rejection_rate = (pvalues.array() <= alpha).cast<double>().mean();
    m.rejection_se = std::sqrt(m.rejection_rate * (1.0 - m.rejection_rate) / static_cast<double>(r));
  }
  return m;
}

SimulationResult run_replications(const SimulationConfig& config) {
  if (config.replications < 1) throw Error(ErrorCode::InvalidArgument, "need at least one replication");
  if (config.methods.empty()) throw Error(ErrorCode::InvalidArgument, "no methods requested");
  if (config.B < 0) throw Error(ErrorCode::InvalidArgument, "B must be >= 0");
  const ScenarioConfig scenario = config.scenario.resolved();
  const std::size_t n_methods = config.methods.size();
  const auto n_reps = static_cast<std::size_t>(config.replications);
  const DesignSpec design = DesignSpec::bernoulli(static_cast<double>(scenario.n1) /
                                                  static_cast<double>(scenario.n1 + scenario.n0));

  const double tau = population_ate(scenario);

  SimulationResult result;
  result.seed = scenario.seed;
  result.records.resize(n_reps * n_methods);

  parallel_for(n_reps, config.threads, [&](std::size_t r) {
    Rng scenario_rng = make_rng(scenario.seed, Stream::Scenario, r);
    const Scenario draw = generate_scenario(scenario, scenario_rng, tau);
    const Index n_r = draw.data.n_rct();
    const Eigen::VectorXi& biased = draw.truth.biased_flags;
    const Index n_biased = biased.sum();
    const Index n_unbiased = biased.size() - n_biased;
    const std::uint64_t rep_seed = derive_seed(scenario.seed, Stream::Replication, r);

    for (std::size_t m = 0; m < n_methods; ++m) {
      ReplicationRecord& rec = result.records[r * n_methods + m];
      rec.replication = static_cast<Index>(r);
      rec.method = config.methods[m].name();
      rec.truth = draw.truth.tau;
      rec.p_value = kNaN;
      try {
        const IndexSets sets = partition(draw.data);
        Estimate est;
        if (config.B > 0) {
          FrtConfig frt;
          frt.B = config.B;
          frt.statistic = config.methods[m];
          frt.recompute_threshold = config.recompute_threshold;
          frt.seed = rep_seed;
          const FrtResult res = run_frt(draw.data, sets, design, frt);
          est = res.observed;
          rec.p_value = res.p_value;
        } else {
          Rng rng = make_rng(rep_seed, Stream::Observed);
          est = evaluate(config.methods[m], draw.data, sets, design, rng);
        }
        rec.estimate = est.value;
        rec.n_borrowed = est.n_borrowed;
        rec.gamma = est.gamma_used;
        Index hit_biased = 0;
        for (const Index row : est.selected) hit_biased += biased[row - n_r];
        const Index hit_unbiased = static_cast<Index>(est.selected.size()) - hit_biased;
        rec.frac_biased_borrowed =
            n_biased == 0 ? kNaN : static_cast<double>(hit_biased) / static_cast<double>(n_biased);
        rec.frac_unbiased_borrowed = n_unbiased == 0 ? kNaN
                                                     : static_cast<double>(hit_unbiased) /
                                                           static_cast<double>(n_unbiased);
      } catch (const Error& e) {
        rec.error = e.what();
        rec.estimate = kNaN;
      }
    }
  });

  for (std::size_t m = 0; m < n_methods; ++m) {
    std::vector<double> est, truth, pv, borrowed, fb, fu, gamma;
    Index failures = 0;
    for (std::size_t r = 0; r < n_reps; ++r) {
      const ReplicationRecord& rec = result.records[r * n_methods + m];
      if (rec.error) {
        ++failures;
        continue;
      }
      est.push_back(rec.estimate);
      truth.push_back(rec.truth);
      if (config.B > 0) pv.push_back(rec.p_value);
      borrowed.push_back(static_cast<double>(rec.n_borrowed));
      fb.push_back(rec.frac_biased_borrowed);
      fu.push_back(rec.frac_unbiased_borrowed);
      gamma.push_back(rec.gamma.value_or(kNaN));
    }
    if (static_cast<double>(failures) > config.max_failure_fraction * static_cast<double>(n_reps)) {
      std::string first;
      for (std::size_t r = 0; r < n_reps && first.empty(); ++r) {
        const auto& rec = result.records[r * n_methods + m];
        if (rec.error) first = "replication " + std::to_string(r) + ": " + *rec.error;
      }
      throw Error(ErrorCode::ReplicationFailures,
                  config.methods[m].name() + " failed in " + std::to_string(failures) + " of " +
                      std::to_string(n_reps) + " replications; first: " + first);
    }
    MethodMetrics mm;
    mm.method = config.methods[m].name();
    if (est.size() >= 2) {
      const Eigen::Map<const Eigen::VectorXd> e(est.data(), static_cast<Index>(est.size()));
      const Eigen::Map<const Eigen::VectorXd> t(truth.data(), static_cast<Index>(truth.size()));
      const Eigen::Map<const Eigen::VectorXd> p(pv.data(), static_cast<Index>(pv.size()));
      mm.metrics = compute_metrics(e, t, p, config.alpha);
    }
    mm.metrics.replications = static_cast<Index>(est.size());
    mm.metrics.failures = failures;
    mm.metrics.mean_n_borrowed = nan_mean(borrowed);
    mm.metrics.mean_frac_biased_borrowed = nan_mean(fb);
    mm.metrics.mean_frac_unbiased_borrowed = nan_mean(fu);
    mm.metrics.mean_gamma = nan_mean(gamma);
    result.metrics.push_back(std::move(mm));
  }
  return result;
}

}  // namespace hybridtrial
