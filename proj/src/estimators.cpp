#include "hybridtrial/estimators.hpp"

#include "hybridtrial/adaptive.hpp"
#include "hybridtrial/error.hpp"
#include "hybridtrial/parallel.hpp"

#include <cmath>
#include <cstdio>

namespace hybridtrial {

namespace {

double mean_over(const Eigen::VectorXd& y, const IndexList& rows) {
  double sum = 0.0;
  for (const Index i : rows) sum += y[i];
  return sum / static_cast<double>(rows.size());
}

void require_groups(const IndexSets& sets) {
  if (sets.treated.empty() || sets.rct_controls.empty()) {
    throw Error(ErrorCode::EmptyGroup, "estimator needs treated and control randomized units");
  }
}

double sample_sd(const std::vector<double>& v) {
  if (v.size() < 2) return 0.0;
  double mean = 0.0;
  for (const double x : v) mean += x;
  mean /= static_cast<double>(v.size());
  double ss = 0.0;
  for (const double x : v) ss += (x - mean) * (x - mean);
  return std::sqrt(ss / static_cast<double>(v.size() - 1));
}

}  // namespace

EstimatorSpec EstimatorSpec::difmeans() {
  EstimatorSpec s;
  s.kind = Kind::DifInMeans;
  return s;
}

EstimatorSpec EstimatorSpec::no_borrow() {
  EstimatorSpec s;
  s.kind = Kind::NoBorrow;
  return s;
}

EstimatorSpec EstimatorSpec::full_borrow() {
  EstimatorSpec s;
  s.kind = Kind::FullBorrow;
  return s;
}

EstimatorSpec EstimatorSpec::selective(double gamma, ConformalMethod method) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "selection threshold must lie in [0, 1]");
  }
  EstimatorSpec s;
  s.kind = Kind::ConformalSelective;
  s.gamma = gamma;
  s.conformal = method;
  return s;
}

EstimatorSpec EstimatorSpec::selective_adaptive(ConformalMethod method, AdaptiveConfig adaptive) {
  EstimatorSpec s;
  s.kind = Kind::ConformalSelective;
  s.conformal = method;
  s.adaptive = std::move(adaptive);
  return s;
}

std::string EstimatorSpec::name() const {
  switch (kind) {
    case Kind::DifInMeans: return "difmeans";
    case Kind::NoBorrow: return "nb";
    case Kind::FullBorrow: return "fb";
    case Kind::ConformalSelective: {
      if (!gamma) return "csb(adaptive)";
      char buffer[32];
      std::snprintf(buffer, sizeof buffer, "csb(%g)", *gamma);
      return buffer;
    }
  }
  return "unknown";
}

Estimate estimate_difmeans(const TrialData& data, const IndexSets& sets) {
  require_groups(sets);
  Estimate est;
  est.value = mean_over(data.outcome(), sets.treated) - mean_over(data.outcome(), sets.rct_controls);
  return est;
}

BorrowingEvaluator::BorrowingEvaluator(const TrialData& data, const IndexSets& sets,
                                       const DesignSpec& design, const NuisanceConfig& config)
    : data_(data), sets_(sets), config_(config), e_hat_(known_propensity(design)) {
  require_groups(sets);
  const auto& x = data.covariates();
  const auto& y = data.outcome();
  const auto& a = data.assignment();
  const auto mu1 = fit_ols(x, y, sets.treated, config.ridge_penalty);
  const auto mu0 = fit_ols(x, y, sets.rct_controls, config.ridge_penalty);

  const Index n_r = static_cast<Index>(sets.rct_all.size());
  treated_term_.resize(n_r);
  double control_sum = 0.0;
  for (Index k = 0; k < n_r; ++k) {
    const Index i = sets.rct_all[k];
    const double m1 = mu1.predict(data.row(i));
    const double m0 = mu0.predict(data.row(i));
    treated_term_[k] = m1 + a[i] / e_hat_ * (y[i] - m1);
    control_sum += m0 + (1 - a[i]) / (1.0 - e_hat_) * (y[i] - m0);
  }
  treated_sum_ = treated_term_.sum();
  nb_value_ = (treated_sum_ - control_sum) / static_cast<double>(n_r);
}

double BorrowingEvaluator::evaluate(const IndexList& borrowed) const {
  if (borrowed.empty()) return nb_value_;

  const auto& x = data_.covariates();
  const auto& y = data_.outcome();

  IndexList control_rows = sets_.rct_controls;
  control_rows.insert(control_rows.end(), borrowed.begin(), borrowed.end());
  const auto mu0 = fit_ols(x, y, control_rows, config_.ridge_penalty);

  IndexList involved = sets_.rct_all;
  involved.insert(involved.end(), borrowed.begin(), borrowed.end());
  const auto pi = fit_logistic(x, data_.sample_indicator(), involved);

  double r_hat = 1.0;
  if (borrowed.size() >= 2) {
    Eigen::VectorXd resid_c(static_cast<Index>(sets_.rct_controls.size()));
    for (std::size_t k = 0; k < sets_.rct_controls.size(); ++k) {
      const Index i = sets_.rct_controls[k];
      resid_c[k] = y[i] - mu0.predict(data_.row(i));
    }
    Eigen::VectorXd resid_e(static_cast<Index>(borrowed.size()));
    for (std::size_t k = 0; k < borrowed.size(); ++k) {
      const Index i = borrowed[k];
      resid_e[k] = y[i] - mu0.predict(data_.row(i));
    }
    r_hat = estimate_variance_ratio(resid_c, resid_e, config_).value;
  }

  const Index m = static_cast<Index>(involved.size());
  Eigen::VectorXd pi_hat(m);
  Eigen::VectorXd residual(m);
  Eigen::VectorXi s(m);
  Eigen::VectorXi a(m);
  double mu0_rct_sum = 0.0;
  for (Index k = 0; k < m; ++k) {
    const Index i = involved[k];
    const double m0 = mu0.predict(data_.row(i));
    pi_hat[k] = pi.probability(data_.row(i), config_.probability_clip);
    residual[k] = y[i] - m0;
    s[k] = data_.sample_indicator()[i];
    a[k] = data_.assignment()[i];
    if (s[k] == 1) mu0_rct_sum += m0;
  }
  const Eigen::VectorXi flags = Eigen::VectorXi::Ones(m);
  const Eigen::VectorXd w = compute_fb_weights(pi_hat, e_hat_, r_hat, s, a, flags);
  const double control_sum = mu0_rct_sum + w.dot(residual);
  return (treated_sum_ - control_sum) / static_cast<double>(sets_.rct_all.size());
}

Eigen::VectorXd compute_fb_weights(const Eigen::VectorXd& pi_hat, double e_hat, double r_hat,
                                   const Eigen::VectorXi& sample, const Eigen::VectorXi& assignment,
                                   const Eigen::VectorXi& borrowed) {
  const Index m = pi_hat.size();
  Eigen::VectorXd w(m);
  for (Index k = 0; k < m; ++k) {
    const double pi = pi_hat[k];
    const double numerator = sample[k] == 1 ? static_cast<double>(1 - assignment[k])
                                            : static_cast<double>(borrowed[k]) * r_hat;
    w[k] = pi * numerator / (pi * (1.0 - e_hat) + (1.0 - pi) * r_hat);
  }
  return w;
}

Estimate estimate_nb(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                     const NuisanceConfig& config) {
  Estimate est;
  est.value = BorrowingEvaluator(data, sets, design, config).no_borrow();
  return est;
}

Estimate estimate_with_borrowed(const TrialData& data, const IndexSets& sets,
                                const DesignSpec& design, const IndexList& borrowed,
                                const NuisanceConfig& config) {
  Estimate est;
  est.value = BorrowingEvaluator(data, sets, design, config).evaluate(borrowed);
  est.selected = borrowed;
  est.n_borrowed = static_cast<Index>(borrowed.size());
  return est;
}

Estimate estimate_fb(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                     const NuisanceConfig& config) {
  return estimate_with_borrowed(data, sets, design, sets.external, config);
}

Estimate estimate_csb(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                      double gamma, const ConformalMethod& method, Rng& rng,
                      const NuisanceConfig& config) {
  if (!(gamma >= 0.0 && gamma <= 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "selection threshold must lie in [0, 1]");
  }
  IndexList borrowed;
  if (!sets.external.empty()) {
    const auto pv = conformal_pvalues(data, sets, method, rng);
    borrowed = selected_rows(sets, pv.pvalues, gamma);
  }
  Estimate est = estimate_with_borrowed(data, sets, design, borrowed, config);
  est.gamma_used = gamma;
  return est;
}

Estimate evaluate(const EstimatorSpec& spec, const TrialData& data, const IndexSets& sets,
                  const DesignSpec& design, Rng& rng) {
  switch (spec.kind) {
    case EstimatorSpec::Kind::DifInMeans:
      return estimate_difmeans(data, sets);
    case EstimatorSpec::Kind::NoBorrow:
      return estimate_nb(data, sets, design, spec.nuisance);
    case EstimatorSpec::Kind::FullBorrow:
      return estimate_fb(data, sets, design, spec.nuisance);
    case EstimatorSpec::Kind::ConformalSelective:
      if (spec.gamma) {
        return estimate_csb(data, sets, design, *spec.gamma, spec.conformal, rng, spec.nuisance);
      }
      return adaptive_estimate(data, sets, design, spec.conformal, spec.adaptive, rng,
                               spec.nuisance)
          .estimate;
  }
  throw Error(ErrorCode::InvalidArgument, "unknown estimator kind");
}

IndexList stratified_bootstrap_rows(const IndexSets& sets, Rng& rng) {
  IndexList rows;
  rows.reserve(sets.rct_all.size() + sets.external.size());
  for (const IndexList* group : {&sets.treated, &sets.rct_controls, &sets.external}) {
    if (group->empty()) continue;
    std::uniform_int_distribution<std::size_t> pick(0, group->size() - 1);
    for (std::size_t k = 0; k < group->size(); ++k) rows.push_back((*group)[pick(rng)]);
  }
  return rows;
}

BootstrapSummary bootstrap_se_ci(const TrialData& data, const IndexSets& sets,
                                 const DesignSpec& design, const EstimatorSpec& spec,
                                 double point_estimate, int replicates, Rng& rng,
                                 unsigned threads) {
  if (replicates < 50) throw Error(ErrorCode::InvalidArgument, "bootstrap needs L >= 50");
  const std::uint64_t base = rng();

  BootstrapSummary summary;
  summary.replicates.resize(static_cast<std::size_t>(replicates));
  parallel_for(summary.replicates.size(), threads, [&](std::size_t l) {
    Rng local = make_rng(base, Stream::Bootstrap, l);
    const IndexList rows = stratified_bootstrap_rows(sets, local);
    const TrialData resample = data.subset(rows);
    const IndexSets resample_sets = partition(resample);
    summary.replicates[l] = evaluate(spec, resample, resample_sets, design, local).value;
  });
  summary.se = sample_sd(summary.replicates);
  summary.ci = {point_estimate - 1.96 * summary.se, point_estimate + 1.96 * summary.se};
  return summary;
}

}  // namespace hybridtrial
