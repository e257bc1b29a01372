#pragma once

#include "hybridtrial/data.hpp"
#include "hybridtrial/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <span>
#include <string>
#include <vector>

namespace hybridtrial {

/// Clipping constants shared by every nuisance fit.
struct NuisanceConfig {
  double probability_clip = 1e-6;
  double ratio_min = 1e-3;
  double ratio_max = 1e3;
  double ridge_penalty = 1e-8;
};

template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;
template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;

/// Linear model with intercept: coefficients = (intercept, slopes...).
template <typename Scalar>
struct LinearModel {
  VectorX<Scalar> coefficients;
  IndexList training_indices;
  Scalar residual_variance = Scalar(0);

  template <typename Row>
  Scalar predict(const Eigen::MatrixBase<Row>& x) const {
    const Index p = coefficients.size() - 1;
    Scalar value = coefficients[0];
    for (Index k = 0; k < p; ++k) value += coefficients[k + 1] * x(k);
    return value;
  }

  template <typename Derived>
  VectorX<Scalar> predict(const Eigen::MatrixBase<Derived>& x, std::span<const Index> rows) const {
    VectorX<Scalar> out(static_cast<Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) out[k] = predict(x.row(rows[k]));
    return out;
  }
};

/// Logistic model with intercept for P(label = 1 | x).
template <typename Scalar>
struct LogisticModel {
  VectorX<Scalar> coefficients;
  bool converged = false;
  int iterations = 0;
  // Log-likelihood after each accepted IRLS step (entry 0 is the start).
  std::vector<Scalar> log_likelihood_trace;

  template <typename Row>
  Scalar linear_predictor(const Eigen::MatrixBase<Row>& x) const {
    const Index p = coefficients.size() - 1;
    Scalar eta = coefficients[0];
    for (Index k = 0; k < p; ++k) eta += coefficients[k + 1] * x(k);
    return eta;
  }

  template <typename Row>
  Scalar probability(const Eigen::MatrixBase<Row>& x, Scalar clip = Scalar(1e-6)) const {
    const Scalar eta = linear_predictor(x);
    const Scalar prob = eta >= 0 ? Scalar(1) / (Scalar(1) + std::exp(-eta))
                                 : std::exp(eta) / (Scalar(1) + std::exp(eta));
    return std::clamp(prob, clip, Scalar(1) - clip);
  }
};

struct VarianceRatio {
  double value = 1.0;
  // Set when a residual variance vanished and the ratio sits on a clip bound.
  bool degenerate = false;
};

namespace detail {

template <typename DerivedX>
MatrixX<typename DerivedX::Scalar> design_matrix(const Eigen::MatrixBase<DerivedX>& x,
                                                 std::span<const Index> rows) {
  using Scalar = typename DerivedX::Scalar;
  const Index m = static_cast<Index>(rows.size());
  MatrixX<Scalar> z(m, x.cols() + 1);
  z.col(0).setOnes();
  for (Index k = 0; k < m; ++k) z.row(k).tail(x.cols()) = x.row(rows[k]);
  return z;
}

template <typename Scalar>
Scalar softplus(Scalar eta) {
  return eta > 0 ? eta + std::log1p(std::exp(-eta)) : std::log1p(std::exp(eta));
}

}  // namespace detail

/// Least squares with intercept on the given rows. A rank-deficient design
/// falls back to a ridge solve that leaves the intercept unpenalized.
template <typename DerivedX, typename DerivedY>
LinearModel<typename DerivedX::Scalar> fit_ols(const Eigen::MatrixBase<DerivedX>& x,
                                               const Eigen::MatrixBase<DerivedY>& y,
                                               std::span<const Index> rows,
                                               double ridge_penalty = 1e-8) {
  using Scalar = typename DerivedX::Scalar;
  const Index m = static_cast<Index>(rows.size());
  const Index p = x.cols();
  if (m < p + 2) {
    throw Error(ErrorCode::TooFewRows, "OLS needs at least " + std::to_string(p + 2) +
                                           " rows, got " + std::to_string(m));
  }

  const MatrixX<Scalar> z = detail::design_matrix(x, rows);
  VectorX<Scalar> target(m);
  for (Index k = 0; k < m; ++k) target[k] = y[rows[k]];

  LinearModel<Scalar> model;
  model.training_indices.assign(rows.begin(), rows.end());

  Eigen::ColPivHouseholderQR<MatrixX<Scalar>> qr(z);
  qr.setThreshold(Scalar(1e-10));
  if (qr.rank() == p + 1) {
    model.coefficients = qr.solve(target);
  } else {
    MatrixX<Scalar> gram = z.transpose() * z;
    gram.diagonal().tail(p).array() += Scalar(ridge_penalty);
    model.coefficients = gram.ldlt().solve(z.transpose() * target);
  }

  const Scalar rss = (target - z * model.coefficients).squaredNorm();
  model.residual_variance = rss / Scalar(m - p - 1);
  return model;
}

/// Logistic regression by IRLS with step halving, so the log-likelihood never
/// decreases between accepted steps (up to rounding: steps below 1e-4 are taken
/// whole). Separable data runs to the iteration cap and reports converged = false.
template <typename DerivedX, typename DerivedL>
LogisticModel<typename DerivedX::Scalar> fit_logistic(const Eigen::MatrixBase<DerivedX>& x,
                                                      const Eigen::MatrixBase<DerivedL>& labels,
                                                      std::span<const Index> rows,
                                                      int max_iterations = 100,
                                                      double tolerance = 1e-8) {
  using Scalar = typename DerivedX::Scalar;
  const Index m = static_cast<Index>(rows.size());
  const Index cols = x.cols() + 1;

  VectorX<Scalar> y(m);
  for (Index k = 0; k < m; ++k) y[k] = static_cast<Scalar>(labels[rows[k]]);
  const Scalar positives = y.sum();
  if (m == 0 || positives == Scalar(0) || positives == Scalar(m)) {
    throw Error(ErrorCode::OneClass, "logistic fit needs both label classes");
  }

  const MatrixX<Scalar> z = detail::design_matrix(x, rows);
  auto log_likelihood = [&](const VectorX<Scalar>& beta) {
    const VectorX<Scalar> eta = z * beta;
    Scalar ll = 0;
    for (Index k = 0; k < m; ++k) ll += y[k] * eta[k] - detail::softplus(eta[k]);
    return ll;
  };

  LogisticModel<Scalar> model;
  model.coefficients = VectorX<Scalar>::Zero(cols);
  const Scalar mean = positives / Scalar(m);
  model.coefficients[0] = std::log(mean / (Scalar(1) - mean));
  Scalar ll = log_likelihood(model.coefficients);
  model.log_likelihood_trace.push_back(ll);

  VectorX<Scalar> prob(m);
  VectorX<Scalar> weight(m);
  for (int iter = 0; iter < max_iterations; ++iter) {
    model.iterations = iter + 1;
    const VectorX<Scalar> eta = z * model.coefficients;
    for (Index k = 0; k < m; ++k) {
      prob[k] = Scalar(1) / (Scalar(1) + std::exp(-eta[k]));
      weight[k] = prob[k] * (Scalar(1) - prob[k]);
    }
    const VectorX<Scalar> gradient = z.transpose() * (y - prob);
    const MatrixX<Scalar> hessian = z.transpose() * weight.asDiagonal() * z;
    Eigen::LDLT<MatrixX<Scalar>> ldlt(hessian);
    if (ldlt.info() != Eigen::Success || !ldlt.isPositive()) break;
    const VectorX<Scalar> step = ldlt.solve(gradient);
    if (!step.allFinite()) break;
    const Scalar size = step.cwiseAbs().maxCoeff();
    // Near the optimum the likelihood gain is below rounding, so small
    // Newton steps are taken whole instead of line-searched.
    if (size < Scalar(1e-4)) {
      model.coefficients += step;
      ll = log_likelihood(model.coefficients);
      model.log_likelihood_trace.push_back(ll);
      const Scalar floor = Scalar(64) * std::numeric_limits<Scalar>::epsilon() *
                           (Scalar(1) + model.coefficients.cwiseAbs().maxCoeff());
      if (size < std::max(Scalar(tolerance), floor)) {
        model.converged = true;
        break;
      }
      continue;
    }

    // Halve until the likelihood does not drop.
    Scalar scale = 1;
    VectorX<Scalar> candidate = model.coefficients + step;
    Scalar candidate_ll = log_likelihood(candidate);
    int halvings = 0;
    while (!(candidate_ll >= ll) && halvings < 40) {
      scale /= 2;
      candidate = model.coefficients + scale * step;
      candidate_ll = log_likelihood(candidate);
      ++halvings;
    }
    if (!(candidate_ll >= ll)) break;
    model.coefficients = candidate;
    ll = candidate_ll;
    model.log_likelihood_trace.push_back(ll);
  }
  return model;
}

/// Ratio of sample variances (denominator m-1), clipped to [ratio_min, ratio_max].
template <typename DerivedA, typename DerivedB>
VarianceRatio estimate_variance_ratio(const Eigen::MatrixBase<DerivedA>& resid_rct_controls,
                                      const Eigen::MatrixBase<DerivedB>& resid_externals,
                                      const NuisanceConfig& config = {}) {
  if (resid_rct_controls.size() < 2 || resid_externals.size() < 2) {
    throw Error(ErrorCode::TooFewRows, "variance ratio needs at least two residuals per group");
  }
  auto sample_variance = [](const auto& v) {
    const double mean = v.mean();
    return (v.array() - mean).square().sum() / static_cast<double>(v.size() - 1);
  };
  const double num = sample_variance(resid_rct_controls.template cast<double>());
  const double den = sample_variance(resid_externals.template cast<double>());

  VarianceRatio ratio;
  if (num == 0.0 && den == 0.0) {
    ratio.degenerate = true;
    ratio.value = 1.0;
  } else if (den == 0.0) {
    ratio.degenerate = true;
    ratio.value = config.ratio_max;
  } else if (num == 0.0) {
    ratio.degenerate = true;
    ratio.value = config.ratio_min;
  } else {
    ratio.value = std::clamp(num / den, config.ratio_min, config.ratio_max);
  }
  return ratio;
}

/// The known treatment probability of the design; never estimated.
inline double known_propensity(const DesignSpec& design) { return design.probability(); }

}  // namespace hybridtrial
