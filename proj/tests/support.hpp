#pragma once

// Shared generators and independent oracles for the unit and acceptance tests.
// The oracles deliberately avoid the library's solvers: least squares goes
// through an SVD pseudo-inverse, logistic regression through undamped Newton
// with a full-pivot LU, and the estimators are summed term by term.

#include "hybridtrial/data.hpp"
#include "hybridtrial/random.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <string>
#include <vector>

namespace testsupport {

using hybridtrial::Index;
using hybridtrial::IndexList;
using hybridtrial::Rng;
using hybridtrial::TrialData;

struct Layout {
  Index n1 = 6;
  Index n0 = 6;
  Index nE = 5;
  Index p = 1;
  double ec_shift = 0.0;  // added to external outcomes
  double effect = 0.5;
};

// Row order is shuffled so that code relying on randomized units coming first
// gets caught; ids are assigned in a different shuffled order.
inline TrialData random_trial(const Layout& l, Rng& rng, bool shuffle_rows = true) {
  const Index n = l.n1 + l.n0 + l.nE;
  std::normal_distribution<double> normal;
  std::vector<Index> order(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) order[static_cast<std::size_t>(i)] = i;
  if (shuffle_rows) std::shuffle(order.begin(), order.end(), rng);

  hybridtrial::CovariateMatrix x(n, l.p);
  Eigen::VectorXd y(n);
  Eigen::VectorXi a = Eigen::VectorXi::Zero(n);
  Eigen::VectorXi s = Eigen::VectorXi::Zero(n);
  for (Index k = 0; k < n; ++k) {
    const Index i = order[static_cast<std::size_t>(k)];
    const bool rct = k < l.n1 + l.n0;
    const bool treated = k < l.n1;
    s[i] = rct ? 1 : 0;
    a[i] = treated ? 1 : 0;
    for (Index j = 0; j < l.p; ++j) x(i, j) = normal(rng) + (rct ? 0.0 : 0.3);
    y[i] = x.row(i).sum() + (treated ? l.effect : 0.0) + (rct ? 0.0 : l.ec_shift) + normal(rng);
  }
  std::vector<std::string> ids(static_cast<std::size_t>(n));
  std::vector<Index> id_order = order;
  std::shuffle(id_order.begin(), id_order.end(), rng);
  for (Index k = 0; k < n; ++k) ids[static_cast<std::size_t>(id_order[k])] = "id" + std::to_string(1000 + k);
  return TrialData(std::move(x), std::move(y), std::move(a), std::move(s), std::move(ids));
}

inline Eigen::MatrixXd design(const TrialData& d, const IndexList& rows) {
  Eigen::MatrixXd z(static_cast<Index>(rows.size()), d.dim() + 1);
  for (std::size_t k = 0; k < rows.size(); ++k) {
    z(static_cast<Index>(k), 0) = 1.0;
    z.row(static_cast<Index>(k)).tail(d.dim()) = d.row(rows[k]);
  }
  return z;
}

// beta = pinv(Z) y via SVD.
inline Eigen::VectorXd ols_oracle(const Eigen::MatrixXd& z, const Eigen::VectorXd& y) {
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(z, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const Eigen::VectorXd sv = svd.singularValues();
  Eigen::VectorXd inv = Eigen::VectorXd::Zero(sv.size());
  for (Index k = 0; k < sv.size(); ++k) {
    if (sv[k] > 1e-12 * sv[0]) inv[k] = 1.0 / sv[k];
  }
  return svd.matrixV() * inv.asDiagonal() * svd.matrixU().transpose() * y;
}

inline Eigen::VectorXd ols_oracle(const TrialData& d, const IndexList& rows) {
  Eigen::VectorXd y(static_cast<Index>(rows.size()));
  for (std::size_t k = 0; k < rows.size(); ++k) y[static_cast<Index>(k)] = d.outcome()[rows[k]];
  return ols_oracle(design(d, rows), y);
}

inline double predict(const Eigen::VectorXd& beta, const TrialData& d, Index i) {
  return beta[0] + d.row(i).dot(beta.tail(d.dim()));
}

// Plain Newton from zero, no step control.
inline Eigen::VectorXd logistic_oracle(const Eigen::MatrixXd& z, const Eigen::VectorXd& y,
                                       int iterations = 200) {
  Eigen::VectorXd beta = Eigen::VectorXd::Zero(z.cols());
  for (int it = 0; it < iterations; ++it) {
    Eigen::VectorXd p(z.rows());
    Eigen::VectorXd w(z.rows());
    for (Index k = 0; k < z.rows(); ++k) {
      p[k] = 1.0 / (1.0 + std::exp(-z.row(k).dot(beta)));
      w[k] = p[k] * (1.0 - p[k]);
    }
    const Eigen::MatrixXd h = z.transpose() * w.asDiagonal() * z;
    const Eigen::VectorXd step = h.fullPivLu().solve(z.transpose() * (y - p));
    beta += step;
    if (step.norm() < 1e-15) break;
  }
  return beta;
}

inline double sample_var(const std::vector<double>& v) {
  double m = 0.0;
  for (const double x : v) m += x;
  m /= static_cast<double>(v.size());
  double ss = 0.0;
  for (const double x : v) ss += (x - m) * (x - m);
  return ss / static_cast<double>(v.size() - 1);
}

// Doubly robust estimate borrowing `borrowed` external rows, written out term
// by term from the estimator's definition.
inline double brute_force_estimate(const TrialData& d, const IndexList& borrowed, double e) {
  IndexList treated, controls, rct;
  for (Index i = 0; i < d.size(); ++i) {
    if (d.sample_indicator()[i] == 1) {
      rct.push_back(i);
      (d.assignment()[i] == 1 ? treated : controls).push_back(i);
    }
  }
  const auto& y = d.outcome();
  const Eigen::VectorXd b1 = ols_oracle(d, treated);
  const double n_r = static_cast<double>(rct.size());

  if (borrowed.empty()) {
    const Eigen::VectorXd b0 = ols_oracle(d, controls);
    double total = 0.0;
    for (const Index i : rct) {
      const double a = d.assignment()[i];
      const double m1 = predict(b1, d, i);
      const double m0 = predict(b0, d, i);
      total += m1 + a / e * (y[i] - m1) - m0 - (1.0 - a) / (1.0 - e) * (y[i] - m0);
    }
    return total / n_r;
  }

  IndexList pooled = controls;
  pooled.insert(pooled.end(), borrowed.begin(), borrowed.end());
  const Eigen::VectorXd b0 = ols_oracle(d, pooled);

  IndexList involved = rct;
  involved.insert(involved.end(), borrowed.begin(), borrowed.end());
  Eigen::VectorXd labels(static_cast<Index>(involved.size()));
  for (std::size_t k = 0; k < involved.size(); ++k) labels[static_cast<Index>(k)] = d.sample_indicator()[involved[k]];
  const Eigen::VectorXd gamma = logistic_oracle(design(d, involved), labels);

  double r = 1.0;
  if (borrowed.size() >= 2) {
    std::vector<double> rc, re;
    for (const Index i : controls) rc.push_back(y[i] - predict(b0, d, i));
    for (const Index i : borrowed) re.push_back(y[i] - predict(b0, d, i));
    r = std::clamp(sample_var(rc) / sample_var(re), 1e-3, 1e3);
  }

  double total = 0.0;
  for (const Index i : involved) {
    const double s = d.sample_indicator()[i];
    const double a = d.assignment()[i];
    const double pi = std::clamp(1.0 / (1.0 + std::exp(-predict(gamma, d, i))), 1e-6, 1.0 - 1e-6);
    const double m1 = predict(b1, d, i);
    const double m0 = predict(b0, d, i);
    const double w = pi * (s * (1.0 - a) + (1.0 - s) * r) / (pi * (1.0 - e) + (1.0 - pi) * r);
    total += s * m1 + s * a / e * (y[i] - m1) - s * m0 - w * (y[i] - m0);
  }
  return total / n_r;
}

}  // namespace testsupport
