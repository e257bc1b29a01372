#pragma once

#include "hybridtrial/data.hpp"
#include "hybridtrial/nuisance.hpp"
#include "hybridtrial/random.hpp"

#include <Eigen/Dense>

#include <functional>
#include <string>
#include <vector>

namespace hybridtrial {

struct ConformalMethod {
  enum class Kind { Split, Full, CVPlus, JackknifePlus };

  Kind kind = Kind::CVPlus;
  double calibration_fraction = 0.25;  // Split only
  int folds = 10;                      // CVPlus only

  static ConformalMethod split(double calibration_fraction = 0.25);
  static ConformalMethod full();
  static ConformalMethod cv_plus(int folds = 10);
  static ConformalMethod jackknife_plus();

  std::string name() const;
  static ConformalMethod parse(const std::string& name, int folds = 10,
                               double calibration_fraction = 0.25);
};

/// Nonconformity score of (x, y) under a fitted prediction model.
using ScoreFunction = std::function<double(const LinearModel<double>&, CovariateRow, double)>;

double score_abs_residual(const LinearModel<double>& model, CovariateRow x, double y);

/// Per-external-control conformal p-values, in the order of IndexSets::external.
struct ConformalPValues {
  Eigen::VectorXd pvalues;
  // Score of each external control. For CV+ and jackknife+, where the score
  // depends on the reference unit, this is the mean over reference units.
  Eigen::VectorXd scores;
  // m in the p-value grid {k / (m + 1)}.
  Index reference_size = 0;
};

ConformalPValues split_conformal_pvalues(const TrialData& data, const IndexSets& sets,
                                         double calibration_fraction, Rng& rng,
                                         const ScoreFunction& score = score_abs_residual);

ConformalPValues full_conformal_pvalues(const TrialData& data, const IndexSets& sets,
                                        const ScoreFunction& score = score_abs_residual);

ConformalPValues cvplus_pvalues(const TrialData& data, const IndexSets& sets, int folds, Rng& rng,
                                const ScoreFunction& score = score_abs_residual);

ConformalPValues jackknife_plus_pvalues(const TrialData& data, const IndexSets& sets,
                                        const ScoreFunction& score = score_abs_residual);

ConformalPValues conformal_pvalues(const TrialData& data, const IndexSets& sets,
                                   const ConformalMethod& method, Rng& rng,
                                   const ScoreFunction& score = score_abs_residual);

/// Positions j (into the p-value vector) with p_j > gamma.
std::vector<Index> select_ecs(const Eigen::VectorXd& pvalues, double gamma);

/// Data row indices of the externals selected at gamma.
IndexList selected_rows(const IndexSets& sets, const Eigen::VectorXd& pvalues, double gamma);

struct ConformalReport {
  Eigen::VectorXd pvalues;
  ConformalMethod method;
  double gamma = 0.0;
  IndexList selected;  // data rows
  Eigen::VectorXd scores_ec;
  Index calibration_size = 0;
};

ConformalReport make_conformal_report(const TrialData& data, const IndexSets& sets,
                                      const ConformalMethod& method, double gamma, Rng& rng);

/// Randomized controls ordered by unit id, so fold and split assignment do not
/// depend on row order.
IndexList canonical_controls(const TrialData& data, const IndexSets& sets);

/// Contiguous blocks of a shuffled control list; sizes differ by at most one.
std::vector<IndexList> assign_folds(IndexList controls, int folds, Rng& rng);

}  // namespace hybridtrial
