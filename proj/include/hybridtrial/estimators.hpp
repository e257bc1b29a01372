#pragma once

#include "hybridtrial/conformal.hpp"
#include "hybridtrial/data.hpp"
#include "hybridtrial/nuisance.hpp"
#include "hybridtrial/random.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace hybridtrial {

struct AdaptiveConfig {
  std::vector<double> grid = {0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0};
  int bootstrap_count = 100;  // L
};

struct EstimatorSpec {
  enum class Kind { DifInMeans, NoBorrow, FullBorrow, ConformalSelective };

  Kind kind = Kind::NoBorrow;
  // ConformalSelective only: a fixed threshold, or nullopt for the adaptive
  // (MSE-minimizing) threshold.
  std::optional<double> gamma;
  ConformalMethod conformal = ConformalMethod::cv_plus(10);
  AdaptiveConfig adaptive;
  NuisanceConfig nuisance;

  static EstimatorSpec difmeans();
  static EstimatorSpec no_borrow();
  static EstimatorSpec full_borrow();
  static EstimatorSpec selective(double gamma, ConformalMethod method = ConformalMethod::cv_plus(10));
  static EstimatorSpec selective_adaptive(ConformalMethod method = ConformalMethod::cv_plus(10),
                                          AdaptiveConfig adaptive = {});

  bool is_adaptive() const { return kind == Kind::ConformalSelective && !gamma; }

  // "difmeans", "nb", "fb", "csb(0.3)" or "csb(adaptive)".
  std::string name() const;
};

struct Estimate {
  double value = 0.0;
  Index n_borrowed = 0;
  IndexList selected;  // data rows of borrowed external controls
  std::optional<double> se_bootstrap;
  std::optional<std::pair<double, double>> ci;
  std::optional<double> gamma_used;
};

Estimate estimate_difmeans(const TrialData& data, const IndexSets& sets);

Estimate estimate_nb(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                     const NuisanceConfig& config = {});

Estimate estimate_fb(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                     const NuisanceConfig& config = {});

/// Borrowing weights: pi * [S(1-A) + (1-S) 1{borrowed} r] / [pi (1-e) + (1-pi) r].
/// `borrowed` flags which externals count; randomized units ignore it.
Eigen::VectorXd compute_fb_weights(const Eigen::VectorXd& pi_hat, double e_hat, double r_hat,
                                   const Eigen::VectorXi& sample, const Eigen::VectorXi& assignment,
                                   const Eigen::VectorXi& borrowed);

/// Doubly robust estimate that borrows exactly the given external rows (all of
/// E reproduces FB; an empty list reproduces NB).
Estimate estimate_with_borrowed(const TrialData& data, const IndexSets& sets,
                                const DesignSpec& design, const IndexList& borrowed,
                                const NuisanceConfig& config = {});

Estimate estimate_csb(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                      double gamma, const ConformalMethod& method, Rng& rng,
                      const NuisanceConfig& config = {});

/// Evaluates any estimator spec; the adaptive CSB runs the MSE-minimizing
/// threshold search first.
Estimate evaluate(const EstimatorSpec& spec, const TrialData& data, const IndexSets& sets,
                  const DesignSpec& design, Rng& rng);

/// Caches the pieces shared by every borrowed set on one dataset (the treated
/// outcome model and the no-borrowing estimate).
class BorrowingEvaluator {
 public:
  BorrowingEvaluator(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                     const NuisanceConfig& config = {});

  double no_borrow() const { return nb_value_; }
  double evaluate(const IndexList& borrowed) const;

 private:
  const TrialData& data_;
  const IndexSets& sets_;
  NuisanceConfig config_;
  double e_hat_;
  Eigen::VectorXd treated_term_;  // per RCT unit: mu1 + A/e (Y - mu1), indexed like rct_all
  double treated_sum_ = 0.0;
  double nb_value_ = 0.0;
};

/// Row indices of a resample drawn with replacement within T, C and E
/// separately, preserving each group's size.
IndexList stratified_bootstrap_rows(const IndexSets& sets, Rng& rng);

struct BootstrapSummary {
  double se = 0.0;
  std::pair<double, double> ci{0.0, 0.0};
  std::vector<double> replicates;
};

BootstrapSummary bootstrap_se_ci(const TrialData& data, const IndexSets& sets,
                                 const DesignSpec& design, const EstimatorSpec& spec,
                                 double point_estimate, int replicates, Rng& rng,
                                 unsigned threads = 1);

}  // namespace hybridtrial
