#pragma once

#include <Eigen/Dense>

#include <iosfwd>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace hybridtrial {

using Index = Eigen::Index;
using IndexList = std::vector<Index>;

// Row-major so that a unit's covariates are contiguous.
using CovariateMatrix = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CovariateRow = Eigen::Ref<const Eigen::RowVectorXd>;

/// Unit-level data of a hybrid controlled trial: randomized units (S=1) with
/// assignment A, and external controls (S=0, always A=0).
///
/// Immutable once constructed; the derived copies (`with_assignment`,
/// `with_outcome`, `subset`) share the unit-id pool with their parent.
class TrialData {
 public:
  TrialData(CovariateMatrix covariates, Eigen::VectorXd outcome,
            Eigen::VectorXi assignment, Eigen::VectorXi sample_indicator,
            std::vector<std::string> unit_ids = {});

  Index size() const { return outcome_.size(); }
  Index dim() const { return covariates_.cols(); }
  Index n_rct() const { return n_rct_; }
  Index n_external() const { return size() - n_rct_; }

  const CovariateMatrix& covariates() const { return covariates_; }
  const Eigen::VectorXd& outcome() const { return outcome_; }
  const Eigen::VectorXi& assignment() const { return assignment_; }
  const Eigen::VectorXi& sample_indicator() const { return sample_; }

  CovariateRow row(Index i) const { return covariates_.row(i); }

  const std::string& unit_id(Index i) const { return (*id_pool_)[id_ref_[i]]; }
  std::vector<std::string> unit_ids() const;
  std::vector<std::string> unit_ids(std::span<const Index> rows) const;

  // Position of unit i in the lexicographic order of unit ids. Resampled
  // duplicates share a key; callers break ties by row position.
  Index order_key(Index i) const { return (*id_rank_)[id_ref_[i]]; }

  TrialData with_assignment(Eigen::VectorXi assignment) const;
  TrialData with_outcome(Eigen::VectorXd outcome) const;
  TrialData subset(std::span<const Index> rows) const;

 private:
  TrialData() = default;
  void validate() const;

  CovariateMatrix covariates_;
  Eigen::VectorXd outcome_;
  Eigen::VectorXi assignment_;
  Eigen::VectorXi sample_;
  Index n_rct_ = 0;
  std::shared_ptr<const std::vector<std::string>> id_pool_;
  std::shared_ptr<const std::vector<Index>> id_rank_;
  std::vector<Index> id_ref_;
};

/// Treated (T), randomized controls (C), all randomized (R) and externals (E),
/// each in ascending row order.
struct IndexSets {
  IndexList treated;
  IndexList rct_controls;
  IndexList rct_all;
  IndexList external;
};

/// Throws EmptyGroup when T or C is empty.
IndexSets partition(const TrialData& data);

/// Bernoulli assignment with a fixed probability; the only design family
/// supported. Resampling touches randomized units only.
class DesignSpec {
 public:
  static DesignSpec bernoulli(double probability);

  double probability() const { return probability_; }

 private:
  explicit DesignSpec(double probability) : probability_(probability) {}
  double probability_;
};

struct ColumnSchema {
  std::string outcome = "y";
  std::string assignment = "a";
  std::string sample = "s";
  // Empty means every column not otherwise named.
  std::vector<std::string> covariates;
  std::optional<std::string> id_column;
};

struct ValidationIssue {
  Index row;  // 1-based data row; 0 for header problems
  std::string column;
  std::string code;
  std::string message;
};

TrialData load_dataset(std::istream& csv, const ColumnSchema& schema = {});
TrialData load_dataset_file(const std::string& path, const ColumnSchema& schema = {});

/// Scans the whole stream and reports every problem instead of stopping at the
/// first one.
std::vector<ValidationIssue> validate_dataset(std::istream& csv,
                                              const ColumnSchema& schema = {});

/// Writes a CSV readable by load_dataset with the same schema; reals use 17
/// significant digits.
void write_dataset(std::ostream& out, const TrialData& data, const ColumnSchema& schema = {});

}  // namespace hybridtrial
