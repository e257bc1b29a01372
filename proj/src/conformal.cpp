#include "hybridtrial/conformal.hpp"

#include "hybridtrial/error.hpp"

#include <algorithm>
#include <cassert>
#include <cmath>
#include <numeric>

namespace hybridtrial {

namespace {

[[maybe_unused]] bool on_grid(const Eigen::VectorXd& pvalues, Index m) {
  for (const double p : pvalues) {
    const double k = p * static_cast<double>(m + 1);
    if (std::abs(k - std::round(k)) > 1e-9 || k < 0.5 || k > static_cast<double>(m + 1) + 0.5) {
      return false;
    }
  }
  return true;
}

double grid_pvalue(Index count_at_least, Index m) {
  return static_cast<double>(count_at_least + 1) / static_cast<double>(m + 1);
}

// Scores that agree up to rounding count as ties (and ties count as ">=");
// otherwise exact-fit residuals would be ordered by floating-point noise.
bool at_least(double s_i, double s_j) {
  return s_i >= s_j - 1e-12 * (1.0 + std::abs(s_j));
}

void require_controls(bool ok, const std::string& what) {
  if (!ok) throw Error(ErrorCode::TooFewControls, what);
}

// Fits one prediction model per fold (trained on the controls outside the
// fold) and evaluates the "plus" p-value shared by CV+ and jackknife+.
ConformalPValues fold_pvalues(const TrialData& data, const IndexSets& sets,
                              const IndexList& canonical, const std::vector<IndexList>& folds,
                              const ScoreFunction& score) {
  const auto& x = data.covariates();
  const auto& y = data.outcome();
  const Index n_ec = static_cast<Index>(sets.external.size());
  const Index m = static_cast<Index>(canonical.size());

  std::vector<char> in_fold(static_cast<std::size_t>(data.size()), 0);
  Eigen::VectorXi counts = Eigen::VectorXi::Zero(n_ec);
  Eigen::VectorXd score_sum = Eigen::VectorXd::Zero(n_ec);
  IndexList training;
  training.reserve(canonical.size());
  Eigen::VectorXd ec_scores(n_ec);

  // Visit folds in canonical order so the score average does not depend on
  // how the folds were drawn.
  std::vector<Index> position(static_cast<std::size_t>(data.size()), 0);
  for (Index k = 0; k < m; ++k) position[canonical[k]] = k;
  std::vector<const IndexList*> ordered;
  for (const auto& fold : folds) ordered.push_back(&fold);
  auto first = [&](const IndexList* f) {
    Index lo = m;
    for (const Index i : *f) lo = std::min(lo, position[i]);
    return lo;
  };
  std::sort(ordered.begin(), ordered.end(),
            [&](const IndexList* a, const IndexList* b) { return first(a) < first(b); });

  for (const IndexList* fold_ptr : ordered) {
    const IndexList& fold = *fold_ptr;
    for (const Index i : fold) in_fold[i] = 1;
    training.clear();
    for (const Index i : canonical) {
      if (!in_fold[i]) training.push_back(i);
    }
    for (const Index i : fold) in_fold[i] = 0;

    const auto model = fit_ols(x, y, training);
    for (Index j = 0; j < n_ec; ++j) {
      const Index row = sets.external[j];
      ec_scores[j] = score(model, data.row(row), y[row]);
    }
    for (const Index i : fold) {
      const double s_i = score(model, data.row(i), y[i]);
      for (Index j = 0; j < n_ec; ++j) {
        if (at_least(s_i, ec_scores[j])) ++counts[j];
      }
    }
    score_sum += static_cast<double>(fold.size()) * ec_scores;
  }

  ConformalPValues out;
  out.reference_size = m;
  out.pvalues.resize(n_ec);
  for (Index j = 0; j < n_ec; ++j) out.pvalues[j] = grid_pvalue(counts[j], m);
  out.scores = score_sum / static_cast<double>(m);
  assert(on_grid(out.pvalues, m));
  return out;
}

}  // namespace

ConformalMethod ConformalMethod::split(double calibration_fraction) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "calibration fraction must lie in (0, 1)");
  }
  ConformalMethod m;
  m.kind = Kind::Split;
  m.calibration_fraction = calibration_fraction;
  return m;
}

ConformalMethod ConformalMethod::full() {
  ConformalMethod m;
  m.kind = Kind::Full;
  return m;
}

ConformalMethod ConformalMethod::cv_plus(int folds) {
  if (folds < 2) throw Error(ErrorCode::BadFoldCount, "CV+ needs at least 2 folds");
  ConformalMethod m;
  m.kind = Kind::CVPlus;
  m.folds = folds;
  return m;
}

ConformalMethod ConformalMethod::jackknife_plus() {
  ConformalMethod m;
  m.kind = Kind::JackknifePlus;
  return m;
}

std::string ConformalMethod::name() const {
  switch (kind) {
    case Kind::Split: return "split";
    case Kind::Full: return "full";
    case Kind::CVPlus: return "cv+";
    case Kind::JackknifePlus: return "jackknife+";
  }
  return "unknown";
}

ConformalMethod ConformalMethod::parse(const std::string& name, int folds,
                                       double calibration_fraction) {
  if (name == "split") return split(calibration_fraction);
  if (name == "full") return full();
  if (name == "cv+" || name == "cvplus") return cv_plus(folds);
  if (name == "jackknife+" || name == "jackknife") return jackknife_plus();
  throw Error(ErrorCode::InvalidArgument, "unknown conformal method '" + name + "'");
}

double score_abs_residual(const LinearModel<double>& model, CovariateRow x, double y) {
  return std::abs(y - model.predict(x));
}

IndexList canonical_controls(const TrialData& data, const IndexSets& sets) {
  IndexList controls = sets.rct_controls;
  std::stable_sort(controls.begin(), controls.end(), [&](Index a, Index b) {
    const Index ka = data.order_key(a);
    const Index kb = data.order_key(b);
    return ka != kb ? ka < kb : a < b;
  });
  return controls;
}

std::vector<IndexList> assign_folds(IndexList controls, int folds, Rng& rng) {
  const Index m = static_cast<Index>(controls.size());
  if (folds < 2 || folds > m) {
    throw Error(ErrorCode::BadFoldCount, "fold count " + std::to_string(folds) +
                                             " must lie in [2, " + std::to_string(m) + "]");
  }
  std::shuffle(controls.begin(), controls.end(), rng);
  std::vector<IndexList> out(static_cast<std::size_t>(folds));
  const Index base = m / folds;
  const Index extra = m % folds;
  Index pos = 0;
  for (Index k = 0; k < folds; ++k) {
    const Index size = base + (k < extra ? 1 : 0);
    out[k].assign(controls.begin() + pos, controls.begin() + pos + size);
    pos += size;
  }
  return out;
}

ConformalPValues split_conformal_pvalues(const TrialData& data, const IndexSets& sets,
                                         double calibration_fraction, Rng& rng,
                                         const ScoreFunction& score) {
  if (!(calibration_fraction > 0.0 && calibration_fraction < 1.0)) {
    throw Error(ErrorCode::InvalidArgument, "calibration fraction must lie in (0, 1)");
  }
  const Index n_c = static_cast<Index>(sets.rct_controls.size());
  require_controls(n_c >= 4, "split conformal needs at least 4 randomized controls");
  const Index n_cal = static_cast<Index>(std::ceil(calibration_fraction * static_cast<double>(n_c)));
  require_controls(n_cal >= 1 && n_c - n_cal >= data.dim() + 2,
                   "split conformal training set is too small for the prediction model");

  const IndexList canonical = canonical_controls(data, sets);
  IndexList shuffled = canonical;
  std::shuffle(shuffled.begin(), shuffled.end(), rng);

  std::vector<char> is_cal(static_cast<std::size_t>(data.size()), 0);
  IndexList calibration(shuffled.begin(), shuffled.begin() + n_cal);
  for (const Index i : calibration) is_cal[i] = 1;
  IndexList training;
  for (const Index i : canonical) {
    if (!is_cal[i]) training.push_back(i);
  }

  const auto& y = data.outcome();
  const auto model = fit_ols(data.covariates(), y, training);
  std::vector<double> cal_scores;
  cal_scores.reserve(calibration.size());
  for (const Index i : calibration) cal_scores.push_back(score(model, data.row(i), y[i]));

  const Index n_ec = static_cast<Index>(sets.external.size());
  ConformalPValues out;
  out.reference_size = n_cal;
  out.pvalues.resize(n_ec);
  out.scores.resize(n_ec);
  for (Index j = 0; j < n_ec; ++j) {
    const Index row = sets.external[j];
    const double s_j = score(model, data.row(row), y[row]);
    const auto count = std::count_if(cal_scores.begin(), cal_scores.end(),
                                     [&](double s_i) { return at_least(s_i, s_j); });
    out.scores[j] = s_j;
    out.pvalues[j] = grid_pvalue(count, n_cal);
  }
  assert(on_grid(out.pvalues, n_cal));
  return out;
}

ConformalPValues full_conformal_pvalues(const TrialData& data, const IndexSets& sets,
                                        const ScoreFunction& score) {
  const Index n_c = static_cast<Index>(sets.rct_controls.size());
  require_controls(n_c >= data.dim() + 2, "full conformal needs at least p+2 randomized controls");

  const IndexList canonical = canonical_controls(data, sets);
  const auto& y = data.outcome();
  const Index n_ec = static_cast<Index>(sets.external.size());

  ConformalPValues out;
  out.reference_size = n_c;
  out.pvalues.resize(n_ec);
  out.scores.resize(n_ec);
  IndexList augmented = canonical;
  augmented.push_back(0);
  for (Index j = 0; j < n_ec; ++j) {
    const Index row = sets.external[j];
    augmented.back() = row;
    const auto model = fit_ols(data.covariates(), y, augmented);
    const double s_j = score(model, data.row(row), y[row]);
    Index count = 0;
    for (const Index i : canonical) {
      if (at_least(score(model, data.row(i), y[i]), s_j)) ++count;
    }
    out.scores[j] = s_j;
    out.pvalues[j] = grid_pvalue(count, n_c);
  }
  assert(on_grid(out.pvalues, n_c));
  return out;
}

ConformalPValues cvplus_pvalues(const TrialData& data, const IndexSets& sets, int folds, Rng& rng,
                                const ScoreFunction& score) {
  const Index n_c = static_cast<Index>(sets.rct_controls.size());
  const IndexList canonical = canonical_controls(data, sets);
  const auto fold_sets = assign_folds(canonical, folds, rng);
  const Index largest = static_cast<Index>(fold_sets.front().size());
  require_controls(n_c - largest >= data.dim() + 2,
                   "CV+ training folds are too small for the prediction model");
  return fold_pvalues(data, sets, canonical, fold_sets, score);
}

ConformalPValues jackknife_plus_pvalues(const TrialData& data, const IndexSets& sets,
                                        const ScoreFunction& score) {
  const Index n_c = static_cast<Index>(sets.rct_controls.size());
  require_controls(n_c >= data.dim() + 3, "jackknife+ needs at least p+3 randomized controls");
  const IndexList canonical = canonical_controls(data, sets);
  std::vector<IndexList> singletons;
  singletons.reserve(canonical.size());
  for (const Index i : canonical) singletons.push_back({i});
  return fold_pvalues(data, sets, canonical, singletons, score);
}

ConformalPValues conformal_pvalues(const TrialData& data, const IndexSets& sets,
                                   const ConformalMethod& method, Rng& rng,
                                   const ScoreFunction& score) {
  switch (method.kind) {
    case ConformalMethod::Kind::Split:
      return split_conformal_pvalues(data, sets, method.calibration_fraction, rng, score);
    case ConformalMethod::Kind::Full:
      return full_conformal_pvalues(data, sets, score);
    case ConformalMethod::Kind::CVPlus:
      return cvplus_pvalues(data, sets, method.folds, rng, score);
    case ConformalMethod::Kind::JackknifePlus:
      return jackknife_plus_pvalues(data, sets, score);
  }
  throw Error(ErrorCode::InvalidArgument, "unknown conformal method");
}

std::vector<Index> select_ecs(const Eigen::VectorXd& pvalues, double gamma) {
  std::vector<Index> selected;
  for (Index j = 0; j < pvalues.size(); ++j) {
    if (pvalues[j] > gamma) selected.push_back(j);
  }
  return selected;
}

IndexList selected_rows(const IndexSets& sets, const Eigen::VectorXd& pvalues, double gamma) {
  IndexList rows;
  for (const Index j : select_ecs(pvalues, gamma)) rows.push_back(sets.external[j]);
  return rows;
}

ConformalReport make_conformal_report(const TrialData& data, const IndexSets& sets,
                                      const ConformalMethod& method, double gamma, Rng& rng) {
  const auto pv = conformal_pvalues(data, sets, method, rng);
  ConformalReport report;
  report.pvalues = pv.pvalues;
  report.method = method;
  report.gamma = gamma;
  report.selected = selected_rows(sets, pv.pvalues, gamma);
  report.scores_ec = pv.scores;
  report.calibration_size = pv.reference_size;
  return report;
}

}  // namespace hybridtrial
