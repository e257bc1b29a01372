#include "hybridtrial/frt.hpp"

#include "hybridtrial/adaptive.hpp"
#include "hybridtrial/error.hpp"
#include "hybridtrial/parallel.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace hybridtrial {

namespace {

constexpr int kMaxDegenerateRedraws = 1000;

void check_externals_untreated(const Eigen::VectorXi& assignment, const IndexSets& sets) {
  for (const Index i : sets.external) {
    if (assignment[i] != 0) throw std::logic_error("resample assigned treatment to an external control");
  }
}

}  // namespace

double frt_pvalue(double observed, const std::vector<double>& resample_stats) {
  const auto count = std::count_if(resample_stats.begin(), resample_stats.end(),
                                   [&](double t) { return t >= observed; });
  return static_cast<double>(count + 1) / static_cast<double>(resample_stats.size() + 1);
}

Eigen::VectorXi resample_assignment(const DesignSpec& design, const IndexSets& sets, Index n,
                                    Rng& rng) {
  std::bernoulli_distribution coin(design.probability());
  Eigen::VectorXi a = Eigen::VectorXi::Zero(n);
  for (int attempt = 0; attempt < kMaxDegenerateRedraws; ++attempt) {
    Index treated = 0;
    for (const Index i : sets.rct_all) {
      a[i] = coin(rng) ? 1 : 0;
      treated += a[i];
    }
    if (treated > 0 && treated < static_cast<Index>(sets.rct_all.size())) return a;
  }
  throw Error(ErrorCode::EmptyGroup, "could not draw an assignment with both groups nonempty");
}

FrtResult run_frt(const TrialData& data, const IndexSets& sets, const DesignSpec& design,
                  const FrtConfig& config) {
  if (config.B < 1) throw Error(ErrorCode::InvalidArgument, "FRT needs B >= 1");

  FrtResult result;
  result.B = config.B;
  result.seed = config.seed;

  Rng observed_rng = make_rng(config.seed, Stream::Observed);
  result.observed = evaluate(config.statistic, data, sets, design, observed_rng);
  result.observed_stat = std::abs(result.observed.value);

  EstimatorSpec resample_spec = config.statistic;
  const bool adaptive = config.statistic.is_adaptive();
  if (adaptive && !config.recompute_threshold) resample_spec.gamma = result.observed.gamma_used;

  result.resample_stats.assign(static_cast<std::size_t>(config.B), 0.0);
  std::vector<double> gammas;
  if (adaptive && config.recompute_threshold) gammas.assign(result.resample_stats.size(), 0.0);

  parallel_for(result.resample_stats.size(), config.threads, [&](std::size_t b) {
    Rng rng = make_rng(config.seed, Stream::FrtResample, b);
    std::string last_error;
    for (int attempt = 0; attempt <= config.redraw_budget; ++attempt) {
      Eigen::VectorXi a = resample_assignment(design, sets, data.size(), rng);
      check_externals_untreated(a, sets);
      try {
        const TrialData resampled = data.with_assignment(std::move(a));
        const IndexSets resampled_sets = partition(resampled);
        const Estimate est = evaluate(resample_spec, resampled, resampled_sets, design, rng);
        result.resample_stats[b] = std::abs(est.value);
        if (!gammas.empty()) gammas[b] = est.gamma_used.value_or(1.0);
        return;
      } catch (const Error& e) {
        last_error = e.what();
      }
    }
    throw Error(ErrorCode::StatisticFailed,
                "statistic failed on resample " + std::to_string(b) + " after " +
                    std::to_string(config.redraw_budget) + " redraws: " + last_error);
  });

  result.p_value = frt_pvalue(result.observed_stat, result.resample_stats);
  if (!gammas.empty()) result.gamma_per_resample = std::move(gammas);
  return result;
}

Statistic make_statistic(const EstimatorSpec& spec, const DesignSpec& design, std::uint64_t seed) {
  return [spec, design, seed](const TrialData& data, const IndexSets& sets) {
    Rng rng = make_rng(seed, Stream::Observed);
    return std::abs(evaluate(spec, data, sets, design, rng).value);
  };
}

EnumerationResult enumerate_frt(const TrialData& data, const IndexSets& sets,
                                const DesignSpec& design, const Statistic& statistic) {
  const std::size_t n_r = sets.rct_all.size();
  if (n_r > 20) {
    throw Error(ErrorCode::TooLarge,
                "enumeration supports at most 20 randomized units, got " + std::to_string(n_r));
  }

  EnumerationResult out;
  out.observed_stat = statistic(data, sets);

  const double prob = design.probability();
  const std::uint64_t total = std::uint64_t{1} << n_r;
  for (std::uint64_t mask = 0; mask < total; ++mask) {
    const auto treated = static_cast<std::size_t>(std::popcount(mask));
    if (treated == 0 || treated == n_r) {
      ++out.excluded_degenerate;
      continue;
    }
    Eigen::VectorXi a = Eigen::VectorXi::Zero(data.size());
    for (std::size_t k = 0; k < n_r; ++k) a[sets.rct_all[k]] = (mask >> k) & 1U ? 1 : 0;
    try {
      const TrialData candidate = data.with_assignment(a);
      const double t = statistic(candidate, partition(candidate));
      out.statistics.push_back(t);
      out.weights.push_back(std::pow(prob, static_cast<double>(treated)) *
                            std::pow(1.0 - prob, static_cast<double>(n_r - treated)));
      out.assignments.push_back(std::move(a));
    } catch (const Error&) {
      ++out.excluded_failed;
    }
  }
  if (out.statistics.empty()) {
    throw Error(ErrorCode::StatisticFailed, "statistic undefined on every enumerated assignment");
  }

  const double weight_sum = std::accumulate(out.weights.begin(), out.weights.end(), 0.0);
  for (double& w : out.weights) w /= weight_sum;
  out.uniform = prob == 0.5;

  // Sort descending, then accumulate counts and weights over ties.
  const std::size_t m = out.statistics.size();
  std::vector<std::size_t> order(m);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return out.statistics[a] > out.statistics[b]; });
  out.count_at_least.assign(m, 0);
  out.pvalues.assign(m, 0.0);
  std::size_t pos = 0;
  double cumulative = 0.0;
  while (pos < m) {
    std::size_t end = pos;
    double tie_weight = 0.0;
    while (end < m && out.statistics[order[end]] == out.statistics[order[pos]]) {
      tie_weight += out.weights[order[end]];
      ++end;
    }
    cumulative += tie_weight;
    for (std::size_t k = pos; k < end; ++k) {
      out.count_at_least[order[k]] = end;
      out.pvalues[order[k]] = out.uniform ? static_cast<double>(end) / static_cast<double>(m)
                                          : std::min(cumulative, 1.0);
    }
    pos = end;
  }

  double p = 0.0;
  std::size_t count = 0;
  for (std::size_t k = 0; k < m; ++k) {
    if (out.statistics[k] >= out.observed_stat) {
      p += out.weights[k];
      ++count;
    }
  }
  out.p_value = out.uniform ? static_cast<double>(count) / static_cast<double>(m) : std::min(p, 1.0);
  return out;
}

double EnumerationResult::rejection_probability(double alpha) const {
  double total = 0.0;
  for (std::size_t k = 0; k < pvalues.size(); ++k) {
    if (pvalues[k] <= alpha) total += weights[k];
  }
  return total;
}

std::size_t EnumerationResult::rejection_count(double alpha) const {
  if (!uniform) throw Error(ErrorCode::InvalidArgument, "rejection_count needs uniform weights");
  const double limit = alpha * static_cast<double>(reference_size());
  return static_cast<std::size_t>(std::count_if(
      count_at_least.begin(), count_at_least.end(),
      [&](std::size_t c) { return static_cast<double>(c) <= limit; }));
}

bool EnumerationResult::statistics_distinct() const {
  std::vector<double> sorted = statistics;
  std::sort(sorted.begin(), sorted.end());
  return std::adjacent_find(sorted.begin(), sorted.end()) == sorted.end();
}

}  // namespace hybridtrial
