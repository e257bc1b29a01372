#include "support.hpp"

#include "hybridtrial/simlab.hpp"

#include <doctest.h>

#include <cmath>

using namespace hybridtrial;

TEST_SUITE("simlab") {

TEST_CASE("group sizes and layout") {
  ScenarioConfig config;
  config.bias_b = 4.0;
  Rng rng(179);
  for (int rep = 0; rep < 20; ++rep) {
    const Scenario sc = generate_scenario(config, rng, 0.3);
    const TrialData& d = sc.data;
    CHECK(d.size() == 125);
    CHECK(d.n_rct() == 75);
    CHECK(d.n_external() == 50);
    CHECK(d.sample_indicator().head(75).sum() == 75);
    CHECK(sc.truth.biased_flags.size() == 50);
    CHECK(sc.truth.biased_flags.sum() == 25);
    CHECK(sc.truth.tau == 0.3);
    CHECK(d.covariates().cwiseAbs().maxCoeff() <= 2.0);
  }
}

TEST_CASE("no shift means nobody is biased, and externals follow the control law") {
  ScenarioConfig config;
  config.n1 = 1000;
  config.n0 = 1000;
  config.nE = 2000;
  config.ec_noise_scale = 1.0;
  Rng rng(181);
  const Scenario sc = generate_scenario(config, rng, 0.0);
  CHECK(sc.truth.biased_flags.sum() == 0);
  // Residuals around X'beta0 for controls and externals: same mean and scale.
  const auto& d = sc.data;
  const IndexSets sets = partition(d);
  const Eigen::Vector2d beta0(1.0, 1.0);
  auto moments = [&](const IndexList& rows) {
    double m = 0, v = 0;
    for (const Index i : rows) {
      const double r = d.outcome()[i] - d.row(i).dot(beta0.transpose());
      m += r;
      v += r * r;
    }
    m /= static_cast<double>(rows.size());
    return std::pair{m, v / static_cast<double>(rows.size()) - m * m};
  };
  const auto [mc, vc] = moments(sets.rct_controls);
  const auto [me, ve] = moments(sets.external);
  CHECK(std::abs(mc - me) < 0.15);
  CHECK(std::abs(vc / ve - 1.0) < 0.15);
}

TEST_CASE("biased externals carry the shift") {
  ScenarioConfig config;
  config.bias_b = 8.0;
  config.nE = 4000;
  Rng rng(191);
  const Scenario sc = generate_scenario(config, rng, 0.0);
  const auto& d = sc.data;
  const Eigen::Vector2d beta0(1.0, 1.0);
  double shifted = 0, clean = 0;
  for (Index k = 0; k < d.n_external(); ++k) {
    const Index i = d.n_rct() + k;
    const double r = d.outcome()[i] - d.row(i).dot(beta0.transpose());
    (sc.truth.biased_flags[k] ? shifted : clean) += r;
  }
  CHECK(shifted / 2000.0 == doctest::Approx(-8.0).epsilon(0.01));
  CHECK(std::abs(clean / 2000.0) < 0.05);
}

TEST_CASE("sharp null: outcomes do not depend on the assignment") {
  ScenarioConfig config;
  config.hypothesis = Hypothesis::SharpNull;
  config.bias_b = 4.0;
  ScenarioConfig alt = config;
  alt.hypothesis = Hypothesis::Alternative;
  Rng r1(193), r2(193);
  const Scenario null_draw = generate_scenario(config, r1, 0.3);
  const Scenario alt_draw = generate_scenario(alt, r2, 0.3);
  CHECK(null_draw.truth.tau == 0.0);
  // Same stream: same covariates, assignment and noise; only treated outcomes move.
  CHECK(null_draw.data.assignment() == alt_draw.data.assignment());
  for (Index i = 0; i < null_draw.data.size(); ++i) {
    if (null_draw.data.assignment()[i] == 0) CHECK(null_draw.data.outcome()[i] == alt_draw.data.outcome()[i]);
  }
  // Under the null, y = X'beta0 + eps whatever A is.
  const TrialData& d = null_draw.data;
  Eigen::VectorXd treated_resid(d.assignment().sum());
  Index k = 0;
  for (Index i = 0; i < d.n_rct(); ++i) {
    if (d.assignment()[i]) treated_resid[k++] = d.outcome()[i] - d.row(i).sum();
  }
  CHECK(std::abs(treated_resid.mean()) < 0.5);
}

TEST_CASE("reproducible draws") {
  ScenarioConfig config;
  config.bias_b = 2.0;
  Rng r1(197), r2(197);
  const Scenario a = generate_scenario(config, r1, 0.1);
  const Scenario b = generate_scenario(config, r2, 0.1);
  CHECK(a.data.covariates() == b.data.covariates());
  CHECK(a.data.outcome() == b.data.outcome());
  CHECK(a.truth.biased_flags == b.truth.biased_flags);
}

TEST_CASE("covariates are centred") {
  ScenarioConfig config;
  config.n1 = 25000;
  config.n0 = 25000;
  config.nE = 50000;
  for (const auto law : {CovariateLaw::Uniform, CovariateLaw::GaussianToeplitz}) {
    config.covariate_law = law;
    Rng rng(199);
    const Scenario sc = generate_scenario(config, rng, 0.0);
    const Eigen::RowVectorXd mean = sc.data.covariates().colwise().mean();
    CHECK(mean.cwiseAbs().maxCoeff() < 0.02);
  }
}

TEST_CASE("sampling intercept hits the target fraction") {
  Rng rng(211);
  std::uniform_real_distribution<double> unif(-2, 2);
  Eigen::MatrixXd x(1000, 2);
  for (Index i = 0; i < 1000; ++i) x.row(i) << unif(rng), unif(rng);
  const Eigen::Vector2d eta(0.1, 0.1);
  const double eta0 = solve_sampling_intercept(x, eta, 0.6);
  const Eigen::ArrayXd pi = 1.0 / (1.0 + ((x * eta).array() + eta0).exp());
  CHECK(pi.mean() == doctest::Approx(0.6).epsilon(1e-8));
}

TEST_CASE("population effect") {
  ScenarioConfig config;
  // Without covariate shift in the effect the truth is tau0 exactly.
  config.beta1 = Eigen::Vector2d(1.0, 1.0);
  CHECK(population_ate(config, 10000) == doctest::Approx(0.4).epsilon(1e-12));
  // With beta1 - beta0 = (1,1) the effect is tau0 + E(X1 + X2 | S=1): RCT
  // units lean towards negative X because the sampling score decreases in X.
  ScenarioConfig shifted;
  const double tau = population_ate(shifted, 200000);
  CHECK(tau < 0.4);
  CHECK(tau > 0.2);
}

TEST_CASE("metrics") {
  Eigen::VectorXd truth = Eigen::VectorXd::Constant(4, 1.0);
  const Metrics exact = compute_metrics(truth, truth, Eigen::VectorXd::Ones(4), 0.05);
  CHECK(exact.bias == 0.0);
  CHECK(exact.mse == 0.0);
  CHECK(exact.rejection_rate == 0.0);

  Rng rng(223);
  std::normal_distribution<double> normal(0.3, 1.2);
  for (int rep = 0; rep < 20; ++rep) {
    const Index r = 5 + rep;
    Eigen::VectorXd est(r), tr(r), p(r);
    for (Index i = 0; i < r; ++i) {
      est[i] = normal(rng);
      tr[i] = 0.1 * static_cast<double>(i % 3);
      p[i] = std::uniform_real_distribution<double>()(rng);
    }
    const Metrics m = compute_metrics(est, tr, p, 0.3);
    const double rr = static_cast<double>(r);
    CHECK(m.mse == doctest::Approx(m.bias * m.bias + (rr - 1) / rr * m.sd * m.sd).epsilon(1e-12));
    CHECK(m.rejection_rate == doctest::Approx((p.array() <= 0.3).cast<double>().mean()));
  }
  const Metrics no_p = compute_metrics(truth, truth, Eigen::VectorXd(), 0.05);
  CHECK(std::isnan(no_p.rejection_rate));
}

TEST_CASE("replications are independent of the thread count") {
  SimulationConfig config;
  config.scenario.bias_b = 4.0;
  config.replications = 6;
  config.B = 20;
  config.methods = {EstimatorSpec::no_borrow(), EstimatorSpec::full_borrow(),
                    EstimatorSpec::selective(0.2)};
  const SimulationResult one = run_replications(config);
  config.threads = 4;
  const SimulationResult four = run_replications(config);
  REQUIRE(one.records.size() == 18);
  for (std::size_t k = 0; k < one.records.size(); ++k) {
    CHECK(one.records[k].estimate == four.records[k].estimate);
    CHECK(one.records[k].p_value == four.records[k].p_value);
    CHECK(one.records[k].method == four.records[k].method);
    CHECK(one.records[k].p_value > 0.0);
    CHECK(one.records[k].p_value <= 1.0);
  }
  CHECK(one.metrics.size() == 3);
  CHECK(one.metrics[1].metrics.mean_n_borrowed == 50.0);
  CHECK(one.metrics[1].metrics.mean_frac_biased_borrowed == 1.0);
  CHECK(one.metrics[0].metrics.mean_n_borrowed == 0.0);
}

TEST_CASE("FB bias grows with the hidden shift") {
  SimulationConfig config;
  config.replications = 40;
  config.B = 0;
  config.methods = {EstimatorSpec::full_borrow()};
  config.scenario.bias_b = 0.0;
  const double b0 = std::abs(run_replications(config).metrics[0].metrics.bias);
  config.scenario.bias_b = 3.0;
  const double b3 = std::abs(run_replications(config).metrics[0].metrics.bias);
  CHECK(b3 > b0);
}

TEST_CASE("invalid scenarios") {
  ScenarioConfig bad;
  bad.n0 = 0;
  CHECK_THROWS_AS(bad.resolved(), Error);
  ScenarioConfig frac;
  frac.biased_fraction = 1.5;
  CHECK_THROWS_AS(frac.resolved(), Error);
}

}  // TEST_SUITE
