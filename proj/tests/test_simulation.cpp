#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "distimpute/gaussian.hpp"
#include "distimpute/simulation.hpp"
#include "fixtures.hpp"

using namespace distimpute;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

namespace {

double retention(const TrialDataset& d, Group g) {
  std::size_t n = 0, kept = 0;
  for (const auto& s : d.subjects()) {
    if (s.group != g) continue;
    ++n;
    kept += s.is_complete() ? 1 : 0;
  }
  return static_cast<double>(kept) / static_cast<double>(n);
}

}  // namespace

TEST_CASE("very negative dropout intercepts give complete data") {
  auto scn = paper_design();
  scn.dropout_intercept = {-20.0, -20.0};
  scn.n_per_group = 5000;
  const auto d = simulate_trial(scn, 3);
  for (const auto& s : d.subjects()) CHECK(s.is_complete());
}

TEST_CASE("retention in the reference design") {
  auto scn = paper_design();
  scn.n_per_group = 50000;
  const auto d = simulate_trial(scn, 11);
  CHECK(std::abs(retention(d, Group::Control) - 0.7865) < 0.01);
  CHECK(std::abs(retention(d, Group::Treatment) - 0.7938) < 0.01);
}

TEST_CASE("latent outcomes have the scenario moments") {
  auto scn = paper_design();
  scn.n_per_group = 50000;
  const auto sim = simulate_trial_latent(scn, 5);
  const auto& d = sim.data;
  for (int g = 0; g < 2; ++g) {
    const auto grp = g == 0 ? Group::Control : Group::Treatment;
    std::vector<Index> rows;
    for (std::size_t i = 0; i < d.n_subjects(); ++i) {
      if (d.subject(i).group == grp) rows.push_back(static_cast<Index>(i));
    }
    const auto n = static_cast<double>(rows.size());
    MatrixXd y(static_cast<Index>(rows.size()), sim.latent.cols());
    for (std::size_t r = 0; r < rows.size(); ++r) y.row(static_cast<Index>(r)) = sim.latent.row(rows[r]);
    const VectorXd mean = y.colwise().mean();
    const MatrixXd c = y.rowwise() - mean.transpose();
    const MatrixXd cov = c.transpose() * c / (n - 1.0);
    // Covariates are standard normal, so the marginal law is N(b0, Bx Bx' + Sigma).
    const MatrixXd& beta = scn.beta[static_cast<std::size_t>(g)];
    const MatrixXd bx = beta.rightCols(beta.cols() - 1);
    const MatrixXd target = bx * bx.transpose() + scn.sigma[static_cast<std::size_t>(g)];
    for (Index k = 0; k < mean.size(); ++k) {
      CHECK(std::abs(mean[k] - beta(k, 0)) < 4.0 * std::sqrt(target(k, k) / n));
      CHECK(std::abs(cov(k, k) / target(k, k) - 1.0) < 0.03);
    }
    // Observed entries are the latent values.
    for (Index r : {rows.front(), rows.back()}) {
      const auto& s = d.subject(static_cast<std::size_t>(r));
      for (Index k = 0; k < s.outcomes.size(); ++k) {
        if (s.observed[static_cast<std::size_t>(k)]) CHECK(s.outcomes[k] == sim.latent(r, k));
      }
    }
  }
}

TEST_CASE("presets carry the published truths and brute force agrees") {
  const auto names = preset_names();
  CHECK(names.size() == 9);
  for (const auto& name : names) {
    const auto scn = paper_preset(name);
    REQUIRE(scn.true_tau.has_value());
    CHECK(true_tau(scn) == *scn.true_tau);
    const auto bf = brute_force_truth(scn, 1000000, 7);
    MESSAGE(name << ": published " << *scn.true_tau << ", brute force " << bf.value << " (se " << bf.mc_se << ")");
    CHECK(std::abs(bf.value - *scn.true_tau) < 4.0 * bf.mc_se);
  }
  CHECK_THROWS(paper_preset("j2r-median"));
  CHECK_THROWS(paper_preset("mar-ate"));
}

TEST_CASE("metrics arithmetic") {
  // Estimates with sample variance exactly 1 and variance estimates of 2.
  const std::vector<double> est{-1.0, 1.0, -1.0, 1.0};
  const std::vector<double> var(4, 2.0);
  const double mc = 4.0 / 3.0;
  const auto row = summarize_replications("DI", est, var, 0.0);
  CHECK(row.point_mean == 0.0);
  CHECK(row.mc_variance == doctest::Approx(mc).epsilon(1e-15));
  CHECK(row.mean_variance_estimate == 2.0);
  CHECK(row.relative_bias == doctest::Approx((2.0 - mc) / mc).epsilon(1e-15));
  CHECK(row.coverage == 1.0);
  CHECK(row.mean_ci_length == doctest::Approx(2.0 * 1.96 * std::sqrt(2.0)).epsilon(1e-15));

  const std::vector<double> unit{0.0, 2.0};
  const auto doubled = summarize_replications("MI", unit, {4.0, 4.0}, 1.0);
  CHECK(doubled.mc_variance == 2.0);
  CHECK(doubled.relative_bias == 1.0);  // +100%
  CHECK(summarize_replications("MI", {5.0, 5.2}, {1e-4, 1e-4}, 0.0).coverage == 0.0);
}

TEST_CASE("without dropout, MI and DI agree and both cover") {
  auto scn = fixture::small_design(60);
  scn.dropout_intercept = {-40.0, -40.0};
  scn.dropout_slope = {0.0, 0.0};
  scn.m = 2;
  scn.bootstrap_replicates = 50;
  scn.n_reps = 200;
  scn.true_tau = 1.5;  // intercept difference at the last visit, covariate mean zero
  const auto r = run_monte_carlo(scn);
  CHECK(r.failures == 0);
  for (const auto& rep : r.replications) {
    CHECK(rep.mi.tau_hat == rep.di.tau_hat);
    CHECK(rep.mi.bootstrap.replicate_estimates.empty());
  }
  CHECK(r.mi.point_mean == r.di.point_mean);
  CHECK(r.mi.coverage >= 0.9);
  CHECK(r.di.coverage >= 0.9);
  CHECK(std::abs(r.di.relative_bias) < 0.3);
}

TEST_CASE("MI and DI ATE point estimates coincide per replication") {
  auto scn = paper_preset("j2r-ate");
  scn.n_per_group = 200;
  scn.m = 10;
  scn.bootstrap_replicates = 5;
  scn.n_reps = 10;
  const auto r = run_monte_carlo(scn);
  for (const auto& rep : r.replications) {
    REQUIRE(rep.ok);
    CHECK(std::abs(rep.mi.tau_hat - rep.di.tau_hat) < 1e-12);
  }
}

TEST_CASE("Monte Carlo output is reproducible across thread counts") {
  auto scn = fixture::small_design(50);
  scn.m = 5;
  scn.bootstrap_replicates = 10;
  scn.n_reps = 8;
  scn.true_tau = 1.5;
  const auto a = format_metrics_csv(scn, run_monte_carlo(scn, 1));
  const auto b = format_metrics_csv(scn, run_monte_carlo(scn, 3));
  CHECK(a == b);
  CHECK(a.find("method,N,M,point_est,true_var,var_est,relative_bias_pct,coverage_pct,mean_ci_length") != std::string::npos);
  scn.seed = 2;
  CHECK(format_metrics_csv(scn, run_monte_carlo(scn, 1)) != a);
}

TEST_CASE("simulated datasets are deterministic in the replication seed") {
  const auto scn = fixture::small_design(30);
  CHECK(format_dataset(simulate_trial(scn, 4)) == format_dataset(simulate_trial(scn, 4)));
  CHECK(format_dataset(simulate_trial(scn, 4)) != format_dataset(simulate_trial(scn, 5)));
  const auto d = simulate_trial(scn, 4);
  CHECK(d.n_subjects() == 60);
  CHECK(d.n_in_group(Group::Control) == 30);
}

TEST_CASE("random sequential designs are valid scenarios") {
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto scn = random_sequential_design(seed);
    CHECK_NOTHROW(scn.validate());
    CHECK(scn.n_visits() == 5);
    for (const auto& s : scn.sigma) CHECK_NOTHROW(GaussianLaw(VectorXd::Zero(5), s));
    const auto theta = scenario_parameters(scn);
    for (std::size_t g = 0; g < 2; ++g) {
      CHECK((theta.groups[g].beta - scn.beta[g]).cwiseAbs().maxCoeff() == 0.0);
    }
  }
  CHECK(random_sequential_design(3).beta[0] != random_sequential_design(4).beta[0]);
}

TEST_CASE("scenario validation") {
  auto scn = fixture::small_design(30);
  CHECK_NOTHROW(scn.validate());
  auto bad = scn;
  bad.sigma[1](0, 0) = -1.0;
  CHECK_THROWS(bad.validate());
  bad = scn;
  bad.m = 1;
  CHECK_THROWS(bad.validate());
  bad = scn;
  bad.beta[1] = MatrixXd::Zero(2, 2);
  CHECK_THROWS(bad.validate());
  bad = scn;
  bad.spec = CdfCurve{{0.0, 1.0}};
  CHECK_THROWS(bad.validate());
}
