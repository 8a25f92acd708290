#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "distimpute/inference.hpp"
#include "distimpute/simulation.hpp"
#include "fixtures.hpp"

using namespace distimpute;
using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;
using fixture::NA;

namespace {

double phi(double z) { return 0.5 * std::erfc(-z / std::numbers::sqrt2); }

}  // namespace

TEST_CASE("Wald summary") {
  auto o = wald_summary(0.0, 1.0);
  CHECK(o.ci_low == -1.96);
  CHECK(o.ci_high == 1.96);
  CHECK(o.p_value == 1.0);
  CHECK(o.se == 1.0);

  o = wald_summary(-1.68, 0.82 * 0.82);
  CHECK(std::abs(o.p_value - 0.039) < 0.002);

  o = wald_summary(2.0, 1.0);
  CHECK(o.p_value == doctest::Approx(2.0 * phi(-2.0)).epsilon(1e-12));
  CHECK(o.p_value == doctest::Approx(0.0455).epsilon(0.002));

  CHECK_THROWS_AS(wald_summary(1.0, -1e-3), InferenceError);
  CHECK(wald_summary(0.5, 0.0).p_value == 0.0);
}

TEST_CASE("Rubin's rule") {
  const std::vector<double> est{1, 2, 3};
  const std::vector<double> within{0.5, 0.5, 0.5};
  const auto o = rubin_combine(est, within);
  CHECK(o.tau_hat == 2.0);
  CHECK(o.between_variance == 1.0);
  CHECK(o.variance == 11.0 / 6.0);

  const std::vector<double> same{4, 4, 4, 4};
  const std::vector<double> w2{0.1, 0.2, 0.3, 0.4};
  const auto s = rubin_combine(same, w2);
  CHECK(s.between_variance == 0.0);
  CHECK(s.variance == doctest::Approx(0.25).epsilon(1e-15));

  CHECK_THROWS_AS(rubin_combine(std::vector<double>{1.0}, std::vector<double>{1.0}), InferenceError);
  CHECK_THROWS(rubin_combine(est, std::vector<double>{1.0, 2.0}));

  Rng rng(3);
  for (int t = 0; t < 100; ++t) {
    const std::size_t m = 2 + static_cast<std::size_t>(rng.uniform() * 20);
    std::vector<double> e(m), v(m);
    for (std::size_t k = 0; k < m; ++k) {
      e[k] = rng.normal();
      v[k] = rng.exponential();
    }
    const auto r = rubin_combine(e, v);
    CHECK(r.variance >= (1.0 + 1.0 / static_cast<double>(m)) * r.between_variance);
    CHECK(r.between_variance >= 0.0);
  }
}

TEST_CASE("log-space weight normalization") {
  VectorXd lw(4);
  lw << -1000.0, -1001.0, -999.5, -1003.0;
  const VectorXd w = normalize_log_weights(lw);
  CHECK(w.sum() == doctest::Approx(1.0).epsilon(1e-12));
  CHECK(w.allFinite());
  const VectorXd shifted = normalize_log_weights((lw.array() + 1234.5).matrix());
  CHECK((w - shifted).cwiseAbs().maxCoeff() < 1e-12);
  VectorXd bad = lw;
  bad[2] = std::nan("");
  CHECK_THROWS_AS(normalize_log_weights(bad), InferenceError);
}

TEST_CASE("importance weights against a two-density hand oracle") {
  // Treatment subject observed at baseline only; RTB imputes its final visit
  // from N(beta_21, Sigma_2[1,1]) with no covariates.
  std::vector<Subject> s;
  s.push_back(fixture::subject(Group::Control, {}, {0.0, 1.0}));
  s.push_back(fixture::subject(Group::Treatment, {}, {0.3, NA}));
  s.push_back(fixture::subject(Group::Treatment, {}, {0.1, 0.9}));
  const auto d = TrialDataset::create(s, 2, 0);
  MmrmFit hat;
  for (auto& g : hat.groups) {
    g.beta = MatrixXd::Zero(2, 1);
    g.sigma = MatrixXd::Identity(2, 2);
    g.seq = sequential_from_moments(g.beta, g.sigma);
  }
  MmrmFit alt = hat;
  alt.groups[1].beta(0, 0) = 0.5;
  alt.groups[1].seq = sequential_from_moments(alt.groups[1].beta, alt.groups[1].sigma);

  std::vector<SubjectDraws> draws(3);
  draws[1].first_missing = 1;
  draws[1].draws = (MatrixXd(3, 1) << -1.0, 0.0, 1.0).finished();
  const ImputationSet set(3, SensitivityModel::Rtb, fingerprint(hat), 0, draws);

  const auto w = importance_reweight(set, d, hat, alt);
  const double ln2pi = std::log(2.0 * std::numbers::pi);
  VectorXd expect(3);
  double total = 0.0;
  for (int m = 0; m < 3; ++m) {
    const double y = draws[1].draws(m, 0);
    const double num = -0.5 * ln2pi - 0.5 * (y - 0.5) * (y - 0.5);
    const double den = -0.5 * ln2pi - 0.5 * y * y;
    expect[m] = std::exp(num - den);
    total += expect[m];
  }
  expect /= total;
  CHECK((w.per_subject[1] - expect).cwiseAbs().maxCoeff() < 1e-12);
  // Proportional to exp(0.5 y).
  CHECK(w.per_subject[1][2] / w.per_subject[1][1] == doctest::Approx(std::exp(0.5)).epsilon(1e-12));
  for (std::size_t i : {0u, 2u}) {
    CHECK((w.per_subject[i].array() == 1.0 / 3.0).all());
  }
}

TEST_CASE("identical fits give uniform weights exactly") {
  const auto d = simulate_trial(fixture::small_design(60), 1);
  const auto fit = fit_mmrm(d);
  for (auto model : {SensitivityModel::Mar, SensitivityModel::J2R, SensitivityModel::Rtb, SensitivityModel::Washout}) {
    const auto set = impute(fit, d, model, 12, 4);
    const auto w = importance_reweight(set, d, fit, fit);
    for (const auto& v : w.per_subject) CHECK((v.array() == 1.0 / 12.0).all());
  }
}

TEST_CASE("weights from a perturbed refit sum to one per subject") {
  const auto d = simulate_trial(fixture::small_design(60), 2);
  const auto fit = fit_mmrm(d);
  std::vector<double> u(d.n_subjects());
  Rng rng(5);
  for (auto& x : u) x = rng.exponential();
  const auto fit_b = fit_mmrm(d, u);
  const auto set = impute(fit, d, SensitivityModel::J2R, 30, 6);
  const auto w = importance_reweight(set, d, fit, fit_b);
  for (const auto& v : w.per_subject) {
    CHECK(std::abs(v.sum() - 1.0) < 1e-12);
    CHECK((v.array() >= 0.0).all());
  }
}

TEST_CASE("unit bootstrap weights: every replicate equals the DI estimate") {
  const auto d = simulate_trial(fixture::small_design(60), 3);
  const auto fit = fit_mmrm(d);
  const auto set = impute(fit, d, SensitivityModel::J2R, 20, 7);
  BootstrapConfig cfg;
  cfg.replicates = 10;
  cfg.scheme = WeightScheme::Unit;
  for (const EstimandSpec& spec : {EstimandSpec{AteSimple{}}, EstimandSpec{AteAncova{}}, EstimandSpec{RiskDiff{2.0}},
                                   EstimandSpec{Qte{0.5}}}) {
    const auto o = weighted_bootstrap(set, d, fit, spec, cfg);
    const double tau = solve_di(set, d, spec).scalar();
    CHECK(o.tau_hat == tau);
    for (double r : o.bootstrap.replicate_estimates) CHECK(r == tau);
    CHECK(o.variance == 0.0);
    CHECK(o.bootstrap.mean_ess == doctest::Approx(20.0).epsilon(1e-12));
  }
}

TEST_CASE("bootstrap is reproducible, thread independent and scheme aware") {
  const auto d = simulate_trial(fixture::small_design(60), 4);
  const auto fit = fit_mmrm(d);
  const auto set = impute(fit, d, SensitivityModel::J2R, 20, 8);
  BootstrapConfig cfg;
  cfg.replicates = 20;
  cfg.seed = 99;
  const auto a = weighted_bootstrap(set, d, fit, AteAncova{}, cfg);
  cfg.threads = 3;
  const auto b = weighted_bootstrap(set, d, fit, AteAncova{}, cfg);
  CHECK(a.variance == b.variance);
  CHECK(a.bootstrap.replicate_estimates == b.bootstrap.replicate_estimates);
  CHECK(a.variance > 0.0);
  CHECK(a.method == InferenceMethod::DIWeightedBootstrap);
  CHECK(a.ci_low == a.tau_hat - 1.96 * a.se);

  cfg.scheme = WeightScheme::Poisson1;
  const auto p = weighted_bootstrap(set, d, fit, AteAncova{}, cfg);
  CHECK(p.variance > 0.0);
  CHECK(p.variance != a.variance);

  // Replicate order does not matter for the variance.
  std::vector<double> r = a.bootstrap.replicate_estimates;
  double fwd = 0.0, bwd = 0.0;
  for (double x : r) fwd += (x - a.tau_hat) * (x - a.tau_hat);
  for (auto it = r.rbegin(); it != r.rend(); ++it) bwd += (*it - a.tau_hat) * (*it - a.tau_hat);
  CHECK(fwd / 19.0 == doctest::Approx(a.variance).epsilon(1e-12));
  CHECK(bwd / 19.0 == doctest::Approx(a.variance).epsilon(1e-12));
}

TEST_CASE("bootstrap rejects a mismatched fit and too many failed refits") {
  const auto d = simulate_trial(fixture::small_design(60), 5);
  const auto fit = fit_mmrm(d);
  const auto set = impute(fit, d, SensitivityModel::J2R, 10, 9);
  BootstrapConfig cfg;
  cfg.replicates = 10;
  auto other = fit;
  other.groups[0].beta(0, 0) += 1.0;
  CHECK_THROWS_AS(weighted_bootstrap(set, d, other, AteSimple{}, cfg), InferenceError);

  // Five controls observed at the last visit: any zero Poisson weight among
  // them leaves the final-visit regression unidentified.
  std::vector<Subject> s;
  Rng rng(1);
  for (int i = 0; i < 30; ++i) {
    const double x = rng.normal();
    const double y1 = rng.normal(), y2 = rng.normal() + y1, y3 = rng.normal() - y2;
    s.push_back(fixture::subject(Group::Control, {x}, {y1, y2, i < 5 ? y3 : NA}));
    s.push_back(fixture::subject(Group::Treatment, {x}, {y1 + 1, y2, y3}));
  }
  const auto thin = TrialDataset::create(s, 3, 1);
  const auto thin_fit = fit_mmrm(thin);
  const auto thin_set = impute(thin_fit, thin, SensitivityModel::Mar, 10, 1);
  cfg.scheme = WeightScheme::Poisson1;
  cfg.replicates = 40;
  try {
    weighted_bootstrap(thin_set, thin, thin_fit, AteSimple{}, cfg);
    FAIL("expected the failure cap to trigger");
  } catch (const InferenceError& e) {
    CHECK(std::string(e.what()).find("failed") != std::string::npos);
  }
}

TEST_CASE("MI inference combines per-slice estimates") {
  const auto d = simulate_trial(fixture::small_design(80), 6);
  const auto fit = fit_mmrm(d);
  const auto set = impute(fit, d, SensitivityModel::J2R, 10, 10);
  const auto o = mi_inference(set, d, AteAncova{}).front();
  std::vector<double> e, v;
  for (std::size_t m = 0; m < 10; ++m) {
    const VectorXd y = completed_endpoint(set, d, m);
    e.push_back(solve_complete(d, y, AteAncova{}).scalar());
    v.push_back(complete_data_variance(d, y, AteAncova{})[0]);
  }
  const auto r = rubin_combine(e, v);
  CHECK(o.tau_hat == r.tau_hat);
  CHECK(o.variance == r.variance);
  CHECK(o.method == InferenceMethod::MIRubin);
  // ATE is linear in the endpoint, so MI and DI point estimates coincide.
  CHECK(std::abs(o.tau_hat - solve_di(set, d, AteAncova{}).scalar()) < 1e-12);
  CHECK_THROWS_AS(mi_inference(impute(fit, d, SensitivityModel::J2R, 1, 1), d, AteSimple{}), InferenceError);
}

TEST_CASE("curve estimands give one output per grid point") {
  const auto d = simulate_trial(fixture::small_design(80), 7);
  const auto fit = fit_mmrm(d);
  const auto set = impute(fit, d, SensitivityModel::Mar, 10, 11);
  const auto spec = parse_estimand("cdf:0:4:5");
  BootstrapConfig cfg;
  cfg.replicates = 10;
  CHECK(di_inference(set, d, fit, spec, cfg).size() == 5);
  CHECK(mi_inference(set, d, spec).size() == 5);
  CHECK_THROWS_AS(weighted_bootstrap(set, d, fit, spec, cfg), InferenceError);
}

TEST_CASE("JSON output carries estimates and diagnostics") {
  const auto d = simulate_trial(fixture::small_design(60), 8);
  const auto fit = fit_mmrm(d);
  const auto set = impute(fit, d, SensitivityModel::J2R, 10, 12);
  BootstrapConfig cfg;
  cfg.replicates = 5;
  const auto j = to_json(weighted_bootstrap(set, d, fit, AteAncova{}, cfg));
  for (const char* key : {"tau_hat", "variance", "se", "ci", "p_value", "method", "diagnostics"}) {
    CHECK(j.contains(key));
  }
  CHECK(j["diagnostics"]["replicate_estimates"].size() == 5);
  CHECK(j["diagnostics"].contains("mean_effective_sample_size"));
}

TEST_CASE("bootstrap variance tracks the Monte Carlo variance of the DI estimate") {
  // N = 200 per arm, M = 10, B = 100, 500 independent trials.
  auto scn = paper_preset("j2r-ate");
  scn.n_per_group = 200;
  scn.m = 10;
  scn.bootstrap_replicates = 100;
  scn.n_reps = 500;
  scn.seed = 2024;
  const auto result = run_monte_carlo(scn);
  MESSAGE("DI mean var est " << result.di.mean_variance_estimate << " vs MC var " << result.di.mc_variance);
  CHECK(std::abs(result.di.relative_bias) < 0.35);
}
