#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "distimpute/dataset.hpp"
#include "distimpute/estimands.hpp"
#include "distimpute/inference.hpp"
#include "distimpute/mmrm.hpp"
#include "distimpute/sensitivity.hpp"

namespace distimpute {

/// Two-arm trial design for Monte Carlo studies: p = rows of beta minus one
/// covariates drawn i.i.d. N(0, 1), outcomes from N(beta_j x~, sigma_j), and
/// sequential dropout with logit P(drop at k | still in) = a_j + b_j y_{k-1}.
struct SimScenario {
  std::string name = "custom";
  std::array<Eigen::MatrixXd, 2> beta;   // T x (p+1), control then treatment
  std::array<Eigen::MatrixXd, 2> sigma;  // T x T
  std::array<double, 2> dropout_intercept{-3.2, -4.0};
  std::array<double, 2> dropout_slope{0.2, 0.2};
  std::size_t n_per_group = 1000;
  std::size_t m = 100;
  std::size_t bootstrap_replicates = 100;
  WeightScheme scheme = WeightScheme::Exp1;
  SensitivityModel model = SensitivityModel::J2R;
  EstimandSpec spec = AteAncova{};
  std::size_t n_reps = 500;
  std::uint64_t seed = 1;
  std::optional<double> true_tau;
  std::string truth_source = "unset";

  std::size_t n_visits() const { return static_cast<std::size_t>(beta[0].rows()); }
  std::size_t n_covariates() const { return static_cast<std::size_t>(beta[0].cols() - 1); }
  void validate() const;
};

/// The five-visit, three-covariate design with the printed coefficient and
/// covariance constants, dropout a = (-3.2, -4.0), b = 0.2.
SimScenario paper_design();

/// Preset `<model>-<estimand>` with model in {j2r, rtb, washout} and estimand in
/// {ate (ANCOVA form), risk (c = 4.5), qte (q = 0.5)}, carrying the published
/// true value.
SimScenario paper_preset(std::string_view name);
std::vector<std::string> preset_names();

/// Alternative generator: draws the sequential regression parameters at random
/// (intercept means mu_jk, sd eta_k, prior-outcome slopes N(0, 0.5), lag-one
/// slope U(0, 1), residual sd sigma_k) and maps them to (beta, sigma).
SimScenario random_sequential_design(std::uint64_t seed);

/// Scenario parameters as an MmrmFit (the true theta).
MmrmFit scenario_parameters(const SimScenario& scn);

struct SimulatedTrial {
  TrialDataset data;
  Eigen::MatrixXd latent;  // n x T outcomes before dropout masking
};

SimulatedTrial simulate_trial_latent(const SimScenario& scn, std::uint64_t rep_seed);
TrialDataset simulate_trial(const SimScenario& scn, std::uint64_t rep_seed);

struct TruthEstimate {
  double value = 0.0;
  double mc_se = 0.0;
};

/// Population value of the scenario's estimand under its sensitivity model:
/// simulate `n_subjects` (split evenly by arm), replace every dropout's final
/// visit by its imputation law under the true parameters, and evaluate the
/// estimand analytically on that law (conditional means for ATE, normal tail
/// probabilities for risk, the mixture CDF root for QTE).
TruthEstimate brute_force_truth(const SimScenario& scn, std::size_t n_subjects, std::uint64_t seed);

/// The preset constant when known, otherwise a 10^7-subject brute-force value.
double true_tau(const SimScenario& scn);

struct MetricsRow {
  std::string method;
  double point_mean = 0.0;
  double mc_variance = 0.0;
  double mean_variance_estimate = 0.0;
  double relative_bias = 0.0;  // (mean var est - MC var) / MC var
  double coverage = 0.0;
  double mean_ci_length = 0.0;
};

/// Metrics over replications for one method.
MetricsRow summarize_replications(std::string method, const std::vector<double>& estimates,
                                  const std::vector<double>& variances, double truth);

struct ReplicationResult {
  std::size_t index = 0;
  bool ok = false;
  std::string error;
  InferenceOutput mi;
  InferenceOutput di;
};

struct MonteCarloResult {
  double truth = 0.0;
  MetricsRow mi;
  MetricsRow di;
  std::vector<ReplicationResult> replications;
  std::size_t failures = 0;
};

/// Per replication: simulate, fit, impute once, then MI (Rubin) and DI
/// (weighted bootstrap) from the same draws. Aborts if more than 2% of the
/// replications fail.
MonteCarloResult run_monte_carlo(const SimScenario& scn, unsigned threads = 1);

/// Two rows (MI, DI) in the table layout: point estimate, true (MC) variance,
/// variance estimate, relative bias %, coverage %, mean CI length.
std::string format_metrics_csv(const SimScenario& scn, const MonteCarloResult& result);

}  // namespace distimpute
