#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "distimpute/dataset.hpp"
#include "distimpute/estimands.hpp"
#include "distimpute/imputation.hpp"
#include "distimpute/mmrm.hpp"
#include "distimpute/sensitivity.hpp"

namespace distimpute {

/// Distribution of the bootstrap subject weights. Exp1 and Poisson1 have mean
/// and variance one; Unit (u = 1) is a degenerate scheme for testing.
enum class WeightScheme { Exp1, Poisson1, Unit };

std::string_view to_string(WeightScheme scheme);
WeightScheme parse_weight_scheme(std::string_view text);

struct BootstrapConfig {
  std::size_t replicates = 100;
  WeightScheme scheme = WeightScheme::Exp1;
  std::uint64_t seed = 0;
  unsigned threads = 1;
  /// Largest tolerated fraction of replicates whose refit fails.
  double max_failure_fraction = 0.10;
};

/// Per-subject self-normalized importance weights over the M draws.
struct ImportanceWeights {
  std::vector<Eigen::VectorXd> per_subject;
};

struct BootstrapDiagnostics {
  std::size_t requested = 0;
  std::size_t used = 0;
  std::vector<std::size_t> failed_replicates;
  std::vector<std::string> failure_messages;
  double mean_ess = 0.0;  // mean over replicates and incomplete subjects of 1 / sum w^2
  double min_ess = 0.0;
  std::vector<double> replicate_estimates;  // first component, in replicate order
};

enum class InferenceMethod { MIRubin, DIWeightedBootstrap, Wald };
std::string_view to_string(InferenceMethod method);

struct InferenceOutput {
  double tau_hat = 0.0;
  double variance = 0.0;
  double se = 0.0;
  double ci_low = 0.0;
  double ci_high = 0.0;
  double p_value = 1.0;
  InferenceMethod method = InferenceMethod::Wald;
  double between_variance = 0.0;  // Rubin's B_M (MI only)
  double within_variance = 0.0;   // mean within-imputation variance (MI only)
  BootstrapDiagnostics bootstrap;  // DI only
};

class InferenceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// 95% Wald interval tau -/+ 1.96 se and two-sided normal p-value.
InferenceOutput wald_summary(double tau_hat, double variance);

/// Rubin's rule: point = mean, variance = mean(within) + (1 + 1/M) B_M with
/// B_M the sample variance (divisor M - 1) of the estimates. Requires M >= 2.
InferenceOutput rubin_combine(std::span<const double> estimates, std::span<const double> within_vars);

/// w_im proportional to f(y*_im | obs; fit_b) / f(y*_im | obs; fit_hat),
/// normalized per subject, computed in log space with max subtraction.
/// Complete subjects get the uniform vector 1/M.
ImportanceWeights importance_reweight(const ImputationSet& set, const TrialDataset& data, const MmrmFit& fit_hat,
                                      const MmrmFit& fit_b);

/// Softmax of log-weights; exposed for testing the normalization in isolation.
Eigen::VectorXd normalize_log_weights(const Eigen::VectorXd& log_weights);

/// MI: per-slice estimate and within variance combined by Rubin's rule.
/// One output per estimand component (one for scalar estimands).
std::vector<InferenceOutput> mi_inference(const ImputationSet& set, const TrialDataset& data, const EstimandSpec& spec,
                                          unsigned threads = 1);

/// DI point estimate with the weighted-bootstrap replication variance. For
/// each replicate b: draw subject weights u^(b), refit the MMRM with them,
/// reweight the existing draws, and re-solve with weights u_i w_im. The
/// variance is sum_b (tau^(b) - tau_DI)^2 / (B - 1) over successful replicates.
std::vector<InferenceOutput> di_inference(const ImputationSet& set, const TrialDataset& data, const MmrmFit& fit_hat,
                                          const EstimandSpec& spec, const BootstrapConfig& cfg);

/// Scalar-estimand convenience wrapper over di_inference.
InferenceOutput weighted_bootstrap(const ImputationSet& set, const TrialDataset& data, const MmrmFit& fit_hat,
                                   const EstimandSpec& spec, const BootstrapConfig& cfg);

nlohmann::json to_json(const InferenceOutput& out, bool include_replicates = true);

}  // namespace distimpute
