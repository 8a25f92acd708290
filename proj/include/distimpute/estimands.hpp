#pragma once

#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "distimpute/dataset.hpp"
#include "distimpute/imputation.hpp"

namespace distimpute {

/// Difference of arm means of the final-visit outcome.
struct AteSimple {};
/// Final-visit outcome regressed on V = (x~, 1{G=2} x~); arm means are the
/// fitted arm lines evaluated at the pooled covariate mean.
struct AteAncova {};
/// Difference of P(Y_T >= threshold).
struct RiskDiff {
  double threshold = 0.0;
};
/// Difference of the q-th quantiles of Y_T (left-continuous inverse).
struct Qte {
  double q = 0.5;
};
/// Per-arm CDF of Y_T on a strictly increasing grid.
struct CdfCurve {
  std::vector<double> grid;
};

using EstimandSpec = std::variant<AteSimple, AteAncova, RiskDiff, Qte, CdfCurve>;

class EstimandError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Accepts `ate`, `ate-ancova`, `risk:<c>`, `qte:<q>`, `cdf:<lo>:<hi>:<n>`.
EstimandSpec parse_estimand(std::string_view text);
std::string to_string(const EstimandSpec& spec);
void validate(const EstimandSpec& spec);
bool is_curve(const EstimandSpec& spec);

enum class EstimateMethod { DI, MIPerDataset, Bootstrap };

/// tau = tau2 - tau1 componentwise; one component for scalar estimands, one
/// per grid point for CdfCurve (tau1/tau2 then hold the arm CDFs).
struct PointEstimate {
  std::vector<double> tau;
  std::vector<double> tau1;
  std::vector<double> tau2;
  EstimateMethod method = EstimateMethod::DI;

  double scalar() const;
};

/// Final-visit sample per subject: a run of (value, weight) pairs whose
/// weights sum to one. Observed endpoints are a single pair with weight 1.
class PooledEndpoints {
 public:
  static PooledEndpoints from_imputation(const ImputationSet& set, const TrialDataset& data);
  static PooledEndpoints from_slice(const TrialDataset& data, const Eigen::VectorXd& endpoint);

  std::size_t n_subjects() const { return offset_.size() - 1; }
  std::span<const double> values(std::size_t i) const {
    return {values_.data() + offset_[i], offset_[i + 1] - offset_[i]};
  }
  std::span<const double> weights(std::size_t i) const {
    return {weights_.data() + offset_[i], offset_[i + 1] - offset_[i]};
  }
  /// Replaces subject i's draw weights (same length as its values).
  void set_weights(std::size_t i, std::span<const double> w);

  /// sum_m w_im y_im for subject i.
  double weighted_mean(std::size_t i) const;

 private:
  std::vector<double> values_;
  std::vector<double> weights_;
  std::vector<std::size_t> offset_{0};
};

/// Solves the pooled estimating equations with subject weights u_i (empty =
/// all ones) and per-draw weights from `pooled`. DI, per-slice MI and the
/// bootstrap replicates are all this call with different weights.
PointEstimate solve_pooled(const TrialDataset& data, const PooledEndpoints& pooled,
                           std::span<const double> subject_weights, const EstimandSpec& spec);

/// DI estimate: every draw carries weight 1/M.
PointEstimate solve_di(const ImputationSet& set, const TrialDataset& data, const EstimandSpec& spec);

/// Complete-data estimate on one completed slice (final-visit values).
PointEstimate solve_complete(const TrialDataset& data, const Eigen::VectorXd& endpoint, const EstimandSpec& spec);

/// Within-imputation variance of the complete-data estimator, per component:
///   AteSimple  s1^2/n1 + s2^2/n2
///   AteAncova  a^T Cov(gamma) a + d^T S_x d / n (covariate-mean term)
///   RiskDiff   sum_j p_j (1 - p_j) / n_j   (CdfCurve likewise per grid point)
///   Qte        sum_j q (1 - q) / (n_j f_j(tau_j)^2), Gaussian-kernel density
///              with Silverman's bandwidth
std::vector<double> complete_data_variance(const TrialDataset& data, const Eigen::VectorXd& endpoint,
                                           const EstimandSpec& spec);

/// Left-continuous generalized inverse of a weighted empirical CDF:
/// the smallest value v with F(v) >= q.
double weighted_quantile(std::span<const double> values, std::span<const double> weights, double q);

/// Gaussian-kernel density at x with Silverman's rule-of-thumb bandwidth
/// 0.9 min(sd, IQR/1.34) n^(-1/5).
double kernel_density(std::span<const double> values, double x);

}  // namespace distimpute
