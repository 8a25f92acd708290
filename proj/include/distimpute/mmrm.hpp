#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "distimpute/dataset.hpp"

namespace distimpute {

class FitError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Regression of visit k on (1, x, y_1..y_{k-1}) with its residual variance.
struct VisitRegression {
  Eigen::VectorXd coef;  // intercept, p covariate slopes, k-1 prior-outcome slopes
  double residual_variance = 0.0;
};

/// Group-specific MMRM parameters: row k of `beta` is beta_{jk}^T, so the
/// visit-k mean of a subject is beta.row(k) * (1, x^T)^T.
struct GroupFit {
  Eigen::MatrixXd beta;   // T x (p+1), intercept first
  Eigen::MatrixXd sigma;  // T x T
  std::vector<VisitRegression> seq;

  Eigen::VectorXd mean_for(const Eigen::VectorXd& design) const { return beta * design; }
};

struct MmrmFit {
  std::array<GroupFit, 2> groups;
  double loglik = 0.0;

  const GroupFit& group(Group g) const { return groups[static_cast<std::size_t>(group_index(g))]; }
  GroupFit& group(Group g) { return groups[static_cast<std::size_t>(group_index(g))]; }
  std::size_t n_visits() const { return static_cast<std::size_t>(groups[0].beta.rows()); }
  std::size_t n_covariates() const { return static_cast<std::size_t>(groups[0].beta.cols() - 1); }
};

/// Observed-data MLE under monotone missingness. Each visit's outcome is
/// regressed by weighted least squares on intercept, covariates and all prior
/// outcomes among the group's subjects observed at that visit (ML residual
/// variance, divisor = weight total); the regressions are then mapped to
/// (beta, sigma). Empty `weights` means all ones. Throws FitError on a
/// rank-deficient or unidentified visit, non-finite input, or a negative weight.
MmrmFit fit_mmrm(const TrialDataset& data, std::span<const double> weights = {});

/// Moment form of a sequential parametrization and its inverse.
GroupFit moments_from_sequential(std::vector<VisitRegression> seq, std::size_t n_covariates);
std::vector<VisitRegression> sequential_from_moments(const Eigen::MatrixXd& beta, const Eigen::MatrixXd& sigma);

/// sum_i w_i log f(y_obs,i | x_i, g_i; theta) with each subject's observed block
/// the leading k_i x k_i marginal of its group law.
double observed_loglik(const MmrmFit& fit, const TrialDataset& data, std::span<const double> weights = {});

nlohmann::json to_json(const MmrmFit& fit);
MmrmFit fit_from_json(const nlohmann::json& j);

/// FNV-1a hash over the (beta, sigma) bytes of both groups.
std::uint64_t fingerprint(const MmrmFit& fit);

}  // namespace distimpute
