#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace distimpute {

class SingularCovarianceError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Reciprocal condition estimate below which a covariance block is treated
/// as singular.
inline constexpr double kSingularRcond = 1e-12;

/// Random stream used everywhere randomness is consumed. The engine is
/// mt19937_64 (its output sequence is fixed by the standard); uniforms take
/// the top 53 bits, normals use the Box-Muller transform with the second
/// variate of each pair cached. Both transforms are implemented here rather
/// than through <random> distributions, whose algorithms are unspecified.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  /// Independent stream keyed by (seed, a, b) via SplitMix64 mixing, so that
  /// per-subject or per-replicate streams do not depend on scheduling order.
  static Rng substream(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

  double uniform();              // (0, 1)
  double normal();               // N(0, 1)
  double exponential();          // Exp(1)
  int poisson1();                // Poisson(1), by inversion
  bool bernoulli(double p) { return uniform() < p; }
  std::uint64_t next_u64() { return engine_(); }

 private:
  std::mt19937_64 engine_;
  double cached_normal_ = 0.0;
  bool has_cached_ = false;
};

std::uint64_t splitmix64(std::uint64_t x);

/// Multivariate normal law. The constructor checks symmetry (1e-10 relative)
/// and positive definiteness through a Cholesky factorization, which is kept
/// for density evaluation and sampling.
class GaussianLaw {
 public:
  GaussianLaw(Eigen::VectorXd mean, Eigen::MatrixXd cov);

  Eigen::Index dim() const { return mean_.size(); }
  const Eigen::VectorXd& mean() const { return mean_; }
  const Eigen::MatrixXd& cov() const { return cov_; }
  /// Lower Cholesky factor L with cov = L L^T.
  const Eigen::MatrixXd& chol() const { return chol_; }
  double log_det() const { return log_det_; }

 private:
  Eigen::VectorXd mean_;
  Eigen::MatrixXd cov_;
  Eigen::MatrixXd chol_;
  double log_det_ = 0.0;
};

/// Law of the unobserved coordinates given the observed ones:
///   mean = mu_mis + S21 S11^{-1} (y_obs - mu_obs),  cov = S22 - S21 S11^{-1} S12.
/// `observed_idx` must be a nonempty proper subset of 0..d-1 (any order; the
/// values follow that order). The result is over the complementary indices in
/// increasing order.
GaussianLaw condition(const GaussianLaw& joint, std::span<const Eigen::Index> observed_idx,
                      const Eigen::VectorXd& observed_vals);

/// Complement of `observed_idx` in 0..d-1, increasing.
std::vector<Eigen::Index> complement_indices(Eigen::Index d, std::span<const Eigen::Index> observed_idx);

double log_density(const GaussianLaw& law, const Eigen::VectorXd& x);

/// mean + L z, z ~ N(0, I).
Eigen::VectorXd sample(const GaussianLaw& law, Rng& rng);

/// Precomputed conditioning for a fixed covariance and observed block, for
/// callers that condition many mean/value pairs on the same partition. The
/// observed block is the leading `n_observed` coordinates.
class LeadingBlockConditioner {
 public:
  LeadingBlockConditioner(const Eigen::MatrixXd& cov, Eigen::Index n_observed);

  /// S21 S11^{-1}, (d - k) x k.
  const Eigen::MatrixXd& regression() const { return regression_; }
  const Eigen::MatrixXd& conditional_cov() const { return cond_cov_; }
  const Eigen::MatrixXd& conditional_chol() const { return cond_chol_; }
  double conditional_log_det() const { return cond_log_det_; }

  Eigen::VectorXd conditional_mean(const Eigen::VectorXd& mu_obs, const Eigen::VectorXd& mu_mis,
                                   const Eigen::VectorXd& y_obs) const {
    return mu_mis + regression_ * (y_obs - mu_obs);
  }

 private:
  Eigen::MatrixXd regression_;
  Eigen::MatrixXd cond_cov_;
  Eigen::MatrixXd cond_chol_;
  double cond_log_det_ = 0.0;
};

/// Log-density of N(mean, L L^T) at x given the lower factor and log|cov|.
double log_density_chol(const Eigen::VectorXd& mean, const Eigen::MatrixXd& chol, double log_det,
                        const Eigen::VectorXd& x);

}  // namespace distimpute
